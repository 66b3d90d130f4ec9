"""Signal pipeline: band-pass, standardisation, windowing, balancing,
augmentation and train/test splitting.

Two orderings are supported by :func:`run_pipeline`:

``paper_faithful``
    filter -> standardise -> window -> balance -> augment -> split (windows of one recording,
    and augmented copies of a window, can land on both sides of the split).
``leak_safe`` (default)
    filter -> split by recording -> standardise -> window -> balance(train)
    -> augment(train).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace, asdict

import numpy as np
from scipy import signal

from . import container
from .dataio import ClassLabel, EegRecording, label_counts
from .errors import (
    BadParams,
    ConfigError,
    InvalidFilterSpec,
    MissingClass,
    NumericalInstability,
    TooFewSamples,
    ZeroVariance,
)

log = logging.getLogger(__name__)

MODES = ("leak_safe", "paper_faithful")


@dataclass(frozen=True)
class FilterSpec:
    f_low_hz: float = 1.0
    f_high_hz: float = 30.0
    order: int = 4
    zero_phase: bool = True

    def validate(self, sample_rate_hz: float):
        nyq = sample_rate_hz / 2
        if not 0 < self.f_low_hz < self.f_high_hz < nyq:
            raise InvalidFilterSpec(
                f"need 0 < {self.f_low_hz} < {self.f_high_hz} < Nyquist {nyq} Hz"
            )
        if self.order < 2 or self.order % 2:
            raise InvalidFilterSpec(f"band-pass order must be even and >= 2, got {self.order}")

    def sos(self, sample_rate_hz: float) -> np.ndarray:
        self.validate(sample_rate_hz)
        # a band-pass from an N-th order prototype has order 2N
        return signal.butter(
            self.order // 2, [self.f_low_hz, self.f_high_hz], btype="bandpass",
            fs=sample_rate_hz, output="sos",
        )


def bandpass_array(x: np.ndarray, sample_rate_hz: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Butterworth band-pass along axis 0, forward-backward when ``zero_phase``."""
    sos = spec.sos(sample_rate_hz)
    x = np.asarray(x, dtype=np.float64)
    if spec.zero_phase:
        default_pad = 3 * (2 * len(sos) + 1 - min((sos[:, 2] == 0).sum(), (sos[:, 5] == 0).sum()))
        y = signal.sosfiltfilt(sos, x, axis=0, padlen=min(default_pad, x.shape[0] - 1))
    else:
        y = signal.sosfilt(sos, x, axis=0)
    if not np.all(np.isfinite(y)):
        raise NumericalInstability("band-pass produced non-finite output")
    return y


def bandpass_filter(rec: EegRecording, spec: FilterSpec = FilterSpec()) -> EegRecording:
    return replace(rec, samples=bandpass_array(rec.samples, rec.sample_rate_hz, spec))


# -- standardisation -------------------------------------------------------------

@dataclass
class ChannelStats:
    """Per-channel mean/std. ``per_recording`` stats are recomputed on each input."""

    source: str = "per_recording"
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def apply(self, rec: EegRecording) -> EegRecording:
        if self.source == "none":
            return rec
        if self.source == "per_recording":
            mu, sd = _moments(rec.samples, f"{rec.subject_id}/{rec.run_id}")
        else:
            mu, sd = self.mean, self.std
        return replace(rec, samples=(rec.samples - mu) / sd)


def _moments(x, what):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    flat = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(mu)))
    if flat.size:
        raise ZeroVariance(f"{what}: zero variance in channel(s) {flat.tolist()}")
    return mu, sd


def standardize(recs, stats_source: str = "per_recording", stats: ChannelStats | None = None):
    """Z-score every channel. Returns ``(recordings, stats)``.

    With ``training_set`` the pooled statistics of ``recs`` are used unless
    precomputed ``stats`` are passed in.
    """
    recs = list(recs)
    if stats is None:
        if stats_source == "per_recording":
            stats = ChannelStats("per_recording")
        elif stats_source == "training_set":
            mu, sd = _moments(np.concatenate([r.samples for r in recs], axis=0), "training set")
            stats = ChannelStats("training_set", mu, sd)
        elif stats_source == "none":
            stats = ChannelStats("none")
        else:
            raise ConfigError(f"unknown stats_source {stats_source!r}")
    return [stats.apply(r) for r in recs], stats


# -- windows ---------------------------------------------------------------------

@dataclass(slots=True)
class WindowSample:
    data: np.ndarray
    label: ClassLabel
    origin: tuple  # (subject_id, run_id, window index j)
    augmented: bool = False


def window_count(n: int, T: int, sr: int) -> int:
    return 0 if n < T else (n - T) // sr + 1


def window_segments(rec: EegRecording, T: int = 64, sr: int = 32) -> list:
    """Window j covers rows ``j*sr .. j*sr + T - 1``; leftover tail rows are dropped."""
    if T < 1 or sr < 1 or sr > T:
        raise BadParams(f"need T >= 1 and 1 <= stride <= T, got T={T}, stride={sr}")
    n = rec.n_samples
    if n < T:
        log.warning("%s/%s: %d rows < window length %d, no windows", rec.subject_id, rec.run_id, n, T)
        return []
    return [
        WindowSample(rec.samples[j * sr : j * sr + T].copy(), rec.label, (rec.subject_id, rec.run_id, j))
        for j in range(window_count(n, T, sr))
    ]


# -- balancing, augmentation, splitting ------------------------------------------------

def balance_indices(labels, seed) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    groups = [np.flatnonzero(labels == c) for c in ClassLabel]
    if any(g.size == 0 for g in groups):
        raise MissingClass(f"class counts {[g.size for g in groups]}: both classes are required")
    n_min = min(g.size for g in groups)
    rng = np.random.default_rng(seed)
    keep = [g if g.size == n_min else rng.choice(g, size=n_min, replace=False) for g in groups]
    return np.sort(np.concatenate(keep))


def balance_undersample(samples, seed) -> list:
    """Randomly drop majority-class samples down to the minority count."""
    idx = balance_indices([s.label for s in samples], seed)
    return [samples[i] for i in idx]


def augment_gaussian(samples, noise_factor: float = 0.02, seed=0) -> list:
    """One noisy copy per sample; noise std is ``noise_factor`` times the
    channel's std within that window."""
    if noise_factor < 0:
        raise BadParams("noise_factor must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        if noise_factor == 0:
            data = s.data.copy()
        else:
            sd = s.data.std(axis=0)
            data = s.data + rng.standard_normal(s.data.shape) * (noise_factor * sd)
        out.append(WindowSample(data, s.label, s.origin, True))
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_indices(labels, test_fraction: float, seed, stratified: bool = True):
    """Return sorted ``(train_idx, test_idx)``; |test| = round(N * fraction), at least 1."""
    if not 0 < test_fraction < 1:
        raise BadParams(f"test_fraction must be in (0, 1), got {test_fraction}")
    labels = np.asarray(labels, dtype=int)
    n = labels.size
    if n < 2:
        raise TooFewSamples(f"cannot split {n} sample(s)")
    n_test = max(1, _round_half_up(n * test_fraction))
    rng = np.random.default_rng(seed)
    if not stratified:
        if n_test >= n:
            raise TooFewSamples(f"{n} samples cannot be split with fraction {test_fraction}")
        perm = rng.permutation(n)
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])

    groups = [np.flatnonzero(labels == c) for c in ClassLabel]
    exact = [g.size * n_test / n for g in groups]
    quota = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(groups)), key=lambda k: (-(exact[k] - quota[k]), k))
    for k in order[: n_test - sum(quota)]:
        quota[k] += 1
    train, test = [], []
    for g, q, c in zip(groups, quota, ClassLabel):
        if g.size and not 0 < q < g.size:
            raise TooFewSamples(f"class {c.tag}: {g.size} samples, {q} for test leaves a side empty")
        perm = rng.permutation(g)
        test.append(perm[:q])
        train.append(perm[q:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


@dataclass
class PipelineReport:
    """Class counts after each stage, in execution order."""

    mode: str = "leak_safe"
    stages: dict = field(default_factory=dict)

    def add(self, stage, items):
        self.stages[stage] = label_counts(items)

    def to_text(self) -> str:
        lines = [f"pipeline mode: {self.mode}", f"{'stage':<14}{'truth':>8}{'lie':>8}{'total':>8}"]
        for stage, c in self.stages.items():
            lines.append(f"{stage:<14}{c['truth']:>8}{c['lie']:>8}{c['truth'] + c['lie']:>8}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        lines = [f"mode={self.mode}"]
        for stage, c in self.stages.items():
            for k, v in c.items():
                lines.append(f"{stage}.{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, text: str) -> "PipelineReport":
        rep = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            key, value = line.split("=", 1)
            if key == "mode":
                rep.mode = value
            else:
                stage, cls_tag = key.rsplit(".", 1)
                rep.stages.setdefault(stage, {})[cls_tag] = int(value)
        return rep


@dataclass
class PipelineConfig:
    sample_rate_hz: float = 128.0
    f_low: float = 1.0
    f_high: float = 30.0
    order: int = 4
    zero_phase: bool = True
    T: int = 64
    stride: int = 32
    noise_factor: float = 0.02
    test_fraction: float = 0.2
    mode: str = "leak_safe"
    stratified: bool = True
    standardize: bool = True
    stats_source: str = "per_recording"
    balance_seed: int = 0
    augment_seed: int = 0
    split_seed: int = 0

    @property
    def filter_spec(self) -> FilterSpec:
        return FilterSpec(self.f_low, self.f_high, self.order, self.zero_phase)

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.stats_source not in ("per_recording", "training_set"):
            raise ConfigError(f"unknown stats_source {self.stats_source!r}")
        self.filter_spec.validate(self.sample_rate_hz)
        if self.T < 1 or not 1 <= self.stride <= self.T:
            raise BadParams(f"bad window parameters T={self.T}, stride={self.stride}")

    def to_dict(self):
        return asdict(self)


@dataclass
class SplitDataset:
    train: list
    test: list
    seed: int = 0
    fractions: tuple = (0.8, 0.2)
    report: PipelineReport | None = None
    stats: ChannelStats | None = None
    config: PipelineConfig | None = None


def _windows_of(recs, T, sr):
    out = []
    for r in recs:
        out.extend(window_segments(r, T, sr))
    return out


def run_pipeline(recs, config: PipelineConfig | None = None) -> SplitDataset:
    """Filter, standardise, window, balance, augment and split ``recs``."""
    config = config or PipelineConfig()
    config.validate()
    recs = list(recs)
    if not recs:
        raise BadParams("no recordings given")
    for r in recs:
        if r.sample_rate_hz != config.sample_rate_hz:
            raise BadParams(
                f"{r.subject_id}/{r.run_id}: sample rate {r.sample_rate_hz} != configured {config.sample_rate_hz}"
            )
    report = PipelineReport(config.mode)
    report.add("input", recs)

    filtered = [bandpass_filter(r, config.filter_spec) for r in recs]
    report.add("filter", filtered)
    usable = [r for r in filtered if r.n_samples >= config.T]
    for r in filtered:
        if r.n_samples < config.T:
            log.warning("%s/%s: shorter than one window, skipped", r.subject_id, r.run_id)

    if config.mode == "leak_safe":
        tr_idx, te_idx = split_indices([r.label for r in usable], config.test_fraction,
                                       config.split_seed, config.stratified)
        train_recs = [usable[i] for i in tr_idx]
        test_recs = [usable[i] for i in te_idx]
    else:
        train_recs, test_recs = usable, []

    source = config.stats_source if config.standardize else "none"
    _, stats = standardize(train_recs, source)
    train_recs = [stats.apply(r) for r in train_recs]
    test_recs = [stats.apply(r) for r in test_recs]

    if config.mode == "paper_faithful":
        windows = _windows_of(train_recs, config.T, config.stride)
        report.add("window", windows)
        balanced = balance_undersample(windows, config.balance_seed)
        report.add("balance", balanced)
        pool = balanced + augment_gaussian(balanced, config.noise_factor, config.augment_seed)
        report.add("augment", pool)
        tr, te = split_indices([s.label for s in pool], config.test_fraction,
                               config.split_seed, config.stratified)
        train = [pool[i] for i in tr]
        test = [pool[i] for i in te]
        report.add("split_train", train)
        report.add("split_test", test)
    else:
        train_w = _windows_of(train_recs, config.T, config.stride)
        test = _windows_of(test_recs, config.T, config.stride)
        report.add("window", train_w + test)
        report.add("split_train", train_w)
        report.add("split_test", test)
        balanced = balance_undersample(train_w, config.balance_seed)
        report.add("balance", balanced)
        train = balanced + augment_gaussian(balanced, config.noise_factor, config.augment_seed)
        report.add("augment", train)

    n = len(train) + len(test)
    return SplitDataset(
        train=train,
        test=test,
        seed=config.split_seed,
        fractions=(len(train) / n, len(test) / n),
        report=report,
        stats=stats,
        config=config,
    )


# -- persistence -----------------------------------------------------------------

def windows_to_arrays(samples, dtype=np.float64):
    """Stack samples into ``(x[N, T, C], y[N])``."""
    if not samples:
        return np.zeros((0, 0, 0), dtype=dtype), np.zeros(0, dtype=np.int64)
    x = np.stack([s.data for s in samples]).astype(dtype, copy=False)
    y = np.array([int(s.label) for s in samples], dtype=np.int64)
    return x, y


def _pack(prefix, samples, arrays, meta):
    x, y = windows_to_arrays(samples)
    arrays[f"{prefix}/x"] = x
    arrays[f"{prefix}/y"] = y
    arrays[f"{prefix}/augmented"] = np.array([s.augmented for s in samples], dtype=np.uint8)
    meta[f"{prefix}_origin"] = [list(s.origin) for s in samples]


def save_split(split: SplitDataset, path):
    arrays, meta = {}, {}
    _pack("train", split.train, arrays, meta)
    _pack("test", split.test, arrays, meta)
    meta["seed"] = split.seed
    meta["fractions"] = list(split.fractions)
    meta["config"] = split.config.to_dict() if split.config else None
    meta["report"] = split.report.to_kv() if split.report else None
    stats = split.stats or ChannelStats("none")
    meta["stats_source"] = stats.source
    if stats.mean is not None:
        arrays["stats/mean"] = stats.mean
        arrays["stats/std"] = stats.std
    arrays["meta/dataset"] = container.encode_json(meta)
    container.write_arrays(path, arrays)


def load_split(path) -> SplitDataset:
    arrays = container.read_arrays(path)
    if "meta/dataset" not in arrays:
        raise container.CheckpointError(f"{path} is not a dataset container")
    meta = container.decode_json(arrays["meta/dataset"])

    def unpack(prefix):
        x, y, aug = arrays[f"{prefix}/x"], arrays[f"{prefix}/y"], arrays[f"{prefix}/augmented"]
        origins = meta[f"{prefix}_origin"]
        return [
            WindowSample(x[i], ClassLabel(int(y[i])), (o[0], o[1], int(o[2])), bool(aug[i]))
            for i, o in enumerate(origins)
        ]

    stats = ChannelStats(meta["stats_source"], arrays.get("stats/mean"), arrays.get("stats/std"))
    return SplitDataset(
        train=unpack("train"),
        test=unpack("test"),
        seed=meta["seed"],
        fractions=tuple(meta["fractions"]),
        report=PipelineReport.from_kv(meta["report"]) if meta["report"] else None,
        stats=stats,
        config=PipelineConfig(**meta["config"]) if meta["config"] else None,
    )
