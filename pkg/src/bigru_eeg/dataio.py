"""Per-run EEG CSV ingestion, row cleaning, manifests and a synthetic generator.

On-disk layout: one headered CSV per run (one row per time sample, one column
per channel, plus metadata columns that are ignored) and a manifest CSV with
columns ``subject_id,run_id,path,label`` where label is 0 (truth) or 1 (lie)
and path is relative to the manifest's directory.
"""
from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    AllRowsCorrupt,
    DataError,
    EmptyFile,
    InvalidSpec,
    MissingChannel,
    ParseError,
    RecordingNotFound,
)

log = logging.getLogger(__name__)

# AF3 is absent: the headset driver never delivered it
DEFAULT_CHANNELS = ("F3", "FC5", "F7", "T7", "P7", "O1", "O2", "P8", "T8", "F8", "AF4", "FC6", "F4")
DEFAULT_SAMPLE_RATE_HZ = 128.0


class ClassLabel(enum.IntEnum):
    TRUTH = 0
    LIE = 1

    @classmethod
    def parse(cls, value) -> "ClassLabel":
        if isinstance(value, ClassLabel):
            return value
        s = str(value).strip().lower()
        if s in ("0", "truth"):
            return cls.TRUTH
        if s in ("1", "lie"):
            return cls.LIE
        raise ValueError(f"not a class label: {value!r}")

    @property
    def tag(self) -> str:
        return self.name.lower()


@dataclass
class EegRecording:
    subject_id: str
    run_id: str
    label: ClassLabel
    samples: np.ndarray
    channel_names: tuple = DEFAULT_CHANNELS
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        self.channel_names = tuple(self.channel_names)
        self.label = ClassLabel.parse(self.label)
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != len(self.channel_names):
            raise ValueError(
                f"samples shape {self.samples.shape} does not match {len(self.channel_names)} channels"
            )
        if self.samples.shape[0] < 1:
            raise ValueError("a recording needs at least one row")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def key(self) -> tuple:
        return (self.subject_id, self.run_id)


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    run_id: str
    data_path: str
    label: ClassLabel


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    source: str = "bag_of_lies"
    root: Path | None = None

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            k = (e.subject_id, e.run_id)
            if k in seen:
                raise InvalidSpec(f"duplicate manifest entry {k}")
            seen.add(k)
        if self.source not in ("bag_of_lies", "synthetic"):
            raise InvalidSpec(f"unknown manifest source {self.source!r}")

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.data_path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p


def load_manifest(path, source="bag_of_lies") -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise RecordingNotFound(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"subject_id", "run_id", "path", "label"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ParseError(f"{path}: manifest header must contain {sorted(required)}")
        entries = [
            ManifestEntry(row["subject_id"], row["run_id"], row["path"], ClassLabel.parse(row["label"]))
            for row in reader
        ]
    return DatasetManifest(entries, source=source, root=path.parent)


def write_manifest(manifest: DatasetManifest, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "run_id", "path", "label"])
        for e in manifest.entries:
            w.writerow([e.subject_id, e.run_id, e.data_path, int(e.label)])


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return float("nan")


def load_recording(
    path,
    channel_names=DEFAULT_CHANNELS,
    label=ClassLabel.TRUTH,
    sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ,
    subject_id="",
    run_id="",
) -> EegRecording:
    """Read one run, keeping only ``channel_names`` (in that order).

    Non-numeric cells become NaN and are left for :func:`clean_rows`; a row
    with the wrong number of fields is a structural error.
    """
    path = Path(path)
    if not path.is_file():
        raise RecordingNotFound(f"recording not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise EmptyFile(f"{path}: no header")
        header = [h.strip() for h in header]
        missing = [c for c in channel_names if c not in header]
        if missing:
            raise MissingChannel(f"{path}: channels {missing} not in header")
        cols = [header.index(c) for c in channel_names]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append([_to_float(row[i]) for i in cols])
    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    return EegRecording(
        subject_id=subject_id,
        run_id=run_id,
        label=label,
        samples=np.array(rows, dtype=np.float64),
        channel_names=channel_names,
        sample_rate_hz=sample_rate_hz,
    )


def write_recording(rec: EegRecording, path, extra_columns=None):
    """Write ``rec`` as headered CSV; ``extra_columns`` maps name -> column values."""
    extra_columns = extra_columns or {}
    names = list(rec.channel_names) + list(extra_columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        extras = [np.asarray(v) for v in extra_columns.values()]
        for i, row in enumerate(rec.samples):
            w.writerow([repr(float(v)) for v in row] + [e[i] for e in extras])


def clean_rows(rec: EegRecording) -> EegRecording:
    keep = np.isfinite(rec.samples).all(axis=1)
    if not keep.any():
        raise AllRowsCorrupt(f"{rec.subject_id}/{rec.run_id}: every row has a non-finite value")
    if keep.all():
        return rec
    log.debug("%s/%s: dropped %d corrupt rows", rec.subject_id, rec.run_id, int((~keep).sum()))
    return replace(rec, samples=rec.samples[keep])


def aggregate_sessions(
    manifest: DatasetManifest,
    channel_names=DEFAULT_CHANNELS,
    sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ,
) -> list:
    """Load and clean every manifest entry, sorted by (subject_id, run_id)."""
    if not manifest.entries:
        raise InvalidSpec("manifest is empty")
    out = []
    for e in sorted(manifest.entries, key=lambda e: (e.subject_id, e.run_id)):
        try:
            rec = load_recording(
                manifest.resolve(e), channel_names, e.label, sample_rate_hz, e.subject_id, e.run_id
            )
            out.append(clean_rows(rec))
        except DataError as err:
            annotated = type(err)(f"entry ({e.subject_id}, {e.run_id}): {err}")
            annotated.entry = (e.subject_id, e.run_id)
            raise annotated from err
    return out


# -- synthetic data ---------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_recordings: int = 40
    duration_s: float = 4.0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    # centre frequency of the class oscillation, indexed [truth, lie]
    class_band_hz: tuple = (6.0, 22.0)
    band_width_hz: float = 2.0
    noise_std: float = 0.5
    components: int = 3

    def validate(self):
        if self.n_recordings < 2:
            raise InvalidSpec("need at least two recordings so both classes appear")
        if not self.duration_s > 0 or not self.sample_rate_hz > 0:
            raise InvalidSpec("duration and sample rate must be positive")
        nyq = self.sample_rate_hz / 2
        for c in self.class_band_hz:
            lo, hi = c - self.band_width_hz / 2, c + self.band_width_hz / 2
            if lo <= 0 or hi >= nyq:
                raise InvalidSpec(f"band [{lo}, {hi}] Hz outside (0, {nyq}) Hz")
        if self.noise_std < 0 or self.components < 1:
            raise InvalidSpec("noise_std must be >= 0 and components >= 1")
        if round(self.duration_s * self.sample_rate_hz) < 1:
            raise InvalidSpec("recording would have no samples")


def synth_generate(spec: SynthSpec, seed: int):
    """Band-limited class oscillations plus drift, offset and white noise.

    Labels alternate truth/lie so the classes are balanced within one.
    Returns ``(manifest, recordings)``; manifest paths name the CSV files that
    ``write_synthetic`` would produce.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    n = int(round(spec.duration_s * spec.sample_rate_hz))
    t = np.arange(n) / spec.sample_rate_hz
    n_ch = len(DEFAULT_CHANNELS)
    recs, entries = [], []
    for i in range(spec.n_recordings):
        label = ClassLabel(i % 2)
        centre = spec.class_band_hz[int(label)]
        freqs = rng.uniform(centre - spec.band_width_hz / 2, centre + spec.band_width_hz / 2,
                            size=(spec.components, n_ch))
        phases = rng.uniform(0, 2 * np.pi, size=(spec.components, n_ch))
        amps = rng.uniform(0.5, 1.5, size=(spec.components, n_ch)) / np.sqrt(spec.components)
        sig = np.einsum("kc,kcn->nc", amps, np.sin(2 * np.pi * freqs[..., None] * t + phases[..., None]))
        drift = rng.uniform(0.5, 2.0, n_ch) * np.sin(2 * np.pi * 0.2 * t[:, None] + rng.uniform(0, 2 * np.pi, n_ch))
        offset = rng.normal(0.0, 20.0, n_ch)
        noise = rng.normal(0.0, spec.noise_std, size=(n, n_ch))
        subject, run = f"S{i // 4:02d}", f"R{i % 4}"
        recs.append(EegRecording(subject, run, label, sig + drift + offset + noise, DEFAULT_CHANNELS,
                                 spec.sample_rate_hz))
        entries.append(ManifestEntry(subject, run, f"recordings/{subject}_{run}.csv", label))
    return DatasetManifest(entries, source="synthetic"), recs


def write_synthetic(manifest: DatasetManifest, recordings, out_dir) -> Path:
    """Write recordings (with a dead AF3 column and a counter) and the manifest."""
    out_dir = Path(out_dir)
    (out_dir / "recordings").mkdir(parents=True, exist_ok=True)
    for e, rec in zip(manifest.entries, recordings):
        n = rec.n_samples
        write_recording(rec, out_dir / e.data_path, {"AF3": ["nan"] * n, "COUNTER": list(range(n))})
    path = out_dir / "manifest.csv"
    write_manifest(manifest, path)
    manifest.root = out_dir
    return path


def label_counts(items) -> dict:
    """Count labels of recordings or window samples as ``{"truth": n, "lie": m}``."""
    counts = {lab.tag: 0 for lab in ClassLabel}
    for it in items:
        counts[ClassLabel(it.label).tag] += 1
    return counts


__all__ = [
    "DEFAULT_CHANNELS",
    "ClassLabel",
    "EegRecording",
    "ManifestEntry",
    "DatasetManifest",
    "SynthSpec",
    "load_manifest",
    "write_manifest",
    "load_recording",
    "write_recording",
    "clean_rows",
    "aggregate_sessions",
    "synth_generate",
    "write_synthetic",
    "label_counts",
]
