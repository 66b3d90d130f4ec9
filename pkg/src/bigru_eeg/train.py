"""Adam, mini-batch epochs, early stopping, k-fold cross validation and checkpoints."""
from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import container
from .dsp import ChannelStats, PipelineConfig, split_indices
from .errors import ArchMismatch, CheckpointError, ConfigError, ShapeCorruption, ShapeMismatch, TooFewSamples
from .nn import ArchConfig, ModelParams, build_model, model_forward, predict_proba
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 64
    k_folds: int = 5
    patience: int = 10
    min_delta: float = 0.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # "retrain": refit on the whole train split with a held-out slice for early
    # stopping; "best_fold": keep the fold model with the lowest validation loss
    selection: str = "retrain"
    holdout_fraction: float = 0.1
    init_seed: int = 0
    shuffle_seed: int = 0
    dropout_seed: int = 0
    fold_seed: int = 0

    def validate(self):
        for name in ("max_epochs", "batch_size", "k_folds", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")
        if self.lr < 0 or self.min_delta < 0:
            raise ConfigError("lr and min_delta must be non-negative")
        if self.selection not in ("retrain", "best_fold"):
            raise ConfigError(f"unknown selection policy {self.selection!r}")


# -- optimiser -------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, named: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m={k: np.zeros_like(t.data) for k, t in named.items()},
            v={k: np.zeros_like(t.data) for k, t in named.items()},
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )

    def step(self, named: dict, grads: dict):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in named.items():
            g = grads[k]
            if g.shape != p.shape or self.m[k].shape != p.shape:
                raise ShapeMismatch(f"{k}: param {p.shape}, grad {g.shape}, moment {self.m[k].shape}")
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype, copy=False)


def adam_step(named: dict, grads: dict, state: AdamState) -> AdamState:
    """In-place Adam update of ``named`` tensors; returns the advanced state."""
    state.step(named, grads)
    return state


# -- history & early stopping --------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    stopped_epoch: int | None = None

    @property
    def val_losses(self):
        return [r.val_loss for r in self.records]

    @property
    def best_epoch(self) -> int | None:
        if not self.records:
            return None
        i = int(np.argmin(self.val_losses))
        return self.records[i].epoch

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, f))) for f in HISTORY_FIELDS[1:]])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def from_csv_text(cls, text: str) -> "TrainHistory":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([
            EpochRecord(int(r["epoch"]), *(float(r[f]) for f in HISTORY_FIELDS[1:])) for r in rows
        ])


class StopDecision(str, enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


def early_stopping_check(history, patience: int = 10, min_delta: float = 0.0) -> StopDecision:
    """Stop once ``patience`` epochs in a row failed to beat the best loss by more than ``min_delta``."""
    losses = history.val_losses if isinstance(history, TrainHistory) else list(history)
    if not losses:
        raise ValueError("empty history")
    best = math.inf
    since = 0
    for v in losses:
        if v < best - min_delta:
            best = v
            since = 0
        else:
            since += 1
    return StopDecision.STOP if since >= patience else StopDecision.CONTINUE


# -- epochs ------------------------------------------------------------------------

def one_hot(y, n_classes=2, dtype=np.float32):
    out = np.zeros((len(y), n_classes), dtype=dtype)
    out[np.arange(len(y)), np.asarray(y, dtype=int)] = 1
    return out


def batch_indices(n: int, batch_size: int, rng: np.random.Generator | None = None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float
    n_batches: int
    n_samples: int


def train_epoch(params: ModelParams, x, y, state: AdamState, batch_size=64,
                shuffle_rng=None, dropout_rng=None, epoch=None) -> EpochMetrics:
    """One pass over ``x``; the trailing partial batch is kept. Loss is a per-sample mean."""
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) == 0:
        raise TooFewSamples("empty training set")
    named = params.named()
    targets = one_hot(y, params.arch.n_classes, np.dtype(params.arch.dtype))
    batches = batch_indices(len(x), batch_size, shuffle_rng)
    loss_sum = []
    correct = 0
    for idx in batches:
        with ad.Tape() as tape:
            logits = model_forward(x[idx], params, training=True, rng=dropout_rng, return_logits=True)
            loss = ad.softmax_cross_entropy(logits, targets[idx])
        grads = tape.backward(loss, named)
        state.step(named, grads)
        loss_sum.append(loss.item() * len(idx))
        correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
    metrics = EpochMetrics(float(np.sum(loss_sum)) / len(x), correct / len(x), len(batches), len(x))
    log.info("epoch %s: %d batches/epoch, %d samples, train_loss=%.6f train_acc=%.4f",
             epoch if epoch is not None else "-", metrics.n_batches, metrics.n_samples,
             metrics.loss, metrics.accuracy)
    return metrics


def evaluate_arrays(params: ModelParams, x, y, batch_size=256):
    """Inference-mode ``(mean cross-entropy, accuracy, probabilities)``."""
    probs = predict_proba(params, x, batch_size)
    y = np.asarray(y, dtype=int)
    picked = np.clip(probs[np.arange(len(y)), y].astype(np.float64), ad.CE_CLAMP, 1.0)
    loss = float(np.sum(-np.log(picked))) / len(y)
    acc = float(np.mean(probs.argmax(axis=1) == y))
    return loss, acc, probs


def fit(params: ModelParams, train, val, config: TrainConfig, shuffle_seed=0, dropout_seed=0,
        validate=None) -> TrainHistory:
    """Train with early stopping on validation loss, restoring the best weights.

    ``train`` and ``val`` are ``(x, y)`` pairs. ``validate(params) -> (loss, acc)``
    replaces the default validation pass when given.
    """
    config.validate()
    named = params.named()
    state = AdamState.zeros_like(named, config.lr, config.beta1, config.beta2, config.eps)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    if validate is None:
        def validate(p):
            return evaluate_arrays(p, val[0], val[1], max(config.batch_size, 256))[:2]

    history = TrainHistory()
    best_loss = math.inf
    best_state = params.state_dict()
    for epoch in range(1, config.max_epochs + 1):
        m = train_epoch(params, train[0], train[1], state, config.batch_size, shuffle_rng, dropout_rng, epoch)
        val_loss, val_acc = validate(params)
        history.records.append(EpochRecord(epoch, m.loss, m.accuracy, float(val_loss), float(val_acc)))
        log.info("epoch %d: val_loss=%.6f val_acc=%.4f", epoch, val_loss, val_acc)
        if val_loss < best_loss - config.min_delta:
            best_loss = val_loss
            best_state = params.state_dict()
        if early_stopping_check(history, config.patience, config.min_delta) is StopDecision.STOP:
            history.stopped_epoch = epoch
            log.info("early stopping at epoch %d (best epoch %d)", epoch, history.best_epoch)
            break
    params.load_state_dict(best_state)
    return history


# -- cross validation -------------------------------------------------------------------

def kfold_assign(labels, k: int, seed) -> np.ndarray:
    """Stratified fold id per sample; fold sizes differ by at most one."""
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(seed)
    order = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < k:
            raise TooFewSamples(f"class {c} has {members.size} samples, fewer than {k} folds")
        order.append(rng.permutation(members))
    order = np.concatenate(order) if order else np.zeros(0, dtype=int)
    folds = np.empty(labels.size, dtype=int)
    folds[order] = np.arange(order.size) % k
    return folds


@dataclass
class FoldResult:
    fold: int
    history: TrainHistory
    params: ModelParams
    val_index: np.ndarray


@dataclass
class CVResult:
    folds: list
    final_params: ModelParams
    final_history: TrainHistory
    selection: str


def kfold_cv(x, y, config: TrainConfig, arch: ArchConfig, dtype=None) -> CVResult:
    """Train one fresh model per fold, then select the final model."""
    config.validate()
    x = np.asarray(x, dtype=dtype or arch.dtype)
    y = np.asarray(y, dtype=int)
    folds = kfold_assign(y, config.k_folds, config.fold_seed)
    results = []
    for k in range(config.k_folds):
        val_idx = np.flatnonzero(folds == k)
        tr_idx = np.flatnonzero(folds != k)
        log.info("fold %d/%d: %d train, %d validation", k + 1, config.k_folds, tr_idx.size, val_idx.size)
        params = build_model(arch, derive_seed(config.init_seed, f"fold{k}"))
        hist = fit(params, (x[tr_idx], y[tr_idx]), (x[val_idx], y[val_idx]), config,
                   derive_seed(config.shuffle_seed, f"fold{k}"), derive_seed(config.dropout_seed, f"fold{k}"))
        results.append(FoldResult(k, hist, params, val_idx))

    if config.selection == "best_fold":
        best = min(results, key=lambda r: min(r.history.val_losses))
        log.info("selected fold %d", best.fold)
        return CVResult(results, best.params, best.history, "best_fold")

    tr_idx, ho_idx = split_indices(y, config.holdout_fraction, derive_seed(config.fold_seed, "holdout"))
    log.info("final retrain: %d train, %d held out", tr_idx.size, ho_idx.size)
    params = build_model(arch, derive_seed(config.init_seed, "final"))
    hist = fit(params, (x[tr_idx], y[tr_idx]), (x[ho_idx], y[ho_idx]), config,
               derive_seed(config.shuffle_seed, "final"), derive_seed(config.dropout_seed, "final"))
    return CVResult(results, params, hist, "retrain")


# -- checkpoints --------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: ModelParams
    arch: ArchConfig
    stats: ChannelStats
    pipeline: PipelineConfig | None = None


def save_checkpoint(params: ModelParams, path, stats: ChannelStats | None = None,
                    pipeline: PipelineConfig | None = None):
    stats = stats or ChannelStats("none")
    arrays = {f"param/{k}": t.data for k, t in params.named().items()}
    if stats.mean is not None:
        arrays["stats/mean"] = np.asarray(stats.mean, dtype=np.float64)
        arrays["stats/std"] = np.asarray(stats.std, dtype=np.float64)
    meta = {
        "kind": "checkpoint",
        "arch": params.arch.to_dict(),
        "stats_source": stats.source,
        "pipeline": asdict(pipeline) if pipeline is not None else None,
    }
    arrays["meta/checkpoint"] = container.encode_json(meta)
    container.write_arrays(path, arrays)


def _compare_arch(found: ArchConfig, expected: ArchConfig):
    for i, (a, b) in enumerate(zip(found.hidden, expected.hidden), 1):
        if a != b:
            raise ArchMismatch(f"layer bigru{i}: checkpoint has {a} units per direction, expected {b}")
    if len(found.hidden) != len(expected.hidden):
        raise ArchMismatch(f"checkpoint has {len(found.hidden)} Bi-GRU layers, expected {len(expected.hidden)}")
    for i, (a, b) in enumerate(zip(found.dense, expected.dense), 1):
        if a != b:
            raise ArchMismatch(f"layer dense{i}: checkpoint width {a}, expected {b}")
    if found != expected:
        raise ArchMismatch(f"architecture differs: {found} vs {expected}")


def load_checkpoint(path, expected_arch: ArchConfig | None = None) -> Checkpoint:
    arrays = container.read_arrays(path)
    if "meta/checkpoint" not in arrays:
        raise CheckpointError(f"{path} is not a checkpoint")
    meta = container.decode_json(arrays["meta/checkpoint"])
    arch = ArchConfig.from_dict(meta["arch"])
    if expected_arch is not None:
        _compare_arch(arch, expected_arch)
    params = build_model(arch, 0)
    named = params.named()
    state = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    if set(state) != set(named):
        raise ShapeCorruption(f"parameter set differs from declared architecture: {sorted(set(state) ^ set(named))}")
    for k, t in named.items():
        if state[k].shape != t.shape:
            raise ShapeCorruption(f"{k}: declared {t.shape}, stored {state[k].shape}")
        if state[k].dtype != t.dtype:
            raise ShapeCorruption(f"{k}: declared dtype {t.dtype}, stored {state[k].dtype}")
    params.load_state_dict(state)
    stats = ChannelStats(meta["stats_source"], arrays.get("stats/mean"), arrays.get("stats/std"))
    pipeline = PipelineConfig(**meta["pipeline"]) if meta.get("pipeline") else None
    return Checkpoint(params, arch, stats, pipeline)
