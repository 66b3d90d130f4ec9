"""GRU cells, bidirectional GRU layers, dense layers and the stacked classifier.

GRU convention (single bias per gate, reset applied before the recurrent
matmul of the candidate)::

    z  = sigmoid(x W_z + h U_z + b_z)
    r  = sigmoid(x W_r + h U_r + b_r)
    hc = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * hc
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor
from .errors import BadArch, ShapeMismatch

GATES = ("z", "r", "h")
DIRECTIONS = ("fwd", "bwd")


@dataclass(frozen=True)
class ArchConfig:
    n_features: int = 13
    hidden: tuple = (128, 64, 32)
    dense: tuple = (64, 32)
    n_classes: int = 2
    dropout: float = 0.5
    # declared width feeding the dense head; must equal 2 * hidden[-1]
    dense_in: int | None = None
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "dense", tuple(int(d) for d in self.dense))

    def validate(self):
        widths = (self.n_features, self.n_classes, *self.hidden, *self.dense)
        if not self.hidden or any(w <= 0 for w in widths):
            raise BadArch(f"all widths must be positive: {self}")
        if self.n_classes < 2:
            raise BadArch("need at least two classes")
        if not 0.0 <= self.dropout < 1.0:
            raise BadArch(f"dropout {self.dropout} outside [0, 1)")
        if self.dense_in is not None and self.dense_in != 2 * self.hidden[-1]:
            raise BadArch(
                f"first dense input {self.dense_in} != final Bi-GRU concat width "
                f"{2 * self.hidden[-1]}"
            )
        if self.dtype not in ("float32", "float64"):
            raise BadArch(f"unsupported dtype {self.dtype}")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["dense"] = list(self.dense)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        d["dense"] = tuple(d["dense"])
        return cls(**d)


@dataclass
class GruCellParams:
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def hidden_size(self):
        return self.U_z.shape[0]

    @property
    def input_size(self):
        return self.W_z.shape[0]

    def named(self):
        return {
            f"{kind}_{g}": getattr(self, f"{kind}_{g}") for kind in ("W", "U", "b") for g in GATES
        }


@dataclass
class BiGruLayerParams:
    forward: GruCellParams
    backward: GruCellParams
    output_mode: str = "sequence"  # or "last_concat"

    @property
    def output_width(self):
        return 2 * self.forward.hidden_size


@dataclass
class DenseParams:
    W: Tensor
    b: Tensor
    activation: str = "relu"  # relu | softmax | none


@dataclass
class ModelParams:
    arch: ArchConfig
    bigru: list = field(default_factory=list)
    dense: list = field(default_factory=list)

    def named(self) -> dict:
        """Every trainable tensor under a stable dotted name, in layer order."""
        out = {}
        for i, layer in enumerate(self.bigru, 1):
            for dname, cell in zip(DIRECTIONS, (layer.forward, layer.backward)):
                for k, t in cell.named().items():
                    out[f"bigru{i}.{dname}.{k}"] = t
        for i, d in enumerate(self.dense, 1):
            out[f"dense{i}.W"] = d.W
            out[f"dense{i}.b"] = d.b
        return out

    def count(self) -> int:
        return int(sum(t.size for t in self.named().values()))

    def state_dict(self) -> dict:
        return {k: t.data.copy() for k, t in self.named().items()}

    def load_state_dict(self, state: dict):
        named = self.named()
        if set(state) != set(named):
            missing = sorted(set(named) - set(state))
            extra = sorted(set(state) - set(named))
            raise ShapeMismatch(f"state mismatch, missing={missing} extra={extra}")
        for k, t in named.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ShapeMismatch(f"{k}: expected {t.shape}, got {arr.shape}")
            t.data = arr.astype(t.dtype, copy=True)


def glorot_uniform(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def orthogonal(rng, n, dtype):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    return q.astype(dtype)


def _init_cell(rng, f_in, h, dtype):
    mats = {}
    for g in GATES:
        mats[f"W_{g}"] = Tensor(glorot_uniform(rng, f_in, h, dtype), requires_grad=True)
    for g in GATES:
        mats[f"U_{g}"] = Tensor(orthogonal(rng, h, dtype), requires_grad=True)
    for g in GATES:
        mats[f"b_{g}"] = Tensor(np.zeros(h, dtype=dtype), requires_grad=True)
    return GruCellParams(**mats)


def build_model(arch: ArchConfig | None = None, init_seed: int = 0) -> ModelParams:
    """Glorot-uniform input/dense weights, orthogonal recurrent weights, zero biases."""
    arch = arch or ArchConfig()
    arch.validate()
    dtype = np.dtype(arch.dtype)
    rng = np.random.default_rng(init_seed)
    params = ModelParams(arch=arch)
    f_in = arch.n_features
    for i, h in enumerate(arch.hidden):
        mode = "last_concat" if i == len(arch.hidden) - 1 else "sequence"
        fwd = _init_cell(rng, f_in, h, dtype)
        bwd = _init_cell(rng, f_in, h, dtype)
        params.bigru.append(BiGruLayerParams(fwd, bwd, mode))
        f_in = 2 * h
    widths = [*arch.dense, arch.n_classes]
    for j, w in enumerate(widths):
        act = "softmax" if j == len(widths) - 1 else "relu"
        W = Tensor(glorot_uniform(rng, f_in, w, dtype), requires_grad=True)
        b = Tensor(np.zeros(w, dtype=dtype), requires_grad=True)
        params.dense.append(DenseParams(W, b, act))
        f_in = w
    for name, t in params.named().items():
        t.name = name
    return params


def gru_cell_step(x_t, h_prev, p: GruCellParams) -> Tensor:
    """One recurrence step on ``B x F_in`` input and ``B x H`` state."""
    x_t, h_prev = ad.as_tensor(x_t), ad.as_tensor(h_prev)
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ShapeMismatch(f"gru step: x {x_t.shape}, h {h_prev.shape}, cell {p.input_size}->{p.hidden_size}")
    z = ad.sigmoid(ad.add_bias(x_t @ p.W_z + h_prev @ p.U_z, p.b_z))
    r = ad.sigmoid(ad.add_bias(x_t @ p.W_r + h_prev @ p.U_r, p.b_r))
    cand = ad.tanh(ad.add_bias(x_t @ p.W_h + (r * h_prev) @ p.U_h, p.b_h))
    return (1.0 - z) * h_prev + z * cand


def _gru_scan(proj: Tensor, U_zr: Tensor, U_h: Tensor) -> Tensor:
    """Fused recurrence over precomputed input projections ``B x T x 3H``.

    Records a single tape node whose backward runs truncation-free BPTT, so
    the per-step Python overhead of the composed graph is paid once per layer.
    """
    B, T, H3 = proj.shape
    H = H3 // 3
    P = proj.data
    Uzr, Uh = U_zr.data, U_h.data
    h = np.zeros((B, H), dtype=P.dtype)
    out = np.empty((B, T, H), dtype=P.dtype)
    hs, zs, rs, cs = (np.empty((T, B, H), dtype=P.dtype) for _ in range(4))
    for t in range(T):
        g = expit(P[:, t, : 2 * H] + h @ Uzr)
        z, r = g[:, :H], g[:, H:]
        c = np.tanh(P[:, t, 2 * H :] + (r * h) @ Uh)
        hs[t], zs[t], rs[t], cs[t] = h, z, r, c
        h = h + z * (c - h)
        out[:, t] = h

    def backward(grad):
        d_proj = np.empty_like(P)
        d_Uzr = np.zeros_like(Uzr)
        d_Uh = np.zeros_like(Uh)
        carry = np.zeros((B, H), dtype=P.dtype)
        for t in range(T - 1, -1, -1):
            hp, z, r, c = hs[t], zs[t], rs[t], cs[t]
            dh = grad[:, t] + carry
            dc = dh * z * (1 - c * c)
            d_proj[:, t, 2 * H :] = dc
            d_Uh += (r * hp).T @ dc
            drh = dc @ Uh.T
            dzr = np.concatenate([dh * (c - hp) * z * (1 - z), drh * hp * r * (1 - r)], axis=1)
            d_proj[:, t, : 2 * H] = dzr
            d_Uzr += hp.T @ dzr
            carry = dh * (1 - z) + drh * r + dzr @ Uzr.T
        ad._accum(proj, d_proj)
        ad._accum(U_zr, d_Uzr)
        ad._accum(U_h, d_Uh)

    return ad._result(out, (proj, U_zr, U_h), backward)


def gru_layer_forward(seq, p: GruCellParams, direction: str = "fwd", fused: bool = True) -> Tensor:
    """Run one direction over ``B x T x F`` and return ``B x T x H``.

    The backward direction walks t = T..1 and its outputs are re-reversed so
    position t of the result holds the state computed at t. Gate input
    projections for all steps come from one matmul. ``fused=False`` builds the
    recurrence from elementary tape ops instead, as a reference path.
    """
    seq = ad.as_tensor(seq)
    if seq.ndim != 3 or seq.shape[2] != p.input_size:
        raise ShapeMismatch(f"gru layer expects B x T x {p.input_size}, got {seq.shape}")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    B, T, F = seq.shape
    H = p.hidden_size
    if direction == "bwd":
        seq = ad.flip(seq, 1)
    W = ad.concat([p.W_z, p.W_r, p.W_h], axis=1)
    b = ad.concat([p.b_z, p.b_r, p.b_h], axis=0)
    U_zr = ad.concat([p.U_z, p.U_r], axis=1)
    proj = ad.reshape(ad.add_bias(ad.reshape(seq, (B * T, F)) @ W, b), (B, T, 3 * H))

    if fused:
        out = _gru_scan(proj, U_zr, p.U_h)
    else:
        h = Tensor(np.zeros((B, H), dtype=seq.dtype))
        outs = []
        for t in range(T):
            gates = ad.sigmoid(proj[:, t, : 2 * H] + h @ U_zr)
            z = gates[:, :H]
            r = gates[:, H:]
            cand = ad.tanh(proj[:, t, 2 * H :] + (r * h) @ p.U_h)
            h = h + z * (cand - h)
            outs.append(h)
        out = ad.stack(outs, axis=1)
    if direction == "bwd":
        out = ad.flip(out, 1)
    return out


def bigru_layer(seq, p: BiGruLayerParams, dropout_rate=0.0, training=False, rng=None) -> Tensor:
    fwd = gru_layer_forward(seq, p.forward, "fwd")
    bwd = gru_layer_forward(seq, p.backward, "bwd")
    if p.output_mode == "sequence":
        out = ad.concat([fwd, bwd], axis=2)
    elif p.output_mode == "last_concat":
        out = ad.concat([fwd[:, -1, :], bwd[:, 0, :]], axis=1)
    else:
        raise ValueError(f"unknown output mode {p.output_mode!r}")
    return ad.dropout(out, dropout_rate, training, rng)


def dense_forward(x, p: DenseParams) -> Tensor:
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != p.W.shape[0]:
        raise ShapeMismatch(f"dense expects B x {p.W.shape[0]}, got {x.shape}")
    y = ad.add_bias(x @ p.W, p.b)
    if p.activation == "relu":
        return ad.relu(y)
    if p.activation == "softmax":
        return ad.softmax(y)
    if p.activation == "none":
        return y
    raise ValueError(f"unknown activation {p.activation!r}")


def model_forward(batch, params: ModelParams, training=False, rng=None, return_logits=False) -> Tensor:
    """``B x T x F`` windows to ``B x n_classes`` probabilities (or logits)."""
    arch = params.arch
    x = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    if x.ndim != 3 or x.shape[2] != arch.n_features:
        raise ShapeMismatch(f"model expects B x T x {arch.n_features}, got {x.shape}")
    h = Tensor(x.astype(arch.dtype, copy=False))
    for layer in params.bigru:
        h = bigru_layer(h, layer, arch.dropout, training, rng)
    for d in params.dense[:-1]:
        h = ad.dropout(dense_forward(h, d), arch.dropout, training, rng)
    head = params.dense[-1]
    logits = dense_forward(h, DenseParams(head.W, head.b, "none"))
    return logits if return_logits else ad.softmax(logits)


def predict_proba(params: ModelParams, x, batch_size: int = 256) -> np.ndarray:
    """Inference-mode probabilities for an ``N x T x F`` array, batched."""
    x = np.asarray(x)
    out = [
        model_forward(x[i : i + batch_size], params).data
        for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.arch.n_classes))
