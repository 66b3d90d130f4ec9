"""Dense tensors with tape-based reverse-mode differentiation.

Operations only record onto a tape while one is active::

    with Tape() as tape:
        loss = softmax_cross_entropy(matmul(x, w), y)
    grads = tape.backward(loss, [w])

Outside a tape every op is a plain numpy evaluation, which is what inference
uses. Nodes are appended in execution order, so the tape is already
topologically sorted and backward is a single reverse sweep.

There is no implicit broadcasting: binary ops need equal shapes or a Python
scalar. Row-vector bias addition is its own op (``add_bias``).
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import BadRate, NonScalarLoss, ShapeMismatch

CE_CLAMP = 1e-12

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.array(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


class Tape:
    """Append-only record of the ops executed while the tape is active."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: dict[int, Tensor] = {}

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def _record(self, out, parents):
        self.nodes.append(out)
        for p in parents:
            if p.requires_grad and p._backward is None:
                self.leaves[id(p)] = p

    def backward(self, loss: Tensor, wrt=None):
        """Reverse sweep from a scalar ``loss``.

        ``wrt`` may be a list of tensors (result keyed by tensor) or a mapping
        name -> tensor (result keyed by name). When omitted, every trainable
        leaf the tape has seen gets an entry. Leaves that do not reach the loss
        receive zeros.
        """
        if loss.size != 1:
            raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
        for node in self.nodes:
            node.grad = None
        for leaf in self.leaves.values():
            leaf.grad = None
        if wrt is None:
            wrt = list(self.leaves.values())
        targets = wrt.values() if isinstance(wrt, dict) else wrt
        for t in targets:
            t.grad = None

        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
            for node in reversed(self.nodes):
                if node.grad is not None:
                    node._backward(node.grad)

        def grad_of(t):
            return t.grad if t.grad is not None else np.zeros_like(t.data)

        if isinstance(wrt, dict):
            return {k: grad_of(t) for k, t in wrt.items()}
        return {t: grad_of(t) for t in wrt}


def backward(loss: Tensor, wrt=None):
    """Backward through the innermost active tape."""
    if not _TAPES:
        raise RuntimeError("no active tape")
    return _TAPES[-1].backward(loss, wrt)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    tape = _TAPES[-1] if _TAPES else None
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward_fn
        out._parents = parents
        tape._record(out, parents)
    else:
        out.requires_grad = False
        out._backward = None
        out._parents = ()
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
        if t.grad.shape != t.data.shape:
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad += g


def _accum_at(t: Tensor, index, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad[index] += g


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        s = float(b)
        return _result(a.data + s, (a,), lambda g: _accum(a, g))
    _check_same(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        s = float(b)
        return _result(a.data - s, (a,), lambda g: _accum(a, g))
    _check_same(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return scale(a, b)
    _check_same(a, b, "mul")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(a.data * b.data, (a, b), bw)


def scale(a, s) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return _result(a.data * s, (a,), lambda g: _accum(a, g * s))


def add_bias(x, b) -> Tensor:
    """``x[..., F] + b[F]``, the one explicit row broadcast."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"add_bias: {x.shape} vs bias {b.shape}")
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        _accum(x, g)
        _accum(b, g.sum(axis=lead))

    return _result(x.data + b.data, (x, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), bw)


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    return _result(np.asarray(x.data.sum()), (x,), lambda g: _accum(x, g))


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.size

    return _result(np.asarray(x.data.mean()), (x,), lambda g: _accum(x, g / n))


# -- activations -----------------------------------------------------------------

def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)
    return _result(y, (x,), lambda g: _accum(x, g * y * (1.0 - y)))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: _accum(x, g * (1.0 - y * y)))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: _accum(x, g * mask))


def _softmax_np(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeMismatch(f"softmax expects B x K with K >= 2, got {x.shape}")
    p = _softmax_np(x.data)

    def bw(g):
        _accum(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _result(p, (x,), bw)


def cross_entropy(probs, labels) -> Tensor:
    """Mean over rows of ``-sum_k y_k ln(clamp(p_k))`` for probability inputs."""
    probs, labels = as_tensor(probs), as_tensor(labels)
    _check_same(probs, labels, "cross_entropy")
    n = probs.shape[0]
    clipped = np.clip(probs.data, CE_CLAMP, 1.0)
    loss = -(labels.data * np.log(clipped)).sum() / n

    def bw(g):
        inside = (probs.data >= CE_CLAMP) & (probs.data <= 1.0)
        _accum(probs, g * np.where(inside, -labels.data / clipped, 0.0) / n)

    return _result(np.asarray(loss, dtype=probs.dtype), (probs,), bw)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Fused softmax + cross-entropy on logits; gradient is ``(p - y) / B``."""
    logits, labels = as_tensor(logits), as_tensor(labels)
    _check_same(logits, labels, "softmax_cross_entropy")
    n = logits.shape[0]
    p = _softmax_np(logits.data)
    loss = -(labels.data * np.log(np.clip(p, CE_CLAMP, 1.0))).sum() / n

    def bw(g):
        _accum(logits, g * (p - labels.data) / n)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


# -- structural ------------------------------------------------------------------

def concat(tensors, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0]
    ax = axis % ref.ndim
    for t in ts[1:]:
        if t.ndim != ref.ndim or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(t.shape, ref.shape)) if i != ax
        ):
            raise ShapeMismatch(f"concat on axis {axis}: {ref.shape} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _result(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), bw)


def stack(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeMismatch(f"stack: {ts[0].shape} vs {t.shape}")

    def bw(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                _accum(t, np.take(g, i, axis=axis))

    return _result(np.stack([t.data for t in ts], axis=axis), tuple(ts), bw)


def take(x, index) -> Tensor:
    """Basic (view) indexing; the gradient is scattered back in place."""
    x = as_tensor(x)
    return _result(x.data[index], (x,), lambda g: _accum_at(x, index, g))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: _accum(x, g.reshape(x.shape)))


def flip(x, axis) -> Tensor:
    x = as_tensor(x)
    return _result(np.flip(x.data, axis=axis), (x,), lambda g: _accum(x, np.flip(g, axis=axis)))


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise BadRate(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: _accum(x, g * keep))
