"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: executing an op computes its value eagerly with numpy and,
when gradients are enabled and some input requires them, appends a record to
the global tape. `backward(loss)` replays the tape in exact reverse recording
order, so gradient accumulation order is deterministic. The tape is rebuilt
per forward pass; call `reset_tape()` at the start of each training step.

Repeated `backward` calls without a tape reset accumulate into `.grad`
(each call adds one full gradient pass).

Only the broadcasting the model code needs is supported: numpy-style
elementwise broadcasting for add/sub/mul/div, with gradients summed back
to the operand shapes.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    pass


class Tape:
    """Ordered op records: (output, inputs, rule). Reverse order is the
    backward visitation order."""

    __slots__ = ("records",)

    def __init__(self):
        self.records = []

    def reset(self):
        self.records.clear()

    def __len__(self):
        return len(self.records)


_tape = Tape()
_grad_enabled = True


def active_tape() -> Tape:
    return _tape


def reset_tape() -> None:
    _tape.reset()


@contextmanager
def no_grad():
    """Suppress tape recording (forward values still computed)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array with an optional gradient.

    node_id is the index of the op record that produced this tensor, or
    None for leaves (constants and parameters).
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple, rule) -> Tensor:
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node_id = len(_tape.records)
        _tape.records.append((out, inputs, rule))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def rule(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record(out, (a, b), rule)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def rule(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _record(out, (a, b), rule)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul expects [m,k] @ [k,n], got {a.data.shape} @ {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {a.data.shape}")
    out = Tensor(a.data.T.copy())
    return _record(out, (a,), lambda g: (g.T.copy(),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _record(out, (a,), rule)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.data.shape).copy(),)

    return _record(out, (a,), rule)


def sqrt(a: Tensor) -> Tensor:
    out = Tensor(np.sqrt(a.data))
    return _record(out, (a,), lambda g: (g * 0.5 / out.data,))


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))
    return _record(out, (a,), lambda g: (g * (1.0 - out.data * out.data),))


def col_slice(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-d tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"col_slice expects a 2-d tensor, got shape {a.data.shape}")
    out = Tensor(a.data[:, start:stop].copy())

    def rule(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return (ga,)

    return _record(out, (a,), rule)


def concat_cols(parts: list) -> Tensor:
    """Concatenate 2-d tensors along the feature axis."""
    widths = [p.data.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))

    def rule(g):
        grads, at = [], 0
        for w in widths:
            grads.append(g[:, at : at + w].copy())
            at += w
        return tuple(grads)

    return _record(out, tuple(parts), rule)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` by integer ids (ids are not differentiable)."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"embedding ids must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding id out of range for table with {table.data.shape[0]} rows"
        )
    out = Tensor(table.data[idx])

    def rule(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), rule)


# ------------------------------------------------------------- compositions


def gelu(a: Tensor) -> Tensor:
    """tanh-form GELU; smooth, so finite-difference checks stay tight."""
    c = 0.7978845608028654  # sqrt(2/pi)
    inner = mul(_wrap(c), add(a, mul(_wrap(0.044715), mul(a, mul(a, a)))))
    return mul(_wrap(0.5), mul(a, add(_wrap(1.0), tanh(inner))))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Row-stabilized softmax along `axis` (max is treated as a constant,
    which is exact because softmax is shift invariant)."""
    nd = x.data.ndim
    ax = axis if axis >= 0 else nd + axis
    if ax < 0 or ax >= nd:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.data.shape}")
    m = Tensor(x.data.max(axis=ax, keepdims=True))
    e = exp(sub(x, m))
    return div(e, sum_(e, axis=ax, keepdims=True))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    if x.data.shape[-1] == 0:
        raise ShapeError("layer_norm over an empty feature axis")
    ax = x.data.ndim - 1
    mu = mean(x, axis=ax, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=ax, keepdims=True)
    y = div(xc, sqrt(add(var, _wrap(eps))))
    return add(mul(y, gain), bias)


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Per-row cosine between [T,F] tensors. Zero rows score 0 (the eps only
    appears in the denominator)."""
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(
            f"cosine_similarity expects matching [T,F] shapes, got "
            f"{a.data.shape} and {b.data.shape}"
        )
    dot = sum_(mul(a, b), axis=1)
    na = sqrt(sum_(mul(a, a), axis=1))
    nb = sqrt(sum_(mul(b, b), axis=1))
    return div(dot, add(mul(na, nb), _wrap(eps)))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss shape mismatch: {pred.data.shape} vs {target.data.shape}"
        )
    d = sub(pred, target)
    return mean(mul(d, d))


def cross_entropy(logits: Tensor, targets, pad_id: int | None = None) -> Tensor:
    """Mean negative log-likelihood over non-pad positions.

    logits: [N,V]; targets: N integer class ids. Positions whose target
    equals pad_id are excluded from the mean.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N,V] logits, got {logits.data.shape}")
    n, v = logits.data.shape
    idx = np.asarray(targets, dtype=np.int64)
    if idx.shape != (n,):
        raise ShapeError(f"cross_entropy expects {n} targets, got shape {idx.shape}")
    keep = np.ones(n, dtype=bool) if pad_id is None else idx != pad_id
    live = idx[keep]
    if live.size == 0:
        raise ValueError("cross_entropy: every position is padding")
    if live.min() < 0 or live.max() >= v:
        raise IndexError(f"cross_entropy target id out of range [0,{v})")
    onehot = np.zeros((n, v))
    onehot[np.nonzero(keep)[0], live] = 1.0

    m = Tensor(logits.data.max(axis=1, keepdims=True))
    s = sub(logits, m)
    lse = log(sum_(exp(s), axis=1, keepdims=True))
    logp = sub(s, lse)
    picked = sum_(mul(logp, Tensor(onehot)))
    return div(neg(picked), _wrap(float(live.size)))


# ----------------------------------------------------------------- backward


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(tensor) into `.grad` of every tensor reachable
    from `loss` that requires grad. Loss must be scalar."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    records = _tape.records
    if not records:
        raise RuntimeError("backward called on an empty tape")
    flows = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    for out, inputs, rule in reversed(records):
        g = flows.get(id(out))
        if g is None:
            continue
        for inp, gi in zip(inputs, rule(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in flows:
                flows[key] = flows[key] + gi
            else:
                flows[key] = gi
                holders[key] = inp
    for key, t in holders.items():
        if t.requires_grad:
            t.grad = flows[key] if t.grad is None else t.grad + flows[key]


# --------------------------------------------------------- gradient checking


def numeric_gradient(f, arrays, h: float = 1e-5):
    """Central-difference gradients of scalar-valued f() w.r.t. each array.

    f takes no arguments and must recompute its value from the current
    contents of `arrays`, which are perturbed in place.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f()
            flat[i] = orig - h
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                            floor: float = 1e-2) -> float:
    """Max-norm relative error between two gradients.

    The denominator never drops below `floor`, so gradients that are exactly
    zero in theory (where the finite difference returns pure rounding noise)
    are compared by absolute difference instead of blowing up the ratio.
    """
    scale = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max() / scale)
