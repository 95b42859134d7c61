"""Small transformer building blocks on top of the autodiff core.

Modules register parameters (and child modules) in attribute-assignment
order, which makes checkpoint layouts and gradient accumulation order
deterministic.
"""

from __future__ import annotations

import functools
import math

import numpy as np

from .autodiff import (
    Tensor,
    col_slice,
    concat_cols,
    gelu,
    layer_norm,
    matmul,
    softmax,
    transpose,
)


class Module:
    def __setattr__(self, name, value):
        units = self.__dict__.setdefault("_units", {})
        if isinstance(value, (Module, Tensor)):
            units[name] = value
        elif isinstance(value, list) and value and all(
            isinstance(v, (Module, Tensor)) for v in value
        ):
            units[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, unit in self.__dict__.get("_units", {}).items():
            path = prefix + name
            if isinstance(unit, Tensor):
                out.append((path, unit))
            elif isinstance(unit, Module):
                out.extend(unit.named_parameters(path + "."))
            else:
                for i, u in enumerate(unit):
                    sub = f"{path}.{i}"
                    if isinstance(u, Tensor):
                        out.append((sub, u))
                    else:
                        out.extend(u.named_parameters(sub + "."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def load_state(self, state: dict):
        """Copy arrays into parameters by name; shapes must match exactly."""
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch: missing={missing} extra={extra}")
        for name, p in params.items():
            arr = state[name]
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: shape {arr.shape} != {p.data.shape}"
                )
            p.data = arr.astype(np.float64).copy()
            p.grad = None

    def state_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}


def parameter_count(module: Module) -> int:
    return sum(p.data.size for p in module.parameters())


def set_requires_grad(params, flag: bool):
    for p in params:
        p.requires_grad = flag
        if not flag:
            p.grad = None


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = Tensor(rng.normal(0.0, in_dim ** -0.5, (in_dim, out_dim)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        object.__setattr__(self, "eps", eps)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.lin1 = Linear(dim, hidden, rng)
        self.lin2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(gelu(self.lin1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention; queries from `q_in`, keys/values from
    `kv_in`. An additive mask (0 / -inf) of shape [Nq, Nkv] may be given."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        if dim % n_heads != 0:
            raise ValueError(f"dim {dim} not divisible by n_heads {n_heads}")
        object.__setattr__(self, "n_heads", n_heads)
        object.__setattr__(self, "head_dim", dim // n_heads)
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: Tensor | None = None,
                 collect_weights: list | None = None) -> Tensor:
        q, k, v = self.wq(q_in), self.wk(kv_in), self.wv(kv_in)
        scale = 1.0 / math.sqrt(self.head_dim)
        heads = []
        for h in range(self.n_heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qs = col_slice(q, lo, hi)
            ks = col_slice(k, lo, hi)
            vs = col_slice(v, lo, hi)
            scores = matmul(qs, transpose(ks)) * scale
            if mask is not None:
                scores = scores + mask
            w = softmax(scores, axis=-1)
            if collect_weights is not None:
                collect_weights.append(w.data)
            heads.append(matmul(w, vs))
        return self.wo(concat_cols(heads))


class TransformerLayer(Module):
    """Pre-norm self-attention + feed-forward residual block."""

    def __init__(self, dim: int, n_heads: int, ffn_hidden: int,
                 rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_hidden, rng)

    def __call__(self, x: Tensor, mask: Tensor | None = None,
                 collect_weights: list | None = None) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, mask, collect_weights)
        return x + self.ffn(self.ln2(x))


@functools.lru_cache(maxsize=256)
def sinusoidal_positions(n: int, dim: int) -> np.ndarray:
    """Fixed sin/cos positional table [n, dim]."""
    pos = np.arange(n)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    table.setflags(write=False)
    return table


@functools.lru_cache(maxsize=256)
def causal_mask(n: int) -> np.ndarray:
    """Additive mask: position i may attend to j <= i only."""
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -np.inf
    m.setflags(write=False)
    return m
