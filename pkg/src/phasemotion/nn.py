"""Model building blocks on top of the autodiff tape.

Parameters live in a ParamStore keyed by dotted names; blocks register
their parameters at construction time and are pure functions of the store
afterwards, so two stores with equal parameter arrays produce bitwise
equal outputs.
"""
from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, backward, concat, matmul, normalize_rows, softmax
from .rng import RngState

NEG_INF = -1e9  # additive mask value for padded keys


class GradientError(ValueError):
    pass


def sinusoidal_pe(n: int, d: int) -> np.ndarray:
    """Standard interleaved sin/cos positional embedding, rows 0..n-1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return sinusoidal_pe_at(np.arange(n, dtype=np.float64), d)


def sinusoidal_pe_at(positions: np.ndarray, d: int) -> np.ndarray:
    """Positional embedding evaluated at arbitrary (possibly negative) positions."""
    if d % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {d}")
    positions = np.asarray(positions, dtype=np.float64)
    half = np.arange(d // 2, dtype=np.float64)
    freqs = np.power(10000.0, -2.0 * half / d)
    angles = positions[..., None] * freqs
    out = np.empty(positions.shape + (d,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


class ParamStore:
    """Named parameter tensors plus Adam moment buffers and a step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def create(self, name: str, shape: tuple, rng: RngState, fan_in: int) -> Tensor:
        bound = 1.0 / math.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, *shape))

    def zeros(self, name: str, shape: tuple) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple) -> Tensor:
        return self.add(name, np.ones(shape))

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def named_grads(self) -> dict[str, np.ndarray]:
        return {k: t.grad for k, t in self.params.items() if t.grad is not None}

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            if k not in arrays:
                raise KeyError(f"checkpoint missing parameter '{k}'")
            if arrays[k].shape != t.data.shape:
                raise ValueError(f"shape mismatch for '{k}': "
                                 f"{arrays[k].shape} != {t.data.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)


def evaluate_with_grads(graph, params: dict[str, Tensor]):
    """Run `graph(params)` to a scalar loss and return (loss, named grads)."""
    for t in params.values():
        t.grad = None
    loss = graph(params)
    backward(loss)
    return loss, {k: t.grad for k, t in params.items() if t.grad is not None}


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> ParamStore:
    """Standard bias-corrected Adam update over the supplied gradients."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    b1, b2 = betas
    store.step += 1
    t = store.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter '{name}'")
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter '{name}'")
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        store.params[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


# -- blocks --------------------------------------------------------------


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: RngState):
        self.w = store.create(f"{name}.w", (d_in, d_out), rng, fan_in=d_in)
        self.b = store.zeros(f"{name}.b", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int, eps: float = 1e-8):
        self.gamma = store.ones(f"{name}.gamma", (d,))
        self.beta = store.zeros(f"{name}.beta", (d,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return normalize_rows(x, self.eps) * self.gamma + self.beta


class MultiHeadAttention:
    """Scaled dot-product attention with an additive key-padding mask."""

    def __init__(self, store: ParamStore, name: str, d_model: int, n_heads: int,
                 rng: RngState):
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        self.h = n_heads
        self.dh = d_model // n_heads
        self.wq = Linear(store, f"{name}.q", d_model, d_model, rng)
        self.wk = Linear(store, f"{name}.k", d_model, d_model, rng)
        self.wv = Linear(store, f"{name}.v", d_model, d_model, rng)
        self.wo = Linear(store, f"{name}.o", d_model, d_model, rng)

    def _split(self, x: Tensor, b: int, t: int) -> Tensor:
        return x.reshape(b, t, self.h, self.dh).transpose(0, 2, 1, 3)

    def __call__(self, q_in: Tensor, kv_in: Tensor,
                 key_mask: np.ndarray | None = None) -> Tensor:
        b, tq = q_in.shape[0], q_in.shape[1]
        tk = kv_in.shape[1]
        q = self._split(self.wq(q_in), b, tq)
        k = self._split(self.wk(kv_in), b, tk)
        v = self._split(self.wv(kv_in), b, tk)
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.dh))
        if key_mask is not None:
            scores = scores + Tensor(key_mask.reshape(b, 1, 1, tk))
        attn = softmax(scores, axis=-1)
        mix = matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, tq, self.h * self.dh)
        return self.wo(mix)


class FeedForward:
    def __init__(self, store: ParamStore, name: str, d_model: int, d_ff: int,
                 rng: RngState):
        self.fc1 = Linear(store, f"{name}.fc1", d_model, d_ff, rng)
        self.fc2 = Linear(store, f"{name}.fc2", d_ff, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).gelu())


class EncoderLayer:
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, store: ParamStore, name: str, d_model: int, n_heads: int,
                 d_ff: int, rng: RngState):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d_model)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d_model, n_heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d_model)
        self.ff = FeedForward(store, f"{name}.ff", d_model, d_ff, rng)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, key_mask)
        return x + self.ff(self.ln2(x))


class CrossAttentionLayer:
    """Pre-norm self-attention, cross-attention to a memory, feed-forward."""

    def __init__(self, store: ParamStore, name: str, d_model: int, n_heads: int,
                 d_ff: int, rng: RngState):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d_model)
        self.self_attn = MultiHeadAttention(store, f"{name}.self", d_model, n_heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d_model)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross", d_model, n_heads, rng)
        self.ln3 = LayerNorm(store, f"{name}.ln3", d_model)
        self.ff = FeedForward(store, f"{name}.ff", d_model, d_ff, rng)

    def __call__(self, x: Tensor, memory: Tensor,
                 self_mask: np.ndarray | None = None,
                 memory_mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = x + self.self_attn(h, h, self_mask)
        x = x + self.cross_attn(self.ln2(x), memory, memory_mask)
        return x + self.ff(self.ln3(x))


def padding_mask(lengths: np.ndarray, max_len: int) -> np.ndarray:
    """Additive [B, max_len] mask: 0 on valid positions, NEG_INF on padding."""
    idx = np.arange(max_len)
    return np.where(idx[None, :] < np.asarray(lengths)[:, None], 0.0, NEG_INF)
