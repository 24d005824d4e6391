"""Reverse-mode automatic differentiation over float64 numpy arrays.

Eager evaluation with a recorded tape: every op returns a new Tensor that
remembers its parents and a closure that routes the output gradient back to
them. No graph compilation, no views shared with caller-owned buffers.
All math is float64 so the finite-difference checks below are meaningful.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "constant",
    "concat",
    "matmul",
    "softmax",
    "backward",
    "finite_diff_check",
]


class ShapeError(ValueError):
    pass


_GRAD_ENABLED = True


class no_grad:
    """Context manager that skips tape recording (forward-only evaluation)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, lambda a, b: a + b,
                       lambda g, a, b: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, lambda a, b: a - b,
                       lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _wrap(other).__sub__(self)

    def __mul__(self, other):
        return _binary(self, other, lambda a, b: a * b,
                       lambda g, a, b: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, lambda a, b: a / b,
                       lambda g, a, b: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return _wrap(other).__truediv__(self)

    def __neg__(self):
        return _unary(self, lambda a: -a, lambda g, a, y: -g)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        return _unary(self, lambda a: a ** p,
                      lambda g, a, y: g * p * a ** (p - 1))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        out = Tensor(self.data[idx])
        if _GRAD_ENABLED and self.requires_grad:
            out.requires_grad = True
            out._parents = (self,)
            shape = self.data.shape

            def bw(g, t=self, idx=idx):
                full = np.zeros(shape)
                np.add.at(full, idx, g)
                _accum(t, full)

            out._backward_fn = bw
        return out

    # -- shape ops -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return _unary(self, lambda a: a.reshape(shape),
                      lambda g, a, y: g.reshape(old))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(int(i) for i in np.argsort(axes))
        return _unary(self, lambda a: np.ascontiguousarray(a.transpose(axes)),
                      lambda g, a, y: g.transpose(inv))

    # -- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        in_shape = self.data.shape

        def bw_shape(g):
            if axis is None:
                return np.broadcast_to(g, in_shape)
            ax = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                g = np.expand_dims(g, ax)
            return np.broadcast_to(g, in_shape)

        return _unary(self, lambda a: a.sum(axis=axis, keepdims=keepdims),
                      lambda g, a, y: bw_shape(g))

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in ax:
                n *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities -------------------------------------

    def exp(self):
        return _unary(self, np.exp, lambda g, a, y: g * y)

    def log(self):
        return _unary(self, np.log, lambda g, a, y: g / a)

    def sin(self):
        return _unary(self, np.sin, lambda g, a, y: g * np.cos(a))

    def cos(self):
        return _unary(self, np.cos, lambda g, a, y: -g * np.sin(a))

    def tanh(self):
        return _unary(self, np.tanh, lambda g, a, y: g * (1.0 - y * y))

    def sqrt(self):
        return _unary(self, np.sqrt, lambda g, a, y: g * 0.5 / y)

    def abs(self):
        return _unary(self, np.abs, lambda g, a, y: g * np.sign(a))

    def relu(self):
        return _unary(self, lambda a: np.maximum(a, 0.0),
                      lambda g, a, y: g * (a > 0.0))

    def gelu(self):
        # tanh approximation; smooth everywhere, which keeps central
        # finite differences honest on full model graphs
        c = 0.7978845608028654  # sqrt(2/pi)
        cache: list[np.ndarray] = []

        def fwd(a):
            t = np.tanh(c * (a + 0.044715 * (a * a * a)))
            cache.append(t)
            return 0.5 * a * (1.0 + t)

        def bw(g, a, y):
            t = cache[0]
            du = c * (1.0 + 3 * 0.044715 * (a * a))
            return g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * du)

        return _unary(self, fwd, bw)


# -- node plumbing -----------------------------------------------------


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    return Tensor(data)


def _accum(t: Tensor, g: np.ndarray) -> None:
    # never mutate gradient buffers in place: incoming arrays may be shared
    # between parents (add routes one buffer to both) or be views
    if t.grad is None:
        t.grad = g if g.dtype == np.float64 else g.astype(np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _unary(t: Tensor, fwd, bw) -> Tensor:
    out = Tensor(fwd(t.data))
    if _GRAD_ENABLED and t.requires_grad:
        out.requires_grad = True
        out._parents = (t,)
        a = t.data
        y = out.data
        out._backward_fn = lambda g: _accum(t, bw(g, a, y))
    return out


def _binary(t: Tensor, other, fwd, bw) -> Tensor:
    u = _wrap(other)
    out = Tensor(fwd(t.data, u.data))
    if _GRAD_ENABLED and (t.requires_grad or u.requires_grad):
        out.requires_grad = True
        out._parents = (t, u)
        a, b = t.data, u.data

        def backward_fn(g):
            ga, gb = bw(g, a, b)
            if t.requires_grad:
                _accum(t, _unbroadcast(ga, a.shape))
            if u.requires_grad:
                _accum(u, _unbroadcast(gb, b.shape))

        out._backward_fn = backward_fn
    return out


# -- composite-shape primitives ----------------------------------------


def matmul(t: Tensor, other) -> Tensor:
    u = _wrap(other)
    a, b = t.data, u.data
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor(a @ b)
    if _GRAD_ENABLED and (t.requires_grad or u.requires_grad):
        out.requires_grad = True
        out._parents = (t, u)

        def backward_fn(g):
            if t.requires_grad:
                ga = g @ b.swapaxes(-1, -2)
                _accum(t, _unbroadcast(ga, a.shape))
            if u.requires_grad:
                gb = a.swapaxes(-1, -2) @ g
                _accum(u, _unbroadcast(gb, b.shape))

        out._backward_fn = backward_fn
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if _GRAD_ENABLED and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out._parents = tuple(tensors)
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def backward_fn(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    _accum(t, piece)

        out._backward_fn = backward_fn
    return out


def normalize_rows(t: Tensor, eps: float = 1e-8) -> Tensor:
    """Zero-mean unit-variance normalization over the last axis."""
    a = t.data
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv
    out = Tensor(y)
    if _GRAD_ENABLED and t.requires_grad:
        out.requires_grad = True
        out._parents = (t,)

        def backward_fn(g):
            gm = g.mean(axis=-1, keepdims=True)
            gy = (g * y).mean(axis=-1, keepdims=True)
            _accum(t, inv * (g - gm - y * gy))

        out._backward_fn = backward_fn
    return out


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    a = t.data
    y = a - a.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if _GRAD_ENABLED and t.requires_grad:
        out.requires_grad = True
        out._parents = (t,)

        def backward_fn(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accum(t, y * (g - dot))

        out._backward_fn = backward_fn
    return out


# -- backward pass ------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad ancestor of a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
            if node._parents:
                node.grad = None  # free intermediate buffers early


def finite_diff_check(graph, params: dict[str, Tensor], n_probes: int = 100,
                      h: float = 1e-5, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference grads.

    `graph` is a deterministic callable mapping `params` to a scalar loss
    Tensor. Probes are random (parameter, entry) pairs. Entries where both
    gradients fall below the fp64 difference resolution (1e-7) count as
    exact matches, since a central difference cannot resolve them.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    for t in params.values():
        t.grad = None
    loss = graph(params)
    backward(loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items()}

    rng = np.random.Generator(np.random.Philox(key=seed))
    names = sorted(params.keys())
    worst = 0.0
    for _ in range(n_probes):
        name = names[rng.integers(len(names))]
        t = params[name]
        flat = t.data.reshape(-1)
        i = int(rng.integers(flat.size))
        keep = flat[i]
        flat[i] = keep + h
        lp = graph(params).item()
        flat[i] = keep - h
        lm = graph(params).item()
        flat[i] = keep
        fd = (lp - lm) / (2.0 * h)
        an = float(analytic[name].reshape(-1)[i])
        if abs(fd) < 1e-7 and abs(an) < 1e-7:
            continue
        err = abs(fd - an) / max(abs(fd), abs(an))
        worst = max(worst, err)
    return worst
