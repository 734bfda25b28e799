"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is a tape rebuilt on every forward pass: each op
records its parents and a vector-Jacobian closure. ``backward`` walks the
tape once and adds the resulting gradients into the ``grad`` buffer of
every tensor that requires them, so calling it twice without zeroing
accumulates exactly twice the gradient.

Tensors are immutable once created except for their grad buffers, which
belong to exactly one graph at a time.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import GraphError, NumericError, ShapeError

_state = threading.local()  # independent graphs may run on independent threads


def _tracking() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    prev = _tracking()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _bad_item(self)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        a, b = self, _as_tensor(other)
        return _node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, _as_tensor(other)
        return _node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))

    def __rsub__(self, other):
        return _as_tensor(other).__sub__(self)

    def __mul__(self, other):
        a, b = self, _as_tensor(other)
        return _node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                _unbroadcast(g * a.data, b.data.shape)))

    __rmul__ = __mul__

    def __neg__(self):
        a = self
        return _node(-a.data, (a,), lambda g: (-g,))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return self * (1.0 / float(other))

    def __pow__(self, exponent):
        p = float(exponent)
        a = self
        return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))

    # -- shape manipulation -------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        a = self
        out = a.data.reshape(*shape)
        return _node(out, (a,), lambda g: (np.asarray(g).reshape(a.data.shape),))

    def transpose(self) -> "Tensor":
        if self.ndim != 2:
            raise ShapeError(f"transpose expects a 2-D tensor, got shape {self.data.shape}")
        a = self
        return _node(a.data.T.copy(), (a,), lambda g: (g.T,))

    # -- elementwise functions ----------------------------------------------

    def exp(self) -> "Tensor":
        a = self
        with np.errstate(over="ignore"):  # inf propagates; callers test finiteness
            out = np.exp(a.data)
        return _node(out, (a,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self
        return _node(np.log(a.data), (a,), lambda g: (g / a.data,))

    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)
        return _node(out, (a,), lambda g: (g * (1.0 - out * out),))

    def gelu(self) -> "Tensor":
        # tanh approximation; smooth everywhere, which keeps finite-difference
        # gradient checks tight
        a = self
        c = np.sqrt(2.0 / np.pi)
        inner = c * (a.data + 0.044715 * a.data ** 3)
        t = np.tanh(inner)
        out = 0.5 * a.data * (1.0 + t)

        def vjp(g):
            dinner = c * (1.0 + 3 * 0.044715 * a.data ** 2)
            return (g * (0.5 * (1.0 + t) + 0.5 * a.data * (1.0 - t * t) * dinner),)

        return _node(out, (a,), vjp)

    def clamp_min(self, floor: float) -> "Tensor":
        """max(floor, x) per element; gradient is exactly zero where x <= floor."""
        a = self
        f = float(floor)
        return _node(np.maximum(a.data, f), (a,), lambda g: (g * (a.data > f),))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.data.shape).copy(),)

        return _node(out, (a,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        count = a.data.size if axis is None else a.data.shape[axis]
        return a.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- autodiff -------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(node) into every reachable requires_grad node."""
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo = _toposort(self)
        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                held = flowing.get(id(parent))
                flowing[id(parent)] = np.asarray(pg) if held is None else held + pg


def _bad_item(t):
    raise ShapeError(f"item() requires a single-element tensor, got shape {t.data.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, vjp) -> Tensor:
    track = _tracking() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g over axes that were broadcast to reach g's shape."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not align: {a.shape} x {b.shape}")
    return _node(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    x = _as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def vjp(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _node(x.data[index].copy(), (x,), vjp)


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows (axis 0) by integer index; duplicates accumulate on backward."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(x.data[idx].copy(), (x,), vjp)


def gather_cols(x: Tensor, indices) -> Tensor:
    """out[i, j] = x[i, indices[i, j]] for a 2-D tensor and 2-D index array."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if x.ndim != 2 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_cols shapes do not align: {x.shape} with index {idx.shape}")
    rows = np.arange(x.shape[0])[:, None]

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (np.broadcast_to(rows, idx.shape), idx), g)
        return (full,)

    return _node(x.data[rows, idx].copy(), (x,), vjp)


def masked_fill(x: Tensor, mask, value: float) -> Tensor:
    """Replace entries where mask is True; no gradient flows through them."""
    x = _as_tensor(x)
    m = np.asarray(mask, dtype=bool)
    return _node(np.where(m, float(value), x.data), (x,),
                 lambda g: (np.where(m, 0.0, g),))


# -- softmax family ------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if x.data.shape[axis] == 0:
        raise ShapeError(f"softmax over an empty axis (shape {x.data.shape}, axis {axis})")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (x,), vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if x.data.shape[axis] == 0:
        raise ShapeError(f"log_softmax over an empty axis (shape {x.data.shape}, axis {axis})")
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must match last dimension {d}, "
            f"got {gain.data.shape} and {bias.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gain.data * xhat + bias.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbias = g.sum(axis=lead) if lead else g.copy()
        gd = g * gain.data
        dx = inv * (gd - gd.mean(axis=-1, keepdims=True)
                    - xhat * (gd * xhat).mean(axis=-1, keepdims=True))
        return (dx, dgain, dbias)

    return _node(out, (x, gain, bias), vjp)


# -- randomness ----------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class RngState:
    """Deterministic random stream: identical seed, identical samples."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape=None) -> np.ndarray:
        self.counter += 1
        return self._gen.standard_normal(shape)

    def uniform(self, shape=None) -> np.ndarray:
        self.counter += 1
        return self._gen.random(shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        self.counter += 1
        return self._gen.integers(low, high, size=size)

    def choice(self, options, size=None, replace: bool = True, p=None):
        self.counter += 1
        return self._gen.choice(options, size=size, replace=replace, p=p)

    def fork(self, tag: int) -> "RngState":
        """Derive an independent stream; deterministic in (seed, tag)."""
        return RngState((self.seed * _GOLDEN + 2 * int(tag) + 1) & _MASK64)


def reparameterize(mu: Tensor, logvar: Tensor, rng: RngState) -> Tensor:
    """Draw z = mu + sigma * eps with eps ~ N(0, I); differentiable in mu and logvar."""
    mu, logvar = _as_tensor(mu), _as_tensor(logvar)
    if mu.data.shape != logvar.data.shape:
        raise ShapeError(f"mu and logvar must match: {mu.data.shape} vs {logvar.data.shape}")
    if not np.isfinite(logvar.data).all() or not np.isfinite(mu.data).all():
        raise NumericError("reparameterize requires finite mu and logvar")
    eps = Tensor(rng.normal(mu.data.shape))
    z = mu + (logvar * 0.5).exp() * eps
    if not np.isfinite(z.data).all():
        raise NumericError("latent sample overflowed; log-variance is too large")
    return z


# -- gradient checking -----------------------------------------------------------

def finite_diff_check(f, params, h: float = 1e-4, max_coords_per_param: int | None = None,
                      rng: RngState | None = None) -> float:
    """Compare analytic gradients of scalar loss f() against central differences.

    ``f`` must be deterministic given fixed inputs (reseed any internal rng on
    every call). Checks every tensor in ``params``; when a tensor has more
    coordinates than ``max_coords_per_param``, a seeded sample of coordinates
    is probed. Returns the worst relative error
    |analytic - central| / max(|analytic|, |central|, 1e-8).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    pick = rng or RngState(0)

    worst = 0.0
    for p, analytic in zip(params, grads):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = pick.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        for i in coords:
            keep = flat[i]
            flat[i] = keep + h
            with no_grad():
                up = float(f().data)
            flat[i] = keep - h
            with no_grad():
                down = float(f().data)
            flat[i] = keep
            central = (up - down) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - central) / max(abs(a), abs(central), 1e-8)
            if err > worst:
                worst = err
    return worst
