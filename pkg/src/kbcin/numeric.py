"""Dense float64 tensors with reverse-mode differentiation.

Every differentiable op records its inputs and a backward closure on the
output tensor. Each tensor carries a global sequence number, so sorting the
reachable graph by that number gives exact execution order; ``backward``
walks it in reverse.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_seq = itertools.count()
_grad_enabled = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class PreconditionError(ValueError):
    """An op was called outside its domain (empty pooling, all-masked softmax, ...)."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or inf."""


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def enable_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = True
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_seq)
        self._op = "leaf"

    # -- basic properties ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label})"

    # -- operators -------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    # -- differentiation -------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if not self.requires_grad:
            raise PreconditionError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise PreconditionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        tape = _reachable(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in tape:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _reachable(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require grad, latest first."""
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen[id(node)] = node
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append(p)
    return sorted(seen.values(), key=lambda n: n._seq, reverse=True)


def _non_finite_origin(root: Tensor) -> str:
    """Name of the earliest recorded op whose output is non-finite but whose inputs are finite."""
    for node in reversed(_reachable(root)):
        if node._backward is None or np.isfinite(node.data).all():
            continue
        if all(np.isfinite(p.data).all() for p in node._parents):
            return node._op
    return root._op


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), back, "div")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input was inside."""
    inside = (x.data >= lo) & (x.data <= hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


# -- activations -----------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    pos = x.data >= 0
    return _result(np.where(pos, x.data, slope * x.data), (x,),
                   lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    pos = x.data > 0
    neg = alpha * np.expm1(np.minimum(x.data, 0.0))
    y = np.where(pos, x.data, neg)
    return _result(y, (x,), lambda g: (np.where(pos, g, g * (neg + alpha)),), "elu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def activation(x: Tensor, kind: str, slope: float = 0.01) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "elu":
        return elu(x)
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


# -- linear algebra and shape ops ------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # fold batch dims into one GEMM instead of summing a [..., K, N] stack
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(a.data @ b.data, (a, b), back, "matmul")


def linear_map(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W (+ b)`` with a shape check that names both operands."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear_map: input shape {x.shape} incompatible with weight shape {W.shape}")
    out = matmul(x, W)
    if b is not None:
        if b.shape != (W.shape[1],):
            raise DimensionError(f"linear_map: bias shape {b.shape} incompatible with weight shape {W.shape}")
        out = add(out, b)
    return out


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def take(x: Tensor, index) -> Tensor:
    """Numpy indexing; backward scatters with accumulation so repeated indices add up."""
    if isinstance(index, Tensor):
        raise TypeError("index with arrays, not tensors")

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(x.data[index], (x,), back, "take")


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]}): {ids.min()}..{ids.max()}")
    return take(table, ids)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(t.ndim) if d != ax
        ):
            raise DimensionError(f"concat along axis {axis}: shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=ax) for k in range(len(tensors))
        )

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, back, "concat")


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- attention primitives ------------------------------------------------------

def masked_softmax(scores: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Softmax over ``axis`` restricted to entries where ``mask`` is true.

    Masked-out entries come out as exactly 0 and receive zero gradient.
    ``mask`` broadcasts against ``scores``. Every slice along ``axis`` must
    keep at least one entry.
    """
    z = scores.data
    if mask is None:
        keep = np.ones(z.shape, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not keep.any(axis=axis).all():
            raise PreconditionError("masked_softmax: a slice has every entry masked out")
    shifted = np.where(keep, z, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(keep, np.exp(shifted), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (scores,), back, "masked_softmax")


def softmax(scores: Tensor, axis: int = -1) -> Tensor:
    return masked_softmax(scores, None, axis)


def max_pool_rows(x: Tensor, mask=None) -> Tensor:
    """Column-wise max over the second-to-last axis.

    ``x`` is [..., L, d]; ``mask`` (optional, [..., L]) marks rows that take
    part. The gradient goes to one row per column, the lowest index on ties.
    """
    if x.ndim < 2 or x.shape[-2] == 0:
        raise PreconditionError(f"max_pool_rows needs at least one row, got shape {x.shape}")
    z = x.data
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any(axis=-1).all():
            raise PreconditionError("max_pool_rows: a row set is empty after masking")
        z = np.where(m[..., None], z, -np.inf)
    arg = np.argmax(z, axis=-2)  # first index on ties
    idx = np.expand_dims(arg, -2)
    out = np.take_along_axis(x.data, idx, axis=-2).squeeze(-2)

    def back(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, np.expand_dims(g, -2), axis=-2)
        return (full,)

    return _result(out, (x,), back, "max_pool_rows")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        gg = _unbroadcast(g * xhat, gamma.shape)
        gb = _unbroadcast(g, beta.shape)
        return gx, gg, gb

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), back, "layer_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: seeded Bernoulli keep-mask scaled by 1/(1-p); identity at eval."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise PreconditionError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# -- initialisation ----------------------------------------------------------------

# "glorot": matrices uniform in +-sqrt(6 / (fan_in + fan_out)), tables N(0, 1).
# "fan_in": matrices uniform in +-1/sqrt(fan_in), tables N(0, 0.02^2).
INIT_SCHEMES = ("glorot", "fan_in")
_TABLE_STD = {"glorot": 1.0, "fan_in": 0.02}


def _check_scheme(scheme: str) -> None:
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"init scheme must be one of {INIT_SCHEMES}, got {scheme!r}")


def init_matrix(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None,
                scheme: str = "glorot") -> Tensor:
    _check_scheme(scheme)
    if scheme == "glorot":
        bound = np.sqrt(6.0 / (fan_in + fan_out))
    else:
        bound = 1.0 / np.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name)


def init_embedding(rng: np.random.Generator, rows: int, dim: int, std: float | None = None,
                   name: str | None = None, scheme: str = "glorot") -> Tensor:
    _check_scheme(scheme)
    return parameter(rng.normal(0.0, _TABLE_STD[scheme] if std is None else std, size=(rows, dim)), name)


# -- verification harness ----------------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between backprop and central differences.

    The error per entry is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    With ``max_entries`` set, at most that many entries per parameter are
    probed, chosen by ``rng``; otherwise every entry is.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    if not np.isfinite(out.data).all():
        raise NonFiniteError(f"grad_check: objective not finite at the base point, first at op "
                             f"'{_non_finite_origin(out)}'")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            for k in idx:
                orig = flat[k]
                flat[k] = orig + eps
                up = f()
                flat[k] = orig - eps
                down = f()
                flat[k] = orig
                for side, val in (("+", up), ("-", down)):
                    if not np.isfinite(val.data).all():
                        flat[k] = orig + eps if side == "+" else orig - eps
                        with enable_grad():
                            op = _non_finite_origin(f())
                        flat[k] = orig
                        raise NonFiniteError(
                            f"grad_check: objective not finite at {p.name or 'param'}[{k}]{side}eps, first at op '{op}'"
                        )
                num = (up.item() - down.item()) / (2 * eps)
                a = ga.reshape(-1)[k]
                err = abs(a - num) / max(1.0, abs(a), abs(num))
                worst = max(worst, err)
    return worst
