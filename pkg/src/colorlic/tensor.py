"""A small reverse-mode automatic differentiation engine on top of numpy.

Every operation returns a new :class:`Tensor`. When at least one input
requires a gradient, the result remembers its parents together with a
closure mapping the upstream gradient to one gradient per parent.
:meth:`Tensor.backward` walks the recorded graph in reverse topological
order and accumulates into ``.grad``.

Activations use the batch x channels x height x width layout.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

from .errors import DimensionError, NumericError, UsageError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def set_default_dtype(dtype) -> None:
    _state.dtype = np.dtype(dtype)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used by :func:`tensor` and parameter init."""
    old = default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    old = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(dtype or default_dtype())
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autograd ----------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise UsageError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise DimensionError(f"gradient shape {grad.shape} != tensor shape {self.shape}")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg), parent.shape)
                if pg.dtype != parent.dtype:
                    pg = pg.astype(parent.dtype)
                _check_finite(pg, f"backward of {node._op}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


class Parameter(Tensor):
    """A trainable leaf tensor with a unique dotted name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(np.array(data), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Build a tensor, casting to the current default dtype unless told otherwise."""
    return Tensor(np.array(data, dtype=dtype or default_dtype()), requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype.kind != "f":
        arr = arr.astype(default_dtype())
    return Tensor(arr)


def _topological_order(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    if grad.shape != shape:
        raise DimensionError(f"cannot reduce gradient {grad.shape} to {shape}")
    return grad


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    if parents and data.dtype != parents[0].dtype and data.dtype.kind == "f":
        data = data.astype(np.result_type(*[p.dtype for p in parents]))
    out = Tensor(data)
    out._op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    a = as_tensor(a)
    b = as_tensor(b)
    return a, b


def _scalar_like(x, ref: np.ndarray):
    # keep python/numpy scalars from promoting float32 activations
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype.kind != "f" or arr.dtype != ref.dtype:
        arr = arr.astype(ref.dtype)
    return Tensor(arr)


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    if np.any(b.data == 0):
        raise NumericError("division by zero")
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, _scalar_like(b, a.data)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return _scalar_like(a, b.data), b
    return _pair(a, b)


def power(a, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a constant real exponent."""
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise UsageError("power() takes a constant exponent")
    p = float(exponent)
    out = np.power(a.data, p)
    return _make(out, (a,), lambda g: (g * p * np.power(a.data, p - 1.0),), "power")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)  # overflow is reported by the finite check
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    """Square root; the gradient at exactly zero is taken to be zero."""
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise NumericError("sqrt of negative value")
    out = np.sqrt(a.data)

    def back(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _make(out, (a,), back, "sqrt")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def atan2(y, x) -> Tensor:
    """``arctan2(y, x)`` in radians. Gradient at the origin is zero."""
    y, x = _coerce(y, x)
    out = np.arctan2(y.data, x.data)

    def back(g):
        d = x.data * x.data + y.data * y.data
        safe = np.where(d > 0, d, 1.0)
        gy = np.where(d > 0, g * x.data / safe, 0.0)
        gx = np.where(d > 0, -g * y.data / safe, 0.0)
        return gy, gx

    return _make(out, (y, x), back, "atan2")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data).astype(a.dtype)
    return _make(out, (a,), lambda g: (g * special.expit(a.data),), "softplus")


def normal_cdf(a) -> Tensor:
    """Standard normal cumulative distribution function."""
    a = as_tensor(a)
    out = special.ndtr(a.data)
    inv_sqrt_2pi = float(1.0 / np.sqrt(2.0 * np.pi))
    return _make(out, (a,), lambda g: (g * inv_sqrt_2pi * np.exp(-0.5 * a.data * a.data),), "normal_cdf")


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero where clipping is active."""
    a = as_tensor(a)
    out = a.data
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
        out = np.maximum(out, lo)
    if hi is not None:
        mask &= a.data <= hi
        out = np.minimum(out, hi)
    return _make(out.astype(a.dtype), (a,), lambda g: (g * mask,), "clamp")


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``. ``cond`` is not differentiated."""
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)
    a, b = _coerce(a, b)
    out = np.where(cond, a.data, b.data)
    return _make(out, (a, b), lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)), "where")


def straight_through(a, value: np.ndarray) -> Tensor:
    """Forward ``value``, backward identity with respect to ``a``."""
    a = as_tensor(a)
    return _make(np.asarray(value, dtype=a.dtype), (a,), lambda g: (g,), "straight_through")


# -- reductions --------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def amax(a, axis=None, keepdims=False) -> Tensor:
    """Maximum over ``axis``; ties share the gradient equally."""
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out_k = a.data.max(axis=axes, keepdims=True)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        mask = a.data == out_k
        count = mask.sum(axis=axes, keepdims=True)
        return (g * mask / count,)

    out = out_k if keepdims else np.squeeze(out_k, axis=axes)
    return _make(np.asarray(out), (a,), back, "amax")


# -- shape manipulation ------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, index, g) if _is_fancy(index) else full.__setitem__(index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), back, "getitem")


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in ts], axis=axis)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts)))

    return _make(out, ts, back, "concat")


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy's ``@`` semantics (no broadcasting of batch dims)."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    out = a.data @ b.data

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), back, "matmul")


def avg_pool2(a) -> Tensor:
    """2x2 average pooling with stride 2; a trailing odd row/column is dropped."""
    a = as_tensor(a)
    n, c, h, w = a.shape
    h2, w2 = h // 2, w // 2
    core = a.data[:, :, : 2 * h2, : 2 * w2]
    out = core.reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        up = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        full[:, :, : 2 * h2, : 2 * w2] = up
        return (full,)

    return _make(out, (a,), back, "avg_pool2")


# -- gradient checking ------------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    inputs: Iterable[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
    order: int = 2,
) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    ``f`` is called with no arguments and must read the current contents of
    ``inputs`` (which are perturbed in place). Per coordinate the error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. With
    ``max_coords`` only that many randomly chosen coordinates per input are
    probed. ``order=4`` combines central differences at ``h`` and ``h/2``
    (Richardson) to cancel the O(h^2) truncation term.
    """
    if order not in (2, 4):
        raise UsageError("order must be 2 or 4")
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise UsageError("grad_check needs float64 inputs")
        t.requires_grad = True
        t.grad = None
    out = f()
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            for i in coords:
                orig = flat[i]

                def central(step):
                    flat[i] = orig + step
                    fp = f().item()
                    flat[i] = orig - step
                    fm = f().item()
                    flat[i] = orig
                    return (fp - fm) / (2.0 * step)

                num = central(h)
                if order == 4:
                    num = (4.0 * central(h / 2) - num) / 3.0
                ana = ga.reshape(-1)[i]
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                worst = max(worst, err)
    for t in inputs:
        t.grad = None
    return worst
