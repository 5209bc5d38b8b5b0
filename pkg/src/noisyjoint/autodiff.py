"""Define-by-run reverse-mode automatic differentiation on float64 numpy arrays.

Every differentiable op returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks that tape once and then frees it; a second call on the
same loss raises :class:`GraphFreedError`. Leaf gradients accumulate across
backward calls until :meth:`Tensor.zero_grad` (or an optimizer step) clears them.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Tensor", "Parameter", "Adam", "ShapeError", "GraphFreedError", "NonFiniteError",
    "NondeterministicError", "no_grad", "backward", "forward_op", "adam_step", "grad_check",
    "matmul", "add", "sub", "mul", "div", "neg", "multiply_scalar", "add_scalar",
    "concat_last_axis", "relu", "tanh", "exp", "log", "softmax_last_axis", "mean", "sum",
    "square", "elementwise_min_with_scalar", "elementwise_max_with_scalar", "clip",
    "gaussian_reparameterize", "column", "slice_last_axis", "linear", "concat_first_axis",
    "slice_first_axis", "take_columns", "reshape",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


class GraphFreedError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class NondeterministicError(RuntimeError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array with an optional gradient and a link into the tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_freed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"
        self._freed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else multiply_scalar(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else multiply_scalar(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        # routing is fixed at record time; later requires_grad toggles do not matter
        out._parents = tuple(p if p.requires_grad else None for p in parents)
        out._backward = backward_fn
    out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- binary ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad

    def bw(g):
        return (g @ bd.T if ra else None, ad.T @ g if rb else None)

    return _make(ad @ bd, (a, b), bw, "matmul")


def linear(x: Tensor, W: Tensor, b: Tensor, activation: str | None = None) -> Tensor:
    """Fused ``x @ W + b`` with an optional ReLU, recorded as a single tape node."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError("linear", x.shape, W.shape, b.shape)
    xd, Wd = x.data, W.data
    out = xd @ Wd
    out += b.data
    rx, rw, rb = x.requires_grad, W.requires_grad, b.requires_grad
    if activation == "relu":
        np.maximum(out, 0.0, out=out)
        mask = out > 0
    elif activation is not None:
        raise ValueError(f"unsupported activation {activation!r}")
    else:
        mask = None

    def bw(g):
        if mask is not None:
            g = g * mask
        return (g @ Wd.T if rx else None, xd.T @ g if rw else None, g.sum(axis=0) if rb else None)

    return _make(out, (x, W, b), bw, "linear" if activation is None else "linear_relu")


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if ra else None,
                _unbroadcast(g * ad, bd.shape) if rb else None)

    return _make(ad * bd, (a, b), bw, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    ra, rb = a.requires_grad, b.requires_grad

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape) if ra else None,
                _unbroadcast(-g * out / bd, bd.shape) if rb else None)

    return _make(out, (a, b), bw, "div")


def concat_last_axis(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat_last_axis", ())
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError("concat_last_axis", tensors[0].shape, t.shape)
    splits = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=-1))

    return _make(np.concatenate([t.data for t in tensors], axis=-1), tensors, bw, "concat")


# ----------------------------------------------------------------- unary ops

def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def multiply_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "multiply_scalar")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + float(c), (a,), lambda g: (g,), "add_scalar")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def softmax_last_axis(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def elementwise_min_with_scalar(a: Tensor, c: float) -> Tensor:
    """``min(a, c)``; the gradient is 0 wherever the clamp is active (``a >= c``)."""
    mask = a.data < c
    return _make(np.where(mask, a.data, c), (a,), lambda g: (g * mask,), "min_scalar")


def elementwise_max_with_scalar(a: Tensor, c: float) -> Tensor:
    mask = a.data > c
    return _make(np.where(mask, a.data, c), (a,), lambda g: (g * mask,), "max_scalar")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data > lo) & (a.data < hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clip")


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = a.shape
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),), "sum")

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _make(a.data.sum(axis=axis), (a,), bw, "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape
    if axis is None:
        n = a.data.size
        return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape),), "mean")
    n = shape[axis]

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), shape),)

    return _make(a.data.mean(axis=axis), (a,), bw, "mean")


def column(a: Tensor, j: int) -> Tensor:
    """``a[:, j]`` as a 1-D tensor."""
    if a.ndim != 2:
        raise ShapeError("column", a.shape)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[:, j] = g
        return (out,)

    return _make(a.data[:, j].copy(), (a,), bw, "column")


def concat_first_axis(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    tail = tensors[0].shape[1:]
    for t in tensors[1:]:
        if t.shape[1:] != tail:
            raise ShapeError("concat_first_axis", tensors[0].shape, t.shape)
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=0))

    return _make(np.concatenate([t.data for t in tensors], axis=0), tensors, bw, "concat_rows")


def slice_first_axis(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"slice_first_axis[{start}:{stop}]", a.shape)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _make(a.data[start:stop], (a,), bw, "slice_rows")


def take_columns(a: Tensor, idx: Sequence[int]) -> Tensor:
    """``a[:, idx]`` for a 2-D tensor (indices must be distinct)."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim != 2 or len(set(idx.tolist())) != len(idx) or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[1])):
        raise ShapeError("take_columns", a.shape, tuple(idx.tolist()))
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[:, idx] = g
        return (out,)

    return _make(a.data[:, idx], (a,), bw, "take_columns")


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, shape) from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def slice_last_axis(a: Tensor, start: int, stop: int) -> Tensor:
    """``a[..., start:stop]``; the gradient is zero-padded back to ``a``'s shape."""
    if not 0 <= start < stop <= a.shape[-1]:
        raise ShapeError(f"slice_last_axis[{start}:{stop}]", a.shape)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _make(a.data[..., start:stop], (a,), bw, "slice")


def gaussian_reparameterize(mu: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    """``mu + exp(logvar / 2) * eps`` with ``eps ~ N(0, I)`` drawn from ``rng``."""
    if mu.shape != logvar.shape:
        raise ShapeError("gaussian_reparameterize", mu.shape, logvar.shape)
    eps = rng.standard_normal(mu.shape)
    sigma = np.exp(0.5 * logvar.data)
    noise = sigma * eps

    def bw(g):
        return (g, 0.5 * g * noise)

    return _make(mu.data + noise, (mu, logvar), bw, "reparameterize")


_OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "multiply_scalar": multiply_scalar,
    "concat_last_axis": lambda *ts: concat_last_axis(ts),
    "relu": relu,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "softmax_last_axis": softmax_last_axis,
    "mean": mean,
    "sum": sum,
    "elementwise_min_with_scalar": elementwise_min_with_scalar,
    "gaussian_reparameterize": gaussian_reparameterize,
}


def forward_op(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by name, e.g. ``forward_op("matmul", a, b)``."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op {op_kind!r}; expected one of {sorted(_OPS)}") from None
    return fn(*inputs, **kwargs)


# ------------------------------------------------------------------ backward

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, check_finite: bool = True) -> None:
    """Populate ``.grad`` of every tensor that ``loss`` depends on through the tape.

    Leaf gradients accumulate into any existing ``.grad``; interior gradients are
    overwritten. The tape is released afterwards.
    """
    if loss.data.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    if loss._freed:
        raise GraphFreedError("backward called twice on the same graph; recompute the forward pass")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor with requires_grad=True")
    order = _topo(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._op == "leaf":
            if check_finite and not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for {node!r}")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or p is None:
                continue
            key = id(p)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    for node in order:
        if node._op != "leaf":
            node._backward = None
            node._parents = ()
            node._freed = True


# ------------------------------------------------------------------ optimizer

@dataclass(eq=False)
class Parameter:
    """A trainable tensor with its Adam moment estimates."""

    tensor: Tensor
    name: str = ""
    adam_m: np.ndarray = field(default=None, repr=False)
    adam_v: np.ndarray = field(default=None, repr=False)
    step_count: int = 0

    def __post_init__(self):
        self.tensor.requires_grad = True
        self.tensor.name = self.name
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.tensor.data)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.tensor.data)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    @property
    def shape(self) -> tuple:
        return self.tensor.shape


def adam_step(params: Iterable[Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place, then clear the gradients."""
    params = list(params)
    missing = [p.name or repr(p.tensor) for p in params if p.tensor.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for parameters {missing}")
    for p in params:
        p.step_count += 1
        t = p.step_count
        grad = np.ascontiguousarray(p.tensor.grad, dtype=np.float64)
        kernels.adam_update(p.tensor.data.reshape(-1), grad.reshape(-1), p.adam_m.reshape(-1),
                            p.adam_v.reshape(-1), lr, beta1, beta2, eps,
                            1.0 - beta1 ** t, 1.0 - beta2 ** t)
        p.tensor.grad = None


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None

    def step(self) -> None:
        # parameters the loss did not reach get an explicit zero gradient
        for p in self.params:
            if p.tensor.grad is None:
                p.tensor.grad = np.zeros_like(p.tensor.data)
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)


# ----------------------------------------------------------------- grad check

def grad_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |numeric|)``.

    ``f`` is called with no arguments and must read ``x`` (a tensor or list of
    tensors, all leaves). ``max_coords`` subsamples coordinates per tensor.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    try:
        loss = f()
        base = loss.item()
        backward(loss)
        if f().item() != base:
            raise NondeterministicError("f returned different values for identical inputs")
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in xs]
        worst = 0.0
        rng = rng or np.random.default_rng(0)
        with no_grad():
            for t, ga in zip(xs, analytic):
                flat = t.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_coords is not None and flat.size > max_coords:
                    idx = rng.choice(flat.size, size=max_coords, replace=False)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + eps
                    fp = f().item()
                    flat[i] = orig - eps
                    fm = f().item()
                    flat[i] = orig
                    num = (fp - fm) / (2 * eps)
                    err = abs(ga.reshape(-1)[i] - num) / max(1.0, abs(num))
                    worst = max(worst, err)
        return worst
    finally:
        for t, r in zip(xs, saved):
            t.requires_grad = r
            t.grad = None
