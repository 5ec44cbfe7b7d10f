"""Reverse-mode automatic differentiation on dense numpy buffers.

A :class:`Tensor` wraps a float32 or float64 ndarray together with an optional
gradient buffer and a record of how it was produced.  Operations build a DAG;
``backward()`` on a scalar walks the DAG once in reverse topological order and
accumulates gradients into every ``requires_grad`` tensor on the path.

Design points:

* ``data`` is treated as immutable after construction (the finite-difference
  checker is the one sanctioned exception; it nudges leaf buffers in place
  between forward evaluations).
* Repeated ``backward()`` calls accumulate into ``grad``; call ``zero_grad``
  (or an optimizer's ``zero_grad``) between steps.
* Broadcasting follows numpy rules; gradients of broadcast operands are summed
  back to the operand shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import ContractError, MaskedRowError, ShapeError

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """Dense array with an optional reverse-mode gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None and not (
            isinstance(data, (np.ndarray, np.generic)) and data.dtype in _ALLOWED_DTYPES
        ):
            dtype = np.float32
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable | None = None

    # ---- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err()

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # ---- gradient management ------------------------------------------
    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        """Accumulate dL/dx into every requires_grad tensor reachable from self.

        ``self`` must hold exactly one element.  The gradient of the loss with
        respect to itself is seeded at 1.0.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        # Flow buffers are kept separate from .grad so that a second backward
        # call adds exactly one more pass worth of gradient.
        flow: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flow.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad = node.grad + g
            if node._grad_fn is None:
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flow.get(id(parent))
                flow[id(parent)] = pg if acc is None else acc + pg

    # ---- operator sugar ------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int] | None = None) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def _scalar_err():
    raise ContractError("item() needs a single-element tensor")


# ---------------------------------------------------------------------------
# helpers


def as_tensor(value, dtype=None) -> Tensor:
    """Wrap plain numbers / ndarrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1
    )
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _is_plain_number(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating))


def add(a, b) -> Tensor:
    # Plain-number operands stay Python scalars so numpy's weak promotion
    # keeps the tensor dtype and the constant's full precision.
    if _is_plain_number(b) or _is_plain_number(a):
        if _is_plain_number(a):
            a, b = b, a
        a, s = as_tensor(a), float(b)

        def grad_fn(g):
            return (g,)

        return _make(a.data + s, (a,), grad_fn)

    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    if _is_plain_number(b):
        return add(a, -float(b))
    if _is_plain_number(a):
        return add(neg(b), float(a))
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    if _is_plain_number(b) or _is_plain_number(a):
        if _is_plain_number(a):
            a, b = b, a
        a, s = as_tensor(a), float(b)

        def grad_fn(g):
            return (g * s,)

        return _make(a.data * s, (a,), grad_fn)

    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), grad_fn)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        return (-g,)

    return _make(-a.data, (a,), grad_fn)


def power(a, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a plain-number exponent."""
    a = as_tensor(a)
    p = float(exponent)
    data = a.data**p

    def grad_fn(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(data, (a,), grad_fn)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def grad_fn(g):
        return (g / a.data,)

    return _make(data, (a,), grad_fn)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def grad_fn(g):
        return (g * data,)

    return _make(data, (a,), grad_fn)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = expit(a.data)

    def grad_fn(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), grad_fn)


def gelu(a) -> Tensor:
    """Exact Gaussian error linear unit: ``x * Phi(x)``."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    data = a.data * cdf

    def grad_fn(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        return (g * (cdf + a.data * pdf),)

    return _make(data.astype(a.data.dtype, copy=False), (a,), grad_fn)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes where lo <= x <= hi."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)

    def grad_fn(g):
        inside = (a.data >= lo) & (a.data <= hi)
        return (g * inside,)

    return _make(data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as err:
        raise ShapeError(f"matmul batch extents differ: {a.shape} @ {b.shape}") from err

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(data, (a, b), grad_fn)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(data, (a,), grad_fn)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), grad_fn)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    data = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)

    def grad_fn(g):
        return (np.transpose(g, inverse),)

    return _make(data, (a,), grad_fn)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    if not parts:
        raise ContractError("concat needs at least one tensor")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, parts, grad_fn)


def take(a, index) -> Tensor:
    """Numpy-style indexing/slicing with gradient scatter-add."""
    a = as_tensor(a)
    data = np.array(a.data[index])

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return _make(data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# softmax / layer norm


def softmax(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; optional boolean mask (True = keep).

    Masked entries get exactly 0.0 weight.  A slice with no valid entry along
    ``axis`` raises :class:`MaskedRowError`.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise MaskedRowError("softmax slice has no valid entries")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _make(y.astype(a.data.dtype, copy=False), (a,), grad_fn)


def layer_norm(a, gain, bias, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize along ``axis`` to zero mean / unit variance, then scale-shift.

    ``gain`` and ``bias`` are rank-1 with the extent of the normalized axis.
    """
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = a.shape[axis]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}"
        )
    mu = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    span = [1] * a.ndim
    span[axis] = d
    gain_b = gain.data.reshape(span)
    bias_b = bias.data.reshape(span)
    data = xhat * gain_b + bias_b

    reduce_axes = tuple(i for i in range(a.ndim) if i != (axis % a.ndim))

    def grad_fn(g):
        ga = ggain = gbias = None
        if a.requires_grad:
            dxhat = g * gain_b
            m1 = dxhat.mean(axis=axis, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=axis, keepdims=True)
            ga = inv_std * (dxhat - m1 - xhat * m2)
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=reduce_axes).reshape(gain.shape)
        if bias.requires_grad:
            gbias = g.sum(axis=reduce_axes).reshape(bias.shape)
        return ga, ggain, gbias

    return _make(data.astype(a.data.dtype, copy=False), (a, gain, bias), grad_fn)


# ---------------------------------------------------------------------------
# windowed sequence reductions (frames on axis 0)


def _window_bounds(t_end: int, length: int, window: int | None) -> tuple[int, int]:
    """Half-open row range for the window ending at 1-based frame ``t_end``."""
    if not 1 <= t_end <= length:
        raise ContractError(f"window end {t_end} outside 1..{length}")
    lo = 0 if window is None else max(0, t_end - window)
    return lo, t_end


def reduce_max_window(a, window_end: int, window_len: int | None) -> Tensor:
    """Columnwise max over frames (window_end - window_len, window_end].

    ``window_end`` is 1-based; the window is clipped at the sequence start.
    ``window_len=None`` means the full prefix.  Ties break to the earliest
    frame, and the gradient routes to that frame only.
    """
    a = as_tensor(a)
    lo, hi = _window_bounds(window_end, a.shape[0], window_len)
    seg = a.data[lo:hi]
    arg = seg.argmax(axis=0)  # argmax returns the first maximal index
    data = np.take_along_axis(seg, arg[None], axis=0)[0]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (lo + arg, *np.indices(arg.shape)), g)
        return (ga,)

    return _make(data, (a,), grad_fn)


def reduce_mean_window(a, window_end: int, window_len: int | None) -> Tensor:
    """Columnwise mean over frames (window_end - window_len, window_end].

    The divisor is the clipped window length, so early frames average over
    fewer rows.
    """
    a = as_tensor(a)
    lo, hi = _window_bounds(window_end, a.shape[0], window_len)
    n = hi - lo
    data = a.data[lo:hi].sum(axis=0) / n

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        ga[lo:hi] = g / n
        return (ga,)

    return _make(data, (a,), grad_fn)


def sliding_window_max(a, window: int | None) -> Tensor:
    """Stack of :func:`reduce_max_window` for every frame: [T x d] -> [T x d].

    ``window=None`` gives the expanding prefix maximum.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"sliding_window_max needs [T x d], got {a.shape}")
    t_len, width = a.shape
    data = np.empty_like(a.data)
    src = np.empty((t_len, width), dtype=np.intp)
    cols = np.arange(width)
    for t in range(t_len):
        lo = 0 if window is None else max(0, t + 1 - window)
        seg = a.data[lo : t + 1]
        arg = seg.argmax(axis=0)
        data[t] = seg[arg, cols]
        src[t] = lo + arg

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (src.ravel(), np.tile(cols, t_len)), g.ravel())
        return (ga,)

    return _make(data, (a,), grad_fn)


def sliding_window_mean(a, window: int | None) -> Tensor:
    """Stack of :func:`reduce_mean_window` for every frame: [T x d] -> [T x d]."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"sliding_window_mean needs [T x d], got {a.shape}")
    t_len = a.shape[0]
    data = np.empty_like(a.data)
    lows = np.empty(t_len, dtype=np.intp)
    for t in range(t_len):
        lo = 0 if window is None else max(0, t + 1 - window)
        lows[t] = lo
        data[t] = a.data[lo : t + 1].sum(axis=0) / (t + 1 - lo)

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        for t in range(t_len):
            ga[lows[t] : t + 1] += g[t] / (t + 1 - lows[t])
        return (ga,)

    return _make(data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradientCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    max_relative_error: float
    per_parameter_errors: dict[str, float]
    passed: bool
    tolerance: float


def finite_diff_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-4,
    tolerance: float = 1e-4,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradientCheckReport:
    """Compare ``backward()`` gradients of ``f`` against central differences.

    ``f`` must be a deterministic map from the parameter dict to a scalar
    tensor.  Run it on float64 parameters; float32 rounding swamps the
    O(eps^2) truncation error.  ``max_coords_per_param`` caps how many
    coordinates of each parameter get probed (uniformly sampled with ``rng``);
    ``None`` probes every coordinate.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8), so exact
    zeros on both sides count as zero error.
    """
    for p in params.values():
        if p.requires_grad:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad[...] = 0
    loss = f(params)
    if loss.data.size != 1:
        raise ContractError("finite_diff_check needs a scalar-valued f")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    if max_coords_per_param is not None and rng is None:
        rng = np.random.default_rng(0)

    errors: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f(params).item()
            flat[i] = orig - eps
            f_minus = f(params).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(ana[i] - numeric) / max(abs(ana[i]), abs(numeric), 1e-8)
            worst = max(worst, rel)
        errors[name] = worst

    overall = max(errors.values()) if errors else 0.0
    return GradientCheckReport(
        max_relative_error=overall,
        per_parameter_errors=errors,
        passed=overall <= tolerance,
        tolerance=tolerance,
    )
