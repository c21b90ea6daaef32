"""Dense N-d tensors with tape-based reverse-mode differentiation.

The op set is deliberately closed: it contains exactly what the axial-MLP
forward pass and the soft-Dice loss need, each with a hand-written backward
rule that is checked against central finite differences in the test suite.
Graphs are recorded per-result (no global tape), so tensors built on
different threads never interact; a single backward pass walks the recorded
nodes once, in reverse construction order.
"""

from __future__ import annotations

import itertools
import threading
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericalError, ParameterError

__all__ = [
    "Tensor",
    "no_grad",
    "set_debug_checks",
    "add_n",
    "matmul",
    "leaky_relu",
    "sigmoid",
    "linear_along_axis",
    "dense_last",
    "axial_branch",
    "dropout_axial",
    "normalize_global",
    "trilinear_resize",
    "patchify",
    "unpatchify",
]

_SEQ = itertools.count()
_LOCAL = threading.local()

# When enabled, every forward op asserts its output is finite.
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf assertions after every forward op (slow, for debugging)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def _grad_enabled() -> bool:
    return getattr(_LOCAL, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording (e.g. for inference)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _LOCAL.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _LOCAL.grad_enabled = self._prev
        return False


class _Node:
    """One recorded op: its parents and the rule mapping out-grad to parent grads."""

    __slots__ = ("op", "parents", "backward", "seq")

    def __init__(self, op, parents, backward):
        self.op = op
        self.parents = parents
        self.backward = backward
        self.seq = next(_SEQ)


class Tensor:
    """A dense float array plus an optional gradient slot and tape linkage.

    Training and verification run in float64; float32 is supported as a
    storage mode when speed matters more than finite-difference headroom.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[_Node] = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
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
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axes=axes, keepdims=keepdims)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def moveaxis(self, src: int, dst: int) -> "Tensor":
        return moveaxis(self, src, dst)

    def backward(self) -> None:
        backward(self)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _finish(out_data: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap a forward result, attaching a tape node when recording is on."""
    if _DEBUG_CHECKS and not np.all(np.isfinite(out_data)):
        raise NumericalError(f"non-finite values produced by op '{op}'")
    out = Tensor(out_data)
    if _grad_enabled() and any(p.requires_grad or p.node is not None for p in parents):
        out.requires_grad = True
        out.node = _Node(op, tuple(parents), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _needs(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


# -- elementwise / arithmetic ------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    na, nb = _needs(a), _needs(b)

    def back(g):
        return (
            _unbroadcast(g, a.shape) if na else None,
            _unbroadcast(g, b.shape) if nb else None,
        )

    return _finish(a.data + b.data, "add", (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    na, nb = _needs(a), _needs(b)

    def back(g):
        return (
            _unbroadcast(g, a.shape) if na else None,
            _unbroadcast(-g, b.shape) if nb else None,
        )

    return _finish(a.data - b.data, "sub", (a, b), back)


def neg(a: Tensor) -> Tensor:
    return _finish(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    na, nb = _needs(a), _needs(b)
    a_data, b_data = a.data, b.data

    def back(g):
        return (
            _unbroadcast(g * b_data, a.shape) if na else None,
            _unbroadcast(g * a_data, b.shape) if nb else None,
        )

    return _finish(a_data * b_data, "mul", (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    na, nb = _needs(a), _needs(b)
    a_data, b_data = a.data, b.data

    def back(g):
        ga = _unbroadcast(g / b_data, a.shape) if na else None
        gb = _unbroadcast(-g * a_data / (b_data * b_data), b.shape) if nb else None
        return ga, gb

    return _finish(a_data / b_data, "div", (a, b), back)


def pow_const(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    a_data = a.data

    def back(g):
        return (g * p * a_data ** (p - 1.0),)

    return _finish(a_data**p, "pow", (a,), back)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum a list of same-shaped tensors in one node (no intermediate chain)."""
    tensors = list(tensors)
    if not tensors:
        raise ParameterError("add_n needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"add_n shape mismatch: {t.shape} vs {shape}")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out += t.data

    needs = [_needs(t) for t in tensors]

    def back(g):
        return tuple(g if n else None for n in needs)

    return _finish(out, "add_n", tensors, back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    na, nb = _needs(a), _needs(b)
    a_data, b_data = a.data, b.data

    def back(g):
        ga = g @ b_data.T if na else None
        gb = a_data.T @ g if nb else None
        return ga, gb

    return _finish(a_data @ b_data, "matmul", (a, b), back)


def tensor_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if axes is None:
        axes_t = tuple(range(a.ndim))
    elif isinstance(axes, int):
        axes_t = (axes,)
    else:
        axes_t = tuple(axes)
    in_shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes_t) if axes_t else g
        return (np.broadcast_to(g, in_shape),)

    return _finish(a.data.sum(axis=axes_t or None, keepdims=keepdims), "sum", (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    in_shape = a.shape

    def back(g):
        return (g.reshape(in_shape),)

    return _finish(a.data.reshape(shape), "reshape", (a,), back)


def moveaxis(a: Tensor, src: int, dst: int) -> Tensor:
    def back(g):
        return (np.moveaxis(g, dst, src),)

    return _finish(np.moveaxis(a.data, src, dst), "moveaxis", (a,), back)


# -- activations -------------------------------------------------------


def _leaky_factor(pos: np.ndarray, slope: float, dtype) -> np.ndarray:
    # slope + (1-slope)*pos, kept arithmetic: np.where is several times slower
    out = pos.astype(dtype)
    out *= dtype.type(1.0 - slope)
    out += dtype.type(slope)
    return out


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    """max(x, slope*x); the subgradient at 0 is taken as `slope`."""
    if slope < 0:
        raise ParameterError(f"leaky_relu slope must be >= 0, got {slope}")
    x_data = x.data

    def back(g):
        return (g * _leaky_factor(x_data > 0, slope, g.dtype),)

    return _finish(x_data * _leaky_factor(x_data > 0, slope, x_data.dtype), "leaky_relu", (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign for overflow-free exp.
    x_data = x.data
    out = np.empty_like(x_data)
    pos = x_data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x_data[pos]))
    ex = np.exp(x_data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def back(g):
        return (g * out * (1.0 - out),)

    return _finish(out, "sigmoid", (x,), back)


# -- axial ops ----------------------------------------------------------


def _flatten_pair(data: np.ndarray, axis: int):
    """View `data` as (rows, a*f) with `axis` and the channel axis flattened."""
    xm = np.moveaxis(data, axis, -2)
    a, f = xm.shape[-2], xm.shape[-1]
    return xm.reshape(-1, a * f), xm.shape, a, f


def _restore_pair(rows: np.ndarray, moved_shape, axis: int) -> np.ndarray:
    return np.moveaxis(rows.reshape(moved_shape), -2, axis)


def linear_along_axis(x: Tensor, axis: int, weight: Tensor, bias: Tensor) -> Tensor:
    """Apply a fully connected map jointly over (`axis`, channel).

    For every fixed index over the remaining axes, the slice over `axis` and
    the trailing channel axis is flattened to a vector v of length a*f and
    mapped to weight @ v + bias. The channel axis is always the last one.
    """
    if x.ndim < 2:
        raise DimensionError("linear_along_axis needs at least (axis, channel) dims")
    axis = axis % x.ndim
    if axis == x.ndim - 1:
        raise DimensionError("axis must differ from the trailing channel axis")
    a = x.shape[axis]
    f = x.shape[-1]
    k = a * f
    if weight.shape != (k, k):
        raise DimensionError(f"weight must be ({k}, {k}) for axis length {a} and {f} channels, got {weight.shape}")
    if bias.shape != (k,):
        raise DimensionError(f"bias must be ({k},), got {bias.shape}")

    v, moved_shape, _, _ = _flatten_pair(x.data, axis)
    out_rows = v @ weight.data.T + bias.data
    out = _restore_pair(out_rows, moved_shape, axis)

    nx, nw, nb = _needs(x), _needs(weight), _needs(bias)
    x_data, w_data = x.data, weight.data

    def back(g):
        g_rows = np.moveaxis(g, axis, -2).reshape(-1, k)
        gx = gw = gb = None
        if nw:
            v_rows, _, _, _ = _flatten_pair(x_data, axis)
            gw = g_rows.T @ v_rows
        if nb:
            gb = g_rows.sum(axis=0)
        if nx:
            gx = _restore_pair(g_rows @ w_data, moved_shape, axis)
        return gx, gw, gb

    return _finish(out, "linear_along_axis", (x, weight, bias), back)


def dense_last(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully connected map over the trailing axis only: (..., c_in) -> (..., c_out)."""
    c_in, c_out = weight.shape
    if x.shape[-1] != c_in:
        raise DimensionError(f"dense_last expects trailing dim {c_in}, got {x.shape[-1]}")
    if bias.shape != (c_out,):
        raise DimensionError(f"bias must be ({c_out},), got {bias.shape}")
    lead = x.shape[:-1]
    rows = x.data.reshape(-1, c_in)
    out = (rows @ weight.data + bias.data).reshape(lead + (c_out,))

    nx, nw, nb = _needs(x), _needs(weight), _needs(bias)
    x_data, w_data = x.data, weight.data

    def back(g):
        g_rows = g.reshape(-1, c_out)
        gx = (g_rows @ w_data.T).reshape(x_data.shape) if nx else None
        gw = x_data.reshape(-1, c_in).T @ g_rows if nw else None
        gb = g_rows.sum(axis=0) if nb else None
        return gx, gw, gb

    return _finish(out, "dense_last", (x, weight, bias), back)


def _dropout_mask(shape_axis: int, channels: int, rate: float, rng, dtype) -> np.ndarray:
    keep = rng.random((shape_axis, channels)) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def dropout_axial(x: Tensor, axis: int, rate: float, mode: str = "train", rng=None) -> Tensor:
    """Drop whole (axis, channel) fibers together, inverted-scaled at train time.

    One Bernoulli keep decision is drawn per (axis index, channel index) pair
    and shared across every other axis, so entire fibers disappear at once.
    Eval mode is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("train-mode dropout needs an rng")
    axis = axis % x.ndim
    if axis == x.ndim - 1:
        raise DimensionError("axis must differ from the trailing channel axis")

    mask = _dropout_mask(x.shape[axis], x.shape[-1], rate, rng, x.dtype)
    bshape = [1] * x.ndim
    bshape[axis] = x.shape[axis]
    bshape[-1] = x.shape[-1]
    mask_b = mask.reshape(bshape)

    def back(g):
        return (g * mask_b,)

    return _finish(x.data * mask_b, "dropout_axial", (x,), back)


def axial_branch(
    x: Tensor,
    axis: int,
    weight: Tensor,
    bias: Tensor,
    slope: float,
    rate: float,
    mode: str = "train",
    rng=None,
) -> Tensor:
    """Fused dropout_axial -> linear_along_axis -> leaky_relu.

    Numerically identical to the three-op chain (same rng draw order) but
    materializes a single output array plus a sign bitmap, which is what
    keeps a batch-of-4 training step inside desktop memory.
    """
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    axis = axis % x.ndim
    a = x.shape[axis]
    f = x.shape[-1]
    k = a * f
    if weight.shape != (k, k) or bias.shape != (k,):
        raise DimensionError(f"weight/bias must be ({k},{k})/({k},) for axis length {a}, {f} channels")

    dropping = mode == "train" and rate > 0.0
    if dropping:
        if rng is None:
            raise ParameterError("train-mode dropout needs an rng")
        mask_flat = _dropout_mask(a, f, rate, rng, x.dtype).reshape(k)
    else:
        mask_flat = None

    v, moved_shape, _, _ = _flatten_pair(x.data, axis)
    if mask_flat is not None:
        v = v * mask_flat
    z = v @ weight.data.T
    z += bias.data
    pos = z > 0
    z *= _leaky_factor(pos, slope, z.dtype)
    out = _restore_pair(z, moved_shape, axis)
    del z, v

    nx, nw, nb = _needs(x), _needs(weight), _needs(bias)
    x_data, w_data = x.data, weight.data

    def back(g):
        g_rows = np.moveaxis(g, axis, -2).reshape(-1, k)
        gz = g_rows * _leaky_factor(pos, slope, g.dtype)
        gx = gw = gb = None
        if nb:
            gb = gz.sum(axis=0)
        if nw:
            v_rows, _, _, _ = _flatten_pair(x_data, axis)
            if mask_flat is not None:
                v_rows = v_rows * mask_flat
            gw = gz.T @ v_rows
        if nx:
            gv = gz @ w_data
            if mask_flat is not None:
                gv *= mask_flat
            gx = _restore_pair(gv, moved_shape, axis)
        return gx, gw, gb

    return _finish(out, "axial_branch", (x, weight, bias), back)


def normalize_global(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each batch element over all non-batch axes, then apply a
    single scalar weight and bias (one pair for the whole tensor)."""
    if x.ndim < 2:
        raise DimensionError("normalize_global needs a leading batch axis")
    axes = tuple(range(1, x.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    del xc
    w = float(weight.data)
    out = w * xh + float(bias.data)

    nx, nw, nb = _needs(x), _needs(weight), _needs(bias)
    w_shape, b_shape = weight.shape, bias.shape

    def back(g):
        gx = gw = gb = None
        if nw:
            gw = np.array(np.sum(g * xh)).reshape(w_shape)
        if nb:
            gb = np.array(np.sum(g)).reshape(b_shape)
        if nx:
            gh = g * w
            m1 = gh.mean(axis=axes, keepdims=True)
            m2 = np.mean(gh * xh, axis=axes, keepdims=True)
            gx = inv * (gh - m1 - xh * m2)
        return gx, gw, gb

    return _finish(out, "normalize_global", (x, weight, bias), back)


# -- resampling and patch layout ----------------------------------------


def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Corner-aligned 1-d linear interpolation as a dense (n_out, n_in) matrix."""
    r = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1:
        r[:, 0] = 1.0
        return r
    if n_out == 1:
        coords = np.zeros(1)
    else:
        coords = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.minimum(coords.astype(np.int64), n_in - 2)
    t = coords - i0
    rows = np.arange(n_out)
    r[rows, i0] = 1.0 - t
    r[rows, i0 + 1] += t
    return r


def _apply_axis_matrix(data: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(data, axis, 0)
    out = np.tensordot(mat, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def trilinear_resize(x: Tensor, target_shape, axes=None) -> Tensor:
    """Resize three spatial axes with corner-aligned trilinear interpolation.

    Linear in x, so the backward pass is the exact adjoint. Axes whose size
    already matches are skipped, which makes same-shape resize bit-identical.
    """
    target = tuple(int(s) for s in target_shape)
    if len(target) != 3 or any(s < 1 for s in target):
        raise ParameterError(f"target_shape must be 3 positive ints, got {target_shape}")
    if axes is None:
        if x.ndim == 3:
            axes = (0, 1, 2)
        elif x.ndim == 5:
            axes = (1, 2, 3)
        else:
            raise DimensionError(f"cannot infer spatial axes for ndim={x.ndim}")
    plan = [
        (ax, _resize_matrix(x.shape[ax], n_out, x.dtype))
        for ax, n_out in zip(axes, target)
        if x.shape[ax] != n_out
    ]
    if not plan:
        return x

    out = x.data
    for ax, mat in plan:
        out = _apply_axis_matrix(out, mat, ax)

    def back(g):
        for ax, mat in reversed(plan):
            g = _apply_axis_matrix(g, mat.T, ax)
        return (np.ascontiguousarray(g),)

    return _finish(np.ascontiguousarray(out), "trilinear_resize", (x,), back)


def patchify(x: Tensor, patch) -> Tensor:
    """(B, D, H, W, C) -> (B, Nd, Nh, Nw, sd, sh, sw, C) by pure index permutation."""
    if x.ndim != 5:
        raise DimensionError(f"patchify expects (B, D, H, W, C), got {x.shape}")
    sd, sh, sw = (int(p) for p in patch)
    b, d, h, w, c = x.shape
    if d % sd or h % sh or w % sw:
        raise DimensionError(f"spatial shape {(d, h, w)} not divisible by patch {(sd, sh, sw)}")
    gd, gh, gw = d // sd, h // sh, w // sw

    out = np.ascontiguousarray(
        x.data.reshape(b, gd, sd, gh, sh, gw, sw, c).transpose(0, 1, 3, 5, 2, 4, 6, 7)
    )

    def back(g):
        return (
            np.ascontiguousarray(
                g.transpose(0, 1, 4, 2, 5, 3, 6, 7).reshape(b, d, h, w, c)
            ),
        )

    return _finish(out, "patchify", (x,), back)


def unpatchify(x: Tensor) -> Tensor:
    """Inverse of patchify: (B, Nd, Nh, Nw, sd, sh, sw, C) -> (B, D, H, W, C)."""
    if x.ndim != 8:
        raise DimensionError(f"unpatchify expects the 8-axis patch layout, got {x.shape}")
    b, gd, gh, gw, sd, sh, sw, c = x.shape

    out = np.ascontiguousarray(
        x.data.transpose(0, 1, 4, 2, 5, 3, 6, 7).reshape(b, gd * sd, gh * sh, gw * sw, c)
    )

    def back(g):
        return (
            np.ascontiguousarray(
                g.reshape(b, gd, sd, gh, sh, gw, sw, c).transpose(0, 1, 3, 5, 2, 4, 6, 7)
            ),
        )

    return _finish(out, "unpatchify", (x,), back)


# -- reverse pass --------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/dT into .grad of every leaf tensor with requires_grad.

    Repeated calls without zeroing accumulate additively. Intermediate
    (op-produced) tensors do not retain gradients; their buffers are freed
    as soon as their node has been processed.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    seed = np.ones_like(loss.data)
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    # Gather reachable nodes; construction order is a topological order.
    stack = [loss]
    seen = {id(loss)}
    nodes = []
    while stack:
        t = stack.pop()
        if t.node is not None:
            nodes.append(t)
            for p in t.node.parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
    nodes.sort(key=lambda t: t.node.seq, reverse=True)

    grads: dict[int, np.ndarray] = {id(loss): seed}
    for t in nodes:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        for parent, pg in zip(t.node.parents, t.node.backward(g)):
            if pg is None:
                continue
            if parent.node is None:
                if parent.requires_grad:
                    if parent.grad is None:
                        parent.grad = np.array(pg, dtype=parent.dtype)
                    else:
                        parent.grad += pg
            else:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
