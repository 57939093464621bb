"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op records its parents and a backward closure on the output tensor.
Nodes carry a creation index, so replaying them in descending index order
is a replay of the tape in reverse execution order.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "apply_op",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "relu",
    "lrelu",
    "tanh",
    "sigmoid",
    "sqrt",
    "absolute",
    "elementwise",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "broadcast_to",
    "einsum",
    "take",
    "conv2d",
    "upsample_nearest",
    "avg_pool2d",
    "instance_norm",
]

LRELU_SLOPE = 0.2
INSTANCE_NORM_EPS = 1e-5

_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; the message names the dimension."""


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_ids)

    # -- introspection ---------------------------------------------------
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
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Parameter:
    """A learnable tensor plus its ADAM moments and optional spectral-norm state."""

    def __init__(self, value, spectral: bool = False, rng: np.random.Generator | None = None):
        self.value = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.adam_m = np.zeros_like(self.value.data)
        self.adam_v = np.zeros_like(self.value.data)
        self.spectral_state: np.ndarray | None = None
        if spectral:
            rows = self.value.shape[0]
            rng = rng if rng is not None else np.random.default_rng(0)
            u = rng.standard_normal(rows)
            self.spectral_state = u / np.linalg.norm(u)

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.value.grad = None

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape})"


# ---------------------------------------------------------------------------
# graph machinery
# ---------------------------------------------------------------------------

def apply_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op.

    ``backward_fn(grad)`` must return one gradient (or None) per parent.
    """
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf."""
    if root.size != 1 or root.ndim > 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    nodes: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {root._id: np.ones_like(root.data)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# ---------------------------------------------------------------------------
# broadcasting (restricted: equal shapes, scalars, per-channel vectors)
# ---------------------------------------------------------------------------

def _view_shape(shape: tuple, target: tuple, op: str) -> tuple:
    if shape == target:
        return shape
    if len(shape) == 0 or (len(shape) == 1 and shape[0] == 1):
        return (1,) * len(target)
    if len(shape) == 1 and len(target) == 4:
        if shape[0] != target[1]:
            raise ShapeError(
                f"{op}: channel vector length {shape[0]} does not match channel dim {target[1]}"
            )
        return (1, shape[0], 1, 1)
    for axis, (a, b) in enumerate(zip(shape, target)):
        if len(shape) == len(target) and a != b:
            raise ShapeError(f"{op}: dimension {axis} mismatch ({a} vs {b})")
    raise ShapeError(f"{op}: cannot broadcast shape {shape} against {target}")


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape:
        return a.shape, a.data, b.data
    if a.size >= b.size and a.ndim >= b.ndim:
        out = a.shape
        return out, a.data, b.data.reshape(_view_shape(b.shape, out, op))
    out = b.shape
    return out, a.data.reshape(_view_shape(a.shape, out, op)), b.data


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0 or (len(shape) == 1 and shape[0] == 1):
        return np.asarray(g.sum()).reshape(shape)
    # channel vector against [N, C, H, W]
    return g.sum(axis=(0, 2, 3)).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _, x, y = _binary_shapes(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return apply_op(x + y, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _, x, y = _binary_shapes(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return apply_op(x - y, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _, x, y = _binary_shapes(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * y, a.shape), _unbroadcast(g * x, b.shape)

    return apply_op(x * y, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    _, x, y = _binary_shapes(a, b, "div")
    out = x / y

    def bw(g):
        return _unbroadcast(g / y, a.shape), _unbroadcast(-g * out / y, b.shape)

    return apply_op(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return apply_op(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return apply_op(a.data * c, (a,), lambda g: (g * c,))


# ---------------------------------------------------------------------------
# pointwise maps
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return apply_op(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def lrelu(a: Tensor, slope: float = LRELU_SLOPE) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)
    return apply_op(a.data * factor, (a,), lambda g: (g * factor,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return apply_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return apply_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return apply_op(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return apply_op(np.abs(a.data), (a,), lambda g: (g * sign,))


def elementwise(kind: str, a: Tensor, b: Tensor | float | None = None, slope: float = LRELU_SLOPE) -> Tensor:
    """Dispatch by name: relu, lrelu, tanh, add, mul, scale."""
    if kind == "relu":
        return relu(a)
    if kind == "lrelu":
        return lrelu(a, slope)
    if kind == "tanh":
        return tanh(a)
    if kind == "add":
        return add(a, _as_tensor(b))
    if kind == "mul":
        return mul(a, _as_tensor(b))
    if kind == "scale":
        return scale(a, float(b))
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and layout
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def bw(g):
        return (np.broadcast_to(np.reshape(g, kept), a.shape).copy(),)

    return apply_op(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return apply_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return apply_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        for d in range(t.ndim):
            if d != axis and t.shape[d] != tensors[0].shape[d]:
                raise ShapeError(f"concat: dimension {d} mismatch ({t.shape[d]} vs {tensors[0].shape[d]})")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        index = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            parts.append(g[tuple(index)])
        return parts

    return apply_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if a.ndim != len(shape):
        raise ShapeError(f"broadcast_to: rank {a.ndim} vs target rank {len(shape)}")
    axes = []
    for i, (s, t) in enumerate(zip(a.shape, shape)):
        if s != t:
            if s != 1:
                raise ShapeError(f"broadcast_to: dimension {i} has extent {s}, cannot expand to {t}")
            axes.append(i)
    axes = tuple(axes)

    def bw(g):
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return apply_op(np.broadcast_to(a.data, shape), (a,), bw)


def _getitem(a: Tensor, index) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return apply_op(a.data[index], (a,), bw)


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum. Every input index must appear in the output or the other operand."""
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        for ch in own:
            if ch not in out_sub and ch not in other:
                raise ValueError(f"einsum: index {ch!r} is reduced inside a single operand")
    out = np.einsum(subscripts, a.data, b.data, optimize=True)

    def bw(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return apply_op(out, (a, b), bw)


def take(a: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array (np.take semantics)."""
    index = np.asarray(index)
    axis = axis % a.ndim
    n = a.shape[axis]

    def bw(g):
        # move gathered axes to the end, scatter-add via one-hot matmul
        flat_idx = index.reshape(-1)
        lead = a.shape[:axis]
        trail = a.shape[axis + 1:]
        gm = g.reshape(lead + (flat_idx.size,) + trail)
        gm = np.moveaxis(gm, axis, -1)
        onehot = np.zeros((flat_idx.size, n))
        onehot[np.arange(flat_idx.size), flat_idx] = 1.0
        out = gm @ onehot
        return (np.moveaxis(out, -1, axis),)

    return apply_op(np.take(a.data, index, axis=axis), (a,), bw)


# ---------------------------------------------------------------------------
# image ops
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded 2-D cross-correlation, NCHW layout.

    Output size is ``(H + 2*pad - kH) // stride + 1``; trailing rows/cols that
    do not fill a whole stride step are ignored.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-D [N,C,H,W], got rank {x.ndim}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4-D [Cout,Cin,kH,kW], got rank {weight.ndim}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input channels (dim 1) = {cin} but weight expects {wcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel dims must be odd, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d: stride must be positive and pad non-negative")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias length {bias.shape} does not match output channels {cout}")
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: padded height/width {hp}x{wp} smaller than kernel {kh}x{kw}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    w_mat = _kernel_matrix(weight.data)
    out = (cols @ w_mat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = gw = gb = None
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        if x.requires_grad:
            gx = _conv_input_grad(g, weight.data, stride, pad, h, w)
        if weight.requires_grad:
            gw = (g_mat.T @ cols).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        if bias is not None and bias.requires_grad:
            gb = g_mat.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return apply_op(out, parents, bw)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patches of a padded NCHW array as rows ``[N*Ho*Wo, kh*kw*C]`` (channels innermost)."""
    n, c = xp.shape[:2]
    sub_h, sub_w = stride * (ho - 1) + kh, stride * (wo - 1) + kw
    xl = np.ascontiguousarray(xp[:, :, :sub_h, :sub_w].transpose(0, 2, 3, 1))
    if kh == 1 and kw == 1:
        return xl[:, ::stride, ::stride].reshape(n * ho * wo, c)
    win = sliding_window_view(xl, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)


def _kernel_matrix(weight: np.ndarray) -> np.ndarray:
    """``[Cout, Cin, kh, kw]`` -> ``[Cout, kh*kw*Cin]`` matching ``_im2col`` column order."""
    return weight.transpose(0, 2, 3, 1).reshape(weight.shape[0], -1)


def _conv_input_grad(g: np.ndarray, weight: np.ndarray, stride: int, pad: int, h: int, w: int) -> np.ndarray:
    """Input gradient as a full correlation of the (stride-dilated) output gradient with the flipped kernel."""
    n, cout, ho, wo = g.shape
    _, cin, kh, kw = weight.shape
    if stride > 1:
        gd = np.zeros((n, cout, stride * (ho - 1) + 1, stride * (wo - 1) + 1))
        gd[:, :, ::stride, ::stride] = g
    else:
        gd = g
    gd = np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    hu, wu = gd.shape[2] - kh + 1, gd.shape[3] - kw + 1  # rows/cols of the padded input that were read
    flipped = _kernel_matrix(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    full = (_im2col(gd, kh, kw, 1, hu, wu) @ flipped.T).reshape(n, hu, wu, cin).transpose(0, 3, 1, 2)
    gxp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad))
    gxp[:, :, :hu, :wu] = full
    return gxp[:, :, pad:pad + h, pad:pad + w]


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample_nearest: factor must be >= 1, got {factor}")
    if factor == 1:
        return apply_op(x.data.copy(), (x,), lambda g: (g,))
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return apply_op(out, (x,), bw)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping factor x factor average pooling."""
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"avg_pool2d: spatial dims {h}x{w} not divisible by {factor}")
    ho, wo = h // factor, w // factor
    out = x.data.reshape(n, c, ho, factor, wo, factor).mean(axis=(3, 5))
    inv = 1.0 / (factor * factor)

    def bw(g):
        return (np.repeat(np.repeat(g * inv, factor, axis=2), factor, axis=3),)

    return apply_op(out, (x,), bw)


def instance_norm(x: Tensor, eps: float = INSTANCE_NORM_EPS) -> Tensor:
    """Per-(n, c) standardization without affine parameters."""
    if x.ndim != 4:
        raise ShapeError(f"instance_norm: input must be 4-D, got rank {x.ndim}")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std

    def bw(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return (inv_std * (g - gm - xhat * gxm),)

    return apply_op(xhat, (x,), bw)


def parameters_grad_norm(params: Iterable[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))
