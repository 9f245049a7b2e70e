"""Dense float64 tensors with recorded-tape reverse-mode differentiation.

Tensors are immutable values: every op returns a fresh Tensor and records a
closure that maps the output gradient back onto its parents. Calling
``backward()`` on a scalar walks the tape in reverse topological order and
deposits gradients on every leaf created with ``requires_grad=True``.

Any op whose result contains a NaN or Inf raises ``NonFiniteError`` at the
point of creation rather than letting the value propagate.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces (or is handed) NaN or Inf values."""


_GRAD_ENABLED = True

# Hook used by the FLOP instrumentation; receives raw multiply-accumulate
# counts from matmul / axis_linear / bilinear_resize forward passes.
_MAC_HOOK = None


def set_mac_hook(hook):
    """Install (or clear, with None) the MAC-count callback. Returns the old hook."""
    global _MAC_HOOK
    old = _MAC_HOOK
    _MAC_HOOK = hook
    return old


def _record_macs(count: int) -> None:
    if _MAC_HOOK is not None:
        _MAC_HOOK(count)


@contextmanager
def no_grad():
    """Context manager that disables tape recording (process-wide)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """Immutable float64 array plus the tape metadata for backward()."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "Tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = None
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Copy of the underlying array (callers must not mutate tensor state)."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output onto requires_grad leaves."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")
        if self._parents is None and not self.requires_grad:
            raise ValueError("backward() on a tensor with no recorded computation")

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
            if node._parents is not None:
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._parents is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # ---- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        if isinstance(other, Tensor):
            return sub(other, self)
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        if isinstance(other, Tensor):
            return div(other, self)
        return reciprocal_scaled(self, float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    def __repr__(self) -> str:
        grad_tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad_tag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, parents, backward_fn) -> Tensor:
    """Assemble an op result, taping it only when a parent needs gradients."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = None
        out._backward_fn = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


# ---- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _result(a.data + c, "add", (a,), lambda g: (g,))
    _same_shape(a, b, "add")
    return _result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _result(a.data - c, "sub", (a,), lambda g: (g,))
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _result(a.data * c, "mul", (a,), lambda g: (g * c,))
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _result(a.data / c, "div", (a,), lambda g: (g / c,))
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return _result(out, "div", (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def reciprocal_scaled(a, c: float) -> Tensor:
    """c / a, elementwise."""
    a = _as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = c / ad
    return _result(out, "rdiv", (a,), lambda g: (-g * c / (ad * ad),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _result(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    ad = a.data
    return _result(out, "log", (a,), lambda g: (g / ad,))


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    sign = np.sign(a.data)
    return _result(np.abs(a.data), "abs", (a,), lambda g: (g * sign,))


def maximum(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        mask = (a.data >= c).astype(np.float64)
        return _result(np.maximum(a.data, c), "maximum", (a,), lambda g: (g * mask,))
    _same_shape(a, b, "maximum")
    mask = (a.data >= b.data).astype(np.float64)
    return _result(
        np.maximum(a.data, b.data),
        "maximum",
        (a, b),
        lambda g: (g * mask, g * (1.0 - mask)),
    )


def minimum(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        mask = (a.data <= c).astype(np.float64)
        return _result(np.minimum(a.data, c), "minimum", (a,), lambda g: (g * mask,))
    _same_shape(a, b, "minimum")
    mask = (a.data <= b.data).astype(np.float64)
    return _result(
        np.minimum(a.data, b.data),
        "minimum",
        (a, b),
        lambda g: (g * mask, g * (1.0 - mask)),
    )


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = (a.data > 0.0).astype(np.float64)
    return _result(a.data * mask, "relu", (a,), lambda g: (g * mask,))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp() never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid_np(a.data)
    return _result(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Tensor:
    """x * sigmoid(x), the smooth self-gated activation."""
    a = _as_tensor(a)
    s = _sigmoid_np(a.data)
    ad = a.data
    return _result(ad * s, "silu", (a,), lambda g: (g * s * (1.0 + ad * (1.0 - s)),))


# ---- reductions ----------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), "sum", (a,), backward)


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    return mul(sum_(a), 1.0 / n)


# ---- shape plumbing ------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.size and -1 not in shape:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    out = a.data.reshape(shape)
    return _result(out, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} is not a permutation for rank {a.ndim}")
    inv = np.argsort(axes)
    return _result(
        np.ascontiguousarray(a.data.transpose(axes)),
        "transpose",
        (a,),
        lambda g: (g.transpose(inv),),
    )


def take(a, idx) -> Tensor:
    """General numpy-style indexing (basic slices or integer-array gathers)."""
    a = _as_tensor(a)
    if isinstance(idx, (list, np.ndarray)):
        idx = np.asarray(idx, dtype=np.int64)
    out = np.array(a.data[idx], dtype=np.float64)
    shape = a.shape

    def backward(g):
        ga = np.zeros(shape, dtype=np.float64)
        np.add.at(ga, idx, g)
        return (ga,)

    return _result(out, "take", (a,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    rank = tensors[0].ndim
    axis = axis % rank
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        if t.ndim != rank:
            raise ShapeError(f"concat: rank mismatch {tensors[0].shape} vs {t.shape}")
        other = list(t.shape)
        if base[:axis] != other[:axis] or base[axis + 1 :] != other[axis + 1 :]:
            raise ShapeError(
                f"concat: off-axis extents differ, {tensors[0].shape} vs {t.shape} on axis {axis}"
            )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(
        out, "concat", tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis))
    )


# ---- contractions --------------------------------------------------------


def matmul(a, b) -> Tensor:
    """2D matrix product or batched 3D product with matching batch extents."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim == 2 and b.ndim == 2:
        m, k = a.shape
        k2, n = b.shape
        if k != k2:
            raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
        _record_macs(m * k * n)
    elif a.ndim == 3 and b.ndim == 3:
        ba, m, k = a.shape
        bb, k2, n = b.shape
        if ba != bb or k != k2:
            raise ShapeError(f"matmul: incompatible batched shapes {a.shape} x {b.shape}")
        _record_macs(ba * m * k * n)
    else:
        raise ShapeError(f"matmul: expected 2D or 3D pairs, got {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    swap = (0, 2, 1) if a.ndim == 3 else (1, 0)
    return _result(
        ad @ bd,
        "matmul",
        (a, b),
        lambda g: (g @ bd.transpose(swap), ad.transpose(swap) @ g),
    )


def axis_linear(x, axis: int, weight, bias=None) -> Tensor:
    """Apply a dense ``[in, out]`` map along one axis, other axes untouched."""
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    if weight.ndim != 2:
        raise ShapeError(f"axis_linear: weight must be rank 2, got {weight.shape}")
    axis = axis % x.ndim
    d_in, d_out = weight.shape
    if x.shape[axis] != d_in:
        raise ShapeError(
            f"axis_linear: input extent {x.shape[axis]} on axis {axis} "
            f"does not match weight {weight.shape}"
        )
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (d_out,):
            raise ShapeError(f"axis_linear: bias shape {bias.shape}, expected ({d_out},)")

    xm = np.moveaxis(x.data, axis, -1)
    positions = xm.size // d_in
    _record_macs(positions * d_in * d_out)
    ym = xm @ weight.data
    if bias is not None:
        ym = ym + bias.data
    out = np.moveaxis(ym, -1, axis)
    wd = weight.data

    def backward(g):
        gm = np.moveaxis(g, axis, -1)
        gx = np.moveaxis(gm @ wd.T, -1, axis)
        gw = xm.reshape(-1, d_in).T @ gm.reshape(-1, d_out)
        if bias is None:
            return (gx, gw)
        return (gx, gw, gm.reshape(-1, d_out).sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(np.ascontiguousarray(out), "axis_linear", parents, backward)


# ---- normalization and attention nonlinearities ---------------------------


def layer_norm(x, axis: int, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis``, then scale+shift."""
    x = _as_tensor(x)
    gamma = _as_tensor(gamma)
    beta = _as_tensor(beta)
    axis = axis % x.ndim
    n = x.shape[axis]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"layer_norm: gamma/beta must be ({n},) for axis {axis} of {x.shape}, "
            f"got {gamma.shape} and {beta.shape}"
        )
    bshape = [1] * x.ndim
    bshape[axis] = n
    gb = gamma.data.reshape(bshape)
    bb = beta.data.reshape(bshape)

    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gb * xhat + bb

    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        dgamma = (g * xhat).sum(axis=reduce_axes)
        dbeta = g.sum(axis=reduce_axes)
        dxhat = g * gb
        m1 = dxhat.mean(axis=axis, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=axis, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return (dx, dgamma, dbeta)

    return _result(out, "layer_norm", (x, gamma, beta), backward)


def softmax(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    axis = axis % x.ndim
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _result(s, "softmax", (x,), backward)


def log_softmax(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    axis = axis % x.ndim
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _result(out, "log_softmax", (x,), backward)


# ---- spatial ops ----------------------------------------------------------


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic ``[n_out, n_in]`` interpolation weights, half-pixel centers."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Resize a ``[C, H, W]`` map with half-pixel-aligned bilinear sampling.

    Source coordinates are ``(i + 0.5) * H / out_h - 0.5`` clamped to the
    valid range, so corners are not pinned and edge rows repeat.
    """
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"bilinear_resize: expected [C, H, W], got {x.shape}")
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: bad target size {(out_h, out_w)}")
    c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return _result(x.data, "bilinear_resize", (x,), lambda g: (g,))
    # Per documented accounting convention: 4 multiply-accumulates per output
    # element, independent of the separable implementation below.
    _record_macs(4 * c * out_h * out_w)
    ry = _resize_matrix(h, out_h)
    rx = _resize_matrix(w, out_w)
    t1 = x.data @ rx.T            # [C, H, out_w]
    out = np.matmul(ry, t1)       # broadcasts over C -> [C, out_h, out_w]

    def backward(g):
        gt1 = np.matmul(ry.T, g)  # [C, H, out_w]
        return (gt1 @ rx,)

    return _result(out, "bilinear_resize", (x,), backward)


def _s2d_np(a: np.ndarray, block: int) -> np.ndarray:
    c, h, w = a.shape
    v = a.reshape(c, h // block, block, w // block, block)
    return v.transpose(0, 2, 4, 1, 3).reshape(c * block * block, h // block, w // block)


def _d2s_np(a: np.ndarray, block: int) -> np.ndarray:
    cb, h, w = a.shape
    c = cb // (block * block)
    v = a.reshape(c, block, block, h, w)
    return v.transpose(0, 3, 1, 4, 2).reshape(c, h * block, w * block)


def space_to_depth(x, block: int) -> Tensor:
    """Fold each ``block x block`` spatial cell into channels, ``[C,H,W] -> [C*b*b, H/b, W/b]``."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"space_to_depth: expected [C, H, W], got {x.shape}")
    c, h, w = x.shape
    if block < 1 or h % block or w % block:
        raise ShapeError(f"space_to_depth: {h}x{w} not divisible by block {block}")
    return _result(
        np.ascontiguousarray(_s2d_np(x.data, block)),
        "space_to_depth",
        (x,),
        lambda g: (_d2s_np(g, block),),
    )


def depth_to_space(x, block: int) -> Tensor:
    """Inverse of space_to_depth: ``[C*b*b, H, W] -> [C, H*b, W*b]``."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"depth_to_space: expected [C, H, W], got {x.shape}")
    c, h, w = x.shape
    if block < 1 or c % (block * block):
        raise ShapeError(f"depth_to_space: {c} channels not divisible by block^2 ({block})")
    return _result(
        np.ascontiguousarray(_d2s_np(x.data, block)),
        "depth_to_space",
        (x,),
        lambda g: (_s2d_np(g, block),),
    )


def _gridpart_np(a: np.ndarray, g: int) -> np.ndarray:
    c, h, w = a.shape
    v = a.reshape(c, h // g, g, w // g, g)
    # [N_g, g*g, C] with cells enumerated row-major and in-cell row-major
    return v.transpose(1, 3, 2, 4, 0).reshape((h // g) * (w // g), g * g, c)


def _gridmerge_np(q: np.ndarray, h: int, w: int, g: int) -> np.ndarray:
    ng, k, c = q.shape
    v = q.reshape(h // g, w // g, g, g, c)
    return v.transpose(4, 0, 2, 1, 3).reshape(c, h, w)


def grid_partition(x, g: int) -> Tensor:
    """Cut ``[C, H, W]`` into g x g cells: ``[(H/g)*(W/g), g*g, C]``, row-major."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"grid_partition: expected [C, H, W], got {x.shape}")
    c, h, w = x.shape
    if g < 1 or h % g or w % g:
        raise ShapeError(f"grid_partition: {h}x{w} not divisible by cell size {g}")
    return _result(
        np.ascontiguousarray(_gridpart_np(x.data, g)),
        "grid_partition",
        (x,),
        lambda g_: (_gridmerge_np(g_, h, w, g),),
    )


def grid_merge(q, h: int, w: int, g: int) -> Tensor:
    """Inverse of grid_partition: ``[(H/g)*(W/g), g*g, C] -> [C, H, W]``."""
    q = _as_tensor(q)
    if q.ndim != 3:
        raise ShapeError(f"grid_merge: expected [N_g, g*g, C], got {q.shape}")
    ng, k, c = q.shape
    if g < 1 or h % g or w % g:
        raise ShapeError(f"grid_merge: target {h}x{w} not divisible by cell size {g}")
    if k != g * g or ng != (h // g) * (w // g):
        raise ShapeError(
            f"grid_merge: got {q.shape}, expected ({(h // g) * (w // g)}, {g * g}, C) "
            f"for target {h}x{w} with cell size {g}"
        )
    return _result(
        np.ascontiguousarray(_gridmerge_np(q.data, h, w, g)),
        "grid_merge",
        (q,),
        lambda g_: (_gridpart_np(g_, g),),
    )
