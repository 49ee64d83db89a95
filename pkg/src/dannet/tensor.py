"""Dense tensor engine with reverse-mode automatic differentiation.

Covers exactly the layer vocabulary the restoration networks need:
2-D convolution, ELU / sigmoid, global and 2x2 pooling, bilinear
resampling, concatenation/slicing and elementwise arithmetic.

Working precision is float32. Float64 data is accepted and propagated
unchanged, which the finite-difference gradient tests rely on; ops never
silently change dtype. Activations live in N,C,H,W order.

A tensor created from an op holds a closure that scatters its output
gradient to its parents. ``backward(loss)`` walks the graph once in
reverse topological order and then releases it, so each tape is
single-use. Tensors are not mutated by ops; the optimizer rewrites
parameter ``.data`` between tapes under single ownership.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph construction (e.g. validation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _coerce(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(DEFAULT_DTYPE)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """N-d real array with an optional handle into the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _coerce(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_const(other, self))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    # -- shape / reductions -------------------------------------------------

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or not isinstance(shape[0], (tuple, list)) else shape[0])

    def sum(self, axes=None, keepdims=False):
        return sum_over(self, axes, keepdims)

    def mean(self):
        return mean_all(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return absval(self)


# -- graph plumbing -----------------------------------------------------------


def _from_op(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _const(value, like: Tensor):
    return np.asarray(value, dtype=like.data.dtype)


def _operands(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    if isinstance(a, Tensor):
        return a, Tensor(_const(b, a))
    return Tensor(_const(a, b)), b


def backward(loss: Tensor):
    """Run reverse-mode accumulation from a scalar loss, then free the tape.

    Populates ``.grad`` on every reachable tensor with ``requires_grad``.
    """
    if loss.size != 1:
        raise ValueError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward() on a tensor with no tape (requires_grad is False)")

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
    # tape is single-use: release interior references
    for node in order:
        node._parents = ()
        node._backward = None


def check_finite(x, what="tensor"):
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite values")
    return x


# -- elementwise ops ----------------------------------------------------------


def add(a, b):
    a, b = _operands(a, b)
    out = _from_op(a.data + b.data, (a, b), None)

    def _bw():
        _accum(a, _unbroadcast(out.grad, a.data.shape))
        _accum(b, _unbroadcast(out.grad, b.data.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def mul(a, b):
    a, b = _operands(a, b)
    out = _from_op(a.data * b.data, (a, b), None)

    def _bw():
        _accum(a, _unbroadcast(b.data * out.grad, a.data.shape))
        _accum(b, _unbroadcast(a.data * out.grad, b.data.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def neg(a: Tensor):
    out = _from_op(-a.data, (a,), None)

    def _bw():
        _accum(a, -out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


def sqrt(a: Tensor):
    out_data = np.sqrt(a.data)
    out = _from_op(out_data, (a,), None)

    def _bw():
        _accum(a, out.grad * (0.5 / out_data))

    out._backward = _bw if out.requires_grad else None
    return out


def absval(a: Tensor):
    out = _from_op(np.abs(a.data), (a,), None)

    def _bw():
        _accum(a, np.sign(a.data) * out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


def activation(kind: str, x: Tensor) -> Tensor:
    """Elementwise nonlinearity, ``kind`` in {"elu", "sigmoid"}.

    ELU uses alpha=1: x for x >= 0, exp(x)-1 below. Sigmoid output is
    strictly inside (0, 1). Non-finite input is rejected.
    """
    check_finite(x, f"activation({kind}) input")
    if kind == "elu":
        return elu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def elu(x: Tensor):
    pos = x.data >= 0
    ex = np.exp(np.minimum(x.data, 0.0))  # exp(x) for the negative side, 1 elsewhere
    out_data = np.where(pos, x.data, ex - 1.0)
    out = _from_op(np.ascontiguousarray(out_data), (x,), None)

    def _bw():
        _accum(x, np.where(pos, out.grad, ex * out.grad))

    out._backward = _bw if out.requires_grad else None
    return out


def sigmoid(x: Tensor):
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    # keep the output strictly inside (0, 1) even where float rounding saturates
    info = np.finfo(d.dtype)
    np.clip(s, info.tiny, 1.0 - info.eps, out=s)
    out = _from_op(s, (x,), None)

    def _bw():
        _accum(x, (s * (1.0 - s)) * out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


# -- structural ops -----------------------------------------------------------


def reshape(a: Tensor, shape):
    shape = tuple(shape)
    out = _from_op(np.ascontiguousarray(a.data.reshape(shape)), (a,), None)

    def _bw():
        _accum(a, out.grad.reshape(a.data.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def concat(tensors, axis=1):
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of zero tensors")
    out = _from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None)

    def _bw():
        start = 0
        for t in tensors:
            n = t.data.shape[axis]
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(start, start + n)
            _accum(t, out.grad[tuple(idx)])
            start += n

    out._backward = _bw if out.requires_grad else None
    return out


def narrow(a: Tensor, axis: int, start: int, length: int):
    """Contiguous slice of ``length`` entries along ``axis``."""
    if start < 0 or start + length > a.data.shape[axis]:
        raise ValueError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} of shape {a.shape}"
        )
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _from_op(np.ascontiguousarray(a.data[idx]), (a,), None)

    def _bw():
        g = np.zeros_like(a.data)
        g[idx] = out.grad
        _accum(a, g)

    out._backward = _bw if out.requires_grad else None
    return out


def sum_over(a: Tensor, axes=None, keepdims=False):
    if axes is None:
        out_data = a.data.sum()
    else:
        axes = (axes,) if isinstance(axes, int) else tuple(axes)
        out_data = a.data.sum(axis=axes, keepdims=keepdims)
    out = _from_op(np.asarray(out_data), (a,), None)

    def _bw():
        g = out.grad
        if axes is not None and not keepdims:
            shape = list(a.data.shape)
            for ax in axes:
                shape[ax] = 1
            g = g.reshape(shape)
        _accum(a, np.broadcast_to(g, a.data.shape))

    out._backward = _bw if out.requires_grad else None
    return out


def mean_all(a: Tensor):
    n = a.data.size
    out = _from_op(np.asarray(a.data.sum() / n), (a,), None)

    def _bw():
        _accum(a, np.broadcast_to(out.grad / n, a.data.shape))

    out._backward = _bw if out.requires_grad else None
    return out


# -- convolution --------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0):
    """2-D convolution (cross-correlation) over N,C,H,W input.

    weight is (Cout, Cin, kh, kw) with kh, kw in {1, 3}; output spatial size
    is (H + 2*padding - kh)//stride + 1. Stride-1 calls with padding
    (k-1)//2 preserve H and W.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects N,C,H,W input, got shape {x.shape}")
    n, cin, h, w = x.data.shape
    cout, cw, kh, kw = weight.data.shape
    if cin != cw:
        raise ValueError(f"conv2d channel mismatch: input has {cin} channels, weight expects {cw}")
    if kh not in (1, 3) or kw not in (1, 3):
        raise ValueError(f"conv2d supports 1x1 and 3x3 kernels, got {kh}x{kw}")
    if bias.data.shape != (cout,):
        raise ValueError(f"conv2d bias must have shape ({cout},), got {bias.data.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d needs stride >= 1 and padding >= 0")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {h}x{w}, kernel {kh}x{kw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, Cin, Ho, Wo, kh, kw)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, cin * kh * kw, ho * wo)
    w2 = weight.data.reshape(cout, cin * kh * kw)
    out_data = np.matmul(w2, cols).reshape(n, cout, ho, wo) + bias.data.reshape(1, cout, 1, 1)
    out = _from_op(np.ascontiguousarray(out_data), (x, weight, bias), None)

    def _bw():
        g = out.grad
        gmat = g.reshape(n, cout, ho * wo)
        if weight.requires_grad:
            gw = np.tensordot(gmat, cols, axes=([0, 2], [0, 2]))
            _accum(weight, gw.reshape(weight.data.shape))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0]))
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        contrib.transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            _accum(x, gx)

    out._backward = _bw if out.requires_grad else None
    return out


# -- pooling ------------------------------------------------------------------


def pool(kind: str, x: Tensor) -> Tensor:
    """Pooling over N,C,H,W: "avg_global" / "max_global" give N,C,1,1;
    "avg2x" averages 2x2 blocks (H, W must be even).

    Max routes its gradient to the first maximal element in row-major order.
    """
    if x.data.ndim != 4:
        raise ValueError(f"pool expects N,C,H,W input, got shape {x.shape}")
    n, c, h, w = x.data.shape

    if kind == "avg_global":
        out = _from_op(x.data.mean(axis=(2, 3), keepdims=True), (x,), None)

        def _bw_avg():
            _accum(x, np.broadcast_to(out.grad / (h * w), x.data.shape))

        out._backward = _bw_avg if out.requires_grad else None
        return out

    if kind == "max_global":
        flat = x.data.reshape(n, c, h * w)
        idx = np.argmax(flat, axis=2)  # first max in row-major order
        out_data = np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)
        out = _from_op(np.ascontiguousarray(out_data), (x,), None)

        def _bw_max():
            gflat = np.zeros((n, c, h * w), dtype=x.data.dtype)
            np.put_along_axis(gflat, idx[..., None], out.grad.reshape(n, c, 1), axis=2)
            _accum(x, gflat.reshape(x.data.shape))

        out._backward = _bw_max if out.requires_grad else None
        return out

    if kind == "avg2x":
        if h % 2 or w % 2:
            raise ValueError(f"avg2x needs even H and W, got {h}x{w}")
        out_data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        out = _from_op(np.ascontiguousarray(out_data), (x,), None)

        def _bw_avg2():
            g = np.repeat(np.repeat(out.grad, 2, axis=2), 2, axis=3)
            _accum(x, g * np.asarray(0.25, dtype=x.data.dtype))

        out._backward = _bw_avg2 if out.requires_grad else None
        return out

    raise ValueError(f"unknown pool kind {kind!r}")


# -- bilinear resampling ------------------------------------------------------

_RESAMPLE_CACHE: dict = {}


def _bilinear_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Dense 1-D interpolation matrix, align-corners-false convention."""
    key = (n_in, n_out, np.dtype(dtype).str)
    cached = _RESAMPLE_CACHE.get(key)
    if cached is not None:
        return cached
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        center = (o + 0.5) * scale - 0.5
        lo = int(np.floor(center))
        frac = center - lo
        mat[o, min(max(lo, 0), n_in - 1)] += 1.0 - frac
        mat[o, min(max(lo + 1, 0), n_in - 1)] += frac
    mat = mat.astype(dtype)
    _RESAMPLE_CACHE[key] = mat
    return mat


def resample(x: Tensor, mode: str) -> Tensor:
    """Bilinear rescale: "down_half_bilinear" or "up_double_bilinear".

    Downsampling needs even H, W of at least 2. The gradient is the exact
    transpose of the interpolation matrices.
    """
    if x.data.ndim != 4:
        raise ValueError(f"resample expects N,C,H,W input, got shape {x.shape}")
    n, c, h, w = x.data.shape
    if mode == "down_half_bilinear":
        if h < 2 or w < 2 or h % 2 or w % 2:
            raise ValueError(f"down_half_bilinear needs even dims >= 2, got {h}x{w}")
        ho, wo = h // 2, w // 2
    elif mode == "up_double_bilinear":
        ho, wo = 2 * h, 2 * w
    else:
        raise ValueError(f"unknown resample mode {mode!r}")

    ah = _bilinear_matrix(h, ho, x.data.dtype)
    aw = _bilinear_matrix(w, wo, x.data.dtype)
    tmp = np.einsum("oh,nchw->ncow", ah, x.data)
    out_data = np.einsum("pw,ncow->ncop", aw, tmp)
    out = _from_op(np.ascontiguousarray(out_data), (x,), None)

    def _bw():
        g1 = np.einsum("pw,ncop->ncow", aw, out.grad)
        _accum(x, np.ascontiguousarray(np.einsum("oh,ncow->nchw", ah, g1)))

    out._backward = _bw if out.requires_grad else None
    return out
