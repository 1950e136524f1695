"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray plus an optional gradient. Every differentiable
op records a backward closure and its grad-requiring parents; calling
.backward() on a scalar topologically sorts the recorded graph and pushes
gradients leaf-ward. The op set is exactly what the reconstruction network
needs: broadcast arithmetic, 2-D matmul, conv2d / conv_transpose2d /
maxpool2d on (C, H, W) feature maps, softmax, layernorm, GELU, and a few
reductions. Heavy kernels reduce to BLAS contractions via einsum over
sliding-window views, so there is no Python loop over pixels anywhere.

Arrays are float32 by default; float64 everywhere when a caller builds the
graph in float64 (gradient checks rely on this).
"""

import contextlib

import numpy as np
from scipy.special import erf, expit

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward evals only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # ---- bookkeeping ----

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _accum_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar. Gradients accumulate into .grad."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        # iterative postorder so K-deep unrolled graphs cannot hit the
        # recursion limit
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- operator sugar ----

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(neg(self), _wrap(other, self.dtype))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose2d(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _from_op(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    parents = tuple(p for p in parents if p.requires_grad)
    if _grad_enabled and parents:
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---- arithmetic ----


def add(a, b):
    if not isinstance(b, Tensor):
        s = float(b)
        data = a.data + s

        def back(g):
            a._accum_grad(g)

        return _from_op(data, (a,), back)
    data = a.data + b.data

    def back(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(g, b.data.shape))

    return _from_op(data, (a, b), back)


def neg(a):
    def back(g):
        a._accum_grad(-g)

    return _from_op(-a.data, (a,), back)


def mul(a, b):
    if not isinstance(b, Tensor):
        s = float(b)
        data = a.data * s

        def back(g):
            a._accum_grad(g * s)

        return _from_op(data, (a,), back)
    data = a.data * b.data

    def back(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(g * a.data, b.data.shape))

    return _from_op(data, (a, b), back)


def reciprocal(a):
    inv = 1.0 / a.data

    def back(g):
        a._accum_grad(-g * inv * inv)

    return _from_op(inv, (a,), back)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    data = a.data @ b.data

    def back(g):
        if a.requires_grad:
            a._accum_grad(g @ b.data.T)
        if b.requires_grad:
            b._accum_grad(a.data.T @ g)

    return _from_op(data, (a, b), back)


def transpose2d(a):
    if a.data.ndim != 2:
        raise ValueError("transpose2d expects a 2-D tensor")

    def back(g):
        a._accum_grad(g.T)

    return _from_op(a.data.T.copy(), (a,), back)


def reshape(a, shape):
    old = a.data.shape

    def back(g):
        a._accum_grad(g.reshape(old))

    return _from_op(a.data.reshape(shape), (a,), back)


def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum_grad(g[tuple(sl)])

    return _from_op(data, tensors, back)


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=a.data.dtype)

    def back(g):
        gg = g
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.data.ndim for ax in axes)
            gg = np.expand_dims(g, axes)
        a._accum_grad(np.broadcast_to(gg, a.data.shape))

    return _from_op(data, (a,), back)


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---- nonlinearities ----


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        a._accum_grad(y * (g - dot))

    return _from_op(y, (a,), back)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact-erf GELU: x * Phi(x)."""
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * phi

    def back(g):
        dens = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        a._accum_grad(g * (phi + x * dens))

    return _from_op(data, (a,), back)


def softplus(a):
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def back(g):
        a._accum_grad(g * expit(x))

    return _from_op(data, (a,), back)


def layernorm(a, weight=None, bias=None, axis=0, eps=1e-5):
    """Normalize over one axis; affine params broadcast against the result.

    With (C, H, W) features and axis=0 this is a per-pixel normalization
    across channels, the flavor transformer blocks use.
    """
    x = a.data
    n = x.shape[axis]
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat
    if weight is not None:
        data = data * weight.data
    if bias is not None:
        data = data + bias.data

    def back(g):
        gx = g * weight.data if weight is not None else g
        if a.requires_grad:
            gvar = (gx * xc).sum(axis=axis, keepdims=True) * (-0.5) * inv**3
            gmu = -(gx.sum(axis=axis, keepdims=True)) * inv + gvar * (-2.0 / n) * xc.sum(
                axis=axis, keepdims=True
            )
            a._accum_grad(gx * inv + gvar * (2.0 / n) * xc + gmu / n)
        if weight is not None and weight.requires_grad:
            weight._accum_grad(_unbroadcast(g * xhat, weight.data.shape))
        if bias is not None and bias.requires_grad:
            bias._accum_grad(_unbroadcast(g, bias.data.shape))

    parents = [a]
    if weight is not None:
        parents.append(weight)
    if bias is not None:
        parents.append(bias)
    return _from_op(data, parents, back)


# ---- spatial ops on (C, H, W) ----


def _conv_out_size(n, k, stride, padding):
    span = n + 2 * padding - k
    if span < 0 or span % stride != 0:
        raise ValueError(
            f"conv size mismatch: input {n}, kernel {k}, stride {stride}, padding {padding}"
        )
    return span // stride + 1


def conv2d(x, w, bias=None, stride=1, padding=0, groups=1):
    """2-D convolution (cross-correlation), torch weight layout.

    x: (Cin, H, W), w: (Cout, Cin//groups, kh, kw), bias: (Cout,).
    Output size must come out integral; no implicit flooring.
    """
    cin, h, ww = x.data.shape
    cout, cin_g, kh, kw = w.data.shape
    if cin % groups or cout % groups or cin_g != cin // groups:
        raise ValueError("conv2d: channel counts incompatible with groups")
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(ww, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    view = view[:, ::stride, ::stride]
    # im2col: one contiguous copy so the conv becomes a batched matmul;
    # row order (channel-in-group, a, b) matches the weight layout
    cols = view.transpose(0, 3, 4, 1, 2).reshape(groups, cin_g * kh * kw, ho * wo)
    wmat = w.data.reshape(groups, cout // groups, cin_g * kh * kw)
    out = np.matmul(wmat, cols).reshape(cout, ho, wo)
    if bias is not None:
        out += bias.data[:, None, None]

    def back(g):
        go = g.reshape(groups, cout // groups, ho * wo)
        if w.requires_grad:
            dw = np.matmul(go, cols.transpose(0, 2, 1))
            w._accum_grad(dw.reshape(w.data.shape))
        if bias is not None and bias.requires_grad:
            bias._accum_grad(g.sum(axis=(1, 2)))
        if x.requires_grad:
            dv = np.matmul(wmat.transpose(0, 2, 1), go).reshape(cin, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            # scatter-add each kernel offset back onto the padded input
            for a in range(kh):
                for b in range(kw):
                    dxp[:, a : a + stride * ho : stride, b : b + stride * wo : stride] += dv[
                        :, a, b
                    ]
            x._accum_grad(dxp[:, padding : padding + h, padding : padding + ww])

    parents = [x, w] + ([bias] if bias is not None else [])
    return _from_op(out, parents, back)


def conv_transpose2d(x, w, bias=None, stride=1, padding=0, output_padding=0):
    """Transposed 2-D convolution, torch weight layout (Cin, Cout, kh, kw).

    Output size is (H-1)*stride - 2*padding + kh + output_padding.
    """
    cin, h, ww = x.data.shape
    cin_w, cout, kh, kw = w.data.shape
    if cin_w != cin:
        raise ValueError("conv_transpose2d: weight/input channel mismatch")
    if output_padding >= max(stride, 1):
        raise ValueError("conv_transpose2d: output_padding must be < stride")
    hfull = (h - 1) * stride + kh
    wfull = (ww - 1) * stride + kw
    hout = hfull - 2 * padding + output_padding
    wout = wfull - 2 * padding + output_padding
    if hout < 1 or wout < 1:
        raise ValueError("conv_transpose2d: empty output")

    cols = (w.data.reshape(cin, cout * kh * kw).T @ x.data.reshape(cin, h * ww)).reshape(
        cout, kh, kw, h, ww
    )
    buf = np.zeros((cout, hfull + output_padding, wfull + output_padding), dtype=x.data.dtype)
    for a in range(kh):
        for b in range(kw):
            buf[:, a : a + stride * h : stride, b : b + stride * ww : stride] += cols[:, a, b]
    out = buf[:, padding : padding + hout, padding : padding + wout].copy()
    if bias is not None:
        out += bias.data[:, None, None]

    def back(g):
        dbuf = np.zeros_like(buf)
        dbuf[:, padding : padding + hout, padding : padding + wout] = g
        dcols = np.empty_like(cols)
        for a in range(kh):
            for b in range(kw):
                dcols[:, a, b] = dbuf[:, a : a + stride * h : stride, b : b + stride * ww : stride]
        dmat = dcols.reshape(cout * kh * kw, h * ww)
        if x.requires_grad:
            x._accum_grad((w.data.reshape(cin, -1) @ dmat).reshape(x.data.shape))
        if w.requires_grad:
            w._accum_grad((x.data.reshape(cin, -1) @ dmat.T).reshape(w.data.shape))
        if bias is not None and bias.requires_grad:
            bias._accum_grad(g.sum(axis=(1, 2)))

    parents = [x, w] + ([bias] if bias is not None else [])
    return _from_op(out, parents, back)


def maxpool2d(x, window=2, stride=None):
    """Max pooling with non-overlapping windows (stride == window).

    Odd trailing rows/cols are zero-padded on the right/bottom first. Ties
    within a window resolve to the first element in row-major order.
    """
    if stride is None:
        stride = window
    if stride != window:
        raise NotImplementedError("maxpool2d: only stride == window is supported")
    c, h, ww = x.data.shape
    ho = -(-h // window)
    wo = -(-ww // window)
    ph, pw = ho * window - h, wo * window - ww
    xp = np.pad(x.data, ((0, 0), (0, ph), (0, pw))) if (ph or pw) else x.data
    tiles = (
        xp.reshape(c, ho, window, wo, window)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, ho, wo, window * window)
    )
    idx = tiles.argmax(axis=3)
    out = np.take_along_axis(tiles, idx[..., None], axis=3)[..., 0]

    def back(g):
        dtiles = np.zeros_like(tiles)
        np.put_along_axis(dtiles, idx[..., None], g[..., None], axis=3)
        dxp = (
            dtiles.reshape(c, ho, wo, window, window)
            .transpose(0, 1, 3, 2, 4)
            .reshape(c, ho * window, wo * window)
        )
        x._accum_grad(dxp[:, :h, :ww])

    return _from_op(np.ascontiguousarray(out), (x,), back)


def global_avgpool(x):
    """(C, H, W) -> (C,) spatial mean."""
    c, h, w = x.data.shape
    data = x.data.mean(axis=(1, 2))

    def back(g):
        x._accum_grad(np.broadcast_to(g[:, None, None] / (h * w), x.data.shape))

    return _from_op(data, (x,), back)
