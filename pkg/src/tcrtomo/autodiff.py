"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure and parent
links; ops build the graph dynamically.  backward() topologically sorts the
graph, walks it once, accumulates gradients into .grad (plain ndarrays), and
then releases the tape: a second backward through the same graph raises
TapeError unless retain_graph=True was passed.

Payloads default to float32; explicit reductions (sum/mean/losses, norm
statistics) accumulate in float64 before casting back.  float64 payloads are
fully supported, which is what the finite-difference gradient checks use.

Convolutions run as im2col matmuls; their input gradients are transposed
convolutions (dilate by stride, pad, correlate with the flipped kernel), and
conv_transpose2d/3d are also exposed as first-class differentiable ops so
gradient-of-gradient constructions (e.g. a gradient-penalty graph) can be
built explicitly on the tape.
"""

import contextlib
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import TapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents",
                 "_released")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap ndarrays, not Tensors")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()
        self._released = False

    # ---------------------------------------------------------- bookkeeping

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

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad})")

    # -------------------------------------------------------------- algebra

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by Tensor not supported; use reciprocal ops")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)

    # ------------------------------------------------------------- backward

    def backward(self, grad=None, retain_graph=False):
        if self._released:
            raise TapeError("backward through a released graph; "
                            "pass retain_graph=True to keep the tape")
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward without gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ValueError(
                    f"gradient shape {grad.shape} does not match {self.shape}")

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
            if node._released:
                raise TapeError("graph contains released nodes")
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        # intermediate grads are per-walk scratch; only leaves accumulate
        # across backward calls
        for node in topo:
            if node._parents:
                node.grad = None
        if self._parents:
            self.grad = grad
        else:
            self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if not retain_graph and node._parents:
                node._backward = None
                node._parents = ()
                node._released = True
                node.grad = None


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, np.ndarray):
        return Tensor(x)
    # python scalars and lists adopt the companion dtype to avoid upcasts
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x), dtype=dtype)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return _as_tensor(a, like=b), b
    return _as_tensor(a), _as_tensor(b)


def _make(data, parents, backward):
    """Create an op result; tracks the tape only when useful."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t, g):
    if not (t.requires_grad or t._parents):
        return
    g = np.asarray(g, dtype=t.data.dtype)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Reduce a broadcasted gradient back to the original shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ------------------------------------------------------------ element-wise

def add(a, b):
    a, b = _pair(a, b)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b):
    a, b = _pair(a, b)
    out_data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, -_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b):
    a, b = _pair(a, b)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def scale(a, s):
    a = _as_tensor(a)
    s = float(s)

    def backward(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), backward)


def sqrt(a):
    a = _as_tensor(a)
    root = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * (0.5 / root))

    return _make(root, (a,), backward)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), backward)


def leaky_relu(a, slope=0.1):
    a = _as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)

    def backward(g):
        _accum(a, g * factor)

    return _make(a.data * factor, (a,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a):
    """Exact Gaussian-error-function gelu: x * Phi(x)."""
    a = _as_tensor(a)
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def backward(g):
        dens = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        _accum(a, g * (phi + x * dens))

    return _make((x * phi).astype(x.dtype), (a,), backward)


# ---------------------------------------------------------------- reshapes

def reshape(a, shape):
    a = _as_tensor(a)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward)


def tslice(a, key):
    a = _as_tensor(a)

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[key] += g
        _accum(a, buf)

    return _make(a.data[key], (a,), backward)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


def broadcast_to(a, shape):
    a = _as_tensor(a)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), backward)


# -------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)
    out = np.asarray(out, dtype=a.data.dtype)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(out, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.data.shape[i] for i in ax]))
    out = np.mean(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)
    out = np.asarray(out, dtype=a.data.dtype)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / count, a.data.shape))
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg / count, a.data.shape))

    return _make(out, (a,), backward)


def mse_loss(a, b):
    """Mean of squared differences over all elements."""
    a, b = _pair(a, b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    out = np.asarray(np.mean(diff * diff, dtype=np.float64), dtype=a.data.dtype)
    n = diff.size

    def backward(g):
        gd = (2.0 / n) * g * diff
        _accum(a, gd)
        _accum(b, -gd)

    return _make(out, (a, b), backward)


def l2_loss(a):
    """Sum of squares over all elements (no 1/2 factor)."""
    a = _as_tensor(a)
    out = np.asarray(np.sum(a.data * a.data, dtype=np.float64),
                     dtype=a.data.dtype)

    def backward(g):
        _accum(a, 2.0 * g * a.data)

    return _make(out, (a,), backward)


def softmax_lastaxis(a):
    a = _as_tensor(a)
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        dot = np.sum(g * s, axis=-1, keepdims=True)
        _accum(a, (g - dot) * s)

    return _make(s, (a,), backward)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize the last axis; gamma/beta are 1-D learned scale/shift."""
    a = _as_tensor(a)
    gamma = _as_tensor(gamma, like=a)
    beta = _as_tensor(beta, like=a)
    d = a.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ValueError(
            f"scale/shift shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature size ({d},)")
    x64 = a.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((x64 - mu) * inv).astype(a.data.dtype)
    out = xhat * gamma.data + beta.data

    def backward(g):
        _accum(beta, g.reshape(-1, d).sum(axis=0))
        _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        gx = g * gamma.data
        m1 = np.mean(gx, axis=-1, keepdims=True)
        m2 = np.mean(gx * xhat, axis=-1, keepdims=True)
        _accum(a, ((gx - m1 - xhat * m2) * inv).astype(a.data.dtype))

    return _make(out, (a, gamma, beta), backward)


# ------------------------------------------------------------------ matmul

def matmul(a, b):
    a, b = _pair(a, b)
    out = a.data @ b.data

    def backward(g):
        if b.data.ndim == 1:
            raise ValueError("matmul backward needs 2-D+ operands")
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), backward)


# ----------------------------------------------------------- convolutions

def _norm_stride_pad(stride, pad, nd):
    if isinstance(stride, int):
        stride = (stride,) * nd
    stride = tuple(int(s) for s in stride)
    if len(pad) != nd or any(len(p) != 2 for p in pad):
        raise ValueError(f"padding must be {nd} (before, after) pairs, got {pad}")
    pad = tuple((int(p[0]), int(p[1])) for p in pad)
    if any(s < 1 for s in stride):
        raise ValueError(f"strides must be >= 1, got {stride}")
    if any(p < 0 for pr in pad for p in pr):
        raise ValueError(f"padding must be >= 0, got {pad}")
    return stride, pad


def _pad_input(x, pad):
    if all(p == (0, 0) for p in pad):
        return x
    return np.pad(x, ((0, 0), (0, 0)) + pad)


def _im2col(xp, ksize, stride):
    """(N, C, *sp) -> (N, P, C*prod(k)), plus the output spatial shape."""
    nd = len(ksize)
    axes = tuple(range(2, 2 + nd))
    win = sliding_window_view(xp, ksize, axis=axes)
    sel = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    win = win[sel]
    out_sp = win.shape[2:2 + nd]
    # (N, C, *out, *k) -> (N, *out, C, *k)
    order = (0,) + tuple(range(2, 2 + nd)) + (1,) + tuple(range(2 + nd, 2 + 2 * nd))
    cols = win.transpose(order).reshape(
        xp.shape[0], int(np.prod(out_sp)), xp.shape[1] * int(np.prod(ksize)))
    return np.ascontiguousarray(cols), out_sp


def _conv_out_shape(in_sp, ksize, stride, pad):
    return tuple((n + p[0] + p[1] - k) // s + 1
                 for n, k, s, p in zip(in_sp, ksize, stride, pad))


def _conv_forward(x, w, stride, pad):
    n, c = x.shape[:2]
    co = w.shape[0]
    ksize = w.shape[2:]
    xp = _pad_input(x, pad)
    cols, out_sp = _im2col(xp, ksize, stride)
    out = cols @ w.reshape(co, -1).T
    out = out.reshape((n,) + out_sp + (co,))
    nd = len(ksize)
    order = (0, nd + 1) + tuple(range(1, nd + 1))
    return np.ascontiguousarray(out.transpose(order)), cols, out_sp


def _conv_dw(cols, g, w_shape):
    co = w_shape[0]
    gf = g.reshape(g.shape[0], co, -1)  # (N, Co, P)
    cols64 = cols.reshape(-1, cols.shape[-1])
    gmat = np.ascontiguousarray(gf.transpose(0, 2, 1)).reshape(-1, co)
    dw = gmat.T @ cols64
    return dw.reshape(w_shape)


def _dilate(g, stride):
    if all(s == 1 for s in stride):
        return g
    sp = g.shape[2:]
    new_sp = tuple((n - 1) * s + 1 for n, s in zip(sp, stride))
    out = np.zeros(g.shape[:2] + new_sp, dtype=g.dtype)
    sel = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    out[sel] = g
    return out


def _conv_input_grad(g, w, stride, pad, in_sp):
    """Gradient w.r.t. the conv input == transposed convolution of g."""
    ksize = w.shape[2:]
    gd = _dilate(g, stride)
    tpad = []
    for n, k, s, p, dn in zip(in_sp, ksize, stride, pad, gd.shape[2:]):
        before = k - 1 - p[0]
        after = n + p[0] - dn
        if before < 0 or after < 0:
            raise ValueError(
                f"padding {p} exceeds kernel {k}; transpose undefined")
        tpad.append((before, after))
    # flip spatially, swap in/out channels
    nd = len(ksize)
    wf = np.flip(w, axis=tuple(range(2, 2 + nd)))
    wf = np.ascontiguousarray(np.swapaxes(wf, 0, 1))
    out, _, _ = _conv_forward(gd, wf, (1,) * nd, tuple(tpad))
    return out


def _conv_nd(a, w, b, stride, pad, nd):
    a = _as_tensor(a)
    w = _as_tensor(w, like=a)
    if a.data.ndim != nd + 2:
        raise ValueError(
            f"conv{nd}d input must have {nd + 2} axes (N, C, spatial), "
            f"got shape {a.data.shape}")
    if w.data.ndim != nd + 2:
        raise ValueError(f"conv{nd}d weight must have {nd + 2} axes, "
                         f"got shape {w.data.shape}")
    if a.data.shape[1] != w.data.shape[1]:
        raise ValueError(
            f"input channels {a.data.shape[1]} != weight channels {w.data.shape[1]}")
    stride, pad = _norm_stride_pad(stride, pad, nd)
    out, cols, _ = _conv_forward(a.data, w.data, stride, pad)
    parents = [a, w]
    if b is not None:
        b = _as_tensor(b, like=a)
        if b.data.shape != (w.data.shape[0],):
            raise ValueError(
                f"bias shape {b.data.shape} != ({w.data.shape[0]},)")
        out = out + b.data.reshape((1, -1) + (1,) * nd)
        parents.append(b)

    in_sp = a.data.shape[2:]

    def backward(g):
        if b is not None:
            _accum(b, g.sum(axis=(0,) + tuple(range(2, 2 + nd))))
        _accum(w, _conv_dw(cols, g, w.data.shape))
        _accum(a, _conv_input_grad(g, w.data, stride, pad, in_sp))

    return _make(out, tuple(parents), backward)


def conv2d(a, w, b=None, stride=1, padding=((0, 0), (0, 0))):
    """2-D convolution (correlation): a (N,C,H,W), w (Co,C,kh,kw)."""
    return _conv_nd(a, w, b, stride, padding, 2)


def conv3d(a, w, b=None, stride=1, padding=((0, 0), (0, 0), (0, 0))):
    """3-D convolution: a (N,C,D,H,W), w (Co,C,kd,kh,kw).  Causal-in-time
    encoders pass left-heavy padding on the first spatial axis."""
    return _conv_nd(a, w, b, stride, padding, 3)


def _conv_transpose_nd(a, w, stride, pad, nd, output_size):
    a = _as_tensor(a)
    w = _as_tensor(w, like=a)
    stride, pad = _norm_stride_pad(stride, pad, nd)
    if a.data.shape[1] != w.data.shape[0]:
        raise ValueError(
            f"input channels {a.data.shape[1]} != weight out-channels "
            f"{w.data.shape[0]}")
    if output_size is None:
        output_size = tuple(
            (n - 1) * s + k - p[0] - p[1]
            for n, s, k, p in zip(a.data.shape[2:], stride, w.data.shape[2:], pad))
    output_size = tuple(int(v) for v in output_size)
    out = _conv_input_grad(a.data, w.data, stride, pad, output_size)

    def backward(g):
        gp = _pad_input(g, pad)
        cols, _ = _im2col(gp, w.data.shape[2:], stride)
        _accum(w, _conv_dw(cols, a.data, w.data.shape))
        gcols = cols @ w.data.reshape(w.data.shape[0], -1).T
        ga = gcols.reshape((g.shape[0],) + a.data.shape[2:] + (w.data.shape[0],))
        order = (0, nd + 1) + tuple(range(1, nd + 1))
        _accum(a, np.ascontiguousarray(ga.transpose(order)))

    return _make(out, (a, w), backward)


def conv_transpose2d(a, w, stride=1, padding=((0, 0), (0, 0)),
                     output_size=None):
    """Adjoint of conv2d w.r.t. its input, differentiable in a and w."""
    return _conv_transpose_nd(a, w, stride, padding, 2, output_size)


def conv_transpose3d(a, w, stride=1, padding=((0, 0), (0, 0), (0, 0)),
                     output_size=None):
    return _conv_transpose_nd(a, w, stride, padding, 3, output_size)


def upsample2x(a):
    """Nearest-neighbor x2 upsampling of (N, C, H, W)."""
    a = _as_tensor(a)
    if a.data.ndim != 4:
        raise ValueError(f"upsample2x expects 4 axes, got shape {a.data.shape}")
    out = np.repeat(np.repeat(a.data, 2, axis=2), 2, axis=3)

    def backward(g):
        n, c, h2, w2 = g.shape
        _accum(a, g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return _make(out, (a,), backward)


def linear_map(a, fwd, adj):
    """Differentiable application of an external linear map.

    ``fwd`` maps ``a.data`` to the output array and ``adj`` must be its
    exact adjoint; the backward pass is then ``adj(grad)``.  Lets sparse
    or matrix-free operators participate in a loss graph.  Results and
    gradients are cast to ``a``'s dtype.
    """
    a = _as_tensor(a)
    out = np.asarray(fwd(a.data)).astype(a.data.dtype, copy=False)

    def backward(g):
        _accum(a, np.asarray(adj(g)))

    return _make(out, (a,), backward)


# ------------------------------------------------------ attention plumbing

def rope_angles(positions, d_head, base=10000.0):
    """Rotation phases: positions x theta_i, theta_i = base^(-2i/d)."""
    if d_head % 2 != 0:
        raise ValueError(f"head size must be even for rotary pairs, got {d_head}")
    positions = np.asarray(positions, dtype=np.float64)
    i = np.arange(d_head // 2, dtype=np.float64)
    theta = base ** (-2.0 * i / d_head)
    return positions[:, None] * theta[None, :]


def rope_apply(a, positions, base=10000.0):
    """Rotary position encoding on (..., seq, heads, d_head).

    Pairs (2i, 2i+1) rotate by angle position * base^(-2i/d); relative
    phases between two positions depend only on their distance.
    """
    a = _as_tensor(a)
    d = a.data.shape[-1]
    seq = a.data.shape[-3]
    positions = np.asarray(positions)
    if positions.shape != (seq,):
        raise ValueError(
            f"positions shape {positions.shape} does not match sequence {seq}")
    ang = rope_angles(positions, d, base)
    cos = np.cos(ang)[:, None, :].astype(a.data.dtype)  # (seq, 1, d/2)
    sin = np.sin(ang)[:, None, :].astype(a.data.dtype)
    x = a.data
    xe = x[..., 0::2]
    xo = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = xe * cos - xo * sin
    out[..., 1::2] = xe * sin + xo * cos

    def backward(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        _accum(a, gx)

    return _make(out, (a,), backward)


def causal_mask(seq, window=None, dtype=np.float32):
    """Additive mask: 0 where key <= query (within window), -inf elsewhere."""
    if window is not None and window < 1:
        raise ValueError(f"attention window must be >= 1, got {window}")
    i = np.arange(seq)[:, None]
    j = np.arange(seq)[None, :]
    allowed = j <= i
    if window is not None:
        allowed &= j > i - window
    m = np.where(allowed, 0.0, -np.inf).astype(dtype)
    return m


def causal_attention(q, k, v, window=None):
    """softmax(mask(q k^T / sqrt(d))) v over (..., seq, heads, d_head).

    The mask zeroes attention weights exactly, so outputs at sequence slot i
    are bitwise independent of slots > i.
    """
    q = _as_tensor(q)
    k = _as_tensor(k, like=q)
    v = _as_tensor(v, like=q)
    if q.data.shape != k.data.shape or q.data.shape != v.data.shape:
        raise ValueError(
            f"q/k/v shapes differ: {q.data.shape} {k.data.shape} {v.data.shape}")
    seq, heads, d = q.data.shape[-3:]
    nd = q.data.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)  # seq<->heads
    qh = transpose(q, perm)
    kh = transpose(k, perm)
    vh = transpose(v, perm)
    logits = scale(matmul(qh, transpose(kh, tuple(range(nd - 2)) + (nd - 1, nd - 2))),
                   1.0 / math.sqrt(d))
    mask = causal_mask(seq, window, dtype=q.data.dtype)
    att = softmax_lastaxis(add(logits, Tensor(mask, dtype=q.data.dtype)))
    out = matmul(att, vh)
    return transpose(out, perm)


# --------------------------------------------------------- gradient checks

def gradcheck(fn, tensors, eps=1e-3, rtol=1e-3, max_coords=None, seed=0):
    """Central finite-difference check of d fn / d tensors.

    fn must return a scalar Tensor.  Checks every coordinate (or a random
    subset of max_coords per tensor) in the tensors' own dtype; use float64
    payloads to measure math rather than float32 rounding.  Returns the
    worst relative error.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    out = fn()
    out.backward(retain_graph=True)
    worst = 0.0
    for t in tensors:
        if t.grad is None:
            raise ValueError("tensor did not receive a gradient")
        if not t.data.flags.c_contiguous:
            raise ValueError("gradcheck needs contiguous tensor payloads")
        flat = t.data.reshape(-1)
        n = flat.size
        coords = (np.arange(n) if max_coords is None or max_coords >= n
                  else rng.choice(n, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + eps
                f_plus = float(fn().data)
                flat[c] = orig - eps
                f_minus = float(fn().data)
                flat[c] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            an = float(t.grad.reshape(-1)[c])
            denom = max(abs(fd), abs(an), 1.0)
            worst = max(worst, abs(fd - an) / denom)
    if worst > rtol:
        raise AssertionError(f"gradient check failed: {worst:.3e} > {rtol:.0e}")
    return worst
