"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations the networks in this package need: elementwise
arithmetic, matmul, activations, reductions, concat/reshape, 2-D
convolution and transpose convolution (via the im2col/col2im kernels),
max pooling, batch norm, and fused numerically-stable losses.

Everything is computed in float64, which is what makes the
finite-difference gradient checks in the test suite meaningful.
"""

import numpy as np

from . import kernels
from .errors import ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        _accum(self, np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _node(data, parents, backward):
    out = Tensor(data)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b):
    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b):
    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), bw)


def scale(a, s):
    def bw(g):
        _accum(a, g * s)

    return _node(a.data * s, (a,), bw)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul supports 2-D operands only")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bw)


# ---------------------------------------------------------------------------
# activations

def relu(x):
    mask = x.data > 0

    def bw(g):
        _accum(x, g * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), bw)


def leaky_relu(x, alpha=0.2):
    mask = x.data > 0

    def bw(g):
        _accum(x, g * np.where(mask, 1.0, alpha))

    return _node(np.where(mask, x.data, alpha * x.data), (x,), bw)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    s = _sigmoid(x.data)

    def bw(g):
        _accum(x, g * s * (1.0 - s))

    return _node(s, (x,), bw)


_GATE_LO = np.nextafter(0.0, 1.0)
_GATE_HI = np.nextafter(1.0, 0.0)


def gate_sigmoid(x):
    """Sigmoid clamped to the open interval (0, 1).

    Plain float64 sigmoid saturates to exactly 0.0 or 1.0 for |z| > ~37,
    which would break the strict-openness contract of multiplicative
    gates; the clamp keeps saturated gates one ulp inside the interval.
    """
    s = np.clip(_sigmoid(x.data), _GATE_LO, _GATE_HI)

    def bw(g):
        _accum(x, g * s * (1.0 - s))

    return _node(s, (x,), bw)


def tanh(x):
    t = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - t * t))

    return _node(t, (x,), bw)


# ---------------------------------------------------------------------------
# shape ops and reductions

def reshape(x, shape):
    old = x.data.shape

    def bw(g):
        _accum(x, g.reshape(old))

    return _node(x.data.reshape(shape), (x,), bw)


def concat(tensors, axis):
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accum(t, g[tuple(index)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def sum_all(x):
    shape = x.data.shape

    def bw(g):
        _accum(x, np.broadcast_to(g, shape).astype(np.float64))

    return _node(x.data.sum(), (x,), bw)


def mean_axis(x, axis):
    size = x.data.shape[axis]
    shape = x.data.shape

    def bw(g):
        _accum(x, np.broadcast_to(np.expand_dims(g, axis), shape) / size)

    return _node(x.data.mean(axis=axis), (x,), bw)


# ---------------------------------------------------------------------------
# convolution family

# Columns smaller than this are kept from the forward pass for reuse in
# backward; larger ones are recomputed so memory stays flat at full width.
_COLS_CACHE_BYTES = 16 * 2 ** 20


def conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0)):
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError("conv2d expects (N,C,H,W) input and (O,C,kh,kw) weight")
    n, cin, h, win = xd.shape
    cout, cin_w, kh, kw = wd.shape
    if cin_w != cin:
        raise ShapeError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    sh, sw = stride
    ph, pw = padding
    ho = kernels.out_size(h, kh, sh, ph)
    wo = kernels.out_size(win, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d input {h}x{win} too small for kernel {kh}x{kw}")
    xd = np.ascontiguousarray(xd)
    cols = kernels.im2col(xd, kh, kw, sh, sw, ph, pw)
    wmat = wd.reshape(cout, -1)
    out = (wmat @ cols).reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data[None, :, None, None]
    saved_cols = cols if cols.nbytes <= _COLS_CACHE_BYTES else None

    def bw(g):
        gf = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        if b is not None:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            cols_b = saved_cols if saved_cols is not None else kernels.im2col(
                xd, kh, kw, sh, sw, ph, pw)
            _accum(w, (gf @ cols_b.T).reshape(wd.shape))
        if x.requires_grad:
            dcols = wmat.T @ gf
            _accum(x, kernels.col2im(dcols, n, cin, h, win, kh, kw, sh, sw, ph, pw))

    return _node(out, (x, w, b), bw)


def conv_transpose2d(x, w, b=None, stride=(2, 2), padding=(1, 1), output_padding=(1, 1)):
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError("conv_transpose2d expects (N,C,H,W) input and (C,O,kh,kw) weight")
    n, cin, h, win = xd.shape
    cin_w, cout, kh, kw = wd.shape
    if cin_w != cin:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {cin}, weight {cin_w}")
    sh, sw = stride
    ph, pw = padding
    oph, opw = output_padding
    if not (0 <= oph < sh and 0 <= opw < sw):
        raise ShapeError("output_padding must be < stride")
    h2 = (h - 1) * sh - 2 * ph + kh + oph
    w2 = (win - 1) * sw - 2 * pw + kw + opw
    if h2 < 1 or w2 < 1:
        raise ShapeError("conv_transpose2d output collapsed to zero size")
    wmat = wd.reshape(cin, -1)
    xf = np.ascontiguousarray(xd.transpose(1, 0, 2, 3)).reshape(cin, -1)
    cols = wmat.T @ xf
    out = kernels.col2im(cols, n, cout, h2, w2, kh, kw, sh, sw, ph, pw)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def bw(g):
        g = np.ascontiguousarray(g)
        gcols = kernels.im2col(g, kh, kw, sh, sw, ph, pw)
        if b is not None:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            _accum(w, (xf @ gcols.T).reshape(wd.shape))
        if x.requires_grad:
            dxf = wmat @ gcols
            _accum(x, dxf.reshape(cin, n, h, win).transpose(1, 0, 2, 3))

    return _node(out, (x, w, b), bw)


def maxpool2x2(x):
    xd = x.data
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError("maxpool2x2 needs even spatial dims")
    ho, wo = h // 2, w // 2
    tiles = xd.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        buf = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        dx = buf.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _accum(x, dx)

    return _node(out, (x,), bw)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Batch norm over all axes except channel (axis 1).

    In training mode the batch statistics are used and the running
    buffers are updated in place (side effect); in eval mode the running
    buffers are used.
    """
    xd = x.data
    axes = tuple(i for i in range(xd.ndim) if i != 1)
    bshape = [1] * xd.ndim
    bshape[1] = xd.shape[1]
    m = xd.size // xd.shape[1]
    if training:
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def bw(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        _accum(beta, dbeta)
        _accum(gamma, dgamma)
        if x.requires_grad:
            k = (gamma.data * inv).reshape(bshape)
            if training:
                dx = k * (g - dbeta.reshape(bshape) / m - xhat * dgamma.reshape(bshape) / m)
            else:
                dx = k * g
            _accum(x, dx)

    return _node(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# fused losses

def l1_sum(a, b):
    """Total (not mean) L1 distance between two same-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"l1 shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data

    def bw(g):
        s = g * np.sign(diff)
        _accum(a, s)
        _accum(b, -s)

    return _node(np.abs(diff).sum(), (a, b), bw)


def cross_entropy_logits(logits, targets, reduction="mean"):
    """Cross-entropy with integer targets, fused with log-softmax."""
    z = logits.data
    if z.ndim != 2:
        raise ShapeError("cross_entropy_logits expects (N, k) logits")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, k = z.shape
    if targets.shape[0] != n:
        raise ShapeError("targets do not match logits batch")
    if targets.min() < 0 or targets.max() >= k:
        raise ShapeError(f"target identity out of range [0, {k})")
    zmax = z.max(axis=1, keepdims=True)
    logsumexp = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    losses = -logp[np.arange(n), targets]
    value = losses.mean() if reduction == "mean" else losses.sum()
    probs = np.exp(logp)

    def bw(g):
        dz = probs.copy()
        dz[np.arange(n), targets] -= 1.0
        if reduction == "mean":
            dz /= n
        _accum(logits, dz * float(g))

    return _node(value, (logits,), bw)


def bce_logits(logit, target):
    """Binary cross-entropy on a logit, stable at saturation.

    Computes -[t*log(sigmoid(z)) + (1-t)*log(1-sigmoid(z))] summed over
    elements, in the softplus form that never evaluates log(0).
    """
    z = logit.data
    t = float(target)
    val = (np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum()

    def bw(g):
        _accum(logit, (_sigmoid(z) - t) * float(g))

    return _node(val, (logit,), bw)


def softmax(z):
    """Plain ndarray softmax along the last axis (reporting helper)."""
    z = np.asarray(z, dtype=np.float64)
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    return e / e.sum(axis=-1, keepdims=True)
