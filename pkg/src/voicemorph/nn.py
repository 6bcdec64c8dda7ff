"""Parameter containers, layers, and the Adam optimizer.

Modules discover children by scanning instance attributes (including
plain lists of submodules), so construction order fixes parameter order
and everything stays deterministic for a given seed.
"""

import hashlib
from contextlib import contextmanager

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeError

WEIGHT_INIT_STD = 0.02


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    def __init__(self):
        self.training = True
        self._buffers = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def register_buffer(self, name, array):
        self._buffers[name] = np.asarray(array, dtype=np.float64)
        setattr(self, name, self._buffers[name])

    def _children(self):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(prefix=f"{full}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, array in self._buffers.items():
            yield f"{prefix}{name}", array
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix=f"{prefix}{name}.")

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            if isinstance(child, Module):
                child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def requires_grad_(self, flag=True):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def state_dict(self):
        state = {f"param.{n}": p.data.copy() for n, p in self.named_parameters()}
        state.update({f"buffer.{n}": b.copy() for n, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = {f"param.{n}" for n in params} | {f"buffer.{n}" for n in buffers}
        if set(state) != expected:
            missing = expected - set(state)
            extra = set(state) - expected
            raise ShapeError(f"state dict mismatch: missing={sorted(missing)[:4]} extra={sorted(extra)[:4]}")
        for name, p in params.items():
            value = state[f"param.{name}"]
            if value.shape != p.data.shape:
                raise ShapeError(f"parameter {name}: shape {value.shape} != {p.data.shape}")
            p.data = value.astype(np.float64).copy()
        for name, b in buffers.items():
            value = state[f"buffer.{name}"]
            if value.shape != b.shape:
                raise ShapeError(f"buffer {name}: shape {value.shape} != {b.shape}")
            b[...] = value


def fingerprint(module, include_buffers=False):
    """SHA-256 over parameter bytes; detects any parameter change."""
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    if include_buffers:
        for name, b in module.named_buffers():
            h.update(name.encode())
            h.update(np.ascontiguousarray(b).tobytes())
    return h.hexdigest()


@contextmanager
def frozen(*modules):
    """Temporarily clear requires_grad on all parameters of `modules`."""
    saved = [(p, p.requires_grad) for m in modules for p in m.parameters()]
    for p, _ in saved:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad = flag


def _normal(rng, shape, std=WEIGHT_INIT_STD):
    return rng.normal(0.0, std, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, rng, stride=1, padding=0, bias=True):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.stride = (stride, stride) if isinstance(stride, int) else stride
        self.padding = (padding, padding) if isinstance(padding, int) else padding
        self.weight = Parameter(_normal(rng, (cout, cin, kh, kw)))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x, weight=None):
        return ag.conv2d(x, weight if weight is not None else self.weight,
                         self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    """Stride-2 learned upsampler; weight layout (cin, cout, kh, kw).

    `forward(x, weight=...)` runs with an externally supplied effective
    weight tensor, which is how gated filters are injected.
    """

    def __init__(self, cin, cout, rng, kernel=3, stride=2, padding=1, output_padding=1):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.stride = (stride, stride) if isinstance(stride, int) else stride
        self.padding = (padding, padding) if isinstance(padding, int) else padding
        self.output_padding = (output_padding, output_padding) if isinstance(output_padding, int) else output_padding
        self.weight = Parameter(_normal(rng, (cin, cout, kh, kw)))
        self.bias = Parameter(np.zeros(cout))

    def forward(self, x, weight=None):
        return ag.conv_transpose2d(x, weight if weight is not None else self.weight,
                                   self.bias, self.stride, self.padding, self.output_padding)


class Conv1d(Module):
    """1-D convolution on (N, C, T), implemented on the 2-D kernels."""

    def __init__(self, cin, cout, rng, kernel=3, stride=2, padding=1):
        super().__init__()
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(_normal(rng, (cout, cin, kernel)))
        self.bias = Parameter(np.zeros(cout))

    def forward(self, x):
        n, c, t = x.shape
        cout = self.weight.shape[0]
        x4 = ag.reshape(x, (n, c, 1, t))
        w4 = ag.reshape(self.weight, (cout, c, 1, self.kernel))
        out = ag.conv2d(x4, w4, self.bias, (1, self.stride), (0, self.padding))
        return ag.reshape(out, (out.shape[0], out.shape[1], out.shape[3]))


class BatchNorm(Module):
    """Batch norm over all axes but channel; handles (N,C,T) and (N,C,H,W)."""

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return ag.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, din, dout, rng, std=WEIGHT_INIT_STD):
        super().__init__()
        self.weight = Parameter(_normal(rng, (din, dout), std))
        self.bias = Parameter(np.zeros(dout))

    def forward(self, x):
        return ag.add(ag.matmul(x, self.weight), self.bias)


class Adam:
    """Adam with a shared step counter across its parameter group."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        state = {"t": np.asarray(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m.copy()
            state[f"v.{i}"] = v.copy()
        return state

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for i in range(len(self.params)):
            m, v = state[f"m.{i}"], state[f"v.{i}"]
            if m.shape != self.m[i].shape or v.shape != self.v[i].shape:
                raise ShapeError(f"optimizer state {i} has wrong shape")
            self.m[i] = m.copy()
            self.v[i] = v.copy()
