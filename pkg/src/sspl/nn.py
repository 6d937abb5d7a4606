"""Parameter containers: a minimal module tree with named parameters and buffers."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, get_default_dtype


def parameter(array):
    return Tensor(np.asarray(array, dtype=get_default_dtype()), requires_grad=True)


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape))


class Module:
    """Base class. Parameters are Tensor attributes with ``requires_grad``;
    buffers are numpy arrays registered through :meth:`register_buffer`."""

    def __init__(self):
        self.training = True
        self._buffers = {}

    def register_buffer(self, name, array):
        self._buffers[name] = np.asarray(array, dtype=get_default_dtype())

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state):
        from .errors import FormatError

        for name, p in self.named_parameters():
            if name not in state:
                raise FormatError(f"missing parameter {name!r}")
            if tuple(state[name].shape) != p.shape:
                raise FormatError(f"shape mismatch for {name!r}: file {tuple(state[name].shape)} vs model {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)
        for name, buf in self.named_buffers():
            if name not in state:
                raise FormatError(f"missing buffer {name!r}")
            if tuple(state[name].shape) != buf.shape:
                raise FormatError(f"shape mismatch for buffer {name!r}: file {tuple(state[name].shape)} vs model {buf.shape}")
            buf[...] = state[name]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        super().__init__()
        self.weight = uniform_init(rng, (n_in, n_out), n_in)
        self.bias = uniform_init(rng, (n_out,), n_in) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None, bias=True):
        super().__init__()
        fan_in = c_in * k * k
        self.weight = uniform_init(rng, (c_out, c_in, k, k), fan_in)
        self.bias = uniform_init(rng, (c_out,), fan_in) if bias else None
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None, bias=True):
        super().__init__()
        fan_in = c_out * k * k
        self.weight = uniform_init(rng, (c_in, c_out, k, k), fan_in)
        self.bias = uniform_init(rng, (c_out,), fan_in) if bias else None
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def forward(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    """Batch normalisation over axis 1; works for (N, C) and (N, C, H, W)."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            self.training,
            self.momentum,
            self.eps,
        )
