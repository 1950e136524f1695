"""Small layer/parameter system over the tensor core.

Modules discover their parameters by walking attributes (and lists of
modules) in assignment order, torch-style. A Parameter reached through two
paths (weight sharing) is reported once, under the first path found, so
optimizers see each underlying array exactly once and checkpoints stay
unambiguous.
"""

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    def named_parameters(self):
        out = []
        seen = set()
        _walk(self, "", out, seen)
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, arrays, strict=True):
        params = dict(self.named_parameters())
        missing = [k for k in params if k not in arrays]
        if missing and strict:
            raise KeyError(f"missing parameters: {missing}")
        extra = [k for k in arrays if k not in params]
        if extra and strict:
            raise KeyError(f"unexpected parameters: {extra}")
        for name, p in params.items():
            if name not in arrays:
                continue
            arr = np.asarray(arrays[name])
            if tuple(arr.shape) != tuple(p.data.shape):
                raise ValueError(
                    f"shape mismatch for {name}: file {arr.shape}, model {p.data.shape}"
                )
            p.data = arr.astype(p.data.dtype, copy=True)


def _walk(obj, prefix, out, seen):
    if isinstance(obj, Parameter):
        if id(obj) not in seen:
            seen.add(id(obj))
            out.append((prefix, obj))
    elif isinstance(obj, Module):
        for key, val in vars(obj).items():
            _walk(val, f"{prefix}.{key}" if prefix else key, out, seen)
    elif isinstance(obj, (list, tuple)):
        for i, val in enumerate(obj):
            _walk(val, f"{prefix}.{i}" if prefix else str(i), out, seen)


def _uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound).astype(dtype)


class Conv2d(Module):
    def __init__(
        self,
        cin,
        cout,
        kernel,
        rng,
        stride=1,
        padding=0,
        groups=1,
        bias=True,
        zero_init=False,
        dtype=np.float32,
    ):
        self.stride = stride
        self.padding = padding
        self.groups = groups
        shape = (cout, cin // groups, kernel, kernel)
        if zero_init:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = _uniform_init(rng, shape, (cin // groups) * kernel * kernel, dtype)
        self.weight = Parameter(w, dtype=dtype)
        self.bias = Parameter(np.zeros(cout, dtype=dtype)) if bias else None

    def forward(self, x):
        return T.conv2d(
            x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups
        )

    __call__ = forward


class ConvTranspose2d(Module):
    def __init__(
        self,
        cin,
        cout,
        kernel,
        rng,
        stride=1,
        padding=0,
        output_padding=0,
        bias=True,
        dtype=np.float32,
    ):
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        shape = (cin, cout, kernel, kernel)
        self.weight = Parameter(_uniform_init(rng, shape, cout * kernel * kernel, dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype)) if bias else None

    def forward(self, x):
        return T.conv_transpose2d(
            x,
            self.weight,
            self.bias,
            stride=self.stride,
            padding=self.padding,
            output_padding=self.output_padding,
        )

    __call__ = forward


class Linear(Module):
    """y = x @ W + b with W stored (in_features, out_features)."""

    def __init__(self, cin, cout, rng, bias=True, zero_init=False, dtype=np.float32):
        if zero_init:
            w = np.zeros((cin, cout), dtype=dtype)
        else:
            w = _uniform_init(rng, (cin, cout), cin, dtype)
        self.weight = Parameter(w, dtype=dtype)
        self.bias = Parameter(np.zeros(cout, dtype=dtype)) if bias else None

    def forward(self, x):
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out

    __call__ = forward


class LayerNorm(Module):
    """Per-position normalization across the channel axis of (C, H, W)."""

    def __init__(self, channels, eps=1e-5, dtype=np.float32):
        self.eps = eps
        self.weight = Parameter(np.ones((channels, 1, 1), dtype=dtype))
        self.bias = Parameter(np.zeros((channels, 1, 1), dtype=dtype))

    def forward(self, x):
        return T.layernorm(x, self.weight, self.bias, axis=0, eps=self.eps)

    __call__ = forward
