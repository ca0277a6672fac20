"""Lightweight layer/module system on top of the tensor ops.

Parameters are Tensors with requires_grad=True that register themselves by
attribute assignment, so named_parameters() yields dotted paths such as
"encoder.levels.2.conv1.weight". Buffers hold non-learnable state (batch
norm running statistics) that still travels with checkpoints.

Initialisation: convolutions are Kaiming-uniform (fan-in, ReLU gain),
linears Xavier-uniform, norm scales one, shifts and biases zero.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .rng import RngState
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data, dtype=np.float32):
        super().__init__(np.asarray(data, dtype=dtype), requires_grad=True)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> Iterator[Parameter]:
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def train(self) -> "Module":
        self.training = True
        for m in self._modules.values():
            m.train()
        return self

    def eval(self) -> "Module":
        self.training = False
        for m in self._modules.values():
            m.eval()
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def astype(self, dtype) -> "Module":
        """Convert all parameters and buffers in place (e.g. for gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for mod in self._iter_modules():
            for name, b in list(mod._buffers.items()):
                mod.register_buffer(name, b.astype(dtype))
        return self

    def _iter_modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m._iter_modules()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: RngState) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(shape, -bound, bound, dtype=np.float32)


def xavier_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int, rng: RngState) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -bound, bound, dtype=np.float32)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, padding: int, rng: RngState):
        super().__init__()
        self.kernel = kernel
        self.padding = padding
        self.weight = Parameter(kaiming_uniform((c_out, c_in, kernel, kernel), c_in * kernel * kernel, rng))
        self.bias = Parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.padding)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: RngState):
        super().__init__()
        self.weight = Parameter(xavier_uniform((d_in, d_out), d_in, d_out, rng))
        self.bias = Parameter(np.zeros(d_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Dropout(Module):
    def __init__(self, p: float, rng: Optional[RngState]):
        super().__init__()
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.p, training=self.training, rng=self.rng)
