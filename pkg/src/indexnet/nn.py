"""Minimal module system: parameter ownership, train/eval mode, initialisation."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .errors import ConfigError
from .tensor import Parameter, Tensor, default_dtype


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Fan-in He initialisation, N(0, 2 / fan_in)."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(default_dtype())


class Module:
    """Base class: sub-modules and parameters are discovered from attributes."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Module, Parameter)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        """Unique parameters with dotted names; a shared object is listed once."""
        out: list[tuple[str, Parameter]] = []
        seen: set[int] = set()
        self._collect(prefix, out, seen)
        names = [n for n, _ in out]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in model")
        return out

    def _collect(self, prefix: str, out: list, seen: set[int]) -> None:
        if id(self) in seen:
            return
        seen.add(id(self))
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    value.name = value.name or name
                    out.append((name, value))
            else:
                value._collect(name + ".", out, seen)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator[Module]:
        seen: set[int] = set()
        stack: list[Module] = [self]
        while stack:
            m = stack.pop()
            if id(m) in seen:
                continue
            seen.add(id(m))
            yield m
            stack.extend(v for _, v in reversed(list(m._children())) if isinstance(v, Module))

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = []
        seen: set[int] = set()

        def walk(m: Module, pre: str) -> None:
            if id(m) in seen:
                return
            seen.add(id(m))
            for key, arr in m.buffers().items():
                out.append((f"{pre}{key}", arr))
            for key, value in m._children():
                if isinstance(value, Module):
                    walk(value, f"{pre}{key}.")

        walk(self, prefix)
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self, include_bn: bool = True) -> int:
        total = 0
        for m in self.modules():
            if not include_bn and isinstance(m, BatchNorm2d):
                continue
            total += sum(v.data.size for _, v in m._children() if isinstance(v, Parameter))
        return total


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True,
    ):
        if in_channels % groups or out_channels % groups:
            raise ConfigError(
                f"channels {in_channels}->{out_channels} are not divisible by groups={groups}"
            )
        self.stride, self.padding, self.groups = stride, padding, groups
        fan_in = in_channels // groups * kernel_size * kernel_size
        self.weight = Parameter(
            he_normal(rng, (out_channels, in_channels // groups, kernel_size, kernel_size), fan_in)
        )
        self.bias = Parameter(np.zeros((1, out_channels, 1, 1), dtype=default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ConvTranspose2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 2,
        bias: bool = True,
    ):
        self.stride = stride
        fan_in = in_channels * kernel_size * kernel_size // (stride * stride)
        self.weight = Parameter(
            he_normal(rng, (in_channels, out_channels, kernel_size, kernel_size), max(fan_in, 1))
        )
        self.bias = Parameter(np.zeros((1, out_channels, 1, 1), dtype=default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.transposed_conv2d(x, self.weight, self.bias, self.stride)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = ops.BN_MOMENTUM, eps: float = ops.BN_EPS):
        dtype = default_dtype()
        self.gamma = Parameter(np.ones((1, channels, 1, 1), dtype=dtype))
        self.beta = Parameter(np.zeros((1, channels, 1, 1), dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum, self.eps = momentum, eps

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class ConvBNReLU(Module):
    """3x3 convolution, batch norm and ReLU: one ``C(n)`` block."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel_size: int = 3):
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng, padding=kernel_size // 2, bias=False)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))
