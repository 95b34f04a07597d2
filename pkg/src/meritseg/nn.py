"""Parameter containers and the few layers the model needs."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .numerics import ops
from .numerics.tensor import Tensor


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)


class Module:
    """Holds parameters and sub-modules as attributes; names are dotted paths."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, groups: int = 1, bias: bool = True):
        fan_in = (cin // groups) * kernel * kernel
        self.weight = parameter(rng.normal(0.0, math.sqrt(2.0 / fan_in), (cout, cin // groups, kernel, kernel)))
        self.bias = parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        self.cin, self.cout = cin, cout

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Linear(Module):
    """Affine map over the trailing axis."""

    def __init__(self, din: int, dout: int, rng: np.random.Generator, bias: bool = True):
        self.weight = parameter(rng.normal(0.0, 1.0 / math.sqrt(din), (din, dout)))
        self.bias = parameter(np.zeros(dout)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return ops.add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    """Layer norm over one axis (-1 for tokens, 1 for NCHW channels)."""

    def __init__(self, dim: int, axis: int = -1):
        self.weight = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.axis = axis

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, axis=self.axis)


def zero_(t: Tensor | None) -> None:
    if t is not None:
        t.data = np.zeros_like(t.data)
