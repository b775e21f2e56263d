"""Minimal module system: named parameter tables and a few layer types."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class FrozenModelError(RuntimeError):
    """Raised when gradients are requested from a frozen model."""


class Module:
    """Holds parameters and child modules as attributes.

    Parameter names are dotted attribute paths, which makes them stable
    checkpoint keys.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "frozen", False)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._children[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def state_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def trainable(self) -> dict[str, Tensor]:
        if self.frozen:
            raise FrozenModelError(f"{type(self).__name__} is frozen; its parameters cannot be trained")
        return self.state_dict()

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        object.__setattr__(self, "frozen", True)
        return self

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            a = arrays[name]
            if a.shape != p.shape:
                raise ValueError(f"state mismatch for {name}: checkpoint {a.shape} vs model {p.shape}")
            p.data = np.array(a, dtype=p.data.dtype)

    def zero_weights(self) -> None:
        for p in self.parameters():
            p.data[...] = 0

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(T.get_dtype())


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    x = rng.standard_normal(size=shape)
    x = np.clip(x, -2.0, 2.0) * std
    return x.astype(T.get_dtype())


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, k: int = 3, scale: float = 1.0):
        super().__init__()
        bound = 1.0 / math.sqrt(cin * k * k)
        self.weight = T.parameter(_uniform(rng, (k, k, cin, cout), bound) * scale)
        self.bias = T.parameter(_uniform(rng, (cout,), bound) * scale)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, padding="same")


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, std: float = 0.02):
        super().__init__()
        self.weight = T.parameter(_trunc_normal(rng, (cin, cout), std))
        self.bias = T.parameter(np.zeros(cout))

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = T.parameter(np.ones(dim))
        self.beta = T.parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)
