"""Minimal module container and weight initialisation."""

from __future__ import annotations

import math
from typing import Iterator, List

import numpy as np

from .tensor import Parameter


class Module:
    """Collects :class:`Parameter` attributes (and those of child modules) in definition order."""

    def parameters(self) -> List[Parameter]:
        seen, out = set(), []
        for p in self._walk():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def _walk(self) -> Iterator[Parameter]:
        for value in vars(self).values():
            yield from _params_of(value)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state(self):
        return [(p.name, p.data) for p in self.parameters()]


def _params_of(value) -> Iterator[Parameter]:
    if isinstance(value, Parameter):
        yield value
    elif isinstance(value, Module):
        yield from value._walk()
    elif isinstance(value, (list, tuple)):
        for v in value:
            yield from _params_of(v)
    elif isinstance(value, dict):
        for v in value.values():
            yield from _params_of(v)


def uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    """Symmetric uniform weights with bound ``sqrt(6 / fan_in)``."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def conv_param(name: str, rng, co: int, ci: int, k: int, dtype) -> Parameter:
    return Parameter(name, uniform(rng, (co, ci, k, k), ci * k * k, dtype))


def linear_param(name: str, rng, out_dim: int, in_dim: int, dtype) -> Parameter:
    return Parameter(name, uniform(rng, (out_dim, in_dim), in_dim, dtype))


def zeros_param(name: str, shape, dtype) -> Parameter:
    return Parameter(name, np.zeros(shape, dtype=dtype))
