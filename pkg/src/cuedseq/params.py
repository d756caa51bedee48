"""Parameter initialization and bookkeeping helpers shared by the models."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import Tensor


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def uniform_fan(rng: np.random.Generator, shape, fan: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def param_list(params: Mapping[str, Tensor]) -> list[Tensor]:
    """Parameters in lexicographic name order (the package-wide convention)."""
    return [params[k] for k in sorted(params)]


def clone_params(params: Mapping[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in params.items()}


def merge(*dicts: Mapping[str, Tensor]) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for d in dicts:
        for k, v in d.items():
            if k in out:
                raise ValueError(f"duplicate parameter name {k!r}")
            out[k] = v
    return out
