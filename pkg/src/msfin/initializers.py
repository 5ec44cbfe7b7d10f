"""Parameter construction helpers shared by all model components."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def linear_param(rng: np.random.Generator, fan_in: int, shape, dtype=np.float32) -> Tensor:
    """Trainable tensor drawn from U(-sqrt(1/fan_in), sqrt(1/fan_in))."""
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True, dtype=dtype)


def ones_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, dtype=dtype)


def zeros_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)
