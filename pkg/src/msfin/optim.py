"""AdamW with decoupled weight decay.

Update (Loshchilov & Hutter), applied per parameter at step t:

    m_t = b1*m_{t-1} + (1-b1)*g          mhat = m_t / (1 - b1^t)
    v_t = b2*v_{t-1} + (1-b2)*g^2        vhat = v_t / (1 - b2^t)
    p  -= lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p)

Tied tensors (the same object registered under several names) are deduplicated
by identity so a shared parameter is stepped exactly once per ``step``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


@dataclass(frozen=True)
class OptimizerConfig:
    """AdamW constants; ``name`` exists so other optimizers could slot in."""

    name: str = "adamw"
    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.name != "adamw":
            raise ConfigError(f"only the adamw optimizer is available, got {self.name!r}")
        if self.lr < 0.0 or self.weight_decay < 0.0 or self.eps <= 0.0:
            raise ConfigError(
                f"lr/weight_decay must be >= 0 and eps > 0, got"
                f" lr={self.lr}, weight_decay={self.weight_decay}, eps={self.eps}"
            )
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "betas": list(self.betas),
            "eps": self.eps,
        }


class AdamW:
    """Stateful stepper over a (name, Tensor) collection."""

    def __init__(self, named_params, cfg: OptimizerConfig):
        self.cfg = cfg
        self.params: list[tuple[str, Tensor]] = []
        seen: set[int] = set()
        for name, p in named_params:
            if not isinstance(p, Tensor) or not p.requires_grad:
                raise ConfigError(f"parameter {name!r} is not a trainable tensor")
            if id(p) in seen:
                continue
            seen.add(id(p))
            self.params.append((name, p))
        if not self.params:
            raise ConfigError("optimizer needs at least one parameter")
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            if p.grad is not None:
                p.grad[...] = 0

    def grad_norm(self) -> float:
        """Global L2 norm of all gradients (float64 accumulation)."""
        total = 0.0
        for _, p in self.params:
            if p.grad is not None:
                total += float(np.sum(np.asarray(p.grad, dtype=np.float64) ** 2))
        return float(np.sqrt(total))

    def step(self) -> None:
        b1, b2 = self.cfg.betas
        lr, wd, eps = self.cfg.lr, self.cfg.weight_decay, self.cfg.eps
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - b1**t
        bias2 = 1.0 - b2**t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m, v = self._m[name], self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / bias1
            vhat = v / bias2
            p.data -= lr * (mhat / (np.sqrt(vhat) + eps) + wd * p.data)
