"""Sequence-level training losses with earliness-weighted positive terms.

Both losses apply the video label to every frame.  Positive-frame terms carry
an exponential decay weight e^(-max(0, (t_ao - t)/r)) with r = frames per
second, so frames close to the accident dominate and frames at or after it
weigh 1.  The focal variant multiplies each term by a well-classifiedness
discount; note the class weight alpha sits on the *negative* term:

    exponential:        -sum_t [ (1-y) log(1-p_t) + y w_t log p_t ]
    focal_exponential:  -sum_t [ alpha p_t^g (1-y) log(1-p_t)
                                 + (1-alpha)(1-p_t)^g y w_t log p_t ]

Probabilities are clamped to [1e-7, 1 - 1e-7] so logs stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .errors import ConfigError, ContractError
from .tensor import Tensor

VARIANTS = ("exponential", "focal_exponential")
CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    """Loss family selection and focal constants; ``fps`` sets the decay rate."""

    fps: int
    variant: str = "exponential"
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"loss variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0,1), got {self.alpha}")
        if self.gamma < 0.0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.fps < 1:
            raise ConfigError(f"fps must be >= 1, got {self.fps}")


@dataclass(frozen=True)
class SequenceTarget:
    """Video-level label with the accident frame for positives (1-based)."""

    label: int
    t_ao: int | None = None

    def validate(self, t_len: int) -> None:
        if self.label not in (0, 1):
            raise ContractError(f"label must be 0 or 1, got {self.label!r}")
        if self.label == 1:
            if self.t_ao is None or not (1 <= self.t_ao <= t_len):
                raise ContractError(
                    f"positive target needs accident frame in 1..{t_len}, got {self.t_ao}"
                )
        elif self.t_ao is not None:
            raise ContractError("negative target must not carry an accident frame")


def decay_weight(t: int, t_ao: int, r: int) -> float:
    """e^(-max(0, (t_ao - t)/r)): 1 at and after t_ao, decaying earlier."""
    if t < 1:
        raise ContractError(f"frame index must be >= 1, got {t}")
    return float(np.exp(-max(0.0, (t_ao - t) / r)))


def decay_weights(t_len: int, t_ao: int, r: int) -> np.ndarray:
    """Vector of decay weights for frames 1..T (float64)."""
    t = np.arange(1, t_len + 1, dtype=np.float64)
    return np.exp(-np.maximum(0.0, (t_ao - t) / r))


def _prepare(probs: Tensor, target: SequenceTarget) -> Tensor:
    if probs.ndim != 1:
        raise ContractError(f"probs must be a frame vector, got shape {probs.shape}")
    if probs.size == 0:
        raise ContractError("probs must cover at least one frame")
    target.validate(probs.shape[0])
    return tz.clip(probs, CLAMP_EPS, 1.0 - CLAMP_EPS)


def exponential_loss(probs: Tensor, target: SequenceTarget, cfg: LossConfig) -> Tensor:
    """Decay-weighted cross entropy, summed over frames (scalar tensor)."""
    p = _prepare(probs, target)
    if target.label == 1:
        w = decay_weights(p.shape[0], target.t_ao, cfg.fps)
        return tz.neg(tz.tsum(tz.log(p) * w))
    return tz.neg(tz.tsum(tz.log(1.0 - p)))


def focal_exponential_loss(probs: Tensor, target: SequenceTarget, cfg: LossConfig) -> Tensor:
    """Focal modulation of the decay-weighted cross entropy (scalar tensor)."""
    p = _prepare(probs, target)
    if target.label == 1:
        w = decay_weights(p.shape[0], target.t_ao, cfg.fps)
        modulated = tz.power(1.0 - p, cfg.gamma) * tz.log(p)
        return tz.neg(tz.tsum(modulated * w)) * (1.0 - cfg.alpha)
    modulated = tz.power(p, cfg.gamma) * tz.log(1.0 - p)
    return tz.neg(tz.tsum(modulated)) * cfg.alpha


def sequence_loss(probs: Tensor, target: SequenceTarget, cfg: LossConfig) -> Tensor:
    """Dispatch on ``cfg.variant``."""
    if cfg.variant == "exponential":
        return exponential_loss(probs, target, cfg)
    return focal_exponential_loss(probs, target, cfg)
