"""Multi-scale temporal pooling over frame features.

Frame features [T x d] pass through a shared linear map, then three causal
pooling branches summarize them at different horizons:

* ``"s"`` short: max over the last ``w_s`` frames,
* ``"m"`` mid:   mean over the last ``w_m`` frames (divisor = clipped length),
* ``"l"`` long:  max over the whole prefix.

Each enabled branch concatenates its pooled track with the projected track,
mixes through its own fusion linear, and adds the raw frame feature back:

    out_p[t] = fuse_w_p @ [pool_p(f')[t]; f'[t]] + fuse_b_p + frames[t]

Window sizes follow the camera rate: ``w_s`` is a third of a second (rounded,
minimum one frame), ``w_m`` a full second.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .errors import ConfigError, EmptySequenceError, ShapeError
from .initializers import linear_param
from .tensor import Tensor

SCALES = ("s", "m", "l")


@dataclass(frozen=True)
class MultiScaleConfig:
    """Pooling horizons (frames) and feature width."""

    w_s: int
    w_m: int
    d: int

    def __post_init__(self):
        if not (1 <= self.w_s <= self.w_m):
            raise ConfigError(
                f"window sizes must satisfy 1 <= w_s <= w_m, got {self.w_s}, {self.w_m}"
            )
        if self.d < 1:
            raise ConfigError(f"feature width must be positive, got {self.d}")


def window_sizes_from_fps(fps: int, d: int) -> MultiScaleConfig:
    """Derive horizons from the frame rate: w_s = round(fps / 3), w_m = fps."""
    if fps < 1:
        raise ConfigError(f"frame rate must be >= 1, got {fps}")
    w_s = max(1, math.floor(fps / 3 + 0.5))
    return MultiScaleConfig(w_s=w_s, w_m=fps, d=d)


@dataclass
class MsMParams:
    """Learnable state: shared projection plus per-scale fusion maps."""

    proj_w: Tensor  # [d x d]
    proj_b: Tensor  # [d]
    fuse_w: dict[str, Tensor]  # scale -> [2d x d]
    fuse_b: dict[str, Tensor]  # scale -> [d]

    def named_tensors(self):
        yield "proj_w", self.proj_w
        yield "proj_b", self.proj_b
        for scale in SCALES:
            if scale in self.fuse_w:
                yield f"fuse_w.{scale}", self.fuse_w[scale]
                yield f"fuse_b.{scale}", self.fuse_b[scale]


def init_msm_params(
    d: int,
    rng: np.random.Generator,
    dtype=np.float32,
    shared_fusion: bool = False,
    scales=SCALES,
) -> MsMParams:
    """Fresh pooling parameters; ``shared_fusion`` aliases one fusion map
    across every scale instead of giving each its own."""
    for scale in scales:
        if scale not in SCALES:
            raise ConfigError(f"unknown scale {scale!r}, expected subset of {SCALES}")
    proj_w = linear_param(rng, d, (d, d), dtype)
    proj_b = linear_param(rng, d, (d,), dtype)
    fuse_w: dict[str, Tensor] = {}
    fuse_b: dict[str, Tensor] = {}
    if shared_fusion:
        w = linear_param(rng, 2 * d, (2 * d, d), dtype)
        b = linear_param(rng, 2 * d, (d,), dtype)
        for scale in scales:
            fuse_w[scale] = w
            fuse_b[scale] = b
    else:
        for scale in scales:
            fuse_w[scale] = linear_param(rng, 2 * d, (2 * d, d), dtype)
            fuse_b[scale] = linear_param(rng, 2 * d, (d,), dtype)
    return MsMParams(proj_w=proj_w, proj_b=proj_b, fuse_w=fuse_w, fuse_b=fuse_b)


def _pool(projected: Tensor, scale: str, cfg: MultiScaleConfig) -> Tensor:
    if scale == "s":
        return tz.sliding_window_max(projected, cfg.w_s)
    if scale == "m":
        return tz.sliding_window_mean(projected, cfg.w_m)
    return tz.sliding_window_max(projected, None)


def msm_forward(
    frames: Tensor,
    cfg: MultiScaleConfig,
    params: MsMParams,
    scales=SCALES,
) -> dict[str, Tensor]:
    """Pool frame features at each requested horizon: [T x d] -> {scale: [T x d]}."""
    if frames.ndim != 2:
        raise ShapeError(f"frames must be [T x d], got {frames.shape}")
    if frames.shape[0] == 0:
        raise EmptySequenceError("cannot pool a zero-frame sequence")
    if frames.shape[1] != cfg.d:
        raise ShapeError(f"frames width {frames.shape[1]} != configured {cfg.d}")
    if not scales:
        raise ConfigError("at least one pooling scale must stay enabled")
    for scale in scales:
        if scale not in SCALES:
            raise ConfigError(f"unknown scale {scale!r}, expected subset of {SCALES}")
        if scale not in params.fuse_w:
            raise ConfigError(f"parameters carry no fusion map for scale {scale!r}")

    projected = frames @ params.proj_w + params.proj_b
    out: dict[str, Tensor] = {}
    for scale in scales:
        pooled = _pool(projected, scale, cfg)
        stacked = tz.concat([pooled, projected], axis=1)
        out[scale] = stacked @ params.fuse_w[scale] + params.fuse_b[scale] + frames
    return out
