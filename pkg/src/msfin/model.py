"""End-to-end risk model over object/frame feature sequences.

Pipeline per sequence (T frames, N object slots, width d after embedding):

1. Linear embeddings of frame and object features, plus a learned per-frame
   positional table shared between the frame track and that frame's objects.
   Frames with zero valid detections get a learned placeholder token in slot 0
   so attention always has a key.
2. Object interaction per frame: self-attention across the frame's objects
   and cross-attention from objects to the frame feature, concatenated and
   mixed down by a linear map.
3. Multi-scale pooling of the frame track (short max / mid mean / long prefix
   max), giving one frame track per scale.
4. Causal temporal attention: one shared stack over each object's sequence
   (attending only to frames where that object was present, plus the current
   frame), and a separate stack per scale over its frame track.
5. Per scale, cross-attention from the frame track to the temporally
   processed objects (final-layer weights are exported), then a two-hidden-
   layer GeLU head with a sigmoid produces one risk probability per frame.

Checkpoints use a tagged binary format (magic ``MSFN``): config JSON followed
by named tensors with explicit dtype and extents, all little-endian.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from . import tensor as tz
from .attention import (
    ATTN_NORMS,
    AttentionBlockParams,
    AttentionMask,
    init_attention_block,
    stack_blocks,
    stack_cross_blocks,
)
from .errors import (
    CheckpointVersionError,
    ConfigError,
    ContractError,
    CorruptHeaderError,
    DimensionMismatchError,
    EmptySequenceError,
    ShapeError,
)
from .initializers import linear_param, zeros_param
from .pooling import (
    SCALES,
    MsMParams,
    init_msm_params,
    msm_forward,
    window_sizes_from_fps,
)
from .tensor import Tensor

CHECKPOINT_MAGIC = b"MSFN"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass(frozen=True)
class MsFINConfig:
    """Architecture hyperparameters.

    ``scales`` picks the pooling horizons kept active; ``use_*`` toggles the
    attention branches.  Disabling a scale removes its pooling branch, its
    temporal stack, and its fusion stack, shrinking the head input.
    """

    d_in: int
    d: int = 512
    n_objects: int = 19
    heads: int = 4
    layers_sam: int = 2
    layers_cam_pre: int = 2
    layers_ctm: int = 2
    layers_cam_post: int = 2
    fps: int = 20
    t_max: int = 256
    attn_norm: str = "softmax"
    d_ff: int | None = None
    mlp_hidden: tuple[int, int] | None = None
    scales: tuple[str, ...] = ("s", "m", "l")
    use_sam: bool = True
    use_cam_pre: bool = True
    use_cam_post: bool = True
    share_msm_fusion: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(self.scales))
        if self.mlp_hidden is not None:
            object.__setattr__(self, "mlp_hidden", tuple(self.mlp_hidden))

    def validate(self) -> None:
        if self.d_in < 1 or self.d < 1 or self.n_objects < 1:
            raise ConfigError(
                f"widths must be positive: d_in={self.d_in}, d={self.d}, n_objects={self.n_objects}"
            )
        if self.heads < 1 or self.d % self.heads != 0:
            raise ConfigError(f"width {self.d} not divisible by heads {self.heads}")
        for name in ("layers_sam", "layers_cam_pre", "layers_ctm", "layers_cam_post"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.fps < 1:
            raise ConfigError(f"fps must be >= 1, got {self.fps}")
        if self.t_max < 1:
            raise ConfigError(f"t_max must be >= 1, got {self.t_max}")
        if self.attn_norm not in ATTN_NORMS:
            raise ConfigError(f"attn_norm must be one of {ATTN_NORMS}")
        if not self.scales:
            raise ConfigError("at least one pooling scale must stay enabled")
        if len(set(self.scales)) != len(self.scales):
            raise ConfigError(f"duplicate scales in {self.scales}")
        for scale in self.scales:
            if scale not in SCALES:
                raise ConfigError(f"unknown scale {scale!r}, expected subset of {SCALES}")
        if self.d_ff is not None and self.d_ff < 1:
            raise ConfigError("d_ff must be positive when given")
        if self.mlp_hidden is not None and any(h < 1 for h in self.mlp_hidden):
            raise ConfigError("mlp_hidden extents must be positive")

    @property
    def effective_d_ff(self) -> int:
        return 2 * self.d if self.d_ff is None else self.d_ff

    @property
    def effective_mlp_hidden(self) -> tuple[int, int]:
        return self.mlp_hidden if self.mlp_hidden is not None else (self.d, max(1, self.d // 4))

    @property
    def pre_branches(self) -> int:
        """Object-interaction branches feeding the aggregation linear."""
        return max(1, int(self.use_sam) + int(self.use_cam_pre))

    def to_json_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json_dict(raw: dict) -> "MsFINConfig":
        known = set(MsFINConfig.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = MsFINConfig(**raw)
        cfg.validate()
        return cfg


@dataclass
class RiskSeries:
    """Per-frame risk probabilities with exported attention.

    ``attention`` maps each enabled scale to final-layer frame-over-object
    weights [heads x T x N] (empty when the fusion stack is disabled).
    ``object_mask`` echoes the mask actually attended over, including
    placeholder slots for detection-free frames.
    """

    probs: np.ndarray
    attention: dict[str, np.ndarray]
    object_mask: np.ndarray


@dataclass
class MsFINParams:
    """All learnable state, grouped by pipeline stage."""

    embed_frame_w: Tensor
    embed_frame_b: Tensor
    embed_object_w: Tensor
    embed_object_b: Tensor
    pos_enc: Tensor
    no_object: Tensor
    sam: list[AttentionBlockParams]
    cam_pre: list[AttentionBlockParams]
    agg_w: Tensor
    agg_b: Tensor
    msm: MsMParams
    ctm_obj: list[AttentionBlockParams]
    ctm_frame: dict[str, list[AttentionBlockParams]]
    cam_post: dict[str, list[AttentionBlockParams]]
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    mlp_w3: Tensor
    mlp_b3: Tensor

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        yield "embed_frame.w", self.embed_frame_w
        yield "embed_frame.b", self.embed_frame_b
        yield "embed_object.w", self.embed_object_w
        yield "embed_object.b", self.embed_object_b
        yield "pos_enc", self.pos_enc
        yield "no_object", self.no_object
        for stack_name, stack in (("sam", self.sam), ("cam_pre", self.cam_pre)):
            for i, block in enumerate(stack):
                for name, t in block.named_tensors():
                    yield f"{stack_name}.{i}.{name}", t
        yield "agg.w", self.agg_w
        yield "agg.b", self.agg_b
        for name, t in self.msm.named_tensors():
            yield f"msm.{name}", t
        for i, block in enumerate(self.ctm_obj):
            for name, t in block.named_tensors():
                yield f"ctm_obj.{i}.{name}", t
        for group_name, group in (("ctm_frame", self.ctm_frame), ("cam_post", self.cam_post)):
            for scale in SCALES:
                if scale not in group:
                    continue
                for i, block in enumerate(group[scale]):
                    for name, t in block.named_tensors():
                        yield f"{group_name}.{scale}.{i}.{name}", t
        yield "mlp.w1", self.mlp_w1
        yield "mlp.b1", self.mlp_b1
        yield "mlp.w2", self.mlp_w2
        yield "mlp.b2", self.mlp_b2
        yield "mlp.w3", self.mlp_w3
        yield "mlp.b3", self.mlp_b3

    def parameter_count(self) -> int:
        seen: set[int] = set()
        total = 0
        for _, t in self.named_tensors():
            if id(t) in seen:
                continue
            seen.add(id(t))
            total += t.size
        return total


def expected_parameter_count(cfg: MsFINConfig) -> int:
    """Closed-form size of the parameter vector for ``cfg``."""
    d, d_ff = cfg.d, cfg.effective_d_ff
    h1, h2 = cfg.effective_mlp_hidden
    n_scales = len(cfg.scales)
    block = 4 * d * d + 4 * d + d * d_ff + d_ff + d_ff * d + d
    n_blocks = (
        cfg.layers_sam * int(cfg.use_sam)
        + cfg.layers_cam_pre * int(cfg.use_cam_pre)
        + cfg.layers_ctm * (1 + n_scales)
        + cfg.layers_cam_post * n_scales * int(cfg.use_cam_post)
    )
    embed = 2 * (cfg.d_in * d + d)
    pos = cfg.t_max * d + d  # positional table + placeholder token
    agg = cfg.pre_branches * d * d + d
    n_fusions = 1 if cfg.share_msm_fusion else n_scales
    msm = d * d + d + n_fusions * (2 * d * d + d)
    mlp = n_scales * d * h1 + h1 + h1 * h2 + h2 + h2 * 1 + 1
    return embed + pos + n_blocks * block + agg + msm + mlp


def init_msfin_params(
    cfg: MsFINConfig, rng: np.random.Generator, dtype=np.float32
) -> MsFINParams:
    """Fresh parameters; linear maps U(+-sqrt(1/fan_in)), positional table zero."""
    cfg.validate()
    d, d_ff = cfg.d, cfg.effective_d_ff
    h1, h2 = cfg.effective_mlp_hidden

    def blocks(n: int) -> list[AttentionBlockParams]:
        return [init_attention_block(d, cfg.heads, rng, d_ff, dtype) for _ in range(n)]

    return MsFINParams(
        embed_frame_w=linear_param(rng, cfg.d_in, (cfg.d_in, d), dtype),
        embed_frame_b=linear_param(rng, cfg.d_in, (d,), dtype),
        embed_object_w=linear_param(rng, cfg.d_in, (cfg.d_in, d), dtype),
        embed_object_b=linear_param(rng, cfg.d_in, (d,), dtype),
        pos_enc=zeros_param((cfg.t_max, d), dtype),
        no_object=linear_param(rng, d, (d,), dtype),
        sam=blocks(cfg.layers_sam if cfg.use_sam else 0),
        cam_pre=blocks(cfg.layers_cam_pre if cfg.use_cam_pre else 0),
        agg_w=linear_param(rng, cfg.pre_branches * d, (cfg.pre_branches * d, d), dtype),
        agg_b=linear_param(rng, cfg.pre_branches * d, (d,), dtype),
        msm=init_msm_params(d, rng, dtype, cfg.share_msm_fusion, cfg.scales),
        ctm_obj=blocks(cfg.layers_ctm),
        ctm_frame={scale: blocks(cfg.layers_ctm) for scale in cfg.scales},
        cam_post={
            scale: blocks(cfg.layers_cam_post if cfg.use_cam_post else 0)
            for scale in cfg.scales
        },
        mlp_w1=linear_param(rng, len(cfg.scales) * d, (len(cfg.scales) * d, h1), dtype),
        mlp_b1=linear_param(rng, len(cfg.scales) * d, (h1,), dtype),
        mlp_w2=linear_param(rng, h1, (h1, h2), dtype),
        mlp_b2=linear_param(rng, h1, (h2,), dtype),
        mlp_w3=linear_param(rng, h2, (h2, 1), dtype),
        mlp_b3=linear_param(rng, h2, (1,), dtype),
    )


# ---------------------------------------------------------------------------
# forward


def _check_inputs(record, cfg: MsFINConfig) -> None:
    ff, of, mask = record.frame_features, record.object_features, record.object_mask
    if ff.ndim != 2 or of.ndim != 3 or mask.shape != of.shape[:2]:
        raise ShapeError(
            f"record tensors inconsistent: frames {ff.shape}, objects {of.shape}, mask {mask.shape}"
        )
    t_len = ff.shape[0]
    if t_len == 0:
        raise EmptySequenceError("cannot score a zero-frame sequence")
    if t_len > cfg.t_max:
        raise ConfigError(
            f"sequence has {t_len} frames but the positional table covers {cfg.t_max}"
        )
    if ff.shape[1] != cfg.d_in or of.shape[2] != cfg.d_in:
        raise ShapeError(f"input width {ff.shape[1]} != configured d_in {cfg.d_in}")
    if of.shape[1] != cfg.n_objects:
        raise ShapeError(
            f"record carries {of.shape[1]} object slots, model expects {cfg.n_objects}"
        )
    if not (np.isfinite(ff).all() and np.isfinite(of).all()):
        raise ContractError("input features contain non-finite values")


def _forward_graph(
    record, params: MsFINParams, cfg: MsFINConfig
) -> tuple[Tensor, dict[str, Tensor], np.ndarray]:
    _check_inputs(record, cfg)
    dtype = params.embed_frame_w.dtype
    t_len = record.frame_features.shape[0]
    n = cfg.n_objects
    d = cfg.d

    mask = np.asarray(record.object_mask, dtype=bool)
    empty = ~mask.any(axis=1)
    eff_mask = mask.copy()
    eff_mask[empty, 0] = True

    frames_in = Tensor(np.asarray(record.frame_features), dtype=dtype)
    objects_in = Tensor(np.asarray(record.object_features), dtype=dtype)
    pe = params.pos_enc[:t_len]

    frame_track = frames_in @ params.embed_frame_w + params.embed_frame_b + pe
    obj_track = (
        objects_in @ params.embed_object_w
        + params.embed_object_b
        + pe.reshape((t_len, 1, d))
    )
    if empty.any():
        token = params.no_object.reshape((1, 1, d)) + pe.reshape((t_len, 1, d))
        sel = empty[:, None, None].astype(np.dtype(dtype))
        slot0 = obj_track[:, 0:1, :] * (1.0 - sel) + token * sel
        if n > 1:
            obj_track = tz.concat([slot0, obj_track[:, 1:, :]], axis=1)
        else:
            obj_track = slot0

    padding_mask = AttentionMask.from_valid(eff_mask)
    branches = []
    if cfg.use_sam:
        sam_out, _ = stack_blocks(params.sam, obj_track, padding_mask, cfg.attn_norm)
        branches.append(sam_out)
    if cfg.use_cam_pre:
        cam_out, _ = stack_cross_blocks(
            params.cam_pre, obj_track, frame_track.reshape((t_len, 1, d)),
            attn_norm=cfg.attn_norm,
        )
        branches.append(cam_out)
    if not branches:
        branches.append(obj_track)
    mixed = branches[0] if len(branches) == 1 else tz.concat(branches, axis=-1)
    obj_agg = mixed @ params.agg_w + params.agg_b

    msm_cfg = window_sizes_from_fps(cfg.fps, d)
    frame_scales = msm_forward(frame_track, msm_cfg, params.msm, cfg.scales)

    obj_seq = obj_agg.transpose((1, 0, 2))  # [N x T x d]
    # Causal over each object's track, but only frames where the object was
    # present count as keys; the current frame always keys itself so absent
    # frames (whose rows are masked downstream anyway) still have an edge.
    tril = np.tril(np.ones((t_len, t_len), dtype=bool))
    eye = np.eye(t_len, dtype=bool)
    track_allowed = tril[None] & (eff_mask.T[:, None, :] | eye[None])
    obj_temporal, _ = stack_blocks(
        params.ctm_obj, obj_seq, AttentionMask.explicit(track_allowed), cfg.attn_norm
    )
    obj_temporal = obj_temporal.transpose((1, 0, 2))  # back to [T x N x d]

    fused: dict[str, Tensor] = {}
    attention: dict[str, Tensor] = {}
    for scale in cfg.scales:
        track, _ = stack_blocks(
            params.ctm_frame[scale], frame_scales[scale],
            AttentionMask.causal(), cfg.attn_norm,
        )
        if cfg.use_cam_post and params.cam_post[scale]:
            out, weights = stack_cross_blocks(
                params.cam_post[scale],
                track.reshape((t_len, 1, d)),
                obj_temporal,
                padding_mask,
                cfg.attn_norm,
            )
            fused[scale] = out.reshape((t_len, d))
            attention[scale] = weights  # [T x heads x 1 x N]
        else:
            fused[scale] = track

    head_in = (
        fused[cfg.scales[0]]
        if len(cfg.scales) == 1
        else tz.concat([fused[s] for s in cfg.scales], axis=-1)
    )
    z1 = tz.gelu(head_in @ params.mlp_w1 + params.mlp_b1)
    z2 = tz.gelu(z1 @ params.mlp_w2 + params.mlp_b2)
    logits = z2 @ params.mlp_w3 + params.mlp_b3
    probs = tz.sigmoid(logits.reshape((t_len,)))
    return probs, attention, eff_mask


def forward_probs(record, params: MsFINParams, cfg: MsFINConfig) -> Tensor:
    """Risk probabilities as a graph tensor [T], for training."""
    probs, _, _ = _forward_graph(record, params, cfg)
    return probs


def forward(record, params: MsFINParams, cfg: MsFINConfig) -> RiskSeries:
    """Score a sequence: probabilities, exported attention, effective mask."""
    probs, attention, eff_mask = _forward_graph(record, params, cfg)
    exported = {
        scale: np.transpose(w.data[:, :, 0, :], (1, 0, 2)).copy()
        for scale, w in attention.items()
    }
    return RiskSeries(probs=probs.data.copy(), attention=exported, object_mask=eff_mask)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: MsFINParams, cfg: MsFINConfig) -> None:
    """Serialize config and named tensors; identical state gives identical bytes."""
    cfg_json = json.dumps(cfg.to_json_dict(), sort_keys=True, separators=(",", ":")).encode()
    names = list(params.named_tensors())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        fh.write(struct.pack("<I", len(names)))
        for name, t in names:
            encoded = name.encode()
            arr = np.ascontiguousarray(t.data)
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", _TAG_BY_KIND[arr.dtype]))
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.astype(f"<f{arr.dtype.itemsize}", copy=False).tobytes())


class _Cursor:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def read(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CorruptHeaderError(f"{self.path}: checkpoint truncated at byte {self.off}")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.read(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.read(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]


def load_checkpoint(
    path, expected_cfg: MsFINConfig | None = None
) -> tuple[MsFINParams, MsFINConfig]:
    """Rebuild parameters from ``path``.

    Either returns a complete (params, config) pair or raises; no partial
    state escapes.  ``expected_cfg`` adds a strict config equality check.
    """
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read(), path)
    if cur.read(4) != CHECKPOINT_MAGIC:
        raise CorruptHeaderError(f"{path}: not a model checkpoint (bad magic)")
    version = cur.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version}, supported {CHECKPOINT_VERSION}"
        )
    try:
        raw_cfg = json.loads(cur.read(cur.u32()))
    except ValueError as err:
        raise CorruptHeaderError(f"{path}: unreadable config block") from err
    cfg = MsFINConfig.from_json_dict(raw_cfg)
    if expected_cfg is not None and cfg != expected_cfg:
        raise ConfigError(
            f"{path}: stored config differs from the expected one: {cfg} != {expected_cfg}"
        )

    stored: dict[str, np.ndarray] = {}
    n_tensors = cur.u32()
    for _ in range(n_tensors):
        name = cur.read(cur.u16()).decode()
        tag = cur.u8()
        if tag not in _DTYPE_TAGS:
            raise CorruptHeaderError(f"{path}: tensor {name!r} has unknown dtype tag {tag}")
        dtype = _DTYPE_TAGS[tag]
        rank = cur.u8()
        shape = tuple(cur.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = cur.read(count * dtype.itemsize)
        stored[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    if cur.off != len(cur.blob):
        raise CorruptHeaderError(f"{path}: {len(cur.blob) - cur.off} trailing bytes")

    params = init_msfin_params(cfg, np.random.default_rng(0))
    expected_names = [name for name, _ in params.named_tensors()]
    missing = set(expected_names) - set(stored)
    extra = set(stored) - set(expected_names)
    if missing or extra:
        raise CorruptHeaderError(
            f"{path}: tensor names disagree with config (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})"
        )
    for name, t in params.named_tensors():
        arr = stored[name]
        if arr.shape != t.shape:
            raise DimensionMismatchError(
                f"{path}: tensor {name!r} has extents {arr.shape}, expected {t.shape}"
            )
        t.data = arr.astype(arr.dtype.newbyteorder("="), copy=False)
        t.grad = np.zeros_like(t.data)
    return params, cfg
