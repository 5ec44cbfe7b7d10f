"""Multi-head attention blocks with pre-normalization and gated weighting.

Layout conventions: sequences live on the second-to-last axis, model channels
on the last, and any leading axes are batch.  A block maps [... x L x d] to
[... x L x d] and also returns its attention weights [... x heads x Lq x Lk]
so callers can export them.

Block wiring (identical for self- and cross-attention):

    n   = norm(x)                     # queries; keys/values use norm(kv)
    ctx = weighting(Q K^T / sqrt(d_h)) V
    a   = norm2(n + ctx W_o)
    out = a + FFN(a)                  # two-layer GeLU net, width 2d by default

The residual path starts at the normalized input, not the raw input.  The
score weighting is softmax by default; ``attn_norm="layernorm_literal"``
instead standardizes each score row over its valid keys (zero mean, unit
variance, no learned scale), in which case rows are not probability
distributions and a single-key row weights to exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tz
from .errors import ConfigError, ContractError, MaskedRowError, ShapeError
from .initializers import linear_param, ones_param, zeros_param
from .tensor import Tensor

ATTN_NORMS = ("softmax", "layernorm_literal")
_SCORE_NORM_EPS = 1e-5


@dataclass(frozen=True)
class AttentionMask:
    """Which attention edges are allowed.

    ``padding`` marks key slots to ignore (True = padded); it applies to the
    last axis of the key sequence and may carry leading batch axes.  The
    ``explicit`` kind instead carries a full allowed-edge matrix
    [... x Lq x Lk] (True = attend) for patterns the vector form can't
    express, e.g. causal attention restricted to frames where a tracked
    object was present.
    """

    kind: str = "none"
    padding: np.ndarray | None = None
    allowed: np.ndarray | None = None

    @staticmethod
    def none() -> "AttentionMask":
        return AttentionMask("none")

    @staticmethod
    def causal() -> "AttentionMask":
        return AttentionMask("causal")

    @staticmethod
    def key_padding(padding) -> "AttentionMask":
        return AttentionMask("key_padding", np.asarray(padding, dtype=bool))

    @staticmethod
    def from_valid(valid) -> "AttentionMask":
        """Build a key-padding mask from a validity mask (True = attend)."""
        return AttentionMask.key_padding(~np.asarray(valid, dtype=bool))

    @staticmethod
    def explicit(allowed) -> "AttentionMask":
        return AttentionMask("explicit", allowed=np.asarray(allowed, dtype=bool))

    def validate(self) -> None:
        if self.kind not in ("none", "causal", "key_padding", "explicit"):
            raise ConfigError(f"unknown mask kind {self.kind!r}")
        if self.kind == "key_padding" and self.padding is None:
            raise ConfigError("key_padding mask needs a padding array")
        if self.kind != "key_padding" and self.padding is not None:
            raise ConfigError(f"mask kind {self.kind!r} takes no padding array")
        if self.kind == "explicit" and self.allowed is None:
            raise ConfigError("explicit mask needs an allowed-edge matrix")
        if self.kind != "explicit" and self.allowed is not None:
            raise ConfigError(f"mask kind {self.kind!r} takes no allowed-edge matrix")


@dataclass
class AttentionBlockParams:
    """Learnable state of one attention block."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    heads: int

    @property
    def d(self) -> int:
        return self.w_q.shape[0]

    def named_tensors(self):
        for name in (
            "w_q", "w_k", "w_v", "w_o",
            "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
            "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
        ):
            yield name, getattr(self, name)


def init_attention_block(
    d: int,
    heads: int,
    rng: np.random.Generator,
    d_ff: int | None = None,
    dtype=np.float32,
) -> AttentionBlockParams:
    if d < 1 or heads < 1:
        raise ConfigError(f"need d >= 1 and heads >= 1, got d={d}, heads={heads}")
    if d % heads != 0:
        raise ConfigError(f"model width {d} not divisible by heads {heads}")
    if d_ff is None:
        d_ff = 2 * d
    return AttentionBlockParams(
        w_q=linear_param(rng, d, (d, d), dtype),
        w_k=linear_param(rng, d, (d, d), dtype),
        w_v=linear_param(rng, d, (d, d), dtype),
        w_o=linear_param(rng, d, (d, d), dtype),
        ln1_gain=ones_param(d, dtype),
        ln1_bias=zeros_param(d, dtype),
        ln2_gain=ones_param(d, dtype),
        ln2_bias=zeros_param(d, dtype),
        ffn_w1=linear_param(rng, d, (d, d_ff), dtype),
        ffn_b1=linear_param(rng, d, (d_ff,), dtype),
        ffn_w2=linear_param(rng, d_ff, (d_ff, d), dtype),
        ffn_b2=linear_param(rng, d_ff, (d,), dtype),
        heads=heads,
    )


def _check_seq(x: Tensor, d: int, label: str) -> None:
    if x.ndim < 2 or x.shape[-1] != d:
        raise ShapeError(f"{label} must be [... x L x {d}], got {x.shape}")
    if not np.isfinite(x.data).all():
        raise ContractError(f"{label} contains non-finite values")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *batch, length, d = x.shape
    y = x.reshape((*batch, length, heads, d // heads))
    n = y.ndim
    perm = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)
    return y.transpose(perm)


def _merge_heads(x: Tensor) -> Tensor:
    n = x.ndim
    perm = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)
    y = x.transpose(perm)
    *batch, length, heads, dh = y.shape
    return y.reshape((*batch, length, heads * dh))


def _valid_keys(mask: AttentionMask, lq: int, lk: int) -> np.ndarray | None:
    """Boolean array broadcastable to scores [... x heads x Lq x Lk], True = attend."""
    if mask.kind == "none":
        return None
    if mask.kind == "causal":
        if lq != lk:
            raise ShapeError(
                f"causal mask needs matching sequence lengths, got {lq} vs {lk}"
            )
        return np.tril(np.ones((lq, lk), dtype=bool))
    if mask.kind == "explicit":
        allowed = mask.allowed
        if allowed.shape[-2:] != (lq, lk):
            raise ShapeError(
                f"allowed-edge matrix covers {allowed.shape[-2:]}, sequences are ({lq}, {lk})"
            )
        if not allowed.any(axis=-1).all():
            raise MaskedRowError("allowed-edge matrix leaves a query with no key")
        # insert the singleton head axis before the query/key axes
        return np.expand_dims(allowed, axis=-3)
    padding = mask.padding
    if padding.shape[-1] != lk:
        raise ShapeError(
            f"key padding covers {padding.shape[-1]} keys, sequence has {lk}"
        )
    valid = ~padding
    if not valid.any(axis=-1).all():
        raise MaskedRowError("key padding leaves no valid key to attend to")
    # insert singleton head and query axes before the key axis
    return np.expand_dims(valid, axis=(-2, -3))


def _standardized_scores(scores: Tensor, valid: np.ndarray | None) -> Tensor:
    """Score rows standardized over valid keys; invalid entries exactly zero."""
    if valid is None:
        counts = scores.shape[-1]
        centered = scores - tz.tmean(scores, axis=-1, keepdims=True)
    else:
        valid_f = np.broadcast_to(valid, scores.shape).astype(scores.dtype)
        counts = valid_f.sum(axis=-1, keepdims=True)
        masked = scores * valid_f
        mean = tz.tsum(masked, axis=-1, keepdims=True) * (1.0 / counts)
        centered = (scores - mean) * valid_f
    var = tz.tsum(centered * centered, axis=-1, keepdims=True) * (1.0 / counts)
    inv_std = tz.power(var + _SCORE_NORM_EPS, -0.5)
    return centered * inv_std


def _attention_core(
    q_in: Tensor,
    kv_in: Tensor | None,
    params: AttentionBlockParams,
    mask: AttentionMask,
    attn_norm: str,
) -> tuple[Tensor, Tensor]:
    if attn_norm not in ATTN_NORMS:
        raise ConfigError(f"attn_norm must be one of {ATTN_NORMS}, got {attn_norm!r}")
    mask.validate()
    d, heads = params.d, params.heads
    _check_seq(q_in, d, "query sequence")
    nq = tz.layer_norm(q_in, params.ln1_gain, params.ln1_bias)
    if kv_in is None:
        nkv = nq
    else:
        _check_seq(kv_in, d, "key/value sequence")
        nkv = tz.layer_norm(kv_in, params.ln1_gain, params.ln1_bias)

    q = _split_heads(nq @ params.w_q, heads)
    k = _split_heads(nkv @ params.w_k, heads)
    v = _split_heads(nkv @ params.w_v, heads)

    scale = 1.0 / np.sqrt(d // heads)
    scores = (q @ k.transpose(tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))) * scale
    valid = _valid_keys(mask, q.shape[-2], k.shape[-2])
    if attn_norm == "softmax":
        weights = tz.softmax(scores, axis=-1, mask=valid)
    else:
        weights = _standardized_scores(scores, valid)

    ctx = _merge_heads(weights @ v) @ params.w_o
    attended = tz.layer_norm(nq + ctx, params.ln2_gain, params.ln2_bias)
    hidden = tz.gelu(attended @ params.ffn_w1 + params.ffn_b1)
    out = attended + (hidden @ params.ffn_w2 + params.ffn_b2)
    return out, weights


def self_attention_block(
    x: Tensor,
    params: AttentionBlockParams,
    mask: AttentionMask | None = None,
    attn_norm: str = "softmax",
) -> tuple[Tensor, Tensor]:
    """Attend a sequence to itself: [... x L x d] -> ([... x L x d], weights)."""
    return _attention_core(x, None, params, mask or AttentionMask.none(), attn_norm)


def cross_attention_block(
    query_seq: Tensor,
    kv_seq: Tensor,
    params: AttentionBlockParams,
    mask: AttentionMask | None = None,
    attn_norm: str = "softmax",
) -> tuple[Tensor, Tensor]:
    """Attend queries to a separate key/value sequence.

    Returns ([... x Lq x d], weights [... x heads x Lq x Lk]).
    """
    return _attention_core(query_seq, kv_seq, params, mask or AttentionMask.none(), attn_norm)


def causal_temporal_block(
    x: Tensor,
    params: AttentionBlockParams,
    attn_norm: str = "softmax",
) -> Tensor:
    """Self-attention where frame t sees frames 1..t only."""
    out, _ = self_attention_block(x, params, AttentionMask.causal(), attn_norm)
    return out


def stack_blocks(
    blocks: Sequence[AttentionBlockParams],
    x: Tensor,
    mask: AttentionMask | None = None,
    attn_norm: str = "softmax",
) -> tuple[Tensor, Tensor | None]:
    """Run self-attention blocks in sequence; empty stack is the identity.

    Returns the final features and the last block's attention weights
    (None for an empty stack).
    """
    weights = None
    for params in blocks:
        x, weights = self_attention_block(x, params, mask, attn_norm)
    return x, weights


def stack_cross_blocks(
    blocks: Sequence[AttentionBlockParams],
    query_seq: Tensor,
    kv_seq: Tensor,
    mask: AttentionMask | None = None,
    attn_norm: str = "softmax",
) -> tuple[Tensor, Tensor | None]:
    """Run cross-attention blocks in sequence, reusing ``kv_seq`` at every layer.

    The query stream is refined layer by layer; keys/values come from the same
    ``kv_seq`` every time.  Empty stack is the identity on the query stream.
    """
    weights = None
    for params in blocks:
        query_seq, weights = cross_attention_block(query_seq, kv_seq, params, mask, attn_norm)
    return query_seq, weights
