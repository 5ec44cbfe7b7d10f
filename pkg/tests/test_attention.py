"""Attention block tests: masking exactness, invariances, and FD gradients."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msfin import attention as at
from msfin import tensor as tz
from msfin.attention import AttentionMask
from msfin.errors import ConfigError, ContractError, MaskedRowError, ShapeError
from msfin.tensor import Tensor


def make_block(d=8, heads=2, seed=0, dtype=np.float64):
    return at.init_attention_block(d, heads, np.random.default_rng(seed), dtype=dtype)


def seq(rng, *shape, dtype=np.float64):
    return Tensor(rng.standard_normal(shape), dtype=dtype)


# ---------------------------------------------------------------------------
# shapes and basic behavior


def test_output_and_weight_shapes():
    rng = np.random.default_rng(0)
    blk = make_block(d=8, heads=2)
    out, w = at.self_attention_block(seq(rng, 5, 8), blk)
    assert out.shape == (5, 8)
    assert w.shape == (2, 5, 5)


def test_batched_matches_per_sequence_runs():
    rng = np.random.default_rng(1)
    blk = make_block(d=8, heads=4)
    x = seq(rng, 3, 6, 8)
    out, w = at.self_attention_block(x, blk)
    assert out.shape == (3, 6, 8)
    assert w.shape == (3, 4, 6, 6)
    for b in range(3):
        ob, wb = at.self_attention_block(Tensor(x.data[b], dtype=np.float64), blk)
        np.testing.assert_allclose(out.data[b], ob.data, atol=1e-10)
        np.testing.assert_allclose(w.data[b], wb.data, atol=1e-12)


def test_softmax_weight_rows_sum_to_one():
    rng = np.random.default_rng(2)
    blk = make_block()
    _, w = at.self_attention_block(seq(rng, 6, 8), blk)
    np.testing.assert_allclose(w.data.sum(axis=-1), np.ones((2, 6)), rtol=1e-9)


def test_single_position_weight_is_exactly_one():
    rng = np.random.default_rng(3)
    blk = make_block()
    _, w = at.self_attention_block(seq(rng, 1, 8), blk)
    assert (w.data == 1.0).all()


def test_nan_input_rejected():
    blk = make_block()
    x = np.zeros((3, 8))
    x[1, 2] = np.nan
    with pytest.raises(ContractError):
        at.self_attention_block(Tensor(x, dtype=np.float64), blk)


def test_width_heads_divisibility_rejected():
    with pytest.raises(ConfigError):
        at.init_attention_block(8, 3, np.random.default_rng(0))


def test_wrong_width_rejected():
    blk = make_block(d=8)
    with pytest.raises(ShapeError):
        at.self_attention_block(Tensor(np.zeros((4, 6)), dtype=np.float64), blk)


def test_unknown_attn_norm_rejected():
    blk = make_block()
    with pytest.raises(ConfigError):
        at.self_attention_block(Tensor(np.zeros((2, 8)), dtype=np.float64), blk, attn_norm="relu")


# ---------------------------------------------------------------------------
# causal masking


def test_causal_weights_strictly_zero_above_diagonal():
    rng = np.random.default_rng(4)
    blk = make_block(d=8, heads=2)
    _, w = at.self_attention_block(seq(rng, 7, 8), blk, AttentionMask.causal())
    for h in range(2):
        for i in range(7):
            assert (w.data[h, i, i + 1 :] == 0.0).all()


def test_causal_prefix_equivalence():
    # Row t of a causal run equals row t of the run on the truncated prefix.
    rng = np.random.default_rng(5)
    blk = make_block(d=8, heads=2)
    x = seq(rng, 5, 8)
    full, _ = at.self_attention_block(x, blk, AttentionMask.causal())
    for t in (1, 3, 5):
        part, _ = at.self_attention_block(Tensor(x.data[:t], dtype=np.float64), blk, AttentionMask.causal())
        np.testing.assert_allclose(full.data[:t], part.data, atol=1e-10)


def test_causal_temporal_block_returns_features_only():
    rng = np.random.default_rng(6)
    blk = make_block()
    out = at.causal_temporal_block(seq(rng, 4, 8), blk)
    assert isinstance(out, Tensor)
    assert out.shape == (4, 8)


# ---------------------------------------------------------------------------
# key padding


def test_padded_keys_get_exactly_zero_weight_and_no_influence():
    rng = np.random.default_rng(7)
    blk = make_block(d=8, heads=2)
    x = rng.standard_normal((6, 8))
    padding = np.array([False, False, True, False, True, False])
    out, w = at.self_attention_block(
        Tensor(x, dtype=np.float64), blk, AttentionMask.key_padding(padding)
    )
    assert (w.data[:, :, padding] == 0.0).all()
    np.testing.assert_allclose(w.data.sum(axis=-1), np.ones((2, 6)), rtol=1e-9)

    # Arbitrary finite values in padded rows must not change the result at all.
    x2 = x.copy()
    x2[padding] = rng.standard_normal((2, 8)) * 50.0
    out2, w2 = at.self_attention_block(
        Tensor(x2, dtype=np.float64), blk, AttentionMask.key_padding(padding)
    )
    # padded QUERY rows still differ (their own features changed); valid rows match
    np.testing.assert_array_equal(out.data[~padding], out2.data[~padding])
    np.testing.assert_array_equal(w.data[:, ~padding], w2.data[:, ~padding])


def test_fully_padded_keys_raise():
    blk = make_block()
    with pytest.raises(MaskedRowError):
        at.self_attention_block(
            Tensor(np.zeros((3, 8)), dtype=np.float64),
            blk,
            AttentionMask.key_padding(np.array([True, True, True])),
        )


def test_batched_key_padding():
    rng = np.random.default_rng(8)
    blk = make_block(d=8, heads=2)
    x = seq(rng, 2, 4, 8)
    padding = np.array([[False, True, False, False], [False, False, False, True]])
    _, w = at.self_attention_block(x, blk, AttentionMask.key_padding(padding))
    assert (w.data[0, :, :, 1] == 0.0).all()
    assert (w.data[1, :, :, 3] == 0.0).all()
    assert (w.data[0, :, :, 3] > 0.0).all()


def test_padding_length_mismatch():
    blk = make_block()
    with pytest.raises(ShapeError):
        at.self_attention_block(
            Tensor(np.zeros((3, 8)), dtype=np.float64),
            blk,
            AttentionMask.key_padding(np.array([True, False])),
        )


def test_mask_constructors_validate():
    with pytest.raises(ConfigError):
        AttentionMask("diagonal").validate()
    with pytest.raises(ConfigError):
        AttentionMask("key_padding").validate()
    with pytest.raises(ConfigError):
        AttentionMask("causal", np.array([True])).validate()
    valid = np.array([True, False])
    np.testing.assert_array_equal(AttentionMask.from_valid(valid).padding, [False, True])


# ---------------------------------------------------------------------------
# cross attention


def test_cross_attention_shapes():
    rng = np.random.default_rng(9)
    blk = make_block(d=8, heads=2)
    out, w = at.cross_attention_block(seq(rng, 4, 8), seq(rng, 6, 8), blk)
    assert out.shape == (4, 8)
    assert w.shape == (2, 4, 6)


def test_cross_identical_kv_rows_give_uniform_weights():
    rng = np.random.default_rng(10)
    blk = make_block(d=8, heads=2)
    kv = np.tile(rng.standard_normal(8), (5, 1))
    _, w = at.cross_attention_block(seq(rng, 3, 8), Tensor(kv, dtype=np.float64), blk)
    np.testing.assert_allclose(w.data, np.full((2, 3, 5), 0.2), rtol=1e-12)


def test_cross_kv_permutation_equivariance():
    rng = np.random.default_rng(11)
    blk = make_block(d=8, heads=2)
    q = seq(rng, 3, 8)
    kv = rng.standard_normal((6, 8))
    perm = np.random.default_rng(1).permutation(6)
    out1, w1 = at.cross_attention_block(q, Tensor(kv, dtype=np.float64), blk)
    out2, w2 = at.cross_attention_block(q, Tensor(kv[perm], dtype=np.float64), blk)
    np.testing.assert_allclose(out1.data, out2.data, atol=1e-10)
    np.testing.assert_allclose(w1.data[:, :, perm], w2.data, atol=1e-12)


def test_causal_cross_requires_matched_lengths():
    rng = np.random.default_rng(12)
    blk = make_block()
    with pytest.raises(ShapeError):
        at.cross_attention_block(seq(rng, 3, 8), seq(rng, 5, 8), blk, AttentionMask.causal())


# ---------------------------------------------------------------------------
# literal layer-norm score weighting


def test_layernorm_literal_rows_standardized():
    rng = np.random.default_rng(13)
    blk = make_block(d=8, heads=2)
    _, w = at.self_attention_block(seq(rng, 6, 8), blk, attn_norm="layernorm_literal")
    np.testing.assert_allclose(w.data.mean(axis=-1), np.zeros((2, 6)), atol=1e-9)
    np.testing.assert_allclose(w.data.var(axis=-1), np.ones((2, 6)), rtol=1e-3)


def test_layernorm_literal_respects_masks():
    rng = np.random.default_rng(14)
    blk = make_block(d=8, heads=2)
    x = seq(rng, 5, 8)
    _, w = at.self_attention_block(x, blk, AttentionMask.causal(), "layernorm_literal")
    for i in range(5):
        assert (w.data[:, i, i + 1 :] == 0.0).all()
    # row 0 has one valid key -> variance 0 -> weight exactly 0 under the literal rule
    np.testing.assert_allclose(w.data[:, 0, 0], 0.0, atol=1e-12)
    # later rows: zero mean over the valid prefix
    np.testing.assert_allclose(w.data[:, 4, :].sum(axis=-1), 0.0, atol=1e-9)


def test_layernorm_literal_output_finite_and_differentiable():
    rng = np.random.default_rng(15)
    blk = make_block(d=4, heads=1, seed=3)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True, dtype=np.float64)

    def f(p):
        out, _ = at.self_attention_block(p["x"], blk, attn_norm="layernorm_literal")
        return tz.tsum(out * wsum)

    wsum = rng.standard_normal((3, 4))
    report = tz.finite_diff_check(f, {"x": x}, eps=1e-5, tolerance=1e-5)
    assert report.passed, report.per_parameter_errors


# ---------------------------------------------------------------------------
# stacks


def test_empty_stack_is_identity():
    rng = np.random.default_rng(16)
    x = seq(rng, 4, 8)
    out, w = at.stack_blocks([], x)
    assert out is x and w is None
    out2, w2 = at.stack_cross_blocks([], x, seq(rng, 2, 8))
    assert out2 is x and w2 is None


def test_stack_returns_final_layer_weights():
    rng = np.random.default_rng(17)
    blocks = [make_block(seed=s) for s in (1, 2)]
    x = seq(rng, 4, 8)
    mid, _ = at.self_attention_block(x, blocks[0])
    expect, w_expect = at.self_attention_block(mid, blocks[1])
    out, w = at.stack_blocks(blocks, x)
    np.testing.assert_array_equal(out.data, expect.data)
    np.testing.assert_array_equal(w.data, w_expect.data)


def test_cross_stack_refines_queries_with_fixed_kv():
    rng = np.random.default_rng(18)
    blocks = [make_block(seed=s) for s in (3, 4)]
    q, kv = seq(rng, 3, 8), seq(rng, 5, 8)
    mid, _ = at.cross_attention_block(q, kv, blocks[0])
    expect, _ = at.cross_attention_block(mid, kv, blocks[1])
    out, w = at.stack_cross_blocks(blocks, q, kv)
    np.testing.assert_array_equal(out.data, expect.data)
    assert w.shape == (2, 3, 5)


# ---------------------------------------------------------------------------
# gradients


def fd_block(mask=None, attn_norm="softmax", cross=False, seed=19):
    rng = np.random.default_rng(seed)
    blk = make_block(d=4, heads=2, seed=seed)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True, dtype=np.float64)
    kv = Tensor(rng.standard_normal((4, 4)), requires_grad=True, dtype=np.float64)
    wsum = rng.standard_normal((3, 4))
    params = {"x": x, "w_q": blk.w_q, "w_o": blk.w_o, "ln1_gain": blk.ln1_gain,
              "ffn_w1": blk.ffn_w1, "ffn_b2": blk.ffn_b2}
    if cross:
        params["kv"] = kv

    def f(p):
        if cross:
            out, _ = at.cross_attention_block(p["x"], p["kv"], blk, mask, attn_norm)
        else:
            out, _ = at.self_attention_block(p["x"], blk, mask, attn_norm)
        return tz.tsum(out * wsum)

    report = tz.finite_diff_check(f, params, eps=1e-5, tolerance=2e-5)
    assert report.passed, (
        f"max rel err {report.max_relative_error:.3e}: {report.per_parameter_errors}"
    )


def test_self_attention_gradients():
    fd_block()


def test_causal_attention_gradients():
    fd_block(mask=AttentionMask.causal())


def test_padded_attention_gradients():
    fd_block(mask=AttentionMask.key_padding(np.array([False, True, False])))


def test_cross_attention_gradients():
    fd_block(cross=True)


def test_layernorm_literal_gradients():
    fd_block(attn_norm="layernorm_literal")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.sampled_from([1, 2, 4]))
def test_property_causal_zeroes_and_row_sums(seed, length, heads):
    rng = np.random.default_rng(seed)
    blk = at.init_attention_block(8, heads, np.random.default_rng(seed + 1), dtype=np.float64)
    x = Tensor(rng.standard_normal((length, 8)), dtype=np.float64)
    _, w = at.self_attention_block(x, blk, AttentionMask.causal())
    tri = np.triu(np.ones((length, length), dtype=bool), k=1)
    assert (w.data[:, tri] == 0.0).all()
    np.testing.assert_allclose(w.data.sum(axis=-1), np.ones((heads, length)), rtol=1e-9)
