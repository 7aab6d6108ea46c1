import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hepos.errors import DimensionError, EmptyRowError, ParameterError
from hepos.patterns import (
    AttentionMask,
    PatternSpec,
    adaptive_span_mask,
    adaptive_span_weights,
    add_global,
    add_random_blocks,
    add_stride,
    block_partners,
    build_mask,
    causal_mask,
    empty_mask,
    full_mask,
    hepos_head_masks,
    hepos_mask,
    hepos_membership,
    hepos_offsets,
    window_mask,
)


def rows(mask):
    return [r.tolist() for r in mask.rows()]


# ---------------------------------------------------------------------------
# AttentionMask
# ---------------------------------------------------------------------------


def test_mask_rows_are_sorted_unique_and_in_range():
    mask = AttentionMask.from_rows([[3, 1, 1], [0], [2, 0]], 4)
    assert rows(mask) == [[1, 3], [0], [0, 2]]
    with pytest.raises(DimensionError):
        AttentionMask.from_rows([[4]], 4)


def test_mask_is_immutable():
    mask = full_mask(3)
    with pytest.raises(ValueError):
        mask.allowed[0, 0] = False


def test_soft_weights_are_validated_and_zeroed_outside_support():
    allowed = np.array([[True, False]])
    with pytest.raises(ParameterError):
        AttentionMask(allowed, np.array([[1.5, 0.0]]))
    m = AttentionMask(allowed, np.array([[0.5, 0.9]]))
    assert m.weights.tolist() == [[0.5, 0.0]]
    assert m.is_soft and not full_mask(2).is_soft


def test_union_and_flip():
    a = AttentionMask.from_rows([[0], [1]], 3)
    b = AttentionMask.from_rows([[2], [1]], 3)
    assert rows(a | b) == [[0, 2], [1]]
    assert rows(a.with_flipped(0, 1)) == [[0, 1], [1]]
    assert (a | b).cells == 3


def test_causal_and_empty():
    assert rows(causal_mask(3)) == [[0], [0, 1], [0, 1, 2]]
    assert empty_mask(2, 5).cells == 0


# ---------------------------------------------------------------------------
# Window
# ---------------------------------------------------------------------------


def test_window_row_example():
    assert rows(window_mask(8, 2))[3] == [2, 3, 4]


def test_window_covering_sequence_is_full():
    assert window_mask(6, 10).equals(full_mask(6))


def test_window_bound_at_n1024_w256():
    assert window_mask(1024, 256).cells <= 1024 * 257


@pytest.mark.parametrize("w", [0, 1, 3, 7])
def test_window_rejects_odd_or_tiny(w):
    with pytest.raises(ParameterError):
        window_mask(8, w)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 64), st.integers(1, 40).map(lambda x: 2 * x))
def test_window_matches_definition(n, w):
    got = window_mask(n, w).allowed
    i, j = np.indices((n, n))
    assert np.array_equal(got, np.abs(i - j) <= w // 2)


# ---------------------------------------------------------------------------
# Global, stride, random blocks
# ---------------------------------------------------------------------------


def test_global_zero_is_identity():
    base = window_mask(8, 2)
    assert add_global(base, 0).equals(base)


def test_global_on_empty_base():
    got = rows(add_global(empty_mask(8, 8), 2))
    assert got[0] == got[1] == list(range(8))
    assert all(r == [0, 1] for r in got[2:])


def test_global_too_many():
    with pytest.raises(ParameterError):
        add_global(empty_mask(4, 4), 5)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.data())
def test_global_adds_at_most_2ng(n, data):
    g = data.draw(st.integers(0, n))
    assert add_global(empty_mask(n, n), g).cells <= 2 * n * g


def test_stride_one_is_full():
    assert add_stride(empty_mask(5, 5), 1).equals(full_mask(5))


def test_stride_example():
    assert all(r == [0, 3, 6] for r in rows(add_stride(empty_mask(8, 8), 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(1, 70))
def test_stride_adds_n_ceil_n_over_s(n, s):
    assert add_stride(empty_mask(n, n), s).cells == n * -(-n // s)


def test_random_blocks_single_block_is_unchanged():
    base = window_mask(4, 2)
    assert add_random_blocks(base, 4, seed=3).equals(base)


def test_random_blocks_example_adds_block_keys_per_row():
    extra = add_random_blocks(empty_mask(8, 8), 2, seed=7)
    assert extra.row_sizes().tolist() == [2] * 8
    for q in range(8):
        keys = extra.row(q)
        assert keys[1] == keys[0] + 1 and keys[0] % 2 == 0
        assert keys[0] // 2 != q // 2


def test_random_blocks_deterministic_and_seed_sensitive():
    a = add_random_blocks(empty_mask(64, 64), 4, seed=1)
    assert a.equals(add_random_blocks(empty_mask(64, 64), 4, seed=1))
    assert any(not add_random_blocks(empty_mask(64, 64), 4, seed=s).equals(a) for s in range(2, 6))


def test_random_block_too_large():
    with pytest.raises(ParameterError):
        add_random_blocks(empty_mask(4, 4), 5, seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 64), st.integers(1, 16), st.integers(0, 1000))
def test_block_partners_choose_another_block(n, block, seed):
    block = min(block, n)
    partners = block_partners(n, block, seed)
    count = -(-n // block)
    assert len(partners) == count
    for b, p in enumerate(partners):
        assert (p == -1) if count == 1 else (0 <= p < count and p != b)


# ---------------------------------------------------------------------------
# Adaptive span
# ---------------------------------------------------------------------------


def test_adaptive_ramp_value():
    assert adaptive_span_weights(3, z=2, ramp=2) == pytest.approx(0.5)


def test_adaptive_large_span_is_full():
    n, R = 6, 2
    m = adaptive_span_mask(n, z=n - 1 + R, ramp=R)
    assert m.allowed.all() and np.all(m.weights == 1.0)


def test_adaptive_span_above_max_is_an_error():
    with pytest.raises(ParameterError):
        adaptive_span_mask(8, z=5, ramp=2, max_span=4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 48), st.floats(0, 20), st.integers(1, 8))
def test_adaptive_support_is_bounded(n, z, R):
    m = adaptive_span_mask(n, z, R)
    assert np.all(m.row_sizes() <= 2 * (z + R) + 1)
    assert np.all((m.weights >= 0) & (m.weights <= 1))
    assert np.all(np.diag(m.weights) == 1.0)


# ---------------------------------------------------------------------------
# HEPOS
# ---------------------------------------------------------------------------


def test_membership_examples():
    assert [i for i in range(8) if hepos_membership(i, 0, 2)] == [0, 2, 4, 6]
    assert [i for i in range(8) if hepos_membership(i, 1, 2)] == [1, 3, 5, 7]
    assert all(hepos_membership(i, 0, 1) for i in range(10))
    assert hepos_membership(2, 6, 4)


def test_hepos_mask_example():
    assert all(r == [1, 5] for r in rows(hepos_mask(3, 8, 1, 4)))


def test_hepos_row_size_n1024_stride4():
    assert hepos_mask(1, 1024, 0, 4).row_sizes().tolist() == [256]


def test_hepos_stride_above_length():
    with pytest.raises(EmptyRowError):
        hepos_mask(2, 3, 0, 4)


def test_hepos_stride2_four_head_layout():
    # stride 2, four heads, four keys: heads 0 and 2 see even keys, 1 and 3 odd
    masks = hepos_head_masks(4, 4, 2, 4)
    assert masks[0, 0].tolist() == [True, False, True, False]
    assert masks[1, 0].tolist() == [False, True, False, True]
    assert np.array_equal(masks[0], masks[2]) and np.array_equal(masks[1], masks[3])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 96), st.data())
def test_hepos_partition_and_coverage(n, data):
    s_h = data.draw(st.integers(1, n))
    heads = data.draw(st.integers(s_h, s_h + 5))
    masks = hepos_head_masks(2, n, s_h, heads)
    first = masks[:s_h, 0, :]
    assert np.array_equal(first.sum(axis=0), np.ones(n))
    assert set(first.sum(axis=1).tolist()) <= {n // s_h, -(-n // s_h)}
    assert masks.any(axis=0).all()


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 64), st.integers(0, 20), st.data())
def test_hepos_offsets_agree_with_membership(n, h, data):
    s_h = data.draw(st.integers(1, n))
    expect = [i for i in range(n) if hepos_membership(i, h, s_h)]
    assert hepos_offsets(n, h, s_h).tolist() == expect


# ---------------------------------------------------------------------------
# PatternSpec / build_mask
# ---------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ParameterError):
        PatternSpec("bogus")
    with pytest.raises(ParameterError):
        PatternSpec("window")
    with pytest.raises(ParameterError):
        PatternSpec("hepos", s_h=0)
    with pytest.raises(ParameterError):
        PatternSpec("hepos", s_h=2, head=-1)


def test_learned_kinds_have_no_static_mask():
    with pytest.raises(ParameterError):
        build_mask(PatternSpec("lsh", rounds=2, bucket_size=4), 8)


def test_build_mask_hepos_uses_m():
    assert build_mask(PatternSpec("hepos", s_h=2, head=1), 6, 3).shape == (3, 6)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 64), st.data())
def test_composed_mask_is_union_of_parts(n, data):
    w = 2 * data.draw(st.integers(1, 8))
    g = data.draw(st.integers(0, n))
    s = data.draw(st.integers(1, n))
    block = data.draw(st.integers(1, n))
    seed = data.draw(st.integers(0, 100))
    composed = build_mask(PatternSpec("window", w=w, g=g, s=s, block=block, seed=seed), n)
    base = window_mask(n, w).allowed
    glob = add_global(empty_mask(n, n), g).allowed
    stride = add_stride(empty_mask(n, n), s).allowed
    rand = add_random_blocks(empty_mask(n, n), block, seed).allowed
    assert np.array_equal(composed.allowed, base | glob | stride | rand)


def test_builders_deterministic():
    spec = PatternSpec("window", w=4, g=2, s=3, block=4, seed=5)
    assert build_mask(spec, 32).equals(build_mask(spec, 32))
