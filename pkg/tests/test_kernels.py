import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hepos.errors import CapacityError, DimensionError, EmptyRowError, NumericError, ParameterError
from hepos.kernels import (
    AttentionInputs,
    CellCounter,
    HeposSpec,
    LowRankSpec,
    LshSpec,
    SinkhornSpec,
    full_attention,
    gathered_attention,
    hepos_attention,
    hepos_reference,
    linformer_attention,
    linformer_encdec_attention,
    lsh_attention,
    lsh_hash,
    lsh_mask,
    lsh_masks,
    masked_attention_reference,
    merge_heads,
    multihead_attention,
    pattern_attention,
    rows_to_index,
    sinkhorn_attention,
    sinkhorn_mask,
    sinkhorn_normalize,
    sinkhorn_partners,
    split_heads,
    windowed_attention,
)
from hepos.patterns import AttentionMask, PatternSpec, build_mask, full_mask, hepos_mask, window_mask
from hepos.tensor import Tensor, finite_difference_check, mul, tsum

seeds = st.integers(0, 2**31)


def qkv(m, n, d=8, seed=0):
    x = AttentionInputs.random(m, n, d, seed=seed)
    return x.Q, x.K, x.V


def maxdiff(a, b):
    return float(np.max(np.abs(a.data - b.data)))


# ---------------------------------------------------------------------------
# Full attention and the oracle
# ---------------------------------------------------------------------------


def test_attention_inputs_validate_shapes():
    with pytest.raises(DimensionError):
        AttentionInputs(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.ones((4, 3))))
    with pytest.raises(DimensionError):
        AttentionInputs(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3))), Tensor(np.ones((5, 3))))


def test_full_attention_dominant_key():
    d = 4
    K = Tensor(np.eye(d))
    V = Tensor(np.arange(16.0).reshape(4, 4))
    Q = Tensor(60.0 * math.sqrt(d) * np.eye(d)[[1]])  # logit margin 60
    out = full_attention(Q, K, V).data[0]
    assert np.allclose(out, V.data[1], atol=1e-12)


def test_full_attention_single_key():
    Q, K, V = qkv(5, 1)
    assert np.array_equal(full_attention(Q, K, V).data, np.repeat(V.data, 5, axis=0))


def test_full_attention_counts_mn_cells():
    c = CellCounter()
    full_attention(*qkv(3, 7), counter=c)
    assert c.cells == 21


def test_reference_with_full_mask_equals_full():
    Q, K, V = qkv(6, 9, seed=1)
    assert maxdiff(masked_attention_reference(Q, K, V, full_mask(6, 9)), full_attention(Q, K, V)) <= 1e-12


def test_reference_with_unit_stride_hepos_equals_full():
    Q, K, V = qkv(4, 7, seed=2)
    assert maxdiff(masked_attention_reference(Q, K, V, hepos_mask(4, 7, 0, 1)), full_attention(Q, K, V)) <= 1e-12


def test_reference_window_brute_force():
    Q, K, V = qkv(8, 8, d=4, seed=3)
    out = masked_attention_reference(Q, K, V, window_mask(8, 2)).data
    for i in range(8):
        keys = [j for j in (i - 1, i, i + 1) if 0 <= j < 8]
        s = np.array([Q.data[i] @ K.data[j] / 2.0 for j in keys])
        p = np.exp(s - s.max())
        p /= p.sum()
        assert np.max(np.abs(out[i] - p @ V.data[keys])) <= 1e-12


def test_reference_rejects_mask_shape():
    Q, K, V = qkv(3, 4)
    with pytest.raises(DimensionError):
        masked_attention_reference(Q, K, V, full_mask(4, 4))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), seeds)
def test_full_attention_permutation_equivariant(n, seed):
    Q, K, V = qkv(5, n, seed=seed)
    perm = np.random.default_rng(seed).permutation(n)
    out = full_attention(Q, Tensor(K.data[perm]), Tensor(V.data[perm]))
    assert maxdiff(out, full_attention(Q, K, V)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 24), seeds)
def test_outputs_are_convex_combinations(n, seed):
    Q, K, V = qkv(n, n, seed=seed)
    mask = build_mask(PatternSpec("window", w=2, s=3), n)
    out = pattern_attention(Q, K, V, PatternSpec("window", w=2, s=3)).data
    for q in range(n):
        attended = V.data[mask.row(q)]
        assert np.all(out[q] >= attended.min(axis=0) - 1e-12)
        assert np.all(out[q] <= attended.max(axis=0) + 1e-12)


# ---------------------------------------------------------------------------
# Windowed and gathered kernels
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("n,w", [(8, 2), (16, 4), (64, 8)])
def test_window_kernel_matches_oracle(n, w):
    Q, K, V = qkv(n, n, seed=n)
    c = CellCounter()
    out = windowed_attention(Q, K, V, w, counter=c)
    assert maxdiff(out, masked_attention_reference(Q, K, V, window_mask(n, w))) <= 1e-10
    assert c.cells == window_mask(n, w).cells <= n * (w + 1)


def test_wide_window_equals_full():
    Q, K, V = qkv(6, 6, seed=4)
    assert maxdiff(windowed_attention(Q, K, V, 10), full_attention(Q, K, V)) <= 1e-12


def test_window_kernel_is_self_attention_only():
    with pytest.raises(DimensionError):
        windowed_attention(*qkv(3, 5), 2)


def test_window_kernel_batched_leading_axes():
    rng = np.random.default_rng(0)
    Q, K, V = (Tensor(rng.standard_normal((2, 3, 10, 4))) for _ in range(3))
    c = CellCounter()
    out = windowed_attention(Q, K, V, 4, counter=c)
    ref = masked_attention_reference(Q, K, V, window_mask(10, 4))
    assert maxdiff(out, ref) <= 1e-12
    assert c.cells == 6 * window_mask(10, 4).cells


def test_rows_to_index_rejects_empty_rows():
    with pytest.raises(EmptyRowError):
        rows_to_index([np.array([0, 1]), np.array([], dtype=int)])


def test_gathered_attention_rejects_bad_index():
    Q, K, V = qkv(2, 3)
    with pytest.raises(DimensionError):
        gathered_attention(Q, K, V, np.array([[0], [3]]), np.ones((2, 1), bool))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.data())
def test_pattern_kernel_matches_oracle(n, data):
    spec = PatternSpec(
        "window",
        w=2 * data.draw(st.integers(1, 6)),
        g=data.draw(st.integers(0, n)),
        s=data.draw(st.integers(1, n + 2)),
        block=data.draw(st.integers(1, n)),
        seed=data.draw(st.integers(0, 50)),
    )
    Q, K, V = qkv(n, n, seed=data.draw(seeds))
    c = CellCounter()
    out = pattern_attention(Q, K, V, spec, counter=c)
    mask = build_mask(spec, n)
    assert maxdiff(out, masked_attention_reference(Q, K, V, mask)) <= 1e-10
    assert c.cells == mask.cells


def test_adaptive_span_kernel_uses_soft_weights():
    Q, K, V = qkv(12, 12, seed=5)
    spec = PatternSpec("adaptive_span", span=2, ramp=2)
    out = pattern_attention(Q, K, V, spec)
    assert maxdiff(out, masked_attention_reference(Q, K, V, build_mask(spec, 12))) == 0.0
    hard = masked_attention_reference(Q, K, V, AttentionMask(build_mask(spec, 12).allowed))
    assert maxdiff(out, hard) > 1e-6


# ---------------------------------------------------------------------------
# Linformer
# ---------------------------------------------------------------------------


def test_linformer_identity_projection_is_full():
    Q, K, V = qkv(8, 8, seed=6)
    assert maxdiff(linformer_attention(Q, K, V, LowRankSpec.identity(8)), full_attention(Q, K, V)) <= 1e-12


def test_linformer_matches_two_step_composition():
    Q, K, V = qkv(8, 8, d=4, seed=7)
    spec = LowRankSpec.random(2, 8, seed=7)
    c = CellCounter()
    out = linformer_attention(Q, K, V, spec, counter=c)
    pk, pv = spec.E.data @ K.data, spec.F.data @ V.data
    s = Q.data @ pk.T / 2.0
    p = np.exp(s - s.max(axis=1, keepdims=True))
    expect = (p / p.sum(axis=1, keepdims=True)) @ pv
    assert np.max(np.abs(out.data - expect)) <= 1e-12
    assert c.cells == 8 * 2
    assert spec.new_params == 2 * 2 * 8


def test_linformer_encdec_single_query_by_hand():
    Q, K, V = qkv(1, 6, d=2, seed=8)
    spec = LowRankSpec.random(3, 6, seed=8)
    c = CellCounter()
    out = linformer_encdec_attention(Q, K, V, spec, counter=c).data[0]
    pk, pv = spec.E.data @ K.data, spec.F.data @ V.data
    s = np.array([Q.data[0] @ pk[j] for j in range(3)]) / math.sqrt(2)
    wts = np.exp(s) / np.exp(s).sum()
    assert np.max(np.abs(out - sum(wts[j] * pv[j] for j in range(3)))) <= 1e-12
    assert c.cells == 3


def test_linformer_encdec_identity_projection():
    Q, K, V = qkv(3, 5, seed=9)
    assert maxdiff(linformer_encdec_attention(Q, K, V, LowRankSpec.identity(5)), full_attention(Q, K, V)) <= 1e-12


def test_linformer_dimension_checks():
    Q, K, V = qkv(4, 4)
    with pytest.raises(DimensionError):
        linformer_attention(Q, K, V, LowRankSpec.random(2, 5))
    with pytest.raises(ParameterError):
        LowRankSpec.random(6, 5)


# ---------------------------------------------------------------------------
# LSH
# ---------------------------------------------------------------------------


def test_lsh_single_bucket_is_full():
    Q, K, V = qkv(10, 10, seed=10)
    out = lsh_attention(Q, K, V, LshSpec(rounds=1, bucket_size=10, n_buckets=1))
    assert maxdiff(out, full_attention(Q, K, V)) <= 1e-12


def test_lsh_capacity_error():
    Q, K, V = qkv(10, 10)
    with pytest.raises(CapacityError):
        lsh_attention(Q, K, V, LshSpec(rounds=1, bucket_size=2, n_buckets=4))


def test_lsh_needs_even_bucket_count():
    with pytest.raises(ParameterError):
        LshSpec(rounds=1, bucket_size=2, n_buckets=3)


def test_lsh_separated_clusters_give_block_diagonal_mask():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(8)
    v /= np.linalg.norm(v)
    x = np.concatenate([v + 0.01 * rng.standard_normal((5, 8)), -v + 0.01 * rng.standard_normal((5, 8))])
    spec = LshSpec(rounds=1, bucket_size=10, n_buckets=2, seed=3)
    buckets = lsh_hash(x, spec)[0]
    assert len(set(buckets[:5])) == 1 and len(set(buckets[5:])) == 1 and buckets[0] != buckets[5]
    mask = lsh_mask(Tensor(x), spec).allowed
    expect = np.zeros((10, 10), bool)
    expect[:5, :5] = expect[5:, 5:] = True
    assert np.array_equal(mask, expect)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 64), st.integers(1, 4), st.integers(1, 8), seeds)
def test_lsh_union_matches_oracle_and_cells_bounded(n, rounds, bucket_size, seed):
    nb = -(-n // bucket_size)
    nb = 1 if nb <= 1 else nb + nb % 2
    spec = LshSpec(rounds, bucket_size, nb, seed % 1000)
    Q, K, V = qkv(n, n, seed=seed)
    assert maxdiff(lsh_attention(Q, K, V, spec, "union"), masked_attention_reference(Q, K, V, lsh_mask(Q, spec))) <= 1e-10
    c = CellCounter()
    out = lsh_attention(Q, K, V, spec, "average", counter=c)
    per_round = [masked_attention_reference(Q, K, V, m).data for m in lsh_masks(Q, spec)]
    assert np.max(np.abs(out.data - sum(per_round) / rounds)) <= 1e-10
    assert c.cells <= rounds * n * bucket_size
    for m in lsh_masks(Q, spec):
        assert np.array_equal(m.allowed, m.allowed.T)  # shared QK space: co-membership is symmetric
        assert np.all(np.diag(m.allowed))


def test_lsh_unknown_mode():
    Q, K, V = qkv(4, 4)
    with pytest.raises(ParameterError):
        lsh_attention(Q, K, V, LshSpec(1, 4, 1), mode="max")


# ---------------------------------------------------------------------------
# Sinkhorn
# ---------------------------------------------------------------------------


def test_sinkhorn_normalization_is_near_doubly_stochastic():
    P = sinkhorn_normalize(np.random.default_rng(0).standard_normal((5, 5)), iters=50)
    assert np.allclose(P.sum(axis=0), 1.0, atol=1e-9) and np.allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_sinkhorn_rejects_non_finite_logits():
    with pytest.raises(NumericError):
        sinkhorn_normalize(np.array([[0.0, np.inf], [0.0, 0.0]]))


def test_sinkhorn_identity_logits_pair_with_self():
    spec = SinkhornSpec(4, 20.0 * np.eye(3))
    mask = sinkhorn_mask(12, spec)
    assert mask.row_sizes().tolist() == [4] * 12
    assert sinkhorn_partners(sinkhorn_normalize(spec.sort_logits)).tolist() == [0, 1, 2]


def test_sinkhorn_off_diagonal_pairs_blocks():
    spec = SinkhornSpec(3, np.array([[0.0, 20.0], [20.0, 0.0]]))
    mask = sinkhorn_mask(6, spec)
    assert mask.row_sizes().tolist() == [6] * 6


def test_sinkhorn_partners_is_a_permutation():
    P = np.random.default_rng(1).random((7, 7))
    assert sorted(sinkhorn_partners(P).tolist()) == list(range(7))


def test_sinkhorn_block_must_divide():
    Q, K, V = qkv(10, 10)
    with pytest.raises(ParameterError):
        sinkhorn_attention(Q, K, V, SinkhornSpec(4, np.zeros((2, 2))))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([(8, 2), (12, 3), (16, 4), (32, 8), (64, 16), (6, 6)]), seeds)
def test_sinkhorn_matches_oracle_and_cells_bounded(nb, seed):
    n, b = nb
    spec = SinkhornSpec.random(n, b, seed % 1000)
    Q, K, V = qkv(n, n, seed=seed)
    c = CellCounter()
    out = sinkhorn_attention(Q, K, V, spec, counter=c)
    assert maxdiff(out, masked_attention_reference(Q, K, V, sinkhorn_mask(n, spec))) <= 1e-10
    assert c.cells <= 2 * n * b


# ---------------------------------------------------------------------------
# Heads and HEPOS
# ---------------------------------------------------------------------------


def test_split_merge_round_trip():
    x = Tensor(np.arange(24.0).reshape(3, 8))
    h = split_heads(x, 4)
    assert h.shape == (4, 3, 2)
    assert np.array_equal(h.data[1], x.data[:, 2:4])
    assert np.array_equal(merge_heads(h).data, x.data)
    with pytest.raises(DimensionError):
        split_heads(x, 3)


def test_hepos_unit_stride_equals_multihead_full():
    Q, K, V = qkv(5, 9, d=8, seed=11)
    c1, c2 = CellCounter(), CellCounter()
    a = hepos_attention(Q, K, V, HeposSpec(1, 4), counter=c1)
    b = multihead_attention(Q, K, V, 4, counter=c2)
    assert maxdiff(a, b) <= 1e-12
    assert c1.cells == c2.cells == 4 * 5 * 9


def test_hepos_stride2_four_heads_supports():
    # per-head attention weights reveal the support: perturbing an unattended key changes nothing
    Q, K, V = qkv(4, 4, d=8, seed=12)
    base = hepos_attention(Q, K, V, HeposSpec(2, 4)).data
    for key in range(4):
        V2 = V.data.copy()
        V2[key] += 1.0
        out = hepos_attention(Q, K, Tensor(V2), HeposSpec(2, 4)).data
        changed = [h for h in range(4) if not np.array_equal(out[:, 2 * h : 2 * h + 2], base[:, 2 * h : 2 * h + 2])]
        assert changed == ([0, 2] if key % 2 == 0 else [1, 3])


def test_hepos_enumerated_cells():
    Q, K, V = qkv(3, 12, d=4, seed=13)
    c = CellCounter()
    hepos_attention(Q, K, V, HeposSpec(4, 4), counter=c)
    assert c.cells == 4 * 3 * 3
    assert hepos_mask(3, 12, 2, 4).rows()[0].tolist() == [2, 6, 10]


def test_hepos_stride_larger_than_n():
    Q, K, V = qkv(2, 3, d=4)
    with pytest.raises(EmptyRowError):
        hepos_attention(Q, K, V, HeposSpec(4, 4))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(1, 8), st.sampled_from([1, 2, 4, 8]), seeds)
def test_hepos_matches_per_head_oracle(n, m, heads, seed):
    s_h = 1 + seed % min(n, 6)
    Q, K, V = qkv(m, n, d=8, seed=seed)
    spec = HeposSpec(s_h, heads)
    c = CellCounter()
    out = hepos_attention(Q, K, V, spec, counter=c)
    assert maxdiff(out, hepos_reference(Q, K, V, spec)) <= 1e-10
    assert c.cells == sum(m * len(range(h % s_h, n, s_h)) for h in range(heads))


# ---------------------------------------------------------------------------
# Gradients through kernels
# ---------------------------------------------------------------------------


def _scalar(out, seed=0):
    return tsum(mul(out, np.random.default_rng(seed).standard_normal(out.shape)))


@pytest.mark.parametrize("which", ["Q", "K", "V"])
@pytest.mark.parametrize(
    "kernel",
    ["full", "window", "linformer", "hepos", "lsh", "sinkhorn"],
)
def test_kernel_gradients(kernel, which):
    n = 12
    Q, K, V = qkv(n, n, d=8, seed=21)
    lr = LowRankSpec.random(3, n, seed=2)
    lsh = LshSpec(2, 4, 4, seed=1)
    sk = SinkhornSpec.random(n, 4, seed=1)
    fns = {
        "full": lambda q, k, v: full_attention(q, k, v),
        "window": lambda q, k, v: windowed_attention(q, k, v, 4),
        "linformer": lambda q, k, v: linformer_attention(q, k, v, lr),
        "hepos": lambda q, k, v: hepos_attention(q, k, v, HeposSpec(2, 4)),
        # hash buckets come from the forward values; hold them fixed for the derivative
        "lsh": lambda q, k, v: masked_attention_reference(q, k, v, lsh_mask(Q, lsh)),
        "sinkhorn": lambda q, k, v: sinkhorn_attention(q, k, v, sk),
    }
    f = fns[kernel]
    args = {"Q": Q, "K": K, "V": V}

    def g(x):
        a = dict(args)
        a[which] = x
        return _scalar(f(a["Q"], a["K"], a["V"]))

    assert finite_difference_check(g, args[which]) <= 1e-4
