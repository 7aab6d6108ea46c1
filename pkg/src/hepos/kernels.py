"""Attention kernels.

All kernels take ``Q (..., m, d_k)``, ``K (..., n, d_k)``, ``V (..., n, d_v)``
tensors and return ``(..., m, d_v)``; leading axes (batch, heads) broadcast.
They are composed from the primitives in :mod:`hepos.tensor`, so every
kernel is differentiable.

The efficient kernels only materialise the score cells their pattern needs
and report that number through an optional :class:`CellCounter`.
:func:`masked_attention_reference` is the dense oracle: it scores every
(query, key) pair and then restricts the softmax to the mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DimensionError, EmptyRowError, NumericError, ParameterError
from .patterns import AttentionMask, build_mask, full_mask, hepos_mask, hepos_offsets
from .tensor import Tensor, concat, matmul, mul, permute, reshape, softmax_masked, take, transpose


@dataclass
class CellCounter:
    """Accumulates the number of (query, key) score cells a kernel computed."""

    cells: int = 0

    def add(self, count: int) -> None:
        self.cells += int(count)


@dataclass(frozen=True)
class AttentionInputs:
    Q: Tensor
    K: Tensor
    V: Tensor

    def __post_init__(self):
        _check_qkv(self.Q, self.K, self.V)

    @property
    def d_k(self) -> int:
        return self.Q.shape[-1]

    @classmethod
    def random(cls, m: int, n: int, d_k: int, d_v: int | None = None, seed: int = 0, scale: float = 1.0):
        rng = np.random.default_rng(seed)
        d_v = d_k if d_v is None else d_v
        return cls(
            Tensor(scale * rng.standard_normal((m, d_k))),
            Tensor(scale * rng.standard_normal((n, d_k))),
            Tensor(rng.standard_normal((n, d_v))),
        )


@dataclass(frozen=True)
class LowRankSpec:
    """Linformer projections ``E`` (keys) and ``F`` (values), both k x n."""

    E: Tensor
    F: Tensor

    def __post_init__(self):
        if self.E.ndim != 2 or self.E.shape != self.F.shape:
            raise DimensionError(f"E and F must be equal-shape matrices, got {self.E.shape} and {self.F.shape}")
        if self.k > self.n:
            raise ParameterError(f"projected length k={self.k} exceeds n={self.n}")

    @property
    def k(self) -> int:
        return self.E.shape[0]

    @property
    def n(self) -> int:
        return self.E.shape[1]

    @property
    def new_params(self) -> int:
        return 2 * self.k * self.n

    @classmethod
    def random(cls, k: int, n: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(n)
        return cls(Tensor(scale * rng.standard_normal((k, n))), Tensor(scale * rng.standard_normal((k, n))))

    @classmethod
    def identity(cls, n: int):
        return cls(Tensor(np.eye(n)), Tensor(np.eye(n)))


@dataclass(frozen=True)
class LshSpec:
    rounds: int
    bucket_size: int
    n_buckets: int
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1 or self.bucket_size < 1 or self.n_buckets < 1:
            raise ParameterError("rounds, bucket_size and n_buckets must all be >= 1")
        if self.n_buckets > 1 and self.n_buckets % 2:
            raise ParameterError("angular hashing needs an even number of buckets (or exactly one)")


@dataclass(frozen=True)
class SinkhornSpec:
    block_size: int
    sort_logits: np.ndarray
    iters: int = 8
    temperature: float = 1.0

    def __post_init__(self):
        logits = np.array(self.sort_logits, dtype=np.float64)
        if logits.ndim != 2 or logits.shape[0] != logits.shape[1]:
            raise DimensionError(f"sort_logits must be square, got {logits.shape}")
        if self.block_size < 1 or self.iters < 1 or not self.temperature > 0:
            raise ParameterError("block_size and iters must be >= 1 and temperature > 0")
        logits.setflags(write=False)
        object.__setattr__(self, "sort_logits", logits)

    @property
    def n_blocks(self) -> int:
        return self.sort_logits.shape[0]

    @classmethod
    def random(cls, n: int, block_size: int, seed: int = 0, **kw):
        rng = np.random.default_rng(seed)
        b = n // block_size
        return cls(block_size, rng.standard_normal((b, b)), **kw)


@dataclass(frozen=True)
class HeposSpec:
    s_h: int
    heads: int

    def __post_init__(self):
        if self.s_h < 1 or self.heads < 1:
            raise ParameterError("s_h and heads must be >= 1")


def _check_qkv(Q: Tensor, K: Tensor, V: Tensor) -> None:
    if min(Q.ndim, K.ndim, V.ndim) < 2:
        raise DimensionError("Q, K and V must be at least 2-D")
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query and key widths differ: {Q.shape} vs {K.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"K and V disagree on sequence length: {K.shape} vs {V.shape}")
    if Q.shape[-2] < 1 or K.shape[-2] < 1:
        raise DimensionError("sequence lengths must be >= 1")


def _batch(x: Tensor) -> int:
    return int(np.prod(x.shape[:-2], dtype=np.int64))


def _scale(d_k: int) -> float:
    return 1.0 / math.sqrt(d_k)


def _dense(Q, K, V, mask, counter):
    scores = mul(matmul(Q, transpose(K)), _scale(Q.shape[-1]))
    if counter is not None:
        counter.add(_batch(scores) * scores.shape[-2] * scores.shape[-1])
    return matmul(softmax_masked(scores, mask), V)


def full_attention(Q: Tensor, K: Tensor, V: Tensor, counter: CellCounter | None = None) -> Tensor:
    _check_qkv(Q, K, V)
    return _dense(Q, K, V, None, counter)


def masked_attention_reference(Q: Tensor, K: Tensor, V: Tensor, mask: AttentionMask) -> Tensor:
    """Dense oracle: softmax over the attended keys of each row, times V."""
    _check_qkv(Q, K, V)
    if mask.shape != (Q.shape[-2], K.shape[-2]):
        raise DimensionError(f"mask shape {mask.shape} does not match ({Q.shape[-2]}, {K.shape[-2]})")
    return _dense(Q, K, V, mask, None)


def gathered_attention(
    Q: Tensor,
    K: Tensor,
    V: Tensor,
    index: np.ndarray,
    valid: np.ndarray,
    counter: CellCounter | None = None,
) -> Tensor:
    """Attention where query ``i`` scores only keys ``index[i, valid[i]]``.

    ``index`` and ``valid`` are (m, L); padded slots must hold any in-range
    index and are excluded by ``valid``. Only m * L score cells are formed.
    """
    m, n = Q.shape[-2], K.shape[-2]
    index = np.asarray(index, dtype=np.intp)
    valid = np.asarray(valid, dtype=bool)
    if index.shape != valid.shape or index.shape[0] != m:
        raise DimensionError(f"index/valid must be ({m}, L), got {index.shape} and {valid.shape}")
    if np.any(index < 0) or np.any(index >= n):
        raise DimensionError("gather index out of range")
    L = index.shape[1]
    lead = Q.shape[:-2]
    kg = reshape(take(K, index, axis=-2), K.shape[:-2] + (m, L, K.shape[-1]))
    vg = reshape(take(V, index, axis=-2), V.shape[:-2] + (m, L, V.shape[-1]))
    q4 = reshape(Q, lead + (m, 1, Q.shape[-1]))
    scores = reshape(mul(matmul(q4, transpose(kg)), _scale(Q.shape[-1])), lead + (m, L))
    if counter is not None:
        counter.add(_batch(Q) * int(valid.sum()))
    probs = softmax_masked(scores, valid)
    out = matmul(reshape(probs, lead + (m, 1, L)), vg)
    return reshape(out, lead + (m, V.shape[-1]))


def rows_to_index(rows: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Pack ragged per-query key lists into padded (index, valid) arrays."""
    width = max((len(r) for r in rows), default=0)
    if width == 0:
        raise EmptyRowError(range(len(rows)))
    index = np.zeros((len(rows), width), dtype=np.intp)
    valid = np.zeros((len(rows), width), dtype=bool)
    for q, r in enumerate(rows):
        index[q, : len(r)] = r
        valid[q, : len(r)] = True
    empty = [q for q, r in enumerate(rows) if len(r) == 0]
    if empty:
        raise EmptyRowError(empty)
    return index, valid


# ---------------------------------------------------------------------------
# Fixed patterns
# ---------------------------------------------------------------------------


def window_index(n: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    if w < 2 or w % 2:
        raise ParameterError(f"window width must be even and >= 2, got {w}")
    half = min(w // 2, n - 1)
    pos = np.arange(n)[:, None] + np.arange(-half, half + 1)[None, :]
    valid = (pos >= 0) & (pos < n)
    return np.where(valid, pos, 0), valid


def windowed_attention(Q: Tensor, K: Tensor, V: Tensor, w: int, counter: CellCounter | None = None) -> Tensor:
    """Banded self-attention touching at most n (w + 1) score cells."""
    _check_qkv(Q, K, V)
    n = K.shape[-2]
    if Q.shape[-2] != n:
        raise DimensionError("windowed attention is self-attention (m == n)")
    index, valid = window_index(n, w)
    return gathered_attention(Q, K, V, index, valid, counter)


def pattern_attention(Q: Tensor, K: Tensor, V: Tensor, spec, counter: CellCounter | None = None) -> Tensor:
    """Self-attention under a fixed PatternSpec, using the banded kernel where it applies."""
    n = K.shape[-2]
    if spec.kind == "full" and not spec.augmentations:
        return full_attention(Q, K, V, counter)
    if spec.kind == "window" and not spec.augmentations:
        return windowed_attention(Q, K, V, spec.w, counter)
    mask = build_mask(spec, n, Q.shape[-2])
    if mask.is_soft:
        if counter is not None:
            counter.add(_batch(Q) * mask.cells)
        return masked_attention_reference(Q, K, V, mask)
    index, valid = rows_to_index(mask.rows())
    return gathered_attention(Q, K, V, index, valid, counter)


# ---------------------------------------------------------------------------
# Low rank
# ---------------------------------------------------------------------------


def linformer_attention(Q: Tensor, K: Tensor, V: Tensor, spec: LowRankSpec, counter: CellCounter | None = None) -> Tensor:
    """softmax(Q (E K)^T / sqrt(d_k)) (F V)."""
    _check_qkv(Q, K, V)
    if spec.n != K.shape[-2]:
        raise DimensionError(f"projection expects n={spec.n}, keys have n={K.shape[-2]}")
    return _dense(Q, matmul(spec.E, K), matmul(spec.F, V), None, counter)


def linformer_encdec_attention(Q_dec: Tensor, K: Tensor, V: Tensor, spec: LowRankSpec, counter: CellCounter | None = None) -> Tensor:
    """Linformer with decoder queries against projected encoder keys/values: m * k cells."""
    return linformer_attention(Q_dec, K, V, spec, counter)


# ---------------------------------------------------------------------------
# LSH
# ---------------------------------------------------------------------------


def lsh_hash(x: np.ndarray, spec: LshSpec) -> np.ndarray:
    """Bucket ids of shape (rounds, n) via argmax over [xR, -xR] with seeded Gaussian R."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if spec.n_buckets == 1:
        return np.zeros((spec.rounds, n), dtype=np.intp)
    rng = np.random.default_rng(spec.seed)
    out = np.empty((spec.rounds, n), dtype=np.intp)
    for r in range(spec.rounds):
        proj = x @ rng.standard_normal((d, spec.n_buckets // 2))
        out[r] = np.argmax(np.concatenate([proj, -proj], axis=1), axis=1)
    return out


def lsh_round_rows(buckets: np.ndarray, bucket_size: int) -> list[np.ndarray]:
    """Per-query key lists for one hashing round.

    Positions are sorted by (bucket, position) and cut into consecutive
    chunks of ``bucket_size``; a query attends the members of its chunk that
    share its bucket. Oversized buckets are thereby split, so no query
    scores more than ``bucket_size`` keys.
    """
    n = buckets.shape[0]
    order = np.lexsort((np.arange(n), buckets))
    rows: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for start in range(0, n, bucket_size):
        chunk = order[start : start + bucket_size]
        for b in np.unique(buckets[chunk]):
            members = np.sort(chunk[buckets[chunk] == b])
            for q in members:
                rows[q] = members
    return rows


def _lsh_rows(x: np.ndarray, spec: LshSpec) -> list[list[np.ndarray]]:
    n = x.shape[0]
    if spec.n_buckets * spec.bucket_size < n:
        raise CapacityError(f"{spec.n_buckets} buckets of size {spec.bucket_size} cannot hold {n} positions")
    return [lsh_round_rows(b, spec.bucket_size) for b in lsh_hash(x, spec)]


def lsh_masks(Q: Tensor, spec: LshSpec) -> list[AttentionMask]:
    """One mask per hashing round; queries and keys share the hashed space (Q)."""
    n = Q.shape[-2]
    return [AttentionMask.from_rows(rows, n) for rows in _lsh_rows(Q.data, spec)]


def lsh_mask(Q: Tensor, spec: LshSpec) -> AttentionMask:
    masks = lsh_masks(Q, spec)
    out = masks[0]
    for m in masks[1:]:
        out = out | m
    return out


def lsh_attention(
    Q: Tensor,
    K: Tensor,
    V: Tensor,
    spec: LshSpec,
    mode: str = "average",
    counter: CellCounter | None = None,
) -> Tensor:
    """Bucketed self-attention over ``spec.rounds`` hashing rounds.

    ``mode="average"`` averages the per-round outputs; ``mode="union"``
    attends the union of a query's round buckets in one softmax, which is
    what the dense oracle on :func:`lsh_mask` reproduces.
    """
    _check_qkv(Q, K, V)
    if Q.ndim != 2 or Q.shape[0] != K.shape[0]:
        raise DimensionError("LSH attention expects 2-D self-attention inputs (m == n)")
    rounds = _lsh_rows(Q.data, spec)
    if mode == "union":
        merged = [np.unique(np.concatenate([r[q] for r in rounds])) for q in range(Q.shape[0])]
        index, valid = rows_to_index(merged)
        return gathered_attention(Q, K, V, index, valid, counter)
    if mode != "average":
        raise ParameterError(f"unknown LSH combination mode {mode!r}")
    outs = []
    for rows in rounds:
        index, valid = rows_to_index(rows)
        outs.append(gathered_attention(Q, K, V, index, valid, counter))
    total = outs[0]
    for o in outs[1:]:
        total = total + o
    return mul(total, 1.0 / len(outs))


# ---------------------------------------------------------------------------
# Sinkhorn
# ---------------------------------------------------------------------------


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    top = x.max(axis=axis, keepdims=True)
    return top + np.log(np.exp(x - top).sum(axis=axis, keepdims=True))


def sinkhorn_normalize(logits, iters: int = 8, temperature: float = 1.0) -> np.ndarray:
    """Alternate row and column normalisation of exp(logits / temperature)."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    if not np.all(np.isfinite(z)):
        raise NumericError("sort logits must be finite")
    for _ in range(iters):
        z = z - _logsumexp(z, axis=1)
        z = z - _logsumexp(z, axis=0)
    return np.exp(z)


def sinkhorn_partners(P: np.ndarray) -> np.ndarray:
    """Hard block assignment: greedily take the largest remaining entry of P.

    Ties are broken by row then column index. The result is a permutation.
    """
    B = P.shape[0]
    rows, cols = np.unravel_index(np.arange(B * B), (B, B))
    order = np.lexsort((cols, rows, -P.reshape(-1)))
    partner = np.full(B, -1, dtype=np.intp)
    used = np.zeros(B, dtype=bool)
    for flat in order:
        r, c = rows[flat], cols[flat]
        if partner[r] < 0 and not used[c]:
            partner[r] = c
            used[c] = True
    return partner


def _sinkhorn_rows(n: int, spec: SinkhornSpec) -> list[np.ndarray]:
    b = spec.block_size
    if n % b:
        raise ParameterError(f"block size {b} must divide the sequence length {n}")
    if n // b != spec.n_blocks:
        raise DimensionError(f"sort_logits are {spec.n_blocks}x{spec.n_blocks} but n/b_s = {n // b}")
    partner = sinkhorn_partners(sinkhorn_normalize(spec.sort_logits, spec.iters, spec.temperature))
    rows = []
    for q in range(n):
        own = q // b
        blocks = sorted({own, int(partner[own])})
        rows.append(np.concatenate([np.arange(x * b, (x + 1) * b) for x in blocks]))
    return rows


def sinkhorn_mask(n: int, spec: SinkhornSpec) -> AttentionMask:
    return AttentionMask.from_rows(_sinkhorn_rows(n, spec), n)


def sinkhorn_attention(Q: Tensor, K: Tensor, V: Tensor, spec: SinkhornSpec, counter: CellCounter | None = None) -> Tensor:
    """Each query attends its own block and the block its block was sorted next to."""
    _check_qkv(Q, K, V)
    if Q.shape[-2] != K.shape[-2]:
        raise DimensionError("Sinkhorn attention is self-attention (m == n)")
    index, valid = rows_to_index(_sinkhorn_rows(K.shape[-2], spec))
    return gathered_attention(Q, K, V, index, valid, counter)


# ---------------------------------------------------------------------------
# Multi-head helpers and HEPOS
# ---------------------------------------------------------------------------


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., L, H*d) -> (..., H, L, d)."""
    if x.shape[-1] % heads:
        raise DimensionError(f"width {x.shape[-1]} is not divisible by {heads} heads")
    lead = x.shape[:-2]
    y = reshape(x, lead + (x.shape[-2], heads, x.shape[-1] // heads))
    k = len(lead)
    return permute(y, tuple(range(k)) + (k + 1, k, k + 2))


def merge_heads(x: Tensor) -> Tensor:
    """(..., H, L, d) -> (..., L, H*d)."""
    lead = x.shape[:-3]
    k = len(lead)
    y = permute(x, tuple(range(k)) + (k + 1, k, k + 2))
    return reshape(y, lead + (x.shape[-2], x.shape[-3] * x.shape[-1]))


def multihead_attention(Q: Tensor, K: Tensor, V: Tensor, heads: int, counter: CellCounter | None = None, mask=None) -> Tensor:
    """Full (or commonly masked) attention applied independently per head."""
    q, k, v = split_heads(Q, heads), split_heads(K, heads), split_heads(V, heads)
    if mask is None:
        out = full_attention(q, k, v, counter)
    else:
        if counter is not None:
            counter.add(_batch(q) * mask.cells)
        out = masked_attention_reference(q, k, v, mask)
    return merge_heads(out)


def _head_columns(width: int, heads: int, h: int) -> np.ndarray:
    if width % heads:
        raise DimensionError(f"width {width} is not divisible by {heads} heads")
    size = width // heads
    return np.arange(h * size, (h + 1) * size)


def hepos_attention(Q_dec: Tensor, K: Tensor, V: Tensor, spec: HeposSpec, counter: CellCounter | None = None) -> Tensor:
    """Head-wise positional strides for encoder-decoder attention.

    Head ``h`` attends encoder positions ``h mod s_h, h mod s_h + s_h, ...``
    and normalises over exactly that subset; head outputs are concatenated.
    """
    _check_qkv(Q_dec, K, V)
    n = K.shape[-2]
    if spec.s_h > n:
        raise EmptyRowError(range(Q_dec.shape[-2]))
    outs = []
    for h in range(spec.heads):
        qcols = _head_columns(Q_dec.shape[-1], spec.heads, h)
        vcols = _head_columns(V.shape[-1], spec.heads, h)
        keys = hepos_offsets(n, h, spec.s_h)
        kh = take(take(K, qcols, axis=-1), keys, axis=-2)
        vh = take(take(V, vcols, axis=-1), keys, axis=-2)
        outs.append(_dense(take(Q_dec, qcols, axis=-1), kh, vh, None, counter))
    return concat(outs, axis=-1)


def hepos_reference(Q_dec: Tensor, K: Tensor, V: Tensor, spec: HeposSpec) -> Tensor:
    """Dense oracle for :func:`hepos_attention`: per-head masked reference, concatenated."""
    m, n = Q_dec.shape[-2], K.shape[-2]
    outs = []
    for h in range(spec.heads):
        qcols = _head_columns(Q_dec.shape[-1], spec.heads, h)
        vcols = _head_columns(V.shape[-1], spec.heads, h)
        outs.append(
            masked_attention_reference(
                take(Q_dec, qcols, axis=-1),
                take(K, qcols, axis=-1),
                take(V, vcols, axis=-1),
                hepos_mask(m, n, h, spec.s_h),
            )
        )
    return concat(outs, axis=-1)


__all__ = [
    "AttentionInputs",
    "CellCounter",
    "HeposSpec",
    "LowRankSpec",
    "LshSpec",
    "SinkhornSpec",
    "full_attention",
    "full_mask",
    "gathered_attention",
    "hepos_attention",
    "hepos_reference",
    "linformer_attention",
    "linformer_encdec_attention",
    "lsh_attention",
    "lsh_mask",
    "lsh_masks",
    "masked_attention_reference",
    "multihead_attention",
    "pattern_attention",
    "sinkhorn_attention",
    "sinkhorn_mask",
    "windowed_attention",
]
