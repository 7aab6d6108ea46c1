"""Attention sparsity patterns.

Every builder returns an :class:`AttentionMask`, a boolean (queries x keys)
support with optional soft weights. Masks are immutable; combinators return
new masks whose support is the set union of their parts.

Indexing is 0-based throughout. HEPOS head ``h`` with stride ``s_h`` attends
key ``i`` iff ``(i - (h mod s_h)) mod s_h == 0``, so heads ``0..s_h-1``
partition the keys and further heads cycle through the same offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, EmptyRowError, ParameterError

DEFAULT_RAMP = 32


@dataclass(frozen=True, eq=False)
class AttentionMask:
    allowed: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        allowed = np.array(self.allowed, dtype=bool)
        if allowed.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {allowed.shape}")
        allowed.setflags(write=False)
        object.__setattr__(self, "allowed", allowed)
        if self.weights is not None:
            w = np.array(self.weights, dtype=np.float64)
            if w.shape != allowed.shape:
                raise DimensionError("soft weights must match the mask shape")
            if np.any((w < 0) | (w > 1)):
                raise ParameterError("soft weights must lie in [0, 1]")
            w = np.where(allowed, w, 0.0)
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_rows(cls, rows: Sequence[Iterable[int]], n_keys: int) -> "AttentionMask":
        allowed = np.zeros((len(rows), n_keys), dtype=bool)
        for q, keys in enumerate(rows):
            keys = list(keys)
            if keys and (min(keys) < 0 or max(keys) >= n_keys):
                raise DimensionError(f"row {q} has a key index outside [0, {n_keys})")
            allowed[q, keys] = True
        return cls(allowed)

    @property
    def n_queries(self) -> int:
        return self.allowed.shape[0]

    @property
    def n_keys(self) -> int:
        return self.allowed.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.allowed.shape

    @property
    def is_soft(self) -> bool:
        return self.weights is not None

    @property
    def cells(self) -> int:
        return int(np.count_nonzero(self.allowed))

    def row(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.allowed[q])

    def rows(self) -> list[np.ndarray]:
        return [np.flatnonzero(r) for r in self.allowed]

    def row_sizes(self) -> np.ndarray:
        return self.allowed.sum(axis=1)

    def union(self, other: "AttentionMask") -> "AttentionMask":
        if self.shape != other.shape:
            raise DimensionError(f"cannot union masks of shapes {self.shape} and {other.shape}")
        if self.is_soft or other.is_soft:
            mine = self.weights if self.is_soft else self.allowed.astype(float)
            theirs = other.weights if other.is_soft else other.allowed.astype(float)
            return AttentionMask(self.allowed | other.allowed, np.maximum(mine, theirs))
        return AttentionMask(self.allowed | other.allowed)

    def __or__(self, other):
        return self.union(other)

    def equals(self, other: "AttentionMask") -> bool:
        if self.shape != other.shape or not np.array_equal(self.allowed, other.allowed):
            return False
        if self.is_soft != other.is_soft:
            return False
        return not self.is_soft or np.array_equal(self.weights, other.weights)

    def with_flipped(self, q: int, k: int) -> "AttentionMask":
        allowed = self.allowed.copy()
        allowed[q, k] = not allowed[q, k]
        return AttentionMask(allowed)


def empty_mask(m: int, n: int) -> AttentionMask:
    return AttentionMask(np.zeros((m, n), dtype=bool))


def full_mask(m: int, n: int | None = None) -> AttentionMask:
    return AttentionMask(np.ones((m, m if n is None else n), dtype=bool))


def causal_mask(n: int) -> AttentionMask:
    return AttentionMask(np.tril(np.ones((n, n), dtype=bool)))


def _check_len(n: int, name: str = "n") -> None:
    if n < 1:
        raise ParameterError(f"{name} must be >= 1, got {n}")


def window_mask(n: int, w: int) -> AttentionMask:
    """Query ``i`` attends ``i - w/2 .. i + w/2`` clipped to the sequence, self included."""
    _check_len(n)
    if w < 2 or w % 2:
        raise ParameterError(f"window width must be even and >= 2, got {w}")
    idx = np.arange(n)
    return AttentionMask(np.abs(idx[:, None] - idx[None, :]) <= w // 2)


def add_global(mask: AttentionMask, g: int) -> AttentionMask:
    """First ``g`` tokens are global: they attend everything and everything attends them."""
    if g < 0 or g > mask.n_keys:
        raise ParameterError(f"global count g={g} must lie in [0, {mask.n_keys}]")
    if g == 0:
        return mask
    extra = np.zeros(mask.shape, dtype=bool)
    extra[:, :g] = True
    extra[:g, :] = True
    return mask | AttentionMask(extra)


def add_stride(mask: AttentionMask, s: int) -> AttentionMask:
    """Every query additionally attends keys 0, s, 2s, ..."""
    if s < 1:
        raise ParameterError(f"stride must be >= 1, got {s}")
    extra = np.zeros(mask.shape, dtype=bool)
    extra[:, ::s] = True
    return mask | AttentionMask(extra)


def block_partners(n: int, block: int, seed: int) -> list[int]:
    """For each block, a different block chosen uniformly by a seeded RNG.

    A trailing partial block is allowed when ``block`` does not divide ``n``.
    Returns -1 for every block when only one block exists.
    """
    if block < 1 or block > n:
        raise ParameterError(f"block size must lie in [1, {n}], got {block}")
    n_blocks = math.ceil(n / block)
    if n_blocks == 1:
        return [-1]
    rng = np.random.default_rng(seed)
    partners = []
    for b in range(n_blocks):
        choice = int(rng.integers(n_blocks - 1))
        partners.append(choice + (choice >= b))
    return partners


def add_random_blocks(mask: AttentionMask, block: int, seed: int) -> AttentionMask:
    """Queries in each block also attend all keys of one other, randomly chosen block."""
    if mask.n_queries != mask.n_keys:
        raise DimensionError("random block attention is defined for self-attention masks")
    n = mask.n_keys
    partners = block_partners(n, block, seed)
    if partners == [-1]:
        return mask
    extra = np.zeros(mask.shape, dtype=bool)
    for b, p in enumerate(partners):
        extra[b * block : (b + 1) * block, p * block : (p + 1) * block] = True
    return mask | AttentionMask(extra)


def adaptive_span_weights(distance, z: float, ramp: int = DEFAULT_RAMP):
    """Soft ramp mask: 1 inside the span, linear decay to 0 over ``ramp`` tokens."""
    return np.clip((ramp + z - np.asarray(distance, dtype=np.float64)) / ramp, 0.0, 1.0)


def adaptive_span_mask(n: int, z: float, ramp: int = DEFAULT_RAMP, max_span: float | None = None) -> AttentionMask:
    """Soft mask for one head with a fixed span ``z``; hard support is ``|i-j| <= z + ramp``."""
    _check_len(n)
    if ramp < 1:
        raise ParameterError(f"ramp width must be >= 1, got {ramp}")
    if z < 0 or (max_span is not None and z > max_span):
        raise ParameterError(f"span z={z} outside [0, {max_span}]")
    idx = np.arange(n)
    d = np.abs(idx[:, None] - idx[None, :])
    return AttentionMask(d <= z + ramp, adaptive_span_weights(d, z, ramp))


def adaptive_span_masks(n: int, spans: Sequence[float], ramp: int = DEFAULT_RAMP, max_span: float | None = None):
    return [adaptive_span_mask(n, z, ramp, max_span) for z in spans]


def hepos_membership(i: int, h: int, s_h: int) -> bool:
    return (i - (h % s_h)) % s_h == 0


def hepos_offsets(n: int, h: int, s_h: int) -> np.ndarray:
    """Key indices attended by HEPOS head ``h``."""
    return np.arange(h % s_h, n, s_h)


def hepos_head_masks(m: int, n: int, s_h: int, heads: int) -> np.ndarray:
    """Boolean supports of shape (heads, m, n) for heads ``0..heads-1``."""
    _check_len(n)
    _check_len(m, "m")
    if s_h < 1:
        raise ParameterError(f"stride s_h must be >= 1, got {s_h}")
    if s_h > n:
        raise EmptyRowError(range(m))
    keys = np.arange(n)
    offs = np.arange(heads) % s_h
    member = (keys[None, :] - offs[:, None]) % s_h == 0
    return np.broadcast_to(member[:, None, :], (heads, m, n))


def hepos_mask(m: int, n: int, h: int, s_h: int) -> AttentionMask:
    """Encoder-decoder support of HEPOS head ``h``: every decoder row shares it."""
    if h < 0:
        raise ParameterError(f"head index must be >= 0, got {h}")
    return AttentionMask(hepos_head_masks(m, n, s_h, h + 1)[h])


# ---------------------------------------------------------------------------
# Declarative specs
# ---------------------------------------------------------------------------

FIXED_KINDS = ("full", "window", "adaptive_span", "global", "stride", "random_blocks", "hepos")
LEARNED_KINDS = ("linformer", "lsh", "sinkhorn")
KINDS = FIXED_KINDS + LEARNED_KINDS


@dataclass(frozen=True)
class PatternSpec:
    """Pattern kind plus hyperparameters.

    ``g``, ``s`` and ``block`` set on a ``window`` / ``adaptive_span`` /
    ``full`` spec add global, stride and random-block attention on top of
    that base (the combinations used for the parity experiments). Kinds
    ``global``, ``stride`` and ``random_blocks`` on their own start from an
    empty base.
    """

    kind: str = "full"
    w: int | None = None
    max_span: float | None = None
    span: float | None = None
    ramp: int = DEFAULT_RAMP
    g: int | None = None
    s: int | None = None
    block: int | None = None
    s_h: int | None = None
    head: int = 0
    seed: int = 0
    k: int | None = None
    rounds: int | None = None
    bucket_size: int | None = None
    n_buckets: int | None = None
    block_size: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown pattern kind {self.kind!r}; expected one of {KINDS}")
        for name in ("w", "g", "s", "block", "s_h", "k", "rounds", "bucket_size", "n_buckets", "block_size"):
            value = getattr(self, name)
            if value is not None and value < (0 if name == "g" else 1):
                raise ParameterError(f"{name} must be >= 1, got {value}")
        if self.head < 0:
            raise ParameterError("head index must be >= 0")
        required = {
            "window": ("w",),
            "adaptive_span": ("span",),
            "global": ("g",),
            "stride": ("s",),
            "random_blocks": ("block",),
            "hepos": ("s_h",),
            "linformer": ("k",),
            "lsh": ("rounds", "bucket_size"),
            "sinkhorn": ("block_size",),
        }.get(self.kind, ())
        missing = [r for r in required if getattr(self, r) is None]
        if missing:
            raise ParameterError(f"{self.kind} pattern needs {', '.join(missing)}")

    @property
    def is_encdec(self) -> bool:
        return self.kind == "hepos"

    @property
    def learned(self) -> bool:
        return self.kind in LEARNED_KINDS

    @property
    def augmentations(self) -> tuple[str, ...]:
        if self.kind not in ("full", "window", "adaptive_span"):
            return ()
        return tuple(a for a, v in (("global", self.g), ("stride", self.s), ("random_blocks", self.block)) if v)

    def with_(self, **changes) -> "PatternSpec":
        return replace(self, **changes)

    def describe(self) -> str:
        parts = [self.kind]
        for name in ("w", "span", "max_span", "g", "s", "block", "s_h", "k", "rounds", "bucket_size", "block_size"):
            value = getattr(self, name)
            if value is not None and not (self.kind == "global" and name == "g"):
                parts.append(f"{name}={value}")
        if self.kind == "global":
            parts.append(f"g={self.g}")
        if self.kind == "hepos":
            parts.append(f"head={self.head}")
        if self.kind == "adaptive_span":
            parts.append(f"ramp={self.ramp}")
        return " ".join(parts)


def build_mask(spec: PatternSpec, n: int, m: int | None = None) -> AttentionMask:
    """Materialise a fixed pattern. ``m`` only matters for ``hepos`` and ``full``."""
    _check_len(n)
    if spec.learned:
        raise ParameterError(f"{spec.kind} masks depend on the inputs; use the kernel's mask builder")
    if spec.kind == "hepos":
        return hepos_mask(n if m is None else m, n, spec.head, spec.s_h)
    if spec.kind == "full":
        mask = full_mask(n if m is None else m, n)
        if m is not None and m != n and spec.augmentations:
            raise DimensionError("augmented patterns are self-attention patterns (m == n)")
    elif spec.kind == "window":
        mask = window_mask(n, spec.w)
    elif spec.kind == "adaptive_span":
        mask = adaptive_span_mask(n, spec.span, spec.ramp, spec.max_span)
    else:
        mask = empty_mask(n, n)
    g = spec.g
    s = spec.s
    block = spec.block
    if g:
        mask = add_global(mask, g)
    if s:
        mask = add_stride(mask, s)
    if block:
        mask = add_random_blocks(mask, block, spec.seed)
    return mask
