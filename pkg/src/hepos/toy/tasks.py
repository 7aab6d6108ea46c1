"""Synthetic sequence-to-sequence tasks."""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
N_SPECIAL = 4
TASKS = ("copy", "reverse", "strided_pick")
PICK_STRIDE = 4


def transform(kind: str, source):
    source = list(source)
    if kind == "copy":
        return source
    if kind == "reverse":
        return source[::-1]
    if kind == "strided_pick":
        return source[::PICK_STRIDE]
    raise ParameterError(f"unknown task {kind!r}; expected one of {TASKS}")


def target_length(kind: str, length: int) -> int:
    return len(transform(kind, range(length)))


def synth_task(kind: str, length: int, vocab: int, count: int, seed) -> list[tuple[list[int], list[int]]]:
    """``count`` random (source, target) pairs over content tokens ``4..vocab-1``."""
    if kind not in TASKS:
        raise ParameterError(f"unknown task {kind!r}; expected one of {TASKS}")
    if length < 1:
        raise ParameterError("sequence length must be >= 1")
    if vocab <= N_SPECIAL:
        raise ParameterError(f"vocab must exceed the {N_SPECIAL} reserved ids, got {vocab}")
    rng = np.random.default_rng(seed)
    sources = rng.integers(N_SPECIAL, vocab, size=(count, length))
    return [(src.tolist(), transform(kind, src.tolist())) for src in sources]


def batch_arrays(pairs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack pairs into (source, decoder input, decoder target) id arrays."""
    src = np.array([s for s, _ in pairs], dtype=np.intp)
    tgt = np.array([t for _, t in pairs], dtype=np.intp)
    bos = np.full((len(pairs), 1), BOS, dtype=np.intp)
    eos = np.full((len(pairs), 1), EOS, dtype=np.intp)
    return src, np.concatenate([bos, tgt], axis=1), np.concatenate([tgt, eos], axis=1)
