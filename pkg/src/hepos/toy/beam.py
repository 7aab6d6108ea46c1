"""Beam search with the ((5 + len) / 6) ** alpha length penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from .tasks import EOS

DEFAULT_BEAM = 4
DEFAULT_ALPHA = 2.0


@dataclass(frozen=True)
class DecodeResult:
    tokens: tuple[int, ...]
    log_prob: float
    score: float
    truncated: bool


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def _result(tokens, log_prob, alpha, truncated) -> DecodeResult:
    return DecodeResult(tuple(tokens), float(log_prob), float(log_prob) / length_penalty(len(tokens), alpha), truncated)


def beam_decode(model, source, beam: int = DEFAULT_BEAM, alpha: float = DEFAULT_ALPHA, max_len: int | None = None, eos: int = EOS) -> DecodeResult:
    """Return the best finished hypothesis under length-normalised log-probability.

    ``model`` must provide ``log_prob_fn(source)`` returning a function from a
    token prefix to next-token log-probabilities, and ``max_decode_len``.
    The ``beam`` best expansions survive each step; those ending in ``eos``
    retire, so ``beam=1`` is exactly greedy decoding. If nothing finishes
    within ``max_len`` steps the best unfinished prefix is returned with
    ``truncated=True``.
    """
    if beam < 1:
        raise ParameterError("beam must be >= 1")
    if alpha < 0:
        raise ParameterError("alpha must be >= 0")
    max_len = model.max_decode_len if max_len is None else max_len
    step = model.log_prob_fn(source)
    alive: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float]] = []
    for _ in range(max_len):
        candidates = []
        for prefix, lp in alive:
            scores = np.asarray(step(prefix), dtype=np.float64)
            candidates.extend((prefix + (tok,), lp + float(s)) for tok, s in enumerate(scores))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        alive = []
        for tokens, lp in candidates[:beam]:
            (finished if tokens[-1] == eos else alive).append((tokens, lp))
        if not alive:
            break
    if finished:
        pool = [_result(t, lp, alpha, False) for t, lp in finished]
    else:
        pool = [_result(t, lp, alpha, True) for t, lp in alive]
    return min(pool, key=lambda r: (-r.score, r.tokens))


def greedy_decode(model, source, alpha: float = DEFAULT_ALPHA, max_len: int | None = None, eos: int = EOS) -> DecodeResult:
    max_len = model.max_decode_len if max_len is None else max_len
    step = model.log_prob_fn(source)
    tokens: list[int] = []
    total = 0.0
    for _ in range(max_len):
        scores = np.asarray(step(tuple(tokens)))
        tok = int(np.argmax(scores))
        tokens.append(tok)
        total += float(scores[tok])
        if tok == eos:
            return _result(tokens, total, alpha, False)
    return _result(tokens, total, alpha, True)
