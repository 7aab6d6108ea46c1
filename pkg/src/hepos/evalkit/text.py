"""Tokenisation and lexical overlap scores."""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable, Sequence

# Lowercased alphanumeric runs; internal '.', ',' or apostrophes between
# alphanumerics stay inside the token so "7.5" and "1,000" survive intact.
_TOKEN = re.compile(r"[a-z0-9]+(?:[.,'’][a-z0-9]+)*")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def as_tokens(text_or_tokens) -> list[str]:
    if isinstance(text_or_tokens, str):
        return tokenize(text_or_tokens)
    return list(text_or_tokens)


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def rouge_n_recall(candidate, reference, n: int = 2) -> float:
    """Clipped n-gram overlap divided by the reference n-gram count."""
    if n < 1:
        raise ValueError("n-gram order must be >= 1")
    ref = Counter(ngrams(as_tokens(reference), n))
    total = sum(ref.values())
    if total == 0:
        return 0.0
    cand = Counter(ngrams(as_tokens(candidate), n))
    return sum(min(c, cand[g]) for g, c in ref.items()) / total


def unigram_f1(a, b) -> float:
    a, b = as_tokens(a), as_tokens(b)
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    overlap = sum((Counter(a) & Counter(b)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(a)
    recall = overlap / len(b)
    return 2 * precision * recall / (precision + recall)


def flatten(sentences: Iterable[Sequence[str]]) -> list[str]:
    return [tok for sent in sentences for tok in sent]


def find_subsequence(haystack: Sequence[str], needle: Sequence[str]) -> int:
    """Index of the first contiguous occurrence of ``needle``, or -1."""
    k = len(needle)
    if k == 0:
        return 0
    for i in range(len(haystack) - k + 1):
        if list(haystack[i : i + k]) == list(needle):
            return i
    return -1
