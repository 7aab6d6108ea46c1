"""Rule-based claim transforms for entailment training data.

The original sentence is the positive claim. Negatives come from toggling
a negation at the first finite verb, swapping an entity with another entity
from the same record, and swapping a number (or date) likewise.

The verb lexicon is deliberately small and closed: auxiliaries and modals
take or lose a following "not"; the listed main verbs are rewritten with
do-support ("rose" -> "did not rise").
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cloze import Span

NEGATION = "not"

AUXILIARIES = frozenset(
    "is are was were am will would can could shall should may might must has have had does do did".split()
)

# finite form -> (auxiliary, base form)
MAIN_VERBS = {
    "rose": ("did", "rise"),
    "fell": ("did", "fall"),
    "grew": ("did", "grow"),
    "increased": ("did", "increase"),
    "decreased": ("did", "decrease"),
    "declined": ("did", "decline"),
    "found": ("did", "find"),
    "reported": ("did", "report"),
    "said": ("did", "say"),
    "reduced": ("did", "reduce"),
    "improved": ("did", "improve"),
    "received": ("did", "receive"),
    "recommended": ("did", "recommend"),
    "approved": ("did", "approve"),
    "rises": ("does", "rise"),
    "falls": ("does", "fall"),
    "increases": ("does", "increase"),
    "decreases": ("does", "decrease"),
    "reduces": ("does", "reduce"),
    "improves": ("does", "improve"),
    "requires": ("does", "require"),
    "finds": ("does", "find"),
    "reports": ("does", "report"),
    "includes": ("does", "include"),
}

SWAP_GROUPS = {"entity_swap": ("entity",), "number_swap": ("number", "date")}


@dataclass(frozen=True)
class Claim:
    tokens: tuple[str, ...]
    label: str
    transform: str

    @property
    def positive(self) -> bool:
        return self.label == "positive"


def negate(tokens: Sequence[str]) -> list[str] | None:
    """Toggle negation at the first finite verb; None when no verb is recognised."""
    tokens = list(tokens)
    for i, tok in enumerate(tokens):
        if tok in AUXILIARIES:
            if i + 1 < len(tokens) and tokens[i + 1] == NEGATION:
                return tokens[: i + 1] + tokens[i + 2 :]
            return tokens[: i + 1] + [NEGATION] + tokens[i + 1 :]
        if tok in MAIN_VERBS:
            aux, base = MAIN_VERBS[tok]
            return tokens[:i] + [aux, NEGATION, base] + tokens[i + 1 :]
    return None


def _swap(tokens, spans, pool, kinds, rng) -> list[str] | None:
    targets = [s for s in spans if s.kind in kinds]
    rng_order = [targets[i] for i in rng.permutation(len(targets))] if targets else []
    for span in rng_order:
        original = tuple(tokens[span.start : span.end])
        candidates = sorted({tuple(t) for t, kind in pool if kind == span.kind and tuple(t) != original})
        if candidates:
            pick = candidates[int(rng.integers(len(candidates)))]
            return list(tokens[: span.start]) + list(pick) + list(tokens[span.end :])
    return None


def factcc_transforms(
    sentence: Sequence[str],
    spans: Sequence[Span],
    pool: Sequence[tuple[Sequence[str], str]],
    seed: int = 0,
) -> list[Claim]:
    """Labelled claims for one summary sentence.

    ``spans`` index into ``sentence`` (their ``sentence`` field is ignored);
    ``pool`` holds ``(tokens, kind)`` spans gathered from the whole record
    and supplies swap replacements. Transforms without a candidate are
    skipped.
    """
    tokens = list(sentence)
    for s in spans:
        if s.end > len(tokens):
            raise ValueError(f"span {s} lies outside the sentence")
    rng = np.random.default_rng(seed)
    claims = [Claim(tuple(tokens), "positive", "original")]
    negated = negate(tokens)
    if negated is not None:
        claims.append(Claim(tuple(negated), "negative", "negation"))
    for name, kinds in SWAP_GROUPS.items():
        swapped = _swap(tokens, spans, pool, kinds, rng)
        if swapped is not None:
            claims.append(Claim(tuple(swapped), "negative", name))
    return claims


def record_pool(reference: Sequence[Sequence[str]], spans: Sequence[Span]) -> list[tuple[list[str], str]]:
    """All labelled spans of a record as swap candidates."""
    return [(list(reference[s.sentence][s.start : s.end]), s.kind) for s in spans]
