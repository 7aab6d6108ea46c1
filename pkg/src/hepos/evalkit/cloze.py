"""Cloze-question construction and APES / APES_src scoring."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .text import find_subsequence, flatten, ngrams, unigram_f1

BLANK = "<blank>"
SPAN_KINDS = ("entity", "event", "date", "number")
DEFAULT_BUDGET = 5

Answerer = Callable[[Sequence[str], Sequence[str]], list[str]]


@dataclass(frozen=True)
class Span:
    """Token range ``[start, end)`` of sentence ``sentence`` with an extractor label."""

    sentence: int
    start: int
    end: int
    kind: str

    def __post_init__(self):
        if self.kind not in SPAN_KINDS:
            raise ValueError(f"span kind must be one of {SPAN_KINDS}, got {self.kind!r}")
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span range [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "Span") -> bool:
        return self.sentence == other.sentence and self.start < other.end and other.start < self.end


@dataclass
class ClozeQuestion:
    question: list[str]
    answer: list[str]
    kind: str = "entity"
    sentence: int = 0
    context: list[str] = field(default_factory=list)
    a_cxt: list[str] | None = None

    def __post_init__(self):
        if self.question.count(BLANK) != 1:
            raise ValueError("a cloze question has exactly one blank")
        if not self.answer:
            raise ValueError("the gold answer must be non-empty")

    @property
    def a_ref(self) -> list[str]:
        return self.answer


# ---------------------------------------------------------------------------
# Context selection
# ---------------------------------------------------------------------------


def _bigram_recall(selected_counts: Counter, ref: Counter, ref_total: int) -> float:
    return sum(min(c, selected_counts[g]) for g, c in ref.items()) / ref_total


def greedy_context(source_sentences: Sequence[Sequence[str]], reference: Sequence[str], budget: int = DEFAULT_BUDGET) -> list[int]:
    """Indices of source sentences picked greedily by ROUGE-2 recall gain, in pick order.

    The selection's bigrams are the multiset union of each picked sentence's
    bigrams. Stops at ``budget`` sentences or when no sentence improves
    recall; ties go to the lowest index.
    """
    if budget < 1:
        raise ValueError("context budget must be >= 1")
    ref = Counter(ngrams(list(reference), 2))
    ref_total = sum(ref.values())
    if ref_total == 0 or not source_sentences:
        return []
    sent_counts = [Counter(ngrams(list(s), 2)) for s in source_sentences]
    chosen: list[int] = []
    current = Counter()
    score = 0.0
    while len(chosen) < budget:
        best, best_gain = -1, 0.0
        for i, counts in enumerate(sent_counts):
            if i in chosen:
                continue
            gain = _bigram_recall(current + counts, ref, ref_total) - score
            if gain > best_gain:
                best, best_gain = i, gain
        if best < 0:
            break
        chosen.append(best)
        current = current + sent_counts[best]
        score += best_gain
    return chosen


def context_tokens(source_sentences: Sequence[Sequence[str]], selected: Sequence[int]) -> list[str]:
    """Selected sentences concatenated in source order."""
    return flatten(source_sentences[i] for i in sorted(selected))


# ---------------------------------------------------------------------------
# Question construction
# ---------------------------------------------------------------------------


def resolve_overlaps(spans: Sequence[Span]) -> list[Span]:
    """Keep the longest of overlapping spans within a sentence; result sorted by position."""
    kept: list[Span] = []
    for span in sorted(spans, key=lambda s: (-len(s), s.sentence, s.start)):
        if not any(span.overlaps(k) for k in kept):
            kept.append(span)
    return sorted(kept, key=lambda s: (s.sentence, s.start))


def make_cloze(
    reference: Sequence[Sequence[str]],
    spans: Sequence[Span],
    context: Sequence[str] | None = None,
    require_in_context: bool = True,
) -> list[ClozeQuestion]:
    """One question per (non-overlapping) span, blanking the span in its reference sentence.

    With a ``context``, questions whose answer does not occur in it as a
    contiguous token run are dropped (unless ``require_in_context`` is off).
    """
    questions = []
    for span in resolve_overlaps(spans):
        if span.sentence >= len(reference) or span.end > len(reference[span.sentence]):
            raise ValueError(f"span {span} lies outside the reference")
        sent = list(reference[span.sentence])
        answer = sent[span.start : span.end]
        if context is not None and require_in_context and find_subsequence(context, answer) < 0:
            continue
        question = sent[: span.start] + [BLANK] + sent[span.end :]
        questions.append(ClozeQuestion(question, answer, span.kind, span.sentence, list(context or [])))
    return questions


# ---------------------------------------------------------------------------
# Answerers
# ---------------------------------------------------------------------------


class ContextMatchAnswerer:
    """Deterministic stand-in for a span-extraction QA model.

    Fills the blank with the passage span whose surrounding tokens best
    match the question's left and right context. Returns [] when no passage
    position shares any context token with the question.
    """

    def __init__(self, max_answer_len: int = 8):
        self.max_answer_len = max_answer_len

    def __call__(self, question: Sequence[str], passage: Sequence[str]) -> list[str]:
        b = list(question).index(BLANK)
        left, right = list(question[:b]), list(question[b + 1 :])
        passage = list(passage)
        best = (0, 0, 0)
        best_span = (0, 0)
        for start in range(len(passage)):
            lscore = 0
            while lscore < len(left) and lscore < start and passage[start - 1 - lscore] == left[-1 - lscore]:
                lscore += 1
            for end in range(start + 1, min(len(passage), start + self.max_answer_len) + 1):
                rscore = 0
                while rscore < len(right) and end + rscore < len(passage) and passage[end + rscore] == right[rscore]:
                    rscore += 1
                if right and rscore == 0:
                    continue
                if not right and end != min(len(passage), start + 1):
                    continue
                key = (lscore + rscore, -start, -(end - start))
                if key > best:
                    best, best_span = key, (start, end)
        if best[0] == 0:
            return []
        return passage[best_span[0] : best_span[1]]


def exact_match_answerer(question: Sequence[str], passage: Sequence[str]) -> list[str]:
    return ContextMatchAnswerer()(question, passage)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


@dataclass
class QuestionScore:
    a_sys: list[str]
    a_cxt: list[str]
    apes: float
    apes_src: float
    failed: bool = False


@dataclass
class RecordScore:
    id: str
    apes: float | None
    apes_src: float | None
    questions: list[QuestionScore]

    @property
    def flagged(self) -> list[int]:
        return [i for i, q in enumerate(self.questions) if q.failed]


@dataclass
class ApesResult:
    records: list[RecordScore]

    @property
    def scored(self) -> list[RecordScore]:
        return [r for r in self.records if r.apes is not None]

    @property
    def apes(self) -> float | None:
        s = self.scored
        return sum(r.apes for r in s) / len(s) if s else None

    @property
    def apes_src(self) -> float | None:
        s = self.scored
        return sum(r.apes_src for r in s) / len(s) if s else None


def score_question(q: ClozeQuestion, summary: Sequence[str], answerer: Answerer) -> QuestionScore:
    try:
        a_sys = list(answerer(q.question, summary))
        a_cxt = list(q.a_cxt) if q.a_cxt is not None else list(answerer(q.question, q.context))
    except Exception:
        return QuestionScore([], [], 0.0, 0.0, failed=True)
    return QuestionScore(a_sys, a_cxt, unigram_f1(a_sys, q.answer), unigram_f1(a_sys, a_cxt))


def apes_scores(records, questions: Sequence[Sequence[ClozeQuestion]], answerer: Answerer) -> ApesResult:
    """APES (answer vs gold) and APES_src (answer vs source-context answer) per record and corpus.

    ``records`` provide ``id`` and ``system_summary`` (sentence token lists);
    ``questions[i]`` belong to ``records[i]``. Record scores average their
    questions; the corpus score averages records that have questions.
    """
    if len(records) != len(questions):
        raise ValueError("need one question list per record")
    out = []
    for record, qs in zip(records, questions):
        summary = flatten(record.system_summary)
        scored = [score_question(q, summary, answerer) for q in qs]
        if scored:
            apes = sum(s.apes for s in scored) / len(scored)
            apes_src = sum(s.apes_src for s in scored) / len(scored)
        else:
            apes = apes_src = None
        out.append(RecordScore(record.id, apes, apes_src, scored))
    return ApesResult(out)


def build_questions(record, budget: int = DEFAULT_BUDGET, require_in_context: bool = True) -> list[ClozeQuestion]:
    """Greedy source context plus cloze questions from the record's reference spans."""
    selected = greedy_context(record.source, flatten(record.reference), budget)
    ctx = context_tokens(record.source, selected)
    return make_cloze(record.reference, record.spans, ctx, require_in_context)
