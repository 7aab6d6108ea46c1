"""Corpus records, line-delimited IO and dataset statistics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cloze import Span
from .text import as_tokens, flatten, ngrams

DEFAULT_PARTITIONS = 10


class CorpusFormatError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass
class SummaryRecord:
    id: str
    source: list[list[str]]
    reference: list[list[str]]
    system_summary: list[list[str]] = field(default_factory=list)
    spans: list[Span] = field(default_factory=list)

    def __post_init__(self):
        if not self.source or not any(self.source):
            raise ValueError(f"record {self.id!r} has an empty source")
        if not self.reference or not any(self.reference):
            raise ValueError(f"record {self.id!r} has an empty reference")

    @classmethod
    def from_dict(cls, obj: dict) -> "SummaryRecord":
        def sentences(key, required=True):
            value = obj.get(key)
            if value is None:
                if required:
                    raise ValueError(f"missing field {key!r}")
                return []
            if isinstance(value, str) or not isinstance(value, list):
                raise ValueError(f"field {key!r} must be an array of sentences")
            return [as_tokens(s) for s in value]

        if "id" not in obj:
            raise ValueError("missing field 'id'")
        spans = []
        for s in obj.get("spans") or []:
            try:
                spans.append(Span(int(s["sentence"]), int(s["start"]), int(s["end"]), str(s["kind"])))
            except (KeyError, TypeError) as exc:
                raise ValueError(f"malformed span {s!r}") from exc
        return cls(
            id=str(obj["id"]),
            source=sentences("source"),
            reference=sentences("reference"),
            system_summary=sentences("system_summary", required=False),
            spans=spans,
        )


def parse_jsonl(lines: Iterable[str]) -> list[SummaryRecord]:
    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("each line must be a JSON object")
            records.append(SummaryRecord.from_dict(obj))
        except (json.JSONDecodeError, ValueError) as exc:
            raise CorpusFormatError(number, str(exc)) from None
    return records


def read_jsonl(path) -> list[SummaryRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_jsonl(fh)


def scores_csv(result) -> str:
    """``id,apes,apes_src`` rows followed by a ``corpus`` summary row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "apes", "apes_src", "questions", "flagged"])

    def fmt(x):
        return "" if x is None else f"{x:.6f}"

    for r in result.records:
        writer.writerow([r.id, fmt(r.apes), fmt(r.apes_src), len(r.questions), len(r.flagged)])
    writer.writerow(["corpus", fmt(result.apes), fmt(result.apes_src), sum(len(r.questions) for r in result.records), sum(len(r.flagged) for r in result.records)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Salient-bigram accumulation
# ---------------------------------------------------------------------------


def bigram_accumulation(doc: Sequence[str], reference: Sequence[str], partitions: int = DEFAULT_PARTITIONS) -> list[float]:
    """Fraction of unique reference bigrams seen in each growing document prefix.

    The document is cut into ``partitions`` equal token spans; point ``p``
    covers tokens ``[0, (p + 1) * len(doc) // partitions)``.
    """
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    if len(reference) < 2:
        raise ValueError("the accumulation curve is undefined for references shorter than two tokens")
    salient = set(ngrams(list(reference), 2))
    first_seen: dict[tuple[str, str], int] = {}
    for i, bg in enumerate(ngrams(list(doc), 2)):
        if bg in salient and bg not in first_seen:
            first_seen[bg] = i + 1  # index of the bigram's second token
    curve = []
    for p in range(1, partitions + 1):
        end = p * len(doc) // partitions
        seen = sum(1 for last in first_seen.values() if last < end)
        curve.append(seen / len(salient))
    return curve


def second_half_gain(curve: Sequence[float]) -> float:
    """Share of reference bigrams first encountered in the latter half of the document."""
    return curve[-1] - curve[len(curve) // 2 - 1] if len(curve) >= 2 else 0.0


@dataclass(frozen=True)
class CorpusStats:
    doc_count: int
    summary_words: float
    summary_sentences: float
    doc_words: float
    compression: float
    curve: tuple[float, ...]

    @property
    def second_half(self) -> float:
        return second_half_gain(self.curve)

    def as_lines(self) -> list[str]:
        return [
            f"docs={self.doc_count}",
            f"summary_words={self.summary_words:.1f}",
            f"summary_sentences={self.summary_sentences:.1f}",
            f"doc_words={self.doc_words:.1f}",
            f"compression={self.compression:.1f}",
            "bigram_curve=" + ",".join(f"{x:.4f}" for x in self.curve),
            f"second_half_gain={self.second_half:.4f}",
        ]


def corpus_stats(records: Sequence[SummaryRecord], partitions: int = DEFAULT_PARTITIONS) -> CorpusStats:
    """Per-record means of summary/document lengths, compression ratio and accumulation curve."""
    if not records:
        raise ValueError("corpus is empty")
    n = len(records)
    doc_words = [len(flatten(r.source)) for r in records]
    sum_words = [len(flatten(r.reference)) for r in records]
    curves = [
        bigram_accumulation(flatten(r.source), flatten(r.reference), partitions)
        for r in records
        if len(flatten(r.reference)) >= 2
    ]
    mean_curve = tuple(sum(c[p] for c in curves) / len(curves) for p in range(partitions)) if curves else ()
    return CorpusStats(
        doc_count=n,
        summary_words=sum(sum_words) / n,
        summary_sentences=sum(len(r.reference) for r in records) / n,
        doc_words=sum(doc_words) / n,
        compression=sum(d / s for d, s in zip(doc_words, sum_words)) / n,
        curve=mean_curve,
    )


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------

LAYOUTS = ("front", "even")
SENTENCE_LEN = 20


def synthetic_record(layout: str, doc_len: int, ref_len: int, rng: np.random.Generator, id: str = "0") -> SummaryRecord:
    """A record whose reference bigrams are planted in the document at controlled depths.

    Reference tokens ``r0 .. r{ref_len-1}`` are distinct, and each reference
    bigram is planted once as an adjacent pair among filler tokens that
    never occur in the reference, so no other salient bigram can form.
    ``front`` draws relative depths from Beta(1, 6), so most salient content
    sits early in the document. ``even`` draws them uniformly.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    if ref_len < 2 or doc_len < 1:
        raise ValueError("need ref_len >= 2 and doc_len >= 1")
    ref = [f"r{j}" for j in range(ref_len)]
    filler = [f"f{t}" for t in rng.integers(0, 500, size=doc_len)]
    depths = rng.beta(1.0, 6.0, size=ref_len - 1) if layout == "front" else rng.random(ref_len - 1)
    slots = np.minimum((depths * doc_len).astype(int), doc_len - 1)
    planted: dict[int, list[int]] = {}
    for j, slot in enumerate(slots):
        planted.setdefault(int(slot), []).append(j)
    doc: list[str] = []
    for pos, tok in enumerate(filler):
        for j in planted.get(pos, []):
            doc += [ref[j], ref[j + 1], tok]  # the filler after each pair blocks cross-pair bigrams
        doc.append(tok)
    source = [doc[i : i + SENTENCE_LEN] for i in range(0, len(doc), SENTENCE_LEN)]
    return SummaryRecord(id=id, source=source, reference=[ref], system_summary=[ref])


def synthetic_corpus(layout: str, docs: int = 50, doc_len: int = 400, ref_len: int = 21, seed: int = 0) -> list[SummaryRecord]:
    rng = np.random.default_rng(seed)
    return [synthetic_record(layout, doc_len, ref_len, rng, id=f"{layout}-{i}") for i in range(docs)]
