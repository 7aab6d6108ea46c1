"""Lexical metrics, cloze-based faithfulness scoring and corpus analyses."""

from .cloze import (
    BLANK,
    DEFAULT_BUDGET,
    SPAN_KINDS,
    ApesResult,
    ClozeQuestion,
    ContextMatchAnswerer,
    QuestionScore,
    RecordScore,
    Span,
    apes_scores,
    build_questions,
    context_tokens,
    exact_match_answerer,
    greedy_context,
    make_cloze,
    resolve_overlaps,
    score_question,
)
from .corpus import (
    CorpusFormatError,
    CorpusStats,
    SummaryRecord,
    bigram_accumulation,
    corpus_stats,
    parse_jsonl,
    read_jsonl,
    scores_csv,
    second_half_gain,
    synthetic_corpus,
    synthetic_record,
)
from .factcc import Claim, factcc_transforms, negate, record_pool
from .text import find_subsequence, flatten, ngrams, rouge_n_recall, tokenize, unigram_f1

__all__ = [name for name in dir() if not name.startswith("_")]
