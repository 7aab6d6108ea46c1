"""Command-line entry point: mask, verify, bench, train, eval.

Exit status: 0 success, 1 a check or parse failure, 2 a usage error.
The default seed comes from the HEPOS_SEED environment variable (else 0).
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Sequence

import numpy as np

from . import ledger, render, verify
from .errors import HeposError, TrainingError
from .evalkit import (
    ContextMatchAnswerer,
    CorpusFormatError,
    apes_scores,
    build_questions,
    corpus_stats,
    read_jsonl,
    scores_csv,
)
from .kernels import LshSpec, SinkhornSpec, lsh_mask, sinkhorn_mask
from .ledger import ParityConfig, default_buckets
from .patterns import FIXED_KINDS, KINDS, PatternSpec, build_mask, hepos_mask
from .tensor import Tensor
from .toy import EOS, TASKS, beam_decode, config_for_task, synth_task, train
from .toy.model import ENCDEC_KINDS
from .toy.train import DEFAULT_LR

SEED_ENV = "HEPOS_SEED"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {value}")
    return value


def _nonneg(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {value}")
    return value


def _pos_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hepos", description="Attention sparsity patterns, kernels and evaluation tools.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seed_flag(p):
        p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default: ${SEED_ENV} or 0)")

    def out_flag(p):
        p.add_argument("--out", default=None, help="output path (default: stdout)")

    p = sub.add_parser("mask", help="render an attention mask")
    p.add_argument("--pattern", required=True, choices=KINDS)
    p.add_argument("--n", type=_positive, required=True, help="number of keys (encoder length)")
    p.add_argument("--m", type=_positive, default=None, help="number of queries (hepos / full only)")
    p.add_argument("--w", type=_positive, default=None, help="window width (even)")
    p.add_argument("--span", type=float, default=None, help="adaptive span z")
    p.add_argument("--ramp", type=_positive, default=32, help="adaptive span ramp R")
    p.add_argument("--g", type=_nonneg, default=None, help="global tokens")
    p.add_argument("--s", type=_positive, default=None, help="stride")
    p.add_argument("--r", type=_positive, default=None, help="random block size")
    p.add_argument("--sh", type=_positive, default=None, help="HEPOS stride s_h")
    p.add_argument("--heads", type=_positive, default=None, help="HEPOS heads (one panel each)")
    p.add_argument("--rounds", type=_positive, default=2, help="LSH hashing rounds")
    p.add_argument("--bucket-size", type=_positive, default=4, help="LSH chunk size")
    p.add_argument("--block-size", type=_positive, default=None, help="Sinkhorn block size")
    p.add_argument("--format", choices=("text", "csv", "pgm"), default="text")
    seed_flag(p)
    out_flag(p)

    p = sub.add_parser("verify", help="kernel-vs-oracle and gradient checks")
    p.add_argument("--fault", action="store_true", help="perturb one oracle mask bit (the suite must then fail)")
    p.add_argument("--seeds", type=_positive, default=10, help="seeds per oracle check")
    seed_flag(p)
    out_flag(p)

    p = sub.add_parser("bench", help="attended-cell ledger for all variants")
    d = ParityConfig()
    p.add_argument("--n", type=_positive, nargs="+", default=[d.n])
    p.add_argument("--m", type=_positive, default=None, help="decoder length (default n/2)")
    p.add_argument("--w", type=_positive, default=d.w)
    p.add_argument("--span", type=_positive, default=d.max_span, help="adaptive max span")
    p.add_argument("--k", type=_positive, default=d.k)
    p.add_argument("--rounds", type=_positive, default=d.rounds)
    p.add_argument("--bucket-size", type=_positive, default=d.bucket_size)
    p.add_argument("--block-size", type=_positive, default=d.block_size)
    p.add_argument("--g", type=_nonneg, default=d.g)
    p.add_argument("--s", type=_positive, default=d.s)
    p.add_argument("--r", type=_positive, default=d.r)
    p.add_argument("--sh", type=_positive, default=d.s_h)
    p.add_argument("--strict", action="store_true", help="exit 1 when the parity check fails")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    seed_flag(p)
    out_flag(p)

    p = sub.add_parser("train", help="train the toy encoder-decoder")
    p.add_argument("--task", choices=TASKS, default="copy")
    p.add_argument("--pattern", choices=ENCDEC_KINDS, default="full", help="encoder-decoder attention")
    p.add_argument("--w", type=_positive, default=None, help="windowed encoder self-attention (default full)")
    p.add_argument("--sh", type=_positive, default=2)
    p.add_argument("--k", type=_positive, default=4, help="Linformer projected length")
    p.add_argument("--heads", type=_positive, default=4)
    p.add_argument("--length", type=_positive, default=16)
    p.add_argument("--vocab", type=_positive, default=16)
    p.add_argument("--steps", type=_nonneg, default=2000)
    p.add_argument("--lr", type=_pos_float, default=DEFAULT_LR)
    p.add_argument("--beam", type=_positive, default=4)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--decode", type=_nonneg, default=8, help="held-out sources to beam-decode after training")
    seed_flag(p)
    out_flag(p)

    p = sub.add_parser("eval", help="APES / APES_src scores and corpus statistics")
    p.add_argument("--in", dest="input", required=True, help="line-delimited JSON corpus")
    p.add_argument("--budget", type=_positive, default=5, help="context sentences")
    p.add_argument("--keep-unanswerable", action="store_true", help="keep questions whose answer is absent from the context")
    seed_flag(p)
    out_flag(p)
    return parser


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _emit(data: str | bytes, out: str | None) -> None:
    raw = data.encode("utf-8") if isinstance(data, str) else data
    if out is None:
        sys.stdout.buffer.write(raw)
        sys.stdout.flush()
    else:
        with open(out, "wb") as fh:
            fh.write(raw)


def _note(text: str) -> None:
    print(text, file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _mask_panels(args, seed: int):
    n = args.n
    kind = args.pattern
    if kind == "hepos":
        if args.sh is None:
            raise UsageError("--pattern hepos needs --sh")
        m = args.m or n
        heads = args.heads or args.sh
        masks = [hepos_mask(m, n, h, args.sh) for h in range(heads)]
        return masks, [f"head {h} (offset {h % args.sh}, stride {args.sh})" for h in range(heads)]
    if args.heads is not None:
        raise UsageError("--heads only applies to --pattern hepos")
    if kind == "linformer":
        raise UsageError("linformer projects keys to k rows and has no token-level mask")
    if kind == "lsh":
        Q = Tensor(np.random.default_rng(seed).standard_normal((n, 8)))
        spec = LshSpec(args.rounds, args.bucket_size, default_buckets(n, args.bucket_size), seed)
        return [lsh_mask(Q, spec)], [f"lsh rounds={args.rounds} bucket_size={args.bucket_size} seed={seed}"]
    if kind == "sinkhorn":
        if args.block_size is None:
            raise UsageError("--pattern sinkhorn needs --block-size")
        if n % args.block_size:
            raise UsageError(f"--block-size {args.block_size} must divide --n {n}")
        spec = SinkhornSpec.random(n, args.block_size, seed)
        return [sinkhorn_mask(n, spec)], [f"sinkhorn block_size={args.block_size} seed={seed}"]
    assert kind in FIXED_KINDS
    spec = PatternSpec(kind, w=args.w, span=args.span, ramp=args.ramp, g=args.g, s=args.s, block=args.r, seed=seed)
    if args.m is not None and args.m != n and kind != "full":
        raise UsageError("--m differs from --n only for hepos or full patterns")
    return [build_mask(spec, n, args.m)], [spec.describe()]


def cmd_mask(args, seed: int) -> int:
    masks, titles = _mask_panels(args, seed)
    if args.format == "pgm":
        _emit(render.pgm_bytes(masks), args.out)
    elif args.format == "csv":
        _emit(render.mask_csv(masks), args.out)
    elif len(masks) == 1:
        _emit(render.text_grid(masks[0]), args.out)
    else:
        _emit(render.text_panels(masks, titles), args.out)
    return EXIT_OK


def cmd_verify(args, seed: int) -> int:
    report = verify.run_all(seed=seed, seeds=args.seeds, fault=args.fault)
    _emit(report.text(), args.out)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_bench(args, seed: int) -> int:
    config = ParityConfig(
        n=args.n[0],
        w=args.w,
        max_span=args.span,
        k=args.k,
        rounds=args.rounds,
        bucket_size=args.bucket_size,
        block_size=args.block_size,
        g=args.g,
        s=args.s,
        r=args.r,
        s_h=args.sh,
    )
    rows = ledger.bench(config, args.n, args.m, seed)
    body = ledger.to_csv(rows) if args.format == "csv" else ledger.to_table(rows)
    problems = ledger.parity_violations(config)
    verdict = "parity: ok" if not problems else "parity: violated (" + "; ".join(problems) + ")"
    if args.format == "csv":
        _emit(body, args.out)
        _note(verdict)
    else:
        _emit(body + verdict + "\n", args.out)
    if any(r.report is None for r in rows):
        _note("some variants could not be measured at this size; see the error rows")
    return EXIT_FAIL if (args.strict and problems) else EXIT_OK


def cmd_train(args, seed: int) -> int:
    encoder = PatternSpec("window", w=args.w) if args.w else PatternSpec()
    config = config_for_task(
        args.task,
        args.length,
        vocab=args.vocab,
        heads=args.heads,
        encoder=encoder,
        encdec=args.pattern,
        s_h=args.sh,
        k=args.k,
        seed=seed,
    )
    try:
        run = train(config, args.task, args.steps, args.lr)
    except TrainingError as exc:
        _note(f"training failed: {exc}")
        return EXIT_FAIL
    _emit(run.log_csv(), args.out)
    _note(f"final_token_accuracy={run.final_accuracy:.6f}")
    _note("cells_per_example " + " ".join(f"{k}={v}" for k, v in run.cells.items()))
    if args.decode:
        pairs = synth_task(args.task, args.length, args.vocab, args.decode, [seed, 2, 0])
        exact = 0
        for src, tgt in pairs:
            result = beam_decode(run.model, src, beam=args.beam, alpha=args.alpha)
            exact += result.tokens == tuple(tgt) + (EOS,)
        _note(f"beam={args.beam} alpha={args.alpha} exact_sequences={exact}/{len(pairs)}")
    return EXIT_OK


def cmd_eval(args, seed: int) -> int:
    try:
        records = read_jsonl(args.input)
    except CorpusFormatError as exc:
        _note(f"{args.input}: {exc}")
        return EXIT_FAIL
    except OSError as exc:
        _note(f"cannot read corpus: {exc}")
        return EXIT_FAIL
    if not records:
        _note(f"{args.input}: corpus is empty")
        return EXIT_FAIL
    questions = [build_questions(r, args.budget, not args.keep_unanswerable) for r in records]
    result = apes_scores(records, questions, ContextMatchAnswerer())
    stats = corpus_stats(records)
    text = scores_csv(result) + "\n" + "\n".join(f"# {line}" for line in stats.as_lines()) + "\n"
    _emit(text, args.out)
    return EXIT_OK


COMMANDS = {"mask": cmd_mask, "verify": cmd_verify, "bench": cmd_bench, "train": cmd_train, "eval": cmd_eval}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        seed = args.seed if args.seed is not None else default_seed()
        return COMMANDS[args.command](args, seed)
    except UsageError as exc:
        _note(f"hepos {args.command}: {exc}")
        return EXIT_USAGE
    except (HeposError, ValueError) as exc:
        _note(f"hepos {args.command}: {exc}")
        return EXIT_USAGE
    except OSError as exc:
        _note(f"hepos {args.command}: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
