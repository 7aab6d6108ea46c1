"""Attended-cell and new-parameter accounting for every attention variant.

``measured`` cells come from building the pattern (or running the kernel,
for data-dependent patterns) and counting. ``formula`` cells are computed
independently by per-row interval arithmetic and are exact for the fixed
patterns; for random blocks, LSH and Sinkhorn they are upper bounds.
``bound`` is the asymptotic expression of the complexity table instantiated
with the same hyperparameters (window n(w+1), global 2ng, ...).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .kernels import CellCounter, LowRankSpec, LshSpec, SinkhornSpec, linformer_attention, lsh_attention, sinkhorn_attention
from .patterns import PatternSpec, build_mask
from .tensor import Tensor

BYTES_PER_CELL = 8


@dataclass(frozen=True)
class ComplexityReport:
    pattern: str
    n: int
    m: int
    measured_cells: int
    formula_cells: int
    bound_cells: int
    exact: bool
    new_params: int

    @property
    def bytes(self) -> int:
        return self.measured_cells * BYTES_PER_CELL

    @property
    def consistent(self) -> bool:
        if self.exact:
            return self.measured_cells == self.formula_cells
        return self.measured_cells <= self.formula_cells


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def _multiples(s: int, lo, hi):
    """Number of multiples of s in [lo, hi] (0 for empty intervals)."""
    lo = np.asarray(lo)
    hi = np.asarray(hi)
    count = hi // s - (lo - 1) // s
    return np.where(hi >= lo, count, 0)


def _interval_len(lo, hi):
    return np.maximum(np.asarray(hi) - np.asarray(lo) + 1, 0)


def window_cells(n: int, half: int) -> int:
    """Cells of a clipped band |i - j| <= half on an n x n grid."""
    if half >= n - 1:
        return n * n
    return n * (2 * half + 1) - half * (half + 1)


def fixed_pattern_cells(n: int, half: int | None, full_base: bool, g: int = 0, s: int = 0) -> int:
    """Exact cell count of band/full/empty base  U  g globals  U  stride-s columns."""
    i = np.arange(n)
    if full_base:
        wlo, whi = np.zeros(n, dtype=np.int64), np.full(n, n - 1)
    elif half is not None:
        wlo, whi = np.maximum(0, i - half), np.minimum(n - 1, i + half)
    else:
        wlo, whi = np.zeros(n, dtype=np.int64), np.full(n, -1)
    glo, ghi = 0, g - 1
    ilo, ihi = np.maximum(wlo, glo), np.minimum(whi, ghi)
    union = _interval_len(wlo, whi) + _interval_len(glo, ghi) - _interval_len(ilo, ihi)
    if s:
        covered = _multiples(s, wlo, whi) + _multiples(s, glo, ghi) - _multiples(s, ilo, ihi)
        union = union + math.ceil(n / s) - covered
    union = np.where(i < g, n, union)
    return int(union.sum())


def hepos_head_cells(m: int, n: int, s_h: int, head: int) -> int:
    return m * math.ceil((n - head % s_h) / s_h)


def hepos_total_cells(m: int, n: int, s_h: int, heads: int) -> int:
    return sum(hepos_head_cells(m, n, s_h, h) for h in range(heads))


def default_buckets(n: int, bucket_size: int) -> int:
    need = math.ceil(n / bucket_size)
    return 1 if need <= 1 else need + (need % 2)


def _half_width(spec: PatternSpec, n: int) -> int | None:
    if spec.kind == "window":
        return spec.w // 2
    if spec.kind == "adaptive_span":
        return int(math.floor(spec.span + spec.ramp))
    return None


def _formula_and_bound(spec: PatternSpec, n: int, m: int) -> tuple[int, int, bool]:
    kind = spec.kind
    if kind == "hepos":
        return hepos_head_cells(m, n, spec.s_h, spec.head), m * math.ceil(n / spec.s_h), True
    if kind == "linformer":
        return m * spec.k, m * spec.k, True
    if kind == "lsh":
        bound = spec.rounds * n * spec.bucket_size
        return bound, bound, False
    if kind == "sinkhorn":
        bound = 2 * n * spec.block_size
        return bound, bound, False
    if kind == "full" and m != n:
        return m * n, m * n, True
    half = _half_width(spec, n)
    g = spec.g or 0
    s = spec.s or 0
    formula = fixed_pattern_cells(n, half, kind == "full", g, s)
    if kind == "full":
        bound = n * n
    elif kind == "window":
        bound = n * (spec.w + 1)
    elif kind == "adaptive_span":
        widest = spec.max_span if spec.max_span is not None else spec.span
        bound = n * (2 * int(math.floor(widest + spec.ramp)) + 1)
    else:
        bound = 0
    if g:
        bound += 2 * n * g
    if s:
        bound += n * math.ceil(n / s)
    exact = True
    if spec.block:
        formula += n * spec.block
        bound += n * spec.block
        exact = False
    return formula, bound, exact


def new_params(spec: PatternSpec, n: int) -> int:
    if spec.kind == "linformer":
        return 2 * spec.k * n
    if spec.kind == "adaptive_span":
        return 1
    return 0


# ---------------------------------------------------------------------------
# Measurement
# ---------------------------------------------------------------------------


def _probe_inputs(m: int, n: int, seed: int, d: int = 8):
    rng = np.random.default_rng(seed)
    return (
        Tensor(rng.standard_normal((m, d))),
        Tensor(rng.standard_normal((n, d))),
        Tensor(rng.standard_normal((n, d))),
    )


def measure_cells(spec: PatternSpec, n: int, m: int, inputs=None) -> int:
    """Count cells by building the pattern; learned patterns run their kernel on probe inputs."""
    if not spec.learned:
        return build_mask(spec, n, m).cells
    m_eff = m if spec.kind == "linformer" else n
    Q, K, V = inputs if inputs is not None else _probe_inputs(m_eff, n, spec.seed)
    counter = CellCounter()
    if spec.kind == "linformer":
        linformer_attention(Q, K, V, LowRankSpec.random(spec.k, n, spec.seed), counter)
    elif spec.kind == "lsh":
        buckets = spec.n_buckets or default_buckets(n, spec.bucket_size)
        lsh_attention(Q, K, V, LshSpec(spec.rounds, spec.bucket_size, buckets, spec.seed), "average", counter)
    else:
        if n % spec.block_size:
            raise ParameterError(f"block size {spec.block_size} must divide n={n}")
        sinkhorn_attention(Q, K, V, SinkhornSpec.random(n, spec.block_size, spec.seed), counter)
    return counter.cells


def count_cells(pattern: PatternSpec, n: int, m: int | None = None, inputs=None) -> ComplexityReport:
    """Measured vs closed-form cells for one pattern at encoder length n (decoder length m)."""
    encdec = pattern.kind in ("hepos", "linformer") or (pattern.kind == "full" and m is not None and m != n)
    m_eff = (n if m is None else m) if encdec else n
    formula, bound, exact = _formula_and_bound(pattern, n, m_eff)
    measured = measure_cells(pattern, n, m_eff, inputs)
    return ComplexityReport(
        pattern=pattern.describe(),
        n=n,
        m=m_eff,
        measured_cells=measured,
        formula_cells=formula,
        bound_cells=bound,
        exact=exact,
        new_params=new_params(pattern, n),
    )


# ---------------------------------------------------------------------------
# Hyperparameter parity
# ---------------------------------------------------------------------------

PARITY_BUDGET = 256
AUGMENT_BUDGET = 128
PARITY_ROUNDS = 4


@dataclass(frozen=True)
class ParityConfig:
    """Hyperparameters of the comparable-memory setting; defaults satisfy parity at n=1024."""

    n: int = 1024
    w: int = 256
    max_span: int = 256
    k: int = 256
    rounds: int = 4
    bucket_size: int = 64
    block_size: int = 128
    g: int = 128
    s: int = 8
    r: int = 128
    s_h: int = 4
    extra: dict = field(default_factory=dict, compare=False)


def parity_violations(config: ParityConfig) -> list[str]:
    c = config
    problems = []
    sizes = {"w": c.w, "max_span": c.max_span, "k": c.k, "rounds*bucket_size": c.rounds * c.bucket_size, "2*block_size": 2 * c.block_size}
    for name, value in sizes.items():
        if value != PARITY_BUDGET:
            problems.append(f"{name}={value} != {PARITY_BUDGET}")
    if c.rounds != PARITY_ROUNDS:
        problems.append(f"rounds={c.rounds} != {PARITY_ROUNDS}")
    if c.g != AUGMENT_BUDGET:
        problems.append(f"g={c.g} != {AUGMENT_BUDGET}")
    if c.r != AUGMENT_BUDGET:
        problems.append(f"r={c.r} != {AUGMENT_BUDGET}")
    if c.s < 1 or math.ceil(c.n / c.s) != AUGMENT_BUDGET:
        problems.append(f"ceil(n/s)={math.ceil(c.n / c.s) if c.s >= 1 else 'undefined'} != {AUGMENT_BUDGET}")
    if c.k < 1 or c.n % c.k or c.s_h != c.n // c.k:
        problems.append(f"s_h={c.s_h} != n/k")
    return problems


def parity_check(config: ParityConfig) -> bool:
    return not parity_violations(config)


def parity_patterns(c: ParityConfig, seed: int = 0) -> list[PatternSpec]:
    """Encoder self-attention variants under the parity hyperparameters."""
    window = PatternSpec("window", w=c.w)
    # the span mask reaches z keys on each side, so a total width of max_span
    # (matching the window's w) is z = max_span // 2
    half = c.max_span // 2
    ada = PatternSpec("adaptive_span", span=half, max_span=half)
    return [
        PatternSpec("full"),
        window,
        ada,
        window.with_(g=c.g),
        window.with_(s=c.s),
        window.with_(block=c.r, seed=seed),
        ada.with_(g=c.g),
        ada.with_(s=c.s),
        ada.with_(block=c.r, seed=seed),
        PatternSpec("linformer", k=c.k, seed=seed),
        PatternSpec("lsh", rounds=c.rounds, bucket_size=c.bucket_size, seed=seed),
        PatternSpec("sinkhorn", block_size=c.block_size, seed=seed),
    ]


@dataclass
class BenchRow:
    label: str
    report: ComplexityReport | None
    error: str | None = None


def bench(config: ParityConfig, n_values, m: int | None = None, seed: int = 0) -> list[BenchRow]:
    rows: list[BenchRow] = []
    for n in n_values:
        mm = m if m is not None else n // 2
        specs = [("enc", p) for p in parity_patterns(config, seed)]
        specs += [
            ("encdec", PatternSpec("full")),
            ("encdec", PatternSpec("hepos", s_h=config.s_h, head=0)),
            ("encdec", PatternSpec("linformer", k=config.k, seed=seed)),
        ]
        for role, spec in specs:
            label = f"{role}:{spec.describe()}"
            try:
                report = count_cells(spec, n, mm if role == "encdec" else None)
                rows.append(BenchRow(label, report))
            except (ParameterError, ValueError) as exc:
                rows.append(BenchRow(label, None, str(exc)))
    return rows


CSV_FIELDS = ("pattern", "n", "m", "cells", "bytes", "new_params", "formula_cells", "bound_cells", "exact")


def _record(row: BenchRow) -> dict:
    r = row.report
    if r is None:
        return {"pattern": row.label, "n": "", "m": "", "cells": "error", "bytes": "", "new_params": "", "formula_cells": "", "bound_cells": "", "exact": row.error}
    return {
        "pattern": row.label,
        "n": r.n,
        "m": r.m,
        "cells": r.measured_cells,
        "bytes": r.bytes,
        "new_params": r.new_params,
        "formula_cells": r.formula_cells,
        "bound_cells": r.bound_cells,
        "exact": "yes" if r.exact else "bound",
    }


def to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(_record(row))
    return buf.getvalue()


def to_table(rows: list[BenchRow]) -> str:
    records = [_record(r) for r in rows]
    header = list(CSV_FIELDS)
    cells = [[str(rec[h]) for h in header] for rec in records]
    widths = [max(len(h), *(len(c[i]) for c in cells)) if cells else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(widths[i]) if i == 0 else h.rjust(widths[i]) for i, h in enumerate(header))]
    lines.append("  ".join("-" * w for w in widths))
    for c in cells:
        lines.append("  ".join(v.ljust(widths[i]) if i == 0 else v.rjust(widths[i]) for i, v in enumerate(c)))
    return "\n".join(lines) + "\n"
