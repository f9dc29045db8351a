"""Observer-agreement statistics: MAE matrices, ICC(2,1), one-way ANOVA.

The ratings model is readers x cases x readings (1 or 2), one table per
measurement kind. ICC is the two-way random-effects, absolute-agreement,
single-measurement form

    ICC(2,1) = (MSR - MSE) / (MSR + (k-1) MSE + (k/n) (MSC - MSE))

with n cases as rows and k readers as columns; it needs a complete table,
so cases with any missing cell for the requested reading are dropped. MAE
uses pairwise-complete observations instead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special

from .errors import BadInput, EmptyOverlap, Insufficient

RATING_KINDS = ("HC", "BPD", "AC", "FL", "GA", "EFW")
_CSV_HEADER = ["reader", "case", "reading", "kind", "value_cm"]


@dataclass(frozen=True)
class RatingsTable:
    """Measurements of one kind: values keyed by (reader, case, reading)."""

    readers: tuple[str, ...]
    cases: tuple[str, ...]
    values: dict[tuple[str, str, int], float] = field(default_factory=dict)

    def get(self, reader: str, case: str, reading: int) -> float | None:
        return self.values.get((reader, case, reading))

    @staticmethod
    def from_records(records: Sequence[tuple[str, str, int, float]]) -> "RatingsTable":
        readers: list[str] = []
        cases: list[str] = []
        values: dict[tuple[str, str, int], float] = {}
        for reader, case, reading, value in records:
            if reading not in (1, 2):
                raise BadInput(f"reading must be 1 or 2, got {reading}")
            key = (reader, case, reading)
            if key in values:
                raise BadInput(f"duplicate rating for {key}")
            values[key] = float(value)
            if reader not in readers:
                readers.append(reader)
            if case not in cases:
                cases.append(case)
        return RatingsTable(readers=tuple(readers), cases=tuple(cases), values=values)


def load_ratings_csv(path: str | Path) -> dict[str, RatingsTable]:
    """Parse a ratings CSV into one RatingsTable per measurement kind.

    Header must be exactly `reader,case,reading,kind,value_cm`; kind is one
    of HC, BPD, AC, FL, GA, EFW; decimal point, UTF-8.
    """
    p = Path(path)
    if not p.is_file():
        raise BadInput(f"ratings file not found: {p}")
    by_kind: dict[str, list[tuple[str, str, int, float]]] = {}
    with p.open(newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        try:
            header = next(rows)
        except StopIteration:
            raise BadInput(f"{p}: empty ratings file") from None
        if header != _CSV_HEADER:
            raise BadInput(f"{p}: header must be {','.join(_CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise BadInput(f"{p}:{lineno}: expected 5 columns, got {len(row)}")
            reader, case, reading_s, kind, value_s = row
            if kind not in RATING_KINDS:
                raise BadInput(f"{p}:{lineno}: unknown kind {kind!r}")
            try:
                reading = int(reading_s)
                value = float(value_s)
            except ValueError as exc:
                raise BadInput(f"{p}:{lineno}: {exc}") from exc
            by_kind.setdefault(kind, []).append((reader, case, reading, value))
    if not by_kind:
        raise BadInput(f"{p}: no rating rows")
    return {kind: RatingsTable.from_records(recs) for kind, recs in by_kind.items()}


def mae_matrix(t: RatingsTable, reference: str) -> dict[str, float]:
    """Mean absolute error of every reader against the reference reader.

    Averages |x_ref - x_reader| over all (case, reading) pairs both rated;
    the reference maps to exactly 0.0.
    """
    if reference not in t.readers:
        raise BadInput(f"reference reader {reference!r} not in table")
    out: dict[str, float] = {}
    for reader in t.readers:
        diffs = []
        for case in t.cases:
            for reading in (1, 2):
                a = t.get(reference, case, reading)
                b = t.get(reader, case, reading)
                if a is not None and b is not None:
                    diffs.append(abs(a - b))
        if not diffs:
            raise EmptyOverlap(f"no overlapping ratings between {reference!r} and {reader!r}")
        out[reader] = 0.0 if reader == reference else float(np.mean(diffs))
    return out


def _complete_matrix(t: RatingsTable, reading: int) -> np.ndarray:
    """Cases x readers matrix for one reading, dropping incomplete cases."""
    if reading not in (1, 2):
        raise BadInput(f"reading must be 1 or 2, got {reading}")
    rows = []
    for case in t.cases:
        vals = [t.get(r, case, reading) for r in t.readers]
        if all(v is not None for v in vals):
            rows.append(vals)
    if not rows:
        return np.empty((0, len(t.readers)))
    return np.asarray(rows, dtype=np.float64)


ICC_VARIANTS = ("2,1", "1,1", "3,1")


def icc(t: RatingsTable, reading: int, variant: str = "2,1") -> float:
    """Single-measurement intraclass correlation for one reading.

    The default and reference variant is ICC(2,1): two-way random effects,
    absolute agreement, single rater. The one-way ICC(1,1) and the two-way
    mixed consistency form ICC(3,1) are selectable for sensitivity checks;
    all three use the classic Shrout-Fleiss mean-squares decomposition.
    """
    if variant not in ICC_VARIANTS:
        raise BadInput(f"icc variant must be one of {ICC_VARIANTS}, got {variant!r}")
    x = _complete_matrix(t, reading)
    n, k = x.shape
    if n < 2 or k < 2:
        raise Insufficient(f"ICC needs >= 2 complete cases and >= 2 readers, got {n}x{k}")
    grand = x.mean()
    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    msr = k * float(((row_means - grand) ** 2).sum()) / (n - 1)
    msc = n * float(((col_means - grand) ** 2).sum()) / (k - 1)
    residual = x - row_means[:, None] - col_means[None, :] + grand
    mse = float((residual**2).sum()) / ((n - 1) * (k - 1))
    if variant == "1,1":
        msw = float(((x - row_means[:, None]) ** 2).sum()) / (n * (k - 1))
        num, den = msr - msw, msr + (k - 1) * msw
    elif variant == "3,1":
        num, den = msr - mse, msr + (k - 1) * mse
    else:
        num = msr - mse
        den = msr + (k - 1) * mse + (k / n) * (msc - mse)
    if den == 0.0:
        # every cell identical: agreement is trivially perfect
        return 1.0
    return num / den


class AnovaResult(NamedTuple):
    f: float
    df: tuple[int, int]
    p: float


def anova_oneway(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """Classic one-way ANOVA F test with the upper-tail p-value.

    p comes from the regularized incomplete beta identity
    sf(F; d1, d2) = I_{d2/(d2 + d1 F)}(d2/2, d1/2). The all-identical
    degenerate table (zero between AND within variance) is defined as
    F = 0, p = 1; zero within-variance with distinct group means gives
    F = inf, p = 0.
    """
    k = len(groups)
    if k < 2:
        raise Insufficient(f"ANOVA needs >= 2 groups, got {k}")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if any(len(g) < 2 for g in arrays):
        raise Insufficient("every group needs >= 2 values")
    ns = [len(g) for g in arrays]
    total_n = sum(ns)
    df1, df2 = k - 1, total_n - k
    grand = float(np.concatenate(arrays).mean())
    ssb = sum(n * (float(g.mean()) - grand) ** 2 for n, g in zip(ns, arrays))
    ssw = sum(float(((g - g.mean()) ** 2).sum()) for g in arrays)
    if ssw == 0.0:
        if ssb == 0.0:
            return AnovaResult(f=0.0, df=(df1, df2), p=1.0)
        return AnovaResult(f=math.inf, df=(df1, df2), p=0.0)
    f = (ssb / df1) / (ssw / df2)
    p = float(special.betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f)))
    return AnovaResult(f=f, df=(df1, df2), p=min(max(p, 0.0), 1.0))


def intra_observer(t: RatingsTable, reader: str) -> tuple[float, float]:
    """Mean and sample SD of |reading1 - reading2| across cases for one reader."""
    if reader not in t.readers:
        raise BadInput(f"reader {reader!r} not in table")
    diffs = []
    for case in t.cases:
        a = t.get(reader, case, 1)
        b = t.get(reader, case, 2)
        if a is not None and b is not None:
            diffs.append(abs(a - b))
    if not diffs:
        raise Insufficient(f"reader {reader!r} has no case with both readings")
    mean = float(np.mean(diffs))
    sd = float(np.std(diffs, ddof=1)) if len(diffs) > 1 else 0.0
    return mean, sd
