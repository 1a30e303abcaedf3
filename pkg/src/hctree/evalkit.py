"""Retrieval metrics and paired significance statistics.

Per query: precision, recall, recall-weighted F-beta (beta = 4 by default)
and the combined Total score ``0.5 * expert + 2.5 * F``. Across methods:
paired differences against a baseline, with a one-tailed t-test and
Cohen's d for paired samples.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from scipy.special import betainc

from hctree.errors import (
    BadBeta,
    EmptyGold,
    EvalError,
    OutOfRange,
    QuerySetMismatch,
    TooFewSamples,
    ZeroVariance,
)

DEFAULT_BETA = 4.0
EXPERT_RANGE = (1.0, 5.0)


@dataclass(frozen=True)
class QueryJudgment:
    query_id: str
    gold_chunk_ids: frozenset
    retrieved_chunk_ids: frozenset
    expert_score: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "gold_chunk_ids", frozenset(self.gold_chunk_ids))
        object.__setattr__(self, "retrieved_chunk_ids", frozenset(self.retrieved_chunk_ids))
        if self.expert_score is not None and not EXPERT_RANGE[0] <= self.expert_score <= EXPERT_RANGE[1]:
            raise OutOfRange(f"query {self.query_id}: expert score {self.expert_score} outside 1..5")


def precision_recall(retrieved: Iterable, gold: Iterable) -> tuple[float, float]:
    retrieved, gold = set(retrieved), set(gold)
    if not gold:
        raise EmptyGold("gold set is empty")
    hit = len(retrieved & gold)
    precision = hit / len(retrieved) if retrieved else 0.0
    return precision, hit / len(gold)


def f_beta(p: float, r: float, beta: float = DEFAULT_BETA) -> float:
    """Weighted harmonic mean of precision and recall; beta > 1 favours recall."""
    if not beta > 0 or not math.isfinite(beta):
        raise BadBeta(f"beta must be a positive finite number, got {beta}")
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise OutOfRange(f"precision/recall must lie in [0, 1], got {p}, {r}")
    b2 = beta * beta
    denom = b2 * p + r
    if denom == 0.0:
        return 0.0
    return (1.0 + b2) * p * r / denom


def total_score(expert: float, f_adjusted: float) -> float:
    if not EXPERT_RANGE[0] <= expert <= EXPERT_RANGE[1]:
        raise OutOfRange(f"expert score {expert} outside [1, 5]")
    if not 0.0 <= f_adjusted <= 1.0:
        raise OutOfRange(f"F score {f_adjusted} outside [0, 1]")
    return 0.5 * expert + 2.5 * f_adjusted


def _mean_sd(diffs: Sequence[float]) -> tuple[float, float]:
    n = len(diffs)
    if n < 2:
        raise TooFewSamples(f"need at least 2 paired differences, got {n}")
    mean = math.fsum(diffs) / n
    var = math.fsum((x - mean) ** 2 for x in diffs) / (n - 1)
    sd = math.sqrt(var)
    if sd == 0.0:
        raise ZeroVariance("paired differences have zero variance")
    return mean, sd


def t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of Student's t, via the regularised incomplete beta."""
    tail = 0.5 * betainc(0.5 * df, 0.5, df / (df + t * t))
    return float(tail if t >= 0 else 1.0 - tail)


def paired_t(diffs: Sequence[float]) -> tuple[float, float, float]:
    """Return ``(mean difference, t, one-tailed p)`` for H1: mean > 0."""
    diffs = [float(x) for x in diffs]
    mean, sd = _mean_sd(diffs)
    n = len(diffs)
    t = mean / (sd / math.sqrt(n))
    return mean, t, t_sf(t, n - 1)


def cohens_d(diffs: Sequence[float]) -> float:
    mean, sd = _mean_sd([float(x) for x in diffs])
    return mean / sd


# ---------------------------------------------------------------------------
# reports

@dataclass
class QueryMetrics:
    query_id: str
    precision: float
    recall: float
    f_adjusted: float
    expert: float | None
    total: float | None


@dataclass
class Comparison:
    method: str
    baseline: str
    metric: str
    n: int
    mean_difference: float | None
    t: float | None = None
    p_one_tailed: float | None = None
    cohens_d: float | None = None
    note: str = ""

    @property
    def label(self) -> str:
        return f"{self.method} vs {self.baseline} ({self.metric.capitalize()} Score)"


@dataclass
class EvalReport:
    beta: float
    baseline: str
    methods: list[str]
    per_query: dict[str, list[QueryMetrics]]
    means: dict[str, dict[str, float | None]]
    comparisons: list[Comparison] = field(default_factory=list)
    differences: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "baseline": self.baseline,
            "methods": self.methods,
            "means": self.means,
            "comparisons": [
                {"comparison": c.label, "method": c.method, "baseline": c.baseline, "metric": c.metric,
                 "n": c.n, "mean_difference": c.mean_difference, "t_statistic": c.t,
                 "p_one_tailed": c.p_one_tailed, "cohens_d": c.cohens_d, "note": c.note}
                for c in self.comparisons
            ],
            "per_query": {
                m: [vars(q) for q in rows] for m, rows in self.per_query.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    def render_table(self) -> str:
        def fmt(x, digits=3):
            return "-" if x is None else f"{x:.{digits}f}"

        lines = [f"beta = {self.beta:g}, baseline = {self.baseline}", ""]
        head = ("Method", "Precision", "Recall", "F_adjusted", "Expert", "Total")
        rows = [head] + [
            (m, *(fmt(self.means[m][k]) for k in ("precision", "recall", "f_adjusted", "expert", "total")))
            for m in self.methods
        ]
        lines += _table(rows)
        lines.append("")
        head = ("Comparison", "Mean Difference", "t-statistic", "p-value (one-tailed)", "Cohen's d")
        rows = [head] + [
            (c.label, fmt(c.mean_difference), fmt(c.t, 2), fmt(c.p_one_tailed),
             fmt(c.cohens_d) if not c.note else c.note)
            for c in self.comparisons
        ]
        lines += _table(rows)
        return "\n".join(lines) + "\n"

    def differences_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["comparison", "metric", "query_id",
                                                 "baseline_value", "method_value", "difference"],
                                lineterminator="\n")
        writer.writeheader()
        for row in self.differences:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def _table(rows: list[Sequence[str]]) -> list[str]:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out = []
    for k, r in enumerate(rows):
        out.append(" | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        if k == 0:
            out.append("-+-".join("-" * w for w in widths))
    return out


def score_query(j: QueryJudgment, beta: float = DEFAULT_BETA) -> QueryMetrics:
    p, r = precision_recall(j.retrieved_chunk_ids, j.gold_chunk_ids)
    f = f_beta(p, r, beta)
    total = total_score(j.expert_score, f) if j.expert_score is not None else None
    return QueryMetrics(j.query_id, p, r, f, j.expert_score, total)


def _mean(values):
    values = list(values)
    if not values or any(v is None for v in values):
        return None
    return math.fsum(values) / len(values)


def compare_methods(runs: Mapping[str, Sequence[QueryJudgment]], baseline: str,
                    beta: float = DEFAULT_BETA, metrics: Sequence[str] = ("total", "expert")) -> EvalReport:
    """Score every method and compare each non-baseline method to ``baseline``.

    Differences are paired by query id (method minus baseline). Comparisons
    that cannot be tested (constant differences, missing expert scores) keep
    their mean difference and carry a note instead of statistics.
    """
    if baseline not in runs:
        raise EvalError(f"baseline method {baseline!r} not among {sorted(runs)}")
    ids = {}
    for method, judgments in runs.items():
        qids = [j.query_id for j in judgments]
        if len(set(qids)) != len(qids):
            raise EvalError(f"method {method!r} has duplicate query ids")
        ids[method] = set(qids)
    ref = ids[baseline]
    for method, qset in ids.items():
        if qset != ref:
            raise QuerySetMismatch(f"method {method!r} scored a different query set than {baseline!r}: "
                                   f"missing {sorted(ref - qset)[:5]}, extra {sorted(qset - ref)[:5]}")

    methods = [baseline] + [m for m in runs if m != baseline]
    per_query = {m: sorted((score_query(j, beta) for j in runs[m]), key=lambda q: q.query_id)
                 for m in methods}
    means = {
        m: {k: _mean(getattr(q, k) for q in rows)
            for k in ("precision", "recall", "f_adjusted", "expert", "total")}
        for m, rows in per_query.items()
    }

    comparisons, differences = [], []
    for metric in metrics:
        for method in methods[1:]:
            base_rows, rows = per_query[baseline], per_query[method]
            pairs = [(b.query_id, getattr(b, metric), getattr(r, metric)) for b, r in zip(base_rows, rows)]
            if any(b is None or v is None for _, b, v in pairs):
                comparisons.append(Comparison(method, baseline, metric, len(pairs), None,
                                              note="missing expert scores"))
                continue
            diffs = [v - b for _, b, v in pairs]
            label = Comparison(method, baseline, metric, 0, 0.0).label
            differences += [{"comparison": label, "metric": metric, "query_id": q,
                             "baseline_value": b, "method_value": v, "difference": v - b}
                            for q, b, v in pairs]
            mean = math.fsum(diffs) / len(diffs)
            comp = Comparison(method, baseline, metric, len(diffs), mean)
            try:
                _, comp.t, comp.p_one_tailed = paired_t(diffs)
                comp.cohens_d = cohens_d(diffs)
            except ZeroVariance:
                comp.note = "zero variance"
            except TooFewSamples:
                comp.note = "too few samples"
            comparisons.append(comp)
    return EvalReport(beta, baseline, methods, per_query, means, comparisons, differences)


def read_judgments(path: str | Path) -> dict[str, list[QueryJudgment]]:
    """Parse a judgments JSONL file into ``{method: [QueryJudgment, ...]}``."""
    runs: dict[str, list[QueryJudgment]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                j = QueryJudgment(str(obj["query_id"]), obj["gold"], obj["retrieved"], obj.get("expert"))
                method = str(obj["method"])
            except (ValueError, KeyError, TypeError) as exc:
                raise EvalError(f"{path}:{lineno}: bad judgment record ({exc})") from exc
            runs.setdefault(method, []).append(j)
    return runs
