"""Answer scoring, success labeling, Pareto frontiers, and the study
statistics: intervention distributions, verifier confusion rates on audit
runs, and solve-set overlaps.

All functions here are pure over immutable inputs.
"""

from __future__ import annotations

import re
import statistics
import string
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Mapping, Sequence

from .core import AUDIT_ARCHITECTURES, INTERVENE, TrajectoryRecord

SUCCESS_F1_THRESHOLD = 0.5


class NoGoldError(Exception):
    pass


class NonAuditRecordError(Exception):
    pass


class ArityUnsupportedError(Exception):
    pass


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> str:
    """Standard QA normalization: lowercase, strip punctuation, drop the
    articles a/an/the as whole tokens, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, golds: Sequence[str]) -> int:
    if not golds:
        raise NoGoldError("exact_match needs at least one gold answer")
    normalized = normalize_answer(pred)
    return int(any(normalized == normalize_answer(g) for g in golds))


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> Fraction:
    if not pred_tokens or not gold_tokens:
        return Fraction(0)
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return Fraction(0)
    precision = Fraction(overlap, len(pred_tokens))
    recall = Fraction(overlap, len(gold_tokens))
    return 2 * precision * recall / (precision + recall)


def rouge1_f1(pred: str, golds: Sequence[str]) -> float:
    """Unigram multiset-overlap F1 over normalized tokens, max over golds.

    Computed in exact rational arithmetic and converted to float at the
    end, so reference values like 0.8 come out exactly."""
    if not golds:
        raise NoGoldError("rouge1_f1 needs at least one gold answer")
    pred_tokens = normalize_answer(pred).split()
    best = max(_f1(pred_tokens, normalize_answer(g).split()) for g in golds)
    return float(best)


def task_success(benchmark_tag: str, record: TrajectoryRecord, golds: Sequence[str]) -> bool:
    """Success label: abnormal termination is always a failure; QA
    benchmarks require F1 strictly above 0.5; generic tasks require exact
    match."""
    if record.termination != "finished" or record.final_answer is None:
        return False
    if not golds:
        raise NoGoldError("task_success needs gold answers for finished runs")
    if benchmark_tag in ("hotpotqa", "fanoutqa"):
        return rouge1_f1(record.final_answer, golds) > SUCCESS_F1_THRESHOLD
    return exact_match(record.final_answer, golds) == 1


def trajectory_score(benchmark_tag: str, record: TrajectoryRecord, golds: Sequence[str]) -> float:
    """Raw score reported alongside the success label: F1 for QA
    benchmarks, exact match for generic tasks, 0 for abnormal runs."""
    if record.termination != "finished" or record.final_answer is None:
        return 0.0
    if not golds:
        raise NoGoldError("trajectory_score needs gold answers for finished runs")
    if benchmark_tag in ("hotpotqa", "fanoutqa"):
        return rouge1_f1(record.final_answer, golds)
    return float(exact_match(record.final_answer, golds))


@dataclass(frozen=True)
class ConfigPoint:
    """One configuration on a cost/performance plane. The cost axis is
    dollars or joules depending on the analysis."""

    label: str
    cost: float
    performance: float

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError("cost must be >= 0")
        if not 0.0 <= self.performance <= 1.0:
            raise ValueError("performance must lie in [0, 1]")


def pareto_frontier(points: Sequence[ConfigPoint]) -> list[ConfigPoint]:
    """All points not dominated by any other (dominated: some q has
    cost <= and performance >= with at least one strict). Exact duplicates
    are all retained. Output sorted by cost ascending.

    Sort-and-sweep, O(n log n); the test suite checks it against a
    brute-force dominance filter.
    """
    ordered = sorted(points, key=lambda p: (p.cost, -p.performance))
    frontier: list[ConfigPoint] = []
    best_performance: float | None = None
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].cost == ordered[i].cost:
            j += 1
        group_best = max(p.performance for p in ordered[i:j])
        if best_performance is None or group_best > best_performance:
            frontier.extend(p for p in ordered[i:j] if p.performance == group_best)
            best_performance = group_best
        i = j
    return sorted(frontier, key=lambda p: (p.cost, p.performance, p.label))


@dataclass(frozen=True)
class ConfusionReport:
    """Verifier audit counts. Rates are normalized by the audited total;
    the conditional variants normalize FN by failures and FP by successes
    (both are reported because either convention is defensible)."""

    tp: int
    fp: int
    tn: int
    fn: int
    fn_rate: float
    fp_rate: float
    fn_rate_conditional: float
    fp_rate_conditional: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def verifier_confusion(
    audited: Sequence[tuple[TrajectoryRecord, bool]]
) -> ConfusionReport:
    """Classify audit-mode trajectories against ground-truth outcomes.

    Positive = the verifier intervened at least once; the condition being
    detected is failure. So: FN = failure with all-CONTINUE calls, FP =
    success with at least one INTERVENE.
    """
    tp = fp = tn = fn = 0
    for record, success in audited:
        if record.architecture not in AUDIT_ARCHITECTURES:
            raise NonAuditRecordError(
                f"record {record.task_id} is {record.architecture}, not an audit run"
            )
        intervened = any(
            call.decision.verdict == INTERVENE for call in record.supervisor_calls
        )
        if success and intervened:
            fp += 1
        elif success:
            tn += 1
        elif intervened:
            tp += 1
        else:
            fn += 1
    total = tp + fp + tn + fn
    failures = tp + fn
    successes = fp + tn
    return ConfusionReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        fn_rate=fn / total if total else 0.0,
        fp_rate=fp / total if total else 0.0,
        fn_rate_conditional=fn / failures if failures else 0.0,
        fp_rate_conditional=fp / successes if successes else 0.0,
    )


@dataclass(frozen=True)
class InterventionHistogram:
    """Empirical distribution of applied interventions per trajectory."""

    counts: Mapping[int, int]
    quartiles: tuple[float, float, float] | None

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def intervention_histogram(records: Sequence[TrajectoryRecord]) -> InterventionHistogram:
    data = sorted(record.applied_interventions() for record in records)
    counts = dict(sorted(Counter(data).items()))
    if not data:
        quartiles = None
    elif len(data) == 1:
        value = float(data[0])
        quartiles = (value, value, value)
    else:
        q1, q2, q3 = statistics.quantiles(data, n=4, method="inclusive")
        quartiles = (q1, q2, q3)
    return InterventionHistogram(counts, quartiles)


def solve_overlap(named_solve_sets: Mapping[str, set]) -> dict[str, int]:
    """Counts for every exclusive region of the 2- or 3-set Venn
    decomposition. Region keys join the member names with '&' in input
    order."""
    names = list(named_solve_sets)
    if len(names) not in (2, 3):
        raise ArityUnsupportedError(f"solve_overlap supports 2 or 3 sets, got {len(names)}")
    sets = {name: set(named_solve_sets[name]) for name in names}
    universe = set().union(*sets.values())
    regions: dict[str, int] = {}
    # All non-empty membership patterns, smallest first so keys are stable.
    for size in range(1, len(names) + 1):
        for member_names in combinations(names, size):
            members = set(member_names)
            count = sum(
                1
                for task_id in universe
                if {n for n in names if task_id in sets[n]} == members
            )
            regions["&".join(member_names)] = count
    return regions
