"""Evaluation metrics: pass@k, reranked pass@k,n, precision/recall sweeps, and
baseline rankers.

Precision@k counts a problem as answered when any of its programs scores at or
above the threshold tau, and as answered correctly when some program is
correct, scores >= tau, and sits in the problem's top k by score. Recall@k
divides the same numerator by the number of solvable problems (those with any
correct sample). All orderings break ties by ascending sample index so reports
are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

from .corpus import ValidationError, VerificationMatrix
from .features import cluster_partition, problem_features

RankMode = Literal["cluster", "individual"]


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k estimator from n samples with c correct: 1 - C(n-c,k)/C(n,k)."""
    if not 0 <= c <= n:
        raise ValidationError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValidationError(f"need 1 <= k <= n, got k={k}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    # stable product form of 1 - C(n-c, k) / C(n, k)
    prod = 1.0
    for i in range(k):
        prod *= (n - c - i) / (n - i)
    return 1.0 - prod


@dataclass(frozen=True)
class RankedProblem:
    """One problem's programs and behavior clusters in rank order.

    ``order`` lists program indices by (score desc, sample index asc);
    ``cluster_order`` lists whole-behavior clusters by (score desc, size desc,
    smallest member asc), each cluster's members ascending.
    """

    problem_id: str
    order: tuple[int, ...]
    cluster_order: tuple[tuple[int, ...], ...]
    scores: dict[int, float]
    correct: frozenset[int]

    @property
    def solvable(self) -> bool:
        return bool(self.correct)

    def top_score(self) -> float:
        return self.scores[self.order[0]]


def rank_problem(matrix: VerificationMatrix, scores: dict[int, float]) -> RankedProblem:
    programs = matrix.program_indices()
    missing = [p for p in programs if p not in scores]
    if missing:
        raise ValidationError(f"problem {matrix.problem_id!r}: no score for programs {missing}")
    order = tuple(sorted(programs, key=lambda p: (-scores[p], p)))
    clusters = [tuple(sorted(members)) for members in cluster_partition(matrix, "S")]
    cluster_order = tuple(
        sorted(clusters, key=lambda c: (-max(scores[p] for p in c), -len(c), c[0]))
    )
    return RankedProblem(
        problem_id=matrix.problem_id,
        order=order,
        cluster_order=cluster_order,
        scores=dict(scores),
        correct=frozenset(p for p in programs if matrix.gt_correct[p]),
    )


def pass_at_k_n(ranked: Sequence[RankedProblem], k: int, mode: RankMode = "cluster") -> float:
    """Fraction of problems whose top-k selection contains a correct program.

    Cluster mode draws one representative (the lowest sample index) from each
    of the k best clusters; individual mode takes the k best programs.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not ranked:
        raise ValidationError("no ranked problems")
    hits = 0
    for problem in ranked:
        if mode == "individual":
            chosen: Iterable[int] = problem.order[:k]
        else:
            chosen = [cluster[0] for cluster in problem.cluster_order[:k]]
        if any(p in problem.correct for p in chosen):
            hits += 1
    return hits / len(ranked)


@dataclass(frozen=True)
class PRPoint:
    tau: float
    precision: float
    recall: float
    predicted_positives: int
    true_positives: int
    actual_positives: int


def pr_at_tau(ranked: Sequence[RankedProblem], k: int, tau: float) -> PRPoint:
    tp = 0
    predicted = 0
    actual = 0
    for problem in ranked:
        if problem.solvable:
            actual += 1
        if any(s >= tau for s in problem.scores.values()):
            predicted += 1
        top_k = problem.order[:k]
        if any(p in problem.correct and problem.scores[p] >= tau for p in top_k):
            tp += 1
    precision = tp / predicted if predicted else 1.0
    recall = tp / actual if actual else 0.0
    return PRPoint(
        tau=tau,
        precision=precision,
        recall=recall,
        predicted_positives=predicted,
        true_positives=tp,
        actual_positives=actual,
    )


def pr_curve(ranked: Sequence[RankedProblem], k: int) -> list[PRPoint]:
    """Sweep tau over every observed score (ascending) plus a +inf sentinel."""
    if not ranked:
        raise ValidationError("cannot sweep an empty corpus")
    taus = sorted({s for problem in ranked for s in problem.scores.values()})
    taus.append(math.inf)
    return [pr_at_tau(ranked, k, tau) for tau in taus]


def auc(curve: Sequence[PRPoint]) -> float:
    """Trapezoidal area under precision as a function of recall.

    Duplicate recalls collapse to their max precision; if no point sits at
    recall 0, the lowest-recall point's precision anchors the curve there.
    """
    if not curve:
        raise ValidationError("empty curve")
    best: dict[float, float] = {}
    for point in curve:
        best[point.recall] = max(best.get(point.recall, 0.0), point.precision)
    points = sorted(best.items())
    if points[0][0] > 0.0:
        points.insert(0, (0.0, points[0][1]))
    area = 0.0
    for (r0, p0), (r1, p1) in zip(points, points[1:]):
        area += (r1 - r0) * (p0 + p1) / 2.0
    return area


def max_f1(curve: Sequence[PRPoint]) -> float:
    best = 0.0
    for point in curve:
        if point.precision == 0.0 and point.recall == 0.0:
            continue
        best = max(best, 2.0 * point.precision * point.recall / (point.precision + point.recall))
    return best


def recall_at_precision(curve: Sequence[PRPoint], p_min: float) -> float:
    eligible = [point.recall for point in curve if point.precision >= p_min]
    return max(eligible) if eligible else 0.0


# ---------------------------------------------------------------------------
# Baseline rankers
# ---------------------------------------------------------------------------

BASELINES = ("cluster", "codet", "random")


def baseline_scores(matrix: VerificationMatrix, baseline: str) -> dict[int, float]:
    """Heuristic per-program scores: cluster-size, CodeT-style, or random (constant)."""
    programs = matrix.program_indices()
    if baseline == "random":
        return {p: 0.0 for p in programs}
    vectors = problem_features(matrix)
    n = len(programs)
    if baseline == "cluster":
        return {p: vectors[p].values[4] for p in programs}  # cluster fraction over all checks
    if baseline == "codet":
        # io-test pass rate times sqrt of whole-behavior cluster size (count)
        return {
            p: vectors[p].values[0] * math.sqrt(vectors[p].values[4] * n) for p in programs
        }
    raise ValidationError(f"unknown baseline {baseline!r}")


def oracle_scores(matrix: VerificationMatrix) -> dict[int, float]:
    """Upper-bound ranker that peeks at ground truth (reporting aid only)."""
    return {p: 1.0 if matrix.gt_correct[p] else 0.0 for p in matrix.program_indices()}
