"""Agreement features computed from a verification matrix.

For each candidate program we derive, from its pass/fail behavior over the
sampled checks, an 18-slot feature vector in a frozen order:

    [0]  io-test pass rate
    [1]  relation pass rate
    [2]  behavior-cluster fraction over io tests only
    [3]  behavior-cluster fraction over relations only
    [4]  behavior-cluster fraction over all checks
    [5..9]   log(x + 1e-6) of slots 0..4
    [10..14] normalized ordinal rank (average rank on ties, divided by |P|) of slots 0..4
    [15] cluster-assignment entropy over io tests (nats)
    [16] cluster-assignment entropy over relations (nats)
    [17] cluster-assignment entropy over all checks (nats)

Two programs with identical behavior over all checks receive identical
vectors; entropies are problem-level constants repeated per program. An empty
check subset contributes pass rate 0, cluster fraction 1 (every program
vacuously agrees over the empty signature), and entropy 0.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import Subset, ValidationError, Verdict, VerificationMatrix

N_FEATURES = 18
LOG_EPSILON = 1e-6
FEATURE_ORDER_VERSION = "specrank-features/v1"

FEATURE_NAMES = (
    "test_pass",
    "relation_pass",
    "cluster_frac_t",
    "cluster_frac_r",
    "cluster_frac_s",
    "log_test_pass",
    "log_relation_pass",
    "log_cluster_frac_t",
    "log_cluster_frac_r",
    "log_cluster_frac_s",
    "rank_test_pass",
    "rank_relation_pass",
    "rank_cluster_frac_t",
    "rank_cluster_frac_r",
    "rank_cluster_frac_s",
    "entropy_t",
    "entropy_r",
    "entropy_s",
)

Signature = tuple[bool, ...]


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != N_FEATURES:
            raise ValidationError(f"feature vector must have {N_FEATURES} slots, got {len(self.values)}")
        if not all(math.isfinite(v) for v in self.values):
            raise ValidationError("feature vector contains non-finite values")


def signature(program_index: int, matrix: VerificationMatrix, subset: Subset) -> Signature:
    """Pass/fail bit vector of one program over the chosen check subset.

    Bits are ordered (kind, index) ascending with io tests before relations;
    any non-pass verdict (fail/error/timeout) contributes a 0 bit.
    """
    return tuple(
        matrix.verdicts[(program_index, kind, idx)] is Verdict.PASS
        for kind, idx in matrix.spec_keys(subset)
    )


def cluster_partition(matrix: VerificationMatrix, subset: Subset) -> list[list[int]]:
    """Group programs by identical signature; groups ordered by smallest member."""
    groups: dict[Signature, list[int]] = {}
    for p in matrix.program_indices():
        groups.setdefault(signature(p, matrix, subset), []).append(p)
    return sorted(groups.values(), key=lambda members: members[0])


def cluster_entropy(matrix: VerificationMatrix, subset: Subset) -> float:
    """Shannon entropy (nats) of the cluster-size distribution over programs."""
    n = len(matrix.program_indices())
    if n == 0:
        raise ValidationError("cluster entropy undefined for a matrix with no programs")
    sizes = [len(members) for members in cluster_partition(matrix, subset)]
    return -sum((s / n) * math.log(s / n) for s in sizes)


def _average_ranks(values: list[float]) -> list[float]:
    """1-based average-on-ties ranks, ascending (largest value gets largest rank)."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j + 2) / 2  # positions are 1-based
        for pos in range(i, j + 1):
            ranks[order[pos]] = mean_rank
        i = j + 1
    return ranks


def problem_features(matrix: VerificationMatrix) -> dict[int, FeatureVector]:
    """Feature vectors for every program of one problem."""
    programs = matrix.program_indices()
    if not programs:
        raise ValidationError(f"matrix {matrix.problem_id!r} has no programs")
    n = len(programs)

    subset_keys = {s: matrix.spec_keys(s) for s in ("T", "R", "S")}
    sigs = {
        s: {p: signature(p, matrix, s) for p in programs}  # type: ignore[arg-type]
        for s in ("T", "R", "S")
    }
    cluster_size = {s: Counter(sigs[s].values()) for s in ("T", "R", "S")}
    entropies = {s: cluster_entropy(matrix, s) for s in ("T", "R", "S")}  # type: ignore[arg-type]

    base: dict[int, list[float]] = {}
    for p in programs:
        n_t = len(subset_keys["T"])
        n_r = len(subset_keys["R"])
        test_pass = sum(sigs["T"][p]) / n_t if n_t else 0.0
        relation_pass = sum(sigs["R"][p]) / n_r if n_r else 0.0
        base[p] = [
            test_pass,
            relation_pass,
            cluster_size["T"][sigs["T"][p]] / n,
            cluster_size["R"][sigs["R"][p]] / n,
            cluster_size["S"][sigs["S"][p]] / n,
        ]

    rank_columns = []
    for slot in range(5):
        column = [base[p][slot] for p in programs]
        rank_columns.append([r / n for r in _average_ranks(column)])

    vectors: dict[int, FeatureVector] = {}
    for pos, p in enumerate(programs):
        slots = list(base[p])
        slots += [math.log(v + LOG_EPSILON) for v in base[p]]
        slots += [rank_columns[slot][pos] for slot in range(5)]
        slots += [entropies["T"], entropies["R"], entropies["S"]]
        vectors[p] = FeatureVector(values=tuple(slots))
    return vectors


def feature_vector(program_index: int, matrix: VerificationMatrix) -> FeatureVector:
    """Single-program convenience wrapper around :func:`problem_features`."""
    vectors = problem_features(matrix)
    if program_index not in vectors:
        raise ValidationError(f"program {program_index} not in matrix {matrix.problem_id!r}")
    return vectors[program_index]


@dataclass(frozen=True)
class Standardizer:
    """Per-coordinate (x - mean) / std map fit on training features.

    std uses population normalization (divide by N). Coordinates that are
    constant on the training set have std 0 and map to 0 for any input.
    """

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def transform_array(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        mean = np.asarray(self.mean)
        std = np.asarray(self.std)
        safe = np.where(std == 0.0, 1.0, std)
        out = (X - mean) / safe
        return np.where(std == 0.0, 0.0, out)

    def transform(self, fv: FeatureVector) -> FeatureVector:
        row = self.transform_array(np.asarray(fv.values)[None, :])[0]
        return FeatureVector(values=tuple(float(v) for v in row))


def fit_standardizer_array(X: np.ndarray) -> Standardizer:
    """Array-shaped variant of :func:`fit_standardizer` (any feature width)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("cannot fit a standardizer on an empty feature list")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = np.all(X == X[0], axis=0)
    mean = np.where(constant, X[0], mean)
    std = np.where(constant, 0.0, std)
    return Standardizer(mean=tuple(float(v) for v in mean), std=tuple(float(v) for v in std))


def fit_standardizer(features: list[FeatureVector]) -> Standardizer:
    if not features:
        raise ValidationError("cannot fit a standardizer on an empty feature list")
    return fit_standardizer_array(np.asarray([fv.values for fv in features], dtype=np.float64))


def apply_standardizer(standardizer: Standardizer, fv: FeatureVector) -> FeatureVector:
    return standardizer.transform(fv)
