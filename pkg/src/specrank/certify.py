"""Certificate selection for a proposed top program.

The certificate is the most selective check the program satisfies: among all
checks the program passes, pick the one passed by the fewest programs overall.
Under the joint model P(p, s) proportional to [p satisfies s], this argmin is
exactly argmax_s P(p* | s). Ties prefer relation checks over io tests (they
constrain behavior on every shown input), then the lower index.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import SpecKind, ValidationError, Verdict, VerificationMatrix


@dataclass(frozen=True)
class Certificate:
    problem_id: str
    program_index: int
    spec_kind: SpecKind
    spec_index: int
    satisfier_count: int
    # remaining satisfied specs, best first: (kind, index, satisfier_count)
    alternates: tuple[tuple[SpecKind, int, int], ...]


def _sort_key(kind: SpecKind, index: int, count: int) -> tuple[int, int, int]:
    return (count, 0 if kind is SpecKind.RELATION else 1, index)


def satisfier_counts(matrix: VerificationMatrix) -> dict[tuple[SpecKind, int], int]:
    counts: dict[tuple[SpecKind, int], int] = {key: 0 for key in matrix.spec_keys("S")}
    for (p, kind, idx), verdict in matrix.verdicts.items():
        if verdict is Verdict.PASS:
            counts[(kind, idx)] += 1
    return counts


def select_certificate(matrix: VerificationMatrix, p_star: int) -> Certificate | None:
    """Most selective check satisfied by ``p_star``; None if it passes nothing.

    error/timeout verdicts count as unsatisfied, so those checks are never
    certifiable for this program.
    """
    if p_star not in matrix.gt_correct:
        raise ValidationError(f"program {p_star} not in matrix {matrix.problem_id!r}")
    counts = satisfier_counts(matrix)
    satisfied = [
        (kind, idx, counts[(kind, idx)])
        for kind, idx in matrix.spec_keys("S")
        if matrix.verdicts[(p_star, kind, idx)] is Verdict.PASS
    ]
    if not satisfied:
        return None
    satisfied.sort(key=lambda entry: _sort_key(*entry))
    kind, idx, count = satisfied[0]
    return Certificate(
        problem_id=matrix.problem_id,
        program_index=p_star,
        spec_kind=kind,
        spec_index=idx,
        satisfier_count=count,
        alternates=tuple(satisfied[1:]),
    )
