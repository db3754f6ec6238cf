import random

import pytest

import oracles
from specrank.certify import Certificate, select_certificate
from specrank.corpus import SpecKind, ValidationError, Verdict, VerificationMatrix


class TestSelectCertificate:
    def test_canonical_fixture_relation_wins_tie(self, canonical_matrix):
        # satisfier counts: t1=3, t2=2, r1=2; p1 passes all; tie at 2 -> relation
        certificate = select_certificate(canonical_matrix, 0)
        assert certificate.spec_kind is SpecKind.RELATION
        assert certificate.spec_index == 0
        assert certificate.satisfier_count == 2
        assert certificate.alternates == (
            (SpecKind.IO_TEST, 1, 2),
            (SpecKind.IO_TEST, 0, 3),
        )

    def test_unique_passer_wins(self):
        matrix = VerificationMatrix(problem_id="x")
        for p in range(3):
            matrix.verdicts[(p, SpecKind.IO_TEST, 0)] = Verdict.PASS
            matrix.verdicts[(p, SpecKind.IO_TEST, 1)] = Verdict.PASS if p == 1 else Verdict.FAIL
            matrix.gt_correct[p] = False
        certificate = select_certificate(matrix, 1)
        assert (certificate.spec_kind, certificate.spec_index) == (SpecKind.IO_TEST, 1)
        assert certificate.satisfier_count == 1

    def test_all_pass_all_prefers_first_relation(self):
        matrix = VerificationMatrix(problem_id="x")
        for p in range(3):
            for idx in range(2):
                matrix.verdicts[(p, SpecKind.IO_TEST, idx)] = Verdict.PASS
                matrix.verdicts[(p, SpecKind.RELATION, idx)] = Verdict.PASS
            matrix.gt_correct[p] = True
        certificate = select_certificate(matrix, 0)
        assert (certificate.spec_kind, certificate.spec_index) == (SpecKind.RELATION, 0)
        assert certificate.satisfier_count == 3

    def test_all_pass_all_without_relations_prefers_first_io(self):
        matrix = VerificationMatrix(problem_id="x")
        for p in range(2):
            for idx in range(2):
                matrix.verdicts[(p, SpecKind.IO_TEST, idx)] = Verdict.PASS
            matrix.gt_correct[p] = True
        certificate = select_certificate(matrix, 0)
        assert (certificate.spec_kind, certificate.spec_index) == (SpecKind.IO_TEST, 0)
        assert certificate.satisfier_count == 2

    def test_no_satisfied_spec_returns_none(self, canonical_matrix):
        assert select_certificate(canonical_matrix, 3) is None

    def test_error_and_timeout_never_certifiable(self):
        matrix = VerificationMatrix(problem_id="x")
        matrix.verdicts[(0, SpecKind.IO_TEST, 0)] = Verdict.ERROR
        matrix.verdicts[(0, SpecKind.RELATION, 0)] = Verdict.TIMEOUT
        matrix.verdicts[(1, SpecKind.IO_TEST, 0)] = Verdict.PASS
        matrix.verdicts[(1, SpecKind.RELATION, 0)] = Verdict.PASS
        matrix.gt_correct[0] = False
        matrix.gt_correct[1] = True
        assert select_certificate(matrix, 0) is None

    def test_unknown_program_rejected(self, canonical_matrix):
        with pytest.raises(ValidationError):
            select_certificate(canonical_matrix, 99)

    def test_vacuous_spec_only_when_nothing_better(self):
        matrix = VerificationMatrix(problem_id="x")
        for p in range(4):
            matrix.verdicts[(p, SpecKind.IO_TEST, 0)] = Verdict.PASS  # vacuous
            matrix.verdicts[(p, SpecKind.IO_TEST, 1)] = (
                Verdict.PASS if p in (0, 1) else Verdict.FAIL
            )
            matrix.gt_correct[p] = p in (0, 1)
        assert select_certificate(matrix, 0).spec_index == 1
        # program 2 only passes the vacuous one
        assert select_certificate(matrix, 2).spec_index == 0


class TestCertificateProperties:
    def test_bayes_argmax_agrees_on_random_matrices(self):
        rng = random.Random(123)
        checked = 0
        for _ in range(200):
            matrix = oracles.random_matrix(rng, min_programs=1)
            for p_star in matrix.program_indices():
                expected = oracles.bayes_certificate_argmax(matrix, p_star)
                certificate = select_certificate(matrix, p_star)
                if expected is None:
                    assert certificate is None
                else:
                    assert (certificate.spec_kind, certificate.spec_index) == expected
                    checked += 1
        assert checked > 100  # the sweep actually exercised real certificates

    def test_emitted_certificate_always_satisfied(self):
        rng = random.Random(321)
        for _ in range(100):
            matrix = oracles.random_matrix(rng)
            for p_star in matrix.program_indices():
                certificate = select_certificate(matrix, p_star)
                if certificate is not None:
                    assert matrix.passes(p_star, certificate.spec_kind, certificate.spec_index)
                    assert certificate.satisfier_count >= 1
                    # invariant: nothing satisfied by p* is strictly more selective
                    counts = {
                        (kind, idx): sum(
                            1
                            for q in matrix.program_indices()
                            if matrix.passes(q, kind, idx)
                        )
                        for kind, idx in matrix.spec_keys("S")
                        if matrix.passes(p_star, kind, idx)
                    }
                    assert certificate.satisfier_count == min(counts.values())

    def test_removing_another_satisfier_keeps_selection(self):
        rng = random.Random(77)
        for _ in range(100):
            matrix = oracles.random_matrix(rng, min_programs=3)
            p_star = matrix.program_indices()[0]
            certificate = select_certificate(matrix, p_star)
            if certificate is None:
                continue
            victims = [
                q
                for q in matrix.program_indices()
                if q != p_star and matrix.passes(q, certificate.spec_kind, certificate.spec_index)
            ]
            if not victims:
                continue
            smaller = VerificationMatrix(problem_id=matrix.problem_id)
            for (p, kind, idx), verdict in matrix.verdicts.items():
                if p != victims[0]:
                    smaller.verdicts[(p, kind, idx)] = verdict
            for p, ok in matrix.gt_correct.items():
                if p != victims[0]:
                    smaller.gt_correct[p] = ok
            after = select_certificate(smaller, p_star)
            assert (after.spec_kind, after.spec_index) == (
                certificate.spec_kind,
                certificate.spec_index,
            )
