import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import fixture_data
from specrank.corpus import SpecKind, Verdict, VerificationMatrix

FIXTURES = Path(__file__).parent / "fixtures"
STUB_RUNNER = Path(__file__).parent / "stub_runner.py"


@pytest.fixture
def canonical_matrix() -> VerificationMatrix:
    """4 programs, 2 io tests, 1 relation: p1 and p2 pass everything, p3 passes
    only the first io test, p4 passes nothing."""
    matrix = VerificationMatrix(problem_id="canon")
    passes = {
        0: {(SpecKind.IO_TEST, 0), (SpecKind.IO_TEST, 1), (SpecKind.RELATION, 0)},
        1: {(SpecKind.IO_TEST, 0), (SpecKind.IO_TEST, 1), (SpecKind.RELATION, 0)},
        2: {(SpecKind.IO_TEST, 0)},
        3: set(),
    }
    for program, passing in passes.items():
        for kind, idx in [(SpecKind.IO_TEST, 0), (SpecKind.IO_TEST, 1), (SpecKind.RELATION, 0)]:
            matrix.verdicts[(program, kind, idx)] = (
                Verdict.PASS if (kind, idx) in passing else Verdict.FAIL
            )
        matrix.gt_correct[program] = program in (0, 1)
    return matrix


@pytest.fixture(scope="session")
def replay_table_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("replay") / "verdicts.json"
    path.write_text(json.dumps(fixture_data.build_replay_table(), sort_keys=True), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def problems_path() -> Path:
    return FIXTURES / "problems.jsonl"


def stub_runner_cmd(table_path: Path) -> tuple[str, ...]:
    return (sys.executable, str(STUB_RUNNER), str(table_path))


@pytest.fixture
def fixture_canned():
    canned = {}
    for problem in fixture_data.PROBLEMS:
        canned[("program", problem.entry_point)] = fixture_data.PROGRAM_COMPLETIONS[problem.id]
        canned[("io", problem.entry_point)] = fixture_data.IO_COMPLETIONS[problem.id]
        canned[("relation", problem.entry_point)] = fixture_data.RELATION_COMPLETIONS[problem.id]
    return canned
