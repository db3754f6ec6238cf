import json
from collections import Counter

import pytest

import fixture_data
from specrank.corpus import (
    ParseError,
    Problem,
    ProgramSample,
    SchemaError,
    SpecKind,
    SpecSample,
    ValidationError,
    Verdict,
    VerificationMatrix,
    load_corpus,
    load_features,
    load_matrices,
    load_samples,
    save_features,
    save_matrices,
    save_samples,
    split_folds,
)


def mk_problem(i: int, tag: str = "humaneval") -> Problem:
    return Problem(
        id=f"p{i}",
        prompt=f"def func_{i}(x):\n    pass\n",
        entry_point=f"func_{i}",
        ground_truth_tests=(f"assert func_{i}(1) is None",),
        dataset_tag=tag,
    )


def write_problems(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def as_record(problem: Problem) -> dict:
    return {
        "id": problem.id,
        "prompt": problem.prompt,
        "entry_point": problem.entry_point,
        "ground_truth_tests": list(problem.ground_truth_tests),
        "dataset_tag": problem.dataset_tag,
    }


class TestLoadCorpus:
    def test_single_record_round_trip(self, tmp_path):
        problem = mk_problem(1)
        path = tmp_path / "one.jsonl"
        write_problems(path, [as_record(problem)])
        assert load_corpus(path) == [problem]

    def test_save_then_load_reproduces_problems(self, tmp_path):
        from specrank.corpus import save_corpus

        problems = [mk_problem(i) for i in range(4)]
        path = tmp_path / "corpus.jsonl"
        save_corpus(path, problems)
        assert load_corpus(path) == problems

    def test_fixture_file_matches_authored_problems(self, problems_path):
        problems = load_corpus(problems_path)
        assert [p.id for p in problems] == ["f1", "f2", "f3"]
        assert problems == fixture_data.PROBLEMS

    def test_duplicate_id_cites_line(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        record = as_record(mk_problem(1))
        write_problems(path, [record, record])
        with pytest.raises(ValidationError, match=r":2.*duplicate.*p1"):
            load_corpus(path)

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(as_record(mk_problem(1))) + "\n{not json\n", encoding="utf-8")
        with pytest.raises(ParseError, match=r":2"):
            load_corpus(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "missing.jsonl"
        record = as_record(mk_problem(1))
        del record["entry_point"]
        write_problems(path, [record])
        with pytest.raises(ParseError, match="entry_point"):
            load_corpus(path)

    def test_entry_point_must_appear_in_prompt(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        record = as_record(mk_problem(1))
        record["entry_point"] = "elsewhere"
        write_problems(path, [record])
        with pytest.raises(ValidationError, match="entry point"):
            load_corpus(path)

    def test_empty_ground_truth_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        record = as_record(mk_problem(1))
        record["ground_truth_tests"] = []
        write_problems(path, [record])
        with pytest.raises(ValidationError, match="ground_truth_tests"):
            load_corpus(path)


class TestSplitFolds:
    def test_ten_problems_ten_folds(self):
        problems = [mk_problem(i) for i in range(10)]
        folds = split_folds(problems, k=10, seed=3)
        sizes = Counter(folds.fold_of.values())
        assert all(sizes[f] == 1 for f in range(10))

    def test_deterministic(self):
        problems = [mk_problem(i) for i in range(12)]
        assert split_folds(problems, 5, seed=9).fold_of == split_folds(problems, 5, seed=9).fold_of

    def test_23_problems_sizes(self):
        problems = [mk_problem(i) for i in range(23)]
        folds = split_folds(problems, k=10, seed=0)
        sizes = sorted(Counter(folds.fold_of.values()).values())
        assert sizes == [2] * 7 + [3] * 3

    def test_partition_covers_everything(self):
        problems = [mk_problem(i) for i in range(17)]
        for seed in range(5):
            folds = split_folds(problems, k=4, seed=seed)
            assert set(folds.fold_of) == {p.id for p in problems}
            assert set(folds.fold_of.values()) <= set(range(4))

    def test_too_many_folds(self):
        with pytest.raises(ValidationError):
            split_folds([mk_problem(1), mk_problem(2)], k=3, seed=0)

    def test_k_below_two(self):
        with pytest.raises(ValidationError):
            split_folds([mk_problem(i) for i in range(5)], k=1, seed=0)


class TestSamplesIO:
    def test_round_trip(self, tmp_path):
        programs = [ProgramSample("p1", 0, "def f():\n    return 1\n")]
        specs = [
            SpecSample("p1", SpecKind.IO_TEST, 0, "assert f() == 1"),
            SpecSample("p1", SpecKind.RELATION, 0, "def test_f():\n    assert f() == 1\ntest_f()"),
        ]
        path = tmp_path / "samples.jsonl"
        save_samples(path, programs, specs, config_hash="abc")
        loaded_programs, loaded_specs = load_samples(path)
        assert loaded_programs == programs
        assert loaded_specs == specs

    def test_schema_mismatch(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        save_samples(path, [], [])
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["schema_version"] = 999
        path.write_text(json.dumps(header) + "\n" + "\n".join(lines[1:]), encoding="utf-8")
        with pytest.raises(SchemaError):
            load_samples(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        programs = [ProgramSample("p1", 0, "x = 1"), ProgramSample("p1", 0, "x = 2")]
        save_samples(path, programs, [])
        with pytest.raises(ValidationError, match="duplicate"):
            load_samples(path)


class TestMatrixIO:
    def test_round_trip(self, tmp_path, canonical_matrix):
        path = tmp_path / "matrix.jsonl"
        save_matrices(path, [canonical_matrix])
        loaded = load_matrices(path)
        assert loaded["canon"].verdicts == canonical_matrix.verdicts
        assert loaded["canon"].gt_correct == canonical_matrix.gt_correct

    def test_totality_validated_on_load(self, tmp_path, canonical_matrix):
        path = tmp_path / "matrix.jsonl"
        save_matrices(path, [canonical_matrix])
        lines = path.read_text().splitlines()
        # drop one verdict record
        dropped = [line for line in lines if '"spec_index": 1' not in line or '"program_index": 2' not in line]
        assert len(dropped) == len(lines) - 1
        path.write_text("\n".join(dropped) + "\n", encoding="utf-8")
        with pytest.raises(ValidationError, match="missing verdict"):
            load_matrices(path)

    def test_matrix_validate_rejects_partial(self):
        matrix = VerificationMatrix(problem_id="x")
        matrix.verdicts[(0, SpecKind.IO_TEST, 0)] = Verdict.PASS
        matrix.gt_correct[0] = True
        matrix.gt_correct[1] = False
        with pytest.raises(ValidationError):
            matrix.validate()


class TestFeaturesIO:
    def test_round_trip(self, tmp_path):
        rows = [("p1", 0, tuple(float(i) for i in range(18)))]
        path = tmp_path / "features.jsonl"
        save_features(path, rows)
        assert load_features(path) == {"p1": {0: rows[0][2]}}

    def test_round_trip_preserves_floats_exactly(self, tmp_path):
        values = tuple([0.1, -13.815510557964274, 1.0397207708399179] + [0.0] * 15)
        path = tmp_path / "features.jsonl"
        save_features(path, [("p1", 3, values)])
        assert load_features(path)["p1"][3] == values
