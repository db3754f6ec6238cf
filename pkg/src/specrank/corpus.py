"""On-disk data model: problems, sampled programs/specs, verification matrices,
feature records, and cross-validation fold assignments.

All bulk data is line-delimited JSON (one record per line, UTF-8, newlines in
source fields escaped by the JSON encoder). Files written by the pipeline start
with a header record carrying a schema tag and the config hash; the loaders
validate it. Everything in this module is immutable after construction and safe
to share across threads.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Literal, Mapping

SCHEMA_VERSION = 1


class CorpusError(ValueError):
    """Base class for corpus file problems."""


class ParseError(CorpusError):
    """A line could not be decoded or is missing required fields."""


class ValidationError(CorpusError):
    """A record violates a data-model invariant."""


class SchemaError(CorpusError):
    """A pipeline file carries an unexpected schema tag or version."""


class SpecKind(str, Enum):
    IO_TEST = "io_test"
    RELATION = "relation"

    @property
    def order(self) -> int:
        """Sort rank: io tests come before relations in signatures and matrices."""
        return 0 if self is SpecKind.IO_TEST else 1


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    ERROR = "error"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Problem:
    """One benchmark task: prompt text, entry point, and ground-truth tests."""

    id: str
    prompt: str
    entry_point: str
    ground_truth_tests: tuple[str, ...]
    dataset_tag: str

    def validate(self) -> None:
        if not self.id:
            raise ValidationError("problem id must be non-empty")
        if not self.ground_truth_tests:
            raise ValidationError(f"problem {self.id!r}: ground_truth_tests must be non-empty")
        if self.entry_point not in self.prompt:
            raise ValidationError(
                f"problem {self.id!r}: entry point {self.entry_point!r} does not appear in prompt"
            )


@dataclass(frozen=True)
class ProgramSample:
    problem_id: str
    index: int
    source: str

    def validate(self) -> None:
        if self.index < 0:
            raise ValidationError(f"program sample index must be >= 0, got {self.index}")
        if not self.source:
            raise ValidationError(f"program sample {self.problem_id}/{self.index}: empty source")


@dataclass(frozen=True)
class SpecSample:
    problem_id: str
    kind: SpecKind
    index: int
    source: str

    def validate(self) -> None:
        if self.index < 0:
            raise ValidationError(f"spec sample index must be >= 0, got {self.index}")
        if not self.source:
            raise ValidationError(f"spec sample {self.problem_id}/{self.index}: empty source")
        if self.kind is SpecKind.IO_TEST:
            if "\n" in self.source.strip("\n") or not self.source.startswith("assert "):
                raise ValidationError(
                    f"io_test spec {self.problem_id}/{self.index} must be a single assert line"
                )


Subset = Literal["T", "R", "S"]


@dataclass
class VerificationMatrix:
    """Per-problem verdict for every (program, spec) pair plus ground-truth flags.

    ``verdicts`` is keyed by (program_index, spec_kind, spec_index); the program
    satisfies a spec iff the verdict is PASS. ``gt_correct`` marks programs that
    pass every ground-truth test.
    """

    problem_id: str
    verdicts: dict[tuple[int, SpecKind, int], Verdict] = field(default_factory=dict)
    gt_correct: dict[int, bool] = field(default_factory=dict)

    def program_indices(self) -> list[int]:
        return sorted(self.gt_correct)

    def spec_keys(self, subset: Subset = "S") -> list[tuple[SpecKind, int]]:
        """Distinct specs of the requested subset, ordered (kind, index) ascending."""
        keys = {(kind, idx) for (_, kind, idx) in self.verdicts}
        if subset == "T":
            keys = {(k, i) for (k, i) in keys if k is SpecKind.IO_TEST}
        elif subset == "R":
            keys = {(k, i) for (k, i) in keys if k is SpecKind.RELATION}
        return sorted(keys, key=lambda ki: (ki[0].order, ki[1]))

    def passes(self, program_index: int, kind: SpecKind, spec_index: int) -> bool:
        return self.verdicts[(program_index, kind, spec_index)] is Verdict.PASS

    def validate(self) -> None:
        """Check totality: one verdict per (program, spec) pair, gt flag per program."""
        programs = self.program_indices()
        specs = self.spec_keys("S")
        for p in programs:
            for kind, idx in specs:
                if (p, kind, idx) not in self.verdicts:
                    raise ValidationError(
                        f"matrix {self.problem_id!r} missing verdict for "
                        f"program {p}, spec ({kind.value}, {idx})"
                    )
        seen_programs = {p for (p, _, _) in self.verdicts}
        if not seen_programs <= set(programs):
            extra = sorted(seen_programs - set(programs))
            raise ValidationError(
                f"matrix {self.problem_id!r} has verdicts for programs {extra} without gt flags"
            )


@dataclass(frozen=True)
class FoldAssignment:
    """Problem-level fold assignment; all samples of a problem share its fold."""

    k: int
    fold_of: Mapping[str, int]

    def problems_in(self, fold: int) -> list[str]:
        return sorted(pid for pid, f in self.fold_of.items() if f == fold)


def split_folds(problems: list[Problem], k: int, seed: int) -> FoldAssignment:
    """Deterministically partition problems into k folds of near-equal size."""
    if k < 2:
        raise ValidationError(f"fold count must be >= 2, got {k}")
    if k > len(problems):
        raise ValidationError(f"cannot split {len(problems)} problems into {k} folds")
    ids = [p.id for p in problems]
    rng = random.Random(seed)
    rng.shuffle(ids)
    return FoldAssignment(k=k, fold_of={pid: i % k for i, pid in enumerate(ids)})


# ---------------------------------------------------------------------------
# Line-delimited file IO
# ---------------------------------------------------------------------------

def _iter_records(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid record: {exc}") from exc
            if not isinstance(record, dict):
                raise ParseError(f"{path}:{lineno}: record must be an object")
            yield lineno, record


def _require(record: dict, key: str, path: Path, lineno: int):
    if key not in record:
        raise ParseError(f"{path}:{lineno}: missing field {key!r}")
    return record[key]


def load_corpus(path: str | Path) -> list[Problem]:
    """Load and validate a problems file (no header; user-supplied input)."""
    path = Path(path)
    problems: list[Problem] = []
    seen: dict[str, int] = {}
    for lineno, record in _iter_records(path):
        problem = Problem(
            id=str(_require(record, "id", path, lineno)),
            prompt=str(_require(record, "prompt", path, lineno)),
            entry_point=str(_require(record, "entry_point", path, lineno)),
            ground_truth_tests=tuple(_require(record, "ground_truth_tests", path, lineno)),
            dataset_tag=str(_require(record, "dataset_tag", path, lineno)),
        )
        try:
            problem.validate()
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        if problem.id in seen:
            raise ValidationError(
                f"{path}:{lineno}: duplicate problem id {problem.id!r} (first seen on line {seen[problem.id]})"
            )
        seen[problem.id] = lineno
        problems.append(problem)
    return problems


def save_corpus(path: str | Path, problems: Iterable[Problem]) -> None:
    """Write a problems file (no header; the format user-supplied corpora use)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for p in problems:
            record = {
                "id": p.id,
                "prompt": p.prompt,
                "entry_point": p.entry_point,
                "ground_truth_tests": list(p.ground_truth_tests),
                "dataset_tag": p.dataset_tag,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _write_jsonl(path: str | Path, schema: str, records: Iterable[dict], config_hash: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"schema": schema, "schema_version": SCHEMA_VERSION, "config_hash": config_hash}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _read_jsonl(path: str | Path, schema: str) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    records = _iter_records(path)
    try:
        lineno, header = next(records)
    except StopIteration:
        raise SchemaError(f"{path}: empty file, expected schema {schema!r}") from None
    if header.get("schema") != schema or header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: expected schema {schema!r} v{SCHEMA_VERSION}, "
            f"found {header.get('schema')!r} v{header.get('schema_version')!r}"
        )
    return records


def save_samples(
    path: str | Path,
    programs: Iterable[ProgramSample],
    specs: Iterable[SpecSample],
    config_hash: str = "",
) -> None:
    def records():
        for p in programs:
            yield {"problem_id": p.problem_id, "kind": "program", "index": p.index, "source": p.source}
        for s in specs:
            yield {"problem_id": s.problem_id, "kind": s.kind.value, "index": s.index, "source": s.source}

    _write_jsonl(path, "specrank/samples", records(), config_hash)


def load_samples(path: str | Path) -> tuple[list[ProgramSample], list[SpecSample]]:
    path = Path(path)
    programs: list[ProgramSample] = []
    specs: list[SpecSample] = []
    seen: set[tuple] = set()
    for lineno, record in _read_jsonl(path, "specrank/samples"):
        kind = _require(record, "kind", path, lineno)
        key = (record.get("problem_id"), kind, record.get("index"))
        if key in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate sample key {key}")
        seen.add(key)
        if kind == "program":
            sample: ProgramSample | SpecSample = ProgramSample(
                problem_id=str(_require(record, "problem_id", path, lineno)),
                index=int(_require(record, "index", path, lineno)),
                source=str(_require(record, "source", path, lineno)),
            )
            programs.append(sample)
        elif kind in (SpecKind.IO_TEST.value, SpecKind.RELATION.value):
            sample = SpecSample(
                problem_id=str(_require(record, "problem_id", path, lineno)),
                kind=SpecKind(kind),
                index=int(_require(record, "index", path, lineno)),
                source=str(_require(record, "source", path, lineno)),
            )
            specs.append(sample)
        else:
            raise ParseError(f"{path}:{lineno}: unknown sample kind {kind!r}")
        sample.validate()
    return programs, specs


def save_matrices(path: str | Path, matrices: Iterable[VerificationMatrix], config_hash: str = "") -> None:
    def records():
        for m in matrices:
            for p in m.program_indices():
                for kind, idx in m.spec_keys("S"):
                    yield {
                        "problem_id": m.problem_id,
                        "program_index": p,
                        "spec_kind": kind.value,
                        "spec_index": idx,
                        "verdict": m.verdicts[(p, kind, idx)].value,
                    }
            for p in m.program_indices():
                yield {"problem_id": m.problem_id, "program_index": p, "gt_correct": m.gt_correct[p]}

    _write_jsonl(path, "specrank/matrix", records(), config_hash)


def load_matrices(path: str | Path) -> dict[str, VerificationMatrix]:
    path = Path(path)
    matrices: dict[str, VerificationMatrix] = {}
    for lineno, record in _read_jsonl(path, "specrank/matrix"):
        pid = str(_require(record, "problem_id", path, lineno))
        matrix = matrices.setdefault(pid, VerificationMatrix(problem_id=pid))
        if "gt_correct" in record:
            matrix.gt_correct[int(_require(record, "program_index", path, lineno))] = bool(
                record["gt_correct"]
            )
        else:
            key = (
                int(_require(record, "program_index", path, lineno)),
                SpecKind(str(_require(record, "spec_kind", path, lineno))),
                int(_require(record, "spec_index", path, lineno)),
            )
            matrix.verdicts[key] = Verdict(str(_require(record, "verdict", path, lineno)))
    for matrix in matrices.values():
        matrix.validate()
    return matrices


def save_features(
    path: str | Path,
    rows: Iterable[tuple[str, int, tuple[float, ...]]],
    config_hash: str = "",
) -> None:
    """Persist feature rows as (problem_id, program_index, values[18]) records."""
    _write_jsonl(
        path,
        "specrank/features",
        (
            {"problem_id": pid, "program_index": idx, "values": list(values)}
            for pid, idx, values in rows
        ),
        config_hash,
    )


def load_features(path: str | Path) -> dict[str, dict[int, tuple[float, ...]]]:
    path = Path(path)
    table: dict[str, dict[int, tuple[float, ...]]] = {}
    for lineno, record in _read_jsonl(path, "specrank/features"):
        pid = str(_require(record, "problem_id", path, lineno))
        idx = int(_require(record, "program_index", path, lineno))
        values = tuple(float(v) for v in _require(record, "values", path, lineno))
        table.setdefault(pid, {})[idx] = values
    return table
