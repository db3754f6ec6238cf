"""Verification driver: run every (program, check) and (program, ground-truth)
task across a pool of sandboxed runner processes and assemble verdict matrices.

The runner is an external command speaking a line protocol: one JSON task per
line on stdin, one JSON verdict per line on stdout (see the guest runner
package). Workers each own one runner process; a task that exceeds its budget
plus a grace period gets the process killed and a timeout verdict; a runner
that dies mid-task is replaced and the task retried once before an error
verdict is recorded. Results are keyed, so worker count and completion order
never change the output matrix.

Isolation is process-level: fresh process per runner with a scrubbed
environment and a temporary working directory, recycled every N tasks. This is
weaker than a VM; untrusted code determined to escape a Python process could.
Dedicate a VM or container to the whole pipeline when running samples from
untrusted sources.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import subprocess
import sys
import tempfile
import threading
from dataclasses import dataclass
from queue import Queue
from typing import Iterable, Sequence

from .corpus import (
    Problem,
    ProgramSample,
    SpecKind,
    SpecSample,
    ValidationError,
    Verdict,
    VerificationMatrix,
)

logger = logging.getLogger(__name__)

DETAIL_LIMIT = 1024


class SandboxError(RuntimeError):
    """Runner processes could not be launched at all."""


@dataclass
class ExecutorConfig:
    runner_cmd: tuple[str, ...]
    workers: int | None = None  # default: logical CPU count
    per_task_timeout_ms: int = 3000
    hard_kill_grace_ms: int = 1000
    sandbox_mode: str = "subprocess_no_net"  # or "subprocess"
    runner_recycle_every: int = 50

    def validate(self) -> None:
        if not self.runner_cmd:
            raise ValidationError("runner_cmd must name the runner command")
        if self.workers is not None and self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        if self.per_task_timeout_ms <= 0 or self.hard_kill_grace_ms <= 0:
            raise ValidationError("timeouts must be > 0")
        if self.sandbox_mode not in ("subprocess", "subprocess_no_net"):
            raise ValidationError(f"unknown sandbox_mode {self.sandbox_mode!r}")

    def effective_workers(self) -> int:
        return self.workers if self.workers is not None else (os.cpu_count() or 1)


@dataclass(frozen=True)
class _Task:
    key: tuple
    task_id: str
    program_source: str
    check_source: str
    mode: str


class _RunnerProcess:
    """One runner subprocess plus its scratch directory and served-task count."""

    def __init__(self, config: ExecutorConfig):
        self.config = config
        self.tasks_served = 0
        self.workdir = tempfile.mkdtemp(prefix="specrank-runner-")
        env = {
            "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
            "HOME": self.workdir,
            "LC_ALL": "C.UTF-8",
            "PYTHONIOENCODING": "utf-8",
            # guest set/dict iteration must not depend on hash randomization,
            # or the determinism guarantees over deterministic code break
            "PYTHONHASHSEED": "0",
        }
        if config.sandbox_mode == "subprocess_no_net":
            env["GUEST_RUNNER_NO_NET"] = "1"
        try:
            self.proc = subprocess.Popen(
                list(config.runner_cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                cwd=self.workdir,
                env=env,
                text=True,
                encoding="utf-8",
                errors="replace",
                bufsize=1,
            )
        except OSError as exc:
            shutil.rmtree(self.workdir, ignore_errors=True)
            raise SandboxError(f"cannot launch runner {config.runner_cmd}: {exc}") from exc
        self._killed_for_timeout = False

    def _kill_for_timeout(self) -> None:
        self._killed_for_timeout = True
        self.proc.kill()

    def run(self, task: _Task) -> dict | None:
        """One task round-trip. Returns the verdict record, a synthesized timeout
        record, or None when the runner died (caller decides on retry)."""
        record = {
            "task_id": task.task_id,
            "program_source": task.program_source,
            "check_source": task.check_source,
            "mode": task.mode,
            "timeout_ms": self.config.per_task_timeout_ms,
        }
        deadline_s = (self.config.per_task_timeout_ms + self.config.hard_kill_grace_ms) / 1000.0
        self._killed_for_timeout = False
        try:
            self.proc.stdin.write(json.dumps(record) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            return None
        timer = threading.Timer(deadline_s, self._kill_for_timeout)
        timer.start()
        try:
            line = self.proc.stdout.readline()
        finally:
            timer.cancel()
        self.tasks_served += 1
        if self._killed_for_timeout:
            return {
                "task_id": task.task_id,
                "verdict": Verdict.TIMEOUT.value,
                "detail": "hard kill: runner exceeded task budget plus grace",
            }
        if not line:
            return None
        try:
            verdict = json.loads(line)
        except json.JSONDecodeError:
            return None
        if verdict.get("task_id") not in (task.task_id, "?"):
            return None
        return verdict

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=2)
        except (OSError, subprocess.TimeoutExpired):
            self.proc.kill()
            self.proc.wait()
        shutil.rmtree(self.workdir, ignore_errors=True)


class RunnerPool:
    """Fixed-size pool of runner processes consuming a shared task queue."""

    def __init__(self, config: ExecutorConfig):
        config.validate()
        self.config = config

    def _run_with_retry(self, runner: _RunnerProcess, task: _Task) -> tuple[_RunnerProcess, dict]:
        verdict = runner.run(task)
        if verdict is None:
            runner.close()
            runner = _RunnerProcess(self.config)
            verdict = runner.run(task)
            if verdict is None:
                runner.close()
                runner = _RunnerProcess(self.config)
                verdict = {
                    "task_id": task.task_id,
                    "verdict": Verdict.ERROR.value,
                    "detail": "runner crashed twice on this task",
                }
        if runner.proc.poll() is not None or runner.tasks_served >= self.config.runner_recycle_every:
            runner.close()
            runner = _RunnerProcess(self.config)
        return runner, verdict

    def run_tasks(self, tasks: Sequence[_Task]) -> dict[tuple, dict]:
        results: dict[tuple, dict] = {}
        if not tasks:
            return results
        queue: Queue[_Task | None] = Queue()
        for task in tasks:
            queue.put(task)
        n_workers = min(self.config.effective_workers(), len(tasks))
        for _ in range(n_workers):
            queue.put(None)
        lock = threading.Lock()
        failures: list[BaseException] = []

        def worker() -> None:
            try:
                runner = _RunnerProcess(self.config)
            except SandboxError as exc:
                with lock:
                    failures.append(exc)
                return
            try:
                while True:
                    task = queue.get()
                    if task is None:
                        return
                    runner, verdict = self._run_with_retry(runner, task)
                    with lock:
                        results[task.key] = verdict
            except BaseException as exc:  # surface scheduler bugs, don't hang
                with lock:
                    failures.append(exc)
            finally:
                runner.close()

        threads = [threading.Thread(target=worker, daemon=True) for _ in range(n_workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if failures:
            raise failures[0] if isinstance(failures[0], SandboxError) else SandboxError(
                f"worker failed: {failures[0]!r}"
            )
        return results


def _parse_verdict(record: dict) -> tuple[Verdict, str]:
    try:
        return Verdict(record.get("verdict")), str(record.get("detail", ""))
    except ValueError:
        return Verdict.ERROR, f"malformed verdict record: {record!r}"


def verify_problem(
    problem: Problem,
    programs: Sequence[ProgramSample],
    specs: Sequence[SpecSample],
    config: ExecutorConfig,
) -> VerificationMatrix:
    """Run every program against every check and the ground-truth tests.

    The result is total over programs x specs; gt_correct holds iff every
    ground-truth test passes (all of them run; no short-circuiting).
    """
    for sample in list(programs) + list(specs):
        if sample.problem_id != problem.id:
            raise ValidationError(
                f"sample for {sample.problem_id!r} passed to verify_problem({problem.id!r})"
            )
    ordered_programs = sorted(programs, key=lambda p: p.index)
    ordered_specs = sorted(specs, key=lambda s: (s.kind.order, s.index))

    tasks: list[_Task] = []
    for program in ordered_programs:
        for spec in ordered_specs:
            tasks.append(
                _Task(
                    key=("spec", program.index, spec.kind, spec.index),
                    task_id=f"{problem.id}:{program.index}:{spec.kind.value}:{spec.index}",
                    program_source=program.source,
                    check_source=spec.source,
                    mode=spec.kind.value,
                )
            )
        for t_idx, test in enumerate(problem.ground_truth_tests):
            tasks.append(
                _Task(
                    key=("gt", program.index, t_idx),
                    task_id=f"{problem.id}:{program.index}:gt:{t_idx}",
                    program_source=program.source,
                    check_source=test,
                    mode="ground_truth",
                )
            )

    results = RunnerPool(config).run_tasks(tasks)

    matrix = VerificationMatrix(problem_id=problem.id)
    for program in ordered_programs:
        for spec in ordered_specs:
            verdict, _ = _parse_verdict(results[("spec", program.index, spec.kind, spec.index)])
            matrix.verdicts[(program.index, spec.kind, spec.index)] = verdict
        gt_verdicts = [
            _parse_verdict(results[("gt", program.index, t_idx)])[0]
            for t_idx in range(len(problem.ground_truth_tests))
        ]
        matrix.gt_correct[program.index] = all(v is Verdict.PASS for v in gt_verdicts)
    matrix.validate()
    return matrix


def check_ground_truth(problem: Problem, program: ProgramSample, config: ExecutorConfig) -> bool:
    """True iff the program passes every ground-truth test of the problem."""
    tasks = [
        _Task(
            key=("gt", program.index, t_idx),
            task_id=f"{problem.id}:{program.index}:gt:{t_idx}",
            program_source=program.source,
            check_source=test,
            mode="ground_truth",
        )
        for t_idx, test in enumerate(problem.ground_truth_tests)
    ]
    results = RunnerPool(config).run_tasks(tasks)
    return all(_parse_verdict(record)[0] is Verdict.PASS for record in results.values())


def verify_corpus(
    problems: Sequence[Problem],
    programs: Iterable[ProgramSample],
    specs: Iterable[SpecSample],
    config: ExecutorConfig,
) -> dict[str, VerificationMatrix]:
    by_problem_programs: dict[str, list[ProgramSample]] = {}
    for p in programs:
        by_problem_programs.setdefault(p.problem_id, []).append(p)
    by_problem_specs: dict[str, list[SpecSample]] = {}
    for s in specs:
        by_problem_specs.setdefault(s.problem_id, []).append(s)
    matrices: dict[str, VerificationMatrix] = {}
    for i, problem in enumerate(problems):
        matrices[problem.id] = verify_problem(
            problem,
            by_problem_programs.get(problem.id, []),
            by_problem_specs.get(problem.id, []),
            config,
        )
        print(
            f"[verify] {problem.id}: {i + 1}/{len(problems)} problems done",
            file=sys.stderr,
        )
    return matrices
