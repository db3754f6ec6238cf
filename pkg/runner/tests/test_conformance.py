import json
import os
import socket
import subprocess
import sys
import threading
import time
from pathlib import Path

import pytest

RUNNER = Path(__file__).resolve().parents[1] / "guest_runner.py"

# the primary package's fixture corpus, for the dual-execution agreement check
sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "tests"))


def run_batch(tasks, env_extra=None, timeout=30.0):
    """Feed task records (or raw lines) in one go; return (verdict lines, exit code)."""
    lines = []
    for task in tasks:
        lines.append(task if isinstance(task, str) else json.dumps(task))
    env = {
        "PATH": os.environ.get("PATH", ""),
        "PYTHONIOENCODING": "utf-8",
        "GUEST_RUNNER_NO_NET": "1",
    }
    env.update(env_extra or {})
    proc = subprocess.run(
        [sys.executable, str(RUNNER)],
        input="".join(line + "\n" for line in lines),
        capture_output=True,
        text=True,
        timeout=timeout,
        env=env,
    )
    out = [json.loads(line) for line in proc.stdout.splitlines() if line.strip()]
    return out, proc.returncode


def task(task_id, program, check, mode="io_test", timeout_ms=3000):
    return {
        "task_id": task_id,
        "program_source": program,
        "check_source": check,
        "mode": mode,
        "timeout_ms": timeout_ms,
    }


class TestVerdictClasses:
    def test_true_assertion_passes(self):
        verdicts, code = run_batch([task("t1", "def f(x):\n    return x\n", "assert f(1) == 1")])
        assert code == 0
        assert verdicts == [{"task_id": "t1", "verdict": "pass", "detail": ""}]

    def test_false_assertion_fails(self):
        verdicts, _ = run_batch([task("t2", "def f(x):\n    return x\n", "assert f(1) == 2")])
        assert verdicts[0]["verdict"] == "fail"
        assert verdicts[0]["detail"]  # non-empty diagnostic

    def test_undefined_function_fails_with_error_class(self):
        verdicts, _ = run_batch([task("t3", "x = 1\n", "assert missing_fn(1) == 1")])
        assert verdicts[0]["verdict"] == "fail"
        assert "NameError" in verdicts[0]["detail"]
        assert verdicts[0]["detail"].startswith("check:")

    def test_broken_program_definition_fails(self):
        verdicts, _ = run_batch([task("t4", "def f(:\n", "assert True")])
        assert verdicts[0]["verdict"] == "fail"
        assert "SyntaxError" in verdicts[0]["detail"]
        assert verdicts[0]["detail"].startswith("program:")

    def test_infinite_loop_times_out_within_twice_budget(self):
        budget_ms = 1000
        start = time.monotonic()
        verdicts, _ = run_batch(
            [task("t5", "while True: pass\n", "assert True", timeout_ms=budget_ms)]
        )
        elapsed_ms = (time.monotonic() - start) * 1000
        assert verdicts[0]["verdict"] == "timeout"
        assert elapsed_ms < 2 * budget_ms

    def test_guest_exception_subclassing_base_exception_is_fail(self):
        verdicts, _ = run_batch(
            [task("t6", "def f(x):\n    raise KeyboardInterrupt\n", "assert f(1)")]
        )
        assert verdicts[0]["verdict"] == "fail"

    def test_detail_truncated_to_1_kib(self):
        program = "def f(x):\n    raise ValueError('x' * 100000)\n"
        verdicts, _ = run_batch([task("t7", program, "assert f(1)")])
        assert verdicts[0]["verdict"] == "fail"
        assert len(verdicts[0]["detail"]) <= 1024


class TestProtocolDiscipline:
    def test_one_verdict_per_task_in_order(self):
        tasks = [
            task(f"id-{i}", "def f(x):\n    return x\n", f"assert f({i}) == {i}")
            for i in range(10)
        ]
        verdicts, code = run_batch(tasks)
        assert code == 0
        assert [v["task_id"] for v in verdicts] == [f"id-{i}" for i in range(10)]
        assert all(v["verdict"] == "pass" for v in verdicts)

    def test_malformed_line_yields_error_record(self):
        verdicts, code = run_batch(
            ["{this is not json", task("ok", "x = 1\n", "assert x == 1")]
        )
        assert code == 0
        assert verdicts[0]["task_id"] == "?"
        assert verdicts[0]["verdict"] == "error"
        assert verdicts[1] == {"task_id": "ok", "verdict": "pass", "detail": ""}

    def test_missing_field_yields_error_record(self):
        verdicts, _ = run_batch([json.dumps({"task_id": "x", "mode": "io_test"})])
        assert verdicts[0]["verdict"] == "error"

    def test_unknown_mode_rejected(self):
        record = task("m", "x = 1\n", "assert True")
        record["mode"] = "fuzz"
        verdicts, _ = run_batch([record])
        assert verdicts[0]["verdict"] == "error"

    def test_guest_prints_do_not_corrupt_stream(self):
        tasks = [
            task(
                "noisy",
                "import sys\nprint('{\"task_id\": \"fake\"}')\nsys.stderr.write('noise')\n"
                "def f(x):\n    return x\n",
                "print('more noise')\nassert f(2) == 2",
            ),
            task("after", "x = 1\n", "assert x == 1"),
        ]
        verdicts, code = run_batch(tasks)
        assert code == 0
        assert [v["task_id"] for v in verdicts] == ["noisy", "after"]
        assert verdicts[0]["verdict"] == "pass"

    def test_guest_input_cannot_eat_protocol_lines(self):
        tasks = [
            task("reader", "data = None\n", "import sys\ndata = sys.stdin.read()\nassert data == ''"),
            task("after", "x = 1\n", "assert x == 1"),
        ]
        verdicts, _ = run_batch(tasks)
        assert [v["task_id"] for v in verdicts] == ["reader", "after"]
        assert verdicts[0]["verdict"] == "pass"  # guest stdin is empty, not the protocol

    def test_clean_eof_exits_zero(self):
        verdicts, code = run_batch([])
        assert verdicts == []
        assert code == 0


class TestIsolation:
    def test_globals_do_not_leak_between_tasks(self):
        tasks = [
            task("writer", "LEAK = 42\n", "assert LEAK == 42"),
            task("reader", "x = 1\n", "assert 'LEAK' not in globals()"),
        ]
        verdicts, _ = run_batch(tasks)
        assert [v["verdict"] for v in verdicts] == ["pass", "pass"]

    def test_mutating_builtins_like_globals_is_contained(self):
        tasks = [
            task("polluter", "VALUE = 'polluted'\ndef f():\n    return VALUE\n", "assert f()"),
            task("checker", "def f():\n    return 'clean'\n", "assert f() == 'clean'"),
        ]
        verdicts, _ = run_batch(tasks)
        assert [v["verdict"] for v in verdicts] == ["pass", "pass"]

    def test_network_probe_never_connects(self):
        listener = socket.socket()
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        port = listener.getsockname()[1]
        accepted = []

        def accept_loop():
            listener.settimeout(3.0)
            try:
                conn, _ = listener.accept()
                accepted.append(conn)
                conn.close()
            except socket.timeout:
                pass

        thread = threading.Thread(target=accept_loop)
        thread.start()
        try:
            program = (
                "import socket\n"
                f"s = socket.socket()\n"
                f"s.connect(('127.0.0.1', {port}))\n"
            )
            verdicts, _ = run_batch([task("net", program, "assert True")])
            assert verdicts[0]["verdict"] in ("fail", "error")
            assert "disabled" in verdicts[0]["detail"] or "OSError" in verdicts[0]["detail"]
        finally:
            thread.join()
            listener.close()
        assert accepted == []


class TestSecondaryAcceptance:
    """The [SECONDARY] gate: every crafted verdict class, ordering, and no-net."""

    def test_conformance_battery(self):
        budget_ms = 1000
        tasks = [
            task("pass", "def f(x):\n    return x + 1\n", "assert f(1) == 2"),
            task("fail", "def f(x):\n    return x + 1\n", "assert f(1) == 3"),
            task("fail-detail", "y = 0\n", "assert undefined_function(y)"),
            task("timeout", "while True: pass\n", "assert True", timeout_ms=budget_ms),
        ]
        start = time.monotonic()
        verdicts, code = run_batch(tasks)
        elapsed_ms = (time.monotonic() - start) * 1000
        assert code == 0
        assert [v["task_id"] for v in verdicts] == ["pass", "fail", "fail-detail", "timeout"]
        assert verdicts[0] == {"task_id": "pass", "verdict": "pass", "detail": ""}
        assert verdicts[1]["verdict"] == "fail"
        assert verdicts[2]["verdict"] == "fail" and "NameError" in verdicts[2]["detail"]
        assert verdicts[3]["verdict"] == "timeout"
        assert elapsed_ms < 2 * budget_ms + 3000  # loop cut at its budget, not the wall
        print("[acceptance] guest runner conformance: PASS")


class TestDualExecutionAgreement:
    """Real execution must reproduce the authored fixture verdicts exactly."""

    def test_fixture_corpus_matches_authored_matrices(self):
        import fixture_data
        from specrank.corpus import ProgramSample
        from specrank.executor import ExecutorConfig, verify_problem

        config = ExecutorConfig(
            runner_cmd=(sys.executable, str(RUNNER)),
            workers=2,
            per_task_timeout_ms=3000,
        )
        for pid in ("f1", "f2", "f3"):
            problem = fixture_data.problem(pid)
            programs = [
                ProgramSample(problem_id=pid, index=i, source=source)
                for i, source in enumerate(fixture_data.program_sources(pid))
            ]
            io_specs, rel_specs = fixture_data.extracted_specs(pid)
            matrix = verify_problem(problem, programs, io_specs + rel_specs, config)
            expected = fixture_data.expected_matrix(pid)
            assert matrix.verdicts == expected.verdicts, pid
            assert matrix.gt_correct == expected.gt_correct, pid
