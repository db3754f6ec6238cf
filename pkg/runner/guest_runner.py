#!/usr/bin/env python3
"""Sandbox-side task runner: executes one (program, check) pair per request.

Line protocol on stdin/stdout, one JSON record per line, answered in order:

  task:    {"task_id", "program_source", "check_source",
            "mode": "io_test"|"relation"|"ground_truth", "timeout_ms"}
  verdict: {"task_id", "verdict": "pass"|"fail"|"error"|"timeout",
            "detail": <= 1 KiB, empty iff pass}

Each task runs in a fresh namespace: the program source is executed first,
then the check source in the same namespace. The verdict is "pass" iff both
complete without raising inside the time budget; any exception (including a
failure to even define the program) is "fail" with a detail naming the stage
and exception class; "error" is reserved for protocol-level problems such as
an undecodable task line (answered with task_id "?"). A wall-clock interval
timer raises inside the guest for "timeout"; the driving executor adds a hard
process kill on top for guest code that swallows or outlasts the alarm.

The process is strictly single-threaded and serial. Guest stdio goes to
/dev/null at the file-descriptor level (the protocol uses private duplicates
of the original stdin/stdout), so nothing the guest prints can corrupt the
stream, and guest input() reads EOF. With GUEST_RUNNER_NO_NET=1 the socket
module is neutered before any guest code runs. These are process-level
measures: a determined guest can still escape a Python process, so run the
whole pool inside a disposable VM or container when sources are untrusted.

Stdlib only; exits 0 on clean stdin EOF.
"""

import json
import os
import signal
import sys

DETAIL_LIMIT = 1024
VALID_MODES = ("io_test", "relation", "ground_truth")


class _GuestTimeout(BaseException):
    """Raised by the interval-timer handler; BaseException so a guest's bare
    `except Exception` cannot swallow it."""


def _on_alarm(signum, frame):
    raise _GuestTimeout()


def _install_no_net_guard():
    import socket

    def _blocked(*args, **kwargs):
        raise OSError("network access is disabled inside the guest runner")

    class _BlockedSocket(socket.socket):
        def __init__(self, *args, **kwargs):
            raise OSError("network access is disabled inside the guest runner")

    socket.socket = _BlockedSocket
    socket.create_connection = _blocked
    socket.create_server = _blocked
    socket.socketpair = _blocked


def _redirect_stdio():
    """Private protocol streams; guest-visible fds 0/1/2 point at /dev/null."""
    task_in = os.fdopen(os.dup(0), "r", encoding="utf-8", errors="replace")
    verdict_out = os.fdopen(os.dup(1), "w", encoding="utf-8")
    devnull = os.open(os.devnull, os.O_RDWR)
    os.dup2(devnull, 0)
    os.dup2(devnull, 1)
    os.dup2(devnull, 2)
    os.close(devnull)
    return task_in, verdict_out


def _truncate(text):
    return text if len(text) <= DETAIL_LIMIT else text[: DETAIL_LIMIT - 3] + "..."


def _describe(stage, exc):
    message = str(exc)
    label = f"{stage}: {type(exc).__name__}"
    return _truncate(f"{label}: {message}" if message else label)


def _run_guest(task):
    """Execute program then check in one fresh namespace; map outcome to a verdict."""
    timeout_s = task["timeout_ms"] / 1000.0
    namespace = {"__name__": "__main__"}
    old_handler = signal.signal(signal.SIGALRM, _on_alarm)
    signal.setitimer(signal.ITIMER_REAL, timeout_s)
    try:
        stage = "program"
        try:
            exec(compile(task["program_source"], "<program>", "exec"), namespace)
            stage = "check"
            exec(compile(task["check_source"], "<check>", "exec"), namespace)
        except _GuestTimeout:
            return "timeout", _truncate(f"{stage}: exceeded {task['timeout_ms']} ms")
        except AssertionError as exc:
            return "fail", _describe(stage, exc)
        except BaseException as exc:  # everything else is non-satisfaction too
            return "fail", _describe(stage, exc)
        return "pass", ""
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.signal(signal.SIGALRM, old_handler)


def _parse(line):
    task = json.loads(line)
    if not isinstance(task, dict):
        raise ValueError("task must be an object")
    for key in ("task_id", "program_source", "check_source", "mode", "timeout_ms"):
        if key not in task:
            raise ValueError(f"missing field {key!r}")
    if task["mode"] not in VALID_MODES:
        raise ValueError(f"unknown mode {task['mode']!r}")
    if not isinstance(task["timeout_ms"], int) or task["timeout_ms"] <= 0:
        raise ValueError("timeout_ms must be a positive integer")
    if not task["program_source"] or not task["check_source"]:
        raise ValueError("sources must be non-empty")
    return task


def main():
    task_in, verdict_out = _redirect_stdio()
    if os.environ.get("GUEST_RUNNER_NO_NET") == "1":
        _install_no_net_guard()
    sink = open(os.devnull, "w", encoding="utf-8")
    for line in task_in:
        if not line.strip():
            continue
        try:
            task = _parse(line)
        except (ValueError, json.JSONDecodeError) as exc:
            record = {"task_id": "?", "verdict": "error", "detail": _truncate(str(exc))}
            verdict_out.write(json.dumps(record) + "\n")
            verdict_out.flush()
            continue
        sys.stdout = sink  # guest prints go nowhere, even via the sys module
        sys.stderr = sink
        try:
            verdict, detail = _run_guest(task)
        finally:
            sys.stdout = sys.__stdout__
            sys.stderr = sys.__stderr__
        record = {"task_id": task["task_id"], "verdict": verdict, "detail": detail}
        verdict_out.write(json.dumps(record) + "\n")
        verdict_out.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
