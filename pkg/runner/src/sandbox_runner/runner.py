"""Executes one candidate-code request under resource limits.

Protocol: one JSON request on stdin, one JSON verdict on stdout, exit 0
whenever a verdict was reported (classified errors are data, not process
failures).

    request: {"code": str, "assertions": [str], "timeout_ms": int}
    verdict: {"status": str, "message": str,
              "per_test": [{"id": str, "result": "pass"|"fail"|"not_run"}],
              "wall_time_ms": int}

Phases are separated: the code is compiled first (syntax errors become
compile_error before anything runs), its definitions are executed once, then
each assertion runs in order in a fresh namespace seeded with those
definitions. An AssertionError fails a test as test_failure; any other
exception is runtime_error. Candidate stdout/stderr are captured and folded
into the message only on failure, so the runner's own stdout stays exactly
one JSON verdict.

Limits are self-imposed before the untrusted code runs: address space
(SANDBOX_RUNNER_MEMORY_MB, default 512), a CPU-time backstop, and a wall
timer driving the timeout verdict. Best-effort only; the supervising
harness's process-group kill is the hard boundary.
"""

from __future__ import annotations

import io
import json
import math
import os
import resource
import signal
import sys
import time
import traceback

DEFAULT_MEMORY_MB = 512
MAX_CAPTURE_BYTES = 65_536

PASS = "pass"
FAIL = "fail"
NOT_RUN = "not_run"


class _WallTimeout(Exception):
    pass


def _raise_timeout(signum, frame):
    raise _WallTimeout()


def apply_limits(timeout_ms: int) -> None:
    """Self-imposed address-space and CPU limits plus the wall timer."""
    memory_mb = int(os.environ.get("SANDBOX_RUNNER_MEMORY_MB", DEFAULT_MEMORY_MB))
    memory_bytes = memory_mb * 1024 * 1024
    try:
        resource.setrlimit(resource.RLIMIT_AS, (memory_bytes, memory_bytes))
    except (ValueError, OSError):
        pass  # platform refuses; harness supervision still applies
    # CPU backstop strictly above the wall limit so the wall timer (which can
    # report a classified verdict) always fires first.
    cpu_seconds = math.ceil(timeout_ms / 1000.0) + 2
    try:
        resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds + 1))
    except (ValueError, OSError):
        pass
    signal.signal(signal.SIGALRM, _raise_timeout)
    signal.setitimer(signal.ITIMER_REAL, timeout_ms / 1000.0)


def disable_network() -> None:
    """Best-effort: candidate code gets no working socket constructor."""
    import socket

    def _blocked(*args, **kwargs):
        raise OSError("network access is disabled in the sandbox")

    socket.socket = _blocked  # type: ignore[misc]
    socket.create_connection = _blocked  # type: ignore[assignment]


def _exception_summary(exc: BaseException) -> str:
    return "".join(traceback.format_exception_only(type(exc), exc)).strip()


class _Capture:
    """Redirects candidate stdout/stderr into one bounded buffer."""

    def __init__(self) -> None:
        self.buffer = io.StringIO()

    def __enter__(self) -> "_Capture":
        self._saved = (sys.stdout, sys.stderr)
        sys.stdout = self.buffer
        sys.stderr = self.buffer
        return self

    def __exit__(self, *exc) -> bool:
        sys.stdout, sys.stderr = self._saved
        return False

    def text(self) -> str:
        return self.buffer.getvalue()[:MAX_CAPTURE_BYTES]


def run_verdict(request: dict) -> dict:
    """Compile, define, assert; classify the outcome into one verdict."""
    code = request["code"]
    assertions = [str(a) for a in request["assertions"]]
    started = time.monotonic()

    def wall_ms() -> int:
        return int((time.monotonic() - started) * 1000)

    def verdict(status: str, message: str, results: list[str]) -> dict:
        signal.setitimer(signal.ITIMER_REAL, 0)
        return {
            "status": status,
            "message": message,
            "per_test": [{"id": str(i), "result": r} for i, r in enumerate(results)],
            "wall_time_ms": wall_ms(),
        }

    try:
        compiled = compile(code, "<candidate>", "exec")
    except (SyntaxError, ValueError) as exc:
        return verdict("compile_error", _exception_summary(exc), [])

    results: list[str] = [NOT_RUN] * len(assertions)
    capture = _Capture()

    candidate_ns: dict = {"__name__": "__candidate__"}
    try:
        with capture:
            exec(compiled, candidate_ns)
    except _WallTimeout:
        return verdict("timeout", f"no verdict within {request['timeout_ms']}ms", results)
    except BaseException as exc:
        message = _failure_message(_exception_summary(exc), None, capture)
        return verdict("runtime_error", message, results)

    first_message = ""
    saw_runtime_error = False
    for i, assertion in enumerate(assertions):
        namespace = dict(candidate_ns)  # fresh view per assertion
        try:
            with capture:
                exec(compile(assertion, f"<assertion {i}>", "exec"), namespace)
            results[i] = PASS
        except _WallTimeout:
            return verdict("timeout", f"no verdict within {request['timeout_ms']}ms", results)
        except AssertionError as exc:
            results[i] = FAIL
            if not first_message:
                summary = _exception_summary(exc)
                first_message = _failure_message(summary, assertion, capture)
        except BaseException as exc:
            results[i] = FAIL
            saw_runtime_error = True
            if not first_message:
                first_message = _failure_message(_exception_summary(exc), assertion, capture)

    if all(r == PASS for r in results) and results:
        return verdict("passed", "", results)
    if not results:
        return verdict("harness_error", "request contained no assertions", results)
    status = "runtime_error" if saw_runtime_error else "test_failure"
    return verdict(status, first_message, results)


def _failure_message(summary: str, assertion: str | None, capture: _Capture) -> str:
    parts = [summary]
    if assertion is not None:
        parts.append(f"failed: {assertion}")
    printed = capture.text()
    if printed:
        parts.append(f"captured output:\n{printed}")
    return "\n".join(parts)


def main() -> int:
    real_stdout = sys.stdout
    try:
        request = json.loads(sys.stdin.read())
        timeout_ms = int(request["timeout_ms"])
        if not isinstance(request["code"], str) or not isinstance(request["assertions"], list):
            raise TypeError("bad request field types")
    except (ValueError, KeyError, TypeError) as exc:
        json.dump(
            {
                "status": "harness_error",
                "message": f"malformed request: {exc}",
                "per_test": [],
                "wall_time_ms": 0,
            },
            real_stdout,
        )
        return 0

    apply_limits(timeout_ms)
    disable_network()
    try:
        result = run_verdict(request)
    except BaseException as exc:  # never die without a verdict
        signal.setitimer(signal.ITIMER_REAL, 0)
        result = {
            "status": "harness_error",
            "message": f"runner crashed: {_exception_summary(exc)}",
            "per_test": [],
            "wall_time_ms": 0,
        }
    json.dump(result, real_stdout)
    real_stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
