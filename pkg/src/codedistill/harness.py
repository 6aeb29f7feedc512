"""Execution harness: runs candidate code against unit tests via a runner child process.

The runner is an external executable speaking one JSON request on stdin and
one JSON verdict on stdout:

    request: {"code": str, "assertions": [str], "timeout_ms": int}
    verdict: {"status": str, "message": str,
              "per_test": [{"id": str, "result": "pass"|"fail"|"not_run"}],
              "wall_time_ms": int}

The runner exits 0 whenever it manages to report a verdict; errors it can
classify are data, not process failures. Verdict ``per_test`` entries are
positional (the runner ids them by assertion index); the harness maps them
back onto the submitted unit-test ids. The harness's process supervision is
the hard boundary: a runner that hangs past the wall timeout plus a fixed
grace period is killed along with its whole process group.
"""

from __future__ import annotations

import json
import logging
import os
import signal
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .domain import (
    ExecStatus,
    ExecutionFeedback,
    MESSAGE_CAP,
    Task,
    TestKind,
    TestOutcome,
    TestResult,
    UnitTest,
    truncate_message,
)

log = logging.getLogger(__name__)

# Hard-kill margin on top of the wall timeout. Kept under the 2s return-time
# grace contract so kill+reap still fits inside it.
GRACE_MS = 1500


class NoSeenTestsError(ValueError):
    """Raised when a seen-tests-only execution is requested for a task without any."""


@dataclass(frozen=True)
class ExecLimits:
    wall_timeout_ms: int = 10_000
    memory_mb: int = 512
    max_output_bytes: int = 65_536
    network_disabled: bool = True

    def __post_init__(self) -> None:
        if self.wall_timeout_ms <= 0:
            raise ValueError("wall_timeout_ms must be > 0")
        if self.memory_mb <= 0:
            raise ValueError("memory_mb must be > 0")
        if self.max_output_bytes <= 0:
            raise ValueError("max_output_bytes must be > 0")
        if not self.network_disabled:
            raise ValueError("network access inside the jail cannot be enabled")

    def to_dict(self) -> dict[str, Any]:
        return {
            "wall_timeout_ms": self.wall_timeout_ms,
            "memory_mb": self.memory_mb,
            "max_output_bytes": self.max_output_bytes,
            "network_disabled": self.network_disabled,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExecLimits":
        return cls(**d)


@dataclass(frozen=True)
class RunnerRequest:
    code: str
    assertions: tuple[str, ...]
    timeout_ms: int

    def to_wire(self) -> dict[str, Any]:
        return {
            "code": self.code,
            "assertions": list(self.assertions),
            "timeout_ms": self.timeout_ms,
        }


@dataclass(frozen=True)
class RunnerVerdict:
    status: str
    message: str
    per_test: tuple[tuple[str, str], ...]  # (id, result) pairs, positional
    wall_time_ms: int

    @classmethod
    def from_wire(cls, d: dict[str, Any]) -> "RunnerVerdict":
        status = d["status"]
        ExecStatus(status)  # raises on unknown status strings
        per_test = tuple(
            (str(entry["id"]), str(entry["result"])) for entry in d.get("per_test", [])
        )
        for _, result in per_test:
            TestResult(result)
        return cls(
            status=status,
            message=str(d.get("message", "")),
            per_test=per_test,
            wall_time_ms=int(d.get("wall_time_ms", 0)),
        )


class ExecHarness:
    """Supervises runner child processes and classifies their verdicts.

    ``runner_cmd`` is the argv of the runner executable. Each execution gets
    its own scratch directory (the child's cwd and TMPDIR) so concurrent jobs
    never share files; ``extra_env`` entries are passed through to the child
    on top of a minimal environment.
    """

    def __init__(
        self,
        runner_cmd: Sequence[str],
        message_cap: int = MESSAGE_CAP,
        extra_env: Mapping[str, str] | None = None,
    ) -> None:
        if not runner_cmd:
            raise ValueError("runner_cmd must not be empty")
        self.runner_cmd = tuple(runner_cmd)
        self.message_cap = message_cap
        self.extra_env = dict(extra_env or {})

    def execute(
        self, code: str, tests: Sequence[UnitTest], limits: ExecLimits
    ) -> ExecutionFeedback:
        """Run ``code`` against ``tests`` in one isolated runner process."""
        if not tests:
            raise ValueError("tests must be non-empty")
        request = RunnerRequest(
            code=code,
            assertions=tuple(t.assertion for t in tests),
            timeout_ms=limits.wall_timeout_ms,
        )
        started = time.monotonic()
        with tempfile.TemporaryDirectory(prefix="codedistill-exec-") as scratch:
            stdout, stderr, outcome = self._run_child(request, limits, scratch)
        elapsed_ms = int((time.monotonic() - started) * 1000)

        if outcome == "timeout":
            return ExecutionFeedback(
                status=ExecStatus.TIMEOUT,
                message=self._cap("wall timeout exceeded"),
                per_test=self._not_run(tests),
                wall_time_ms=elapsed_ms,
            )
        if outcome == "died":
            return self._harness_error(
                f"runner exited without a verdict: {stderr[:500]!r}", tests, elapsed_ms
            )
        if len(stdout) > limits.max_output_bytes:
            return self._harness_error("runner stdout exceeded output cap", tests, elapsed_ms)
        try:
            verdict = RunnerVerdict.from_wire(json.loads(stdout))
        except (ValueError, KeyError, TypeError) as exc:
            return self._harness_error(
                f"unparseable runner verdict: {exc}", tests, elapsed_ms
            )
        return self._feedback_from_verdict(verdict, tests, elapsed_ms)

    def execute_batch(
        self,
        jobs: Sequence[tuple[str, Sequence[UnitTest]]],
        limits: ExecLimits,
        max_parallel: int,
    ) -> list[ExecutionFeedback]:
        """Run jobs with at most ``max_parallel`` concurrent runner processes.

        Results are positionally aligned with ``jobs``; one job failing (in
        any classified way) never aborts the rest.
        """
        if max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if not jobs:
            return []
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            return list(
                pool.map(lambda job: self.execute(job[0], job[1], limits), jobs)
            )

    def feedback_for_seen(
        self, code: str, task: Task, limits: ExecLimits
    ) -> ExecutionFeedback:
        """Execute against the task's seen tests only."""
        seen = task.tests_of_kind(TestKind.SEEN)
        if not seen:
            raise NoSeenTestsError(f"task {task.id!r} has no seen tests")
        return self.execute(code, seen, limits)

    # -- internals ---------------------------------------------------------

    def _run_child(
        self, request: RunnerRequest, limits: ExecLimits, scratch: str
    ) -> tuple[str, str, str]:
        """Returns (stdout, stderr, outcome) with outcome in {ok, timeout, died}."""
        env = {
            "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
            "PYTHONIOENCODING": "utf-8",
            "HOME": scratch,
            "TMPDIR": scratch,
            "LANG": os.environ.get("LANG", "C.UTF-8"),
        }
        env.update(self.extra_env)
        proc = subprocess.Popen(
            self.runner_cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=scratch,
            env=env,
            start_new_session=True,  # own process group, killable as a tree
            text=True,
        )
        hard_timeout = (limits.wall_timeout_ms + GRACE_MS) / 1000.0
        try:
            stdout, stderr = proc.communicate(
                input=json.dumps(request.to_wire()), timeout=hard_timeout
            )
        except subprocess.TimeoutExpired:
            self._kill_tree(proc)
            return "", "", "timeout"
        if proc.returncode != 0 or not stdout.strip():
            return stdout, stderr, "died"
        return stdout, stderr, "ok"

    @staticmethod
    def _kill_tree(proc: subprocess.Popen) -> None:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            pass
        try:
            proc.communicate(timeout=5)
        except subprocess.TimeoutExpired:  # pragma: no cover - kernel-level stall
            log.error("runner pid %d survived SIGKILL", proc.pid)

    def _feedback_from_verdict(
        self, verdict: RunnerVerdict, tests: Sequence[UnitTest], elapsed_ms: int
    ) -> ExecutionFeedback:
        status = ExecStatus(verdict.status)
        if status is ExecStatus.HARNESS_ERROR:
            return self._harness_error(verdict.message or "runner-side error", tests, elapsed_ms)

        # Remap positional per-test entries onto the submitted unit-test ids;
        # anything the runner did not report is not_run.
        results = [TestResult.NOT_RUN] * len(tests)
        for pos, (_, result) in enumerate(verdict.per_test[: len(tests)]):
            results[pos] = TestResult(result)
        per_test = tuple(
            TestOutcome(unit_test_id=t.id, result=r) for t, r in zip(tests, results)
        )
        all_pass = all(r is TestResult.PASS for r in results)
        if (status is ExecStatus.PASSED) != all_pass:
            return self._harness_error(
                "runner verdict inconsistent with its per_test results", tests, elapsed_ms
            )
        return ExecutionFeedback(
            status=status,
            message="" if status is ExecStatus.PASSED else self._cap(verdict.message),
            per_test=per_test,
            wall_time_ms=verdict.wall_time_ms,
        )

    def _harness_error(
        self, message: str, tests: Sequence[UnitTest], elapsed_ms: int
    ) -> ExecutionFeedback:
        return ExecutionFeedback(
            status=ExecStatus.HARNESS_ERROR,
            message=self._cap(message),
            per_test=self._not_run(tests),
            wall_time_ms=elapsed_ms,
        )

    @staticmethod
    def _not_run(tests: Sequence[UnitTest]) -> tuple[TestOutcome, ...]:
        return tuple(
            TestOutcome(unit_test_id=t.id, result=TestResult.NOT_RUN) for t in tests
        )

    def _cap(self, message: str) -> str:
        return truncate_message(message, self.message_cap)
