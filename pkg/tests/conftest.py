"""Shared fixtures: stub runner, toy corpus and the scripted mock scenario.

The scenario pairs real code semantics with stub markers describing what the
real runner would observe, so the same fixtures drive both the offline suite
(stub runner) and the real-runner conformance checks.
"""

from __future__ import annotations

import re
import sys
from pathlib import Path
from typing import Sequence

import pytest

from codedistill.domain import (
    SamplingConfig,
    Task,
    TaskOrigin,
    TestKind,
    UnitTest,
)
from codedistill.gateway import (
    BackendReply,
    CostLedger,
    EndpointConfig,
    Gateway,
    estimate_usage,
)
from codedistill.harness import ExecHarness, ExecLimits
from codedistill.prompting import ChatTurn

TESTS_DIR = Path(__file__).parent
STUB_RUNNER = TESTS_DIR / "stub_runner.py"

N_SCENARIO_TASKS = 20
STUDENT_FAILS = 12  # tasks 0..11 get a wrong student attempt
TEACHER_REPAIRS = 10  # tasks 0..9 get a working refinement; 10..11 stay broken


def stub_runner_cmd() -> tuple[str, ...]:
    return (sys.executable, str(STUB_RUNNER))


@pytest.fixture()
def limits() -> ExecLimits:
    return ExecLimits(wall_timeout_ms=5000)


@pytest.fixture()
def harness() -> ExecHarness:
    return ExecHarness(stub_runner_cmd())


# -- toy tasks ---------------------------------------------------------------


def correct_code(i: int) -> str:
    return f"def add{i}(x):\n    return x + {i}\n"


def refined_code(i: int) -> str:
    # A correct fix that is textually distinct from the canonical solution,
    # so label-personalised variants differ from input-personalised ones.
    return f"def add{i}(x):\n    result = x + {i}\n    return result\n"


def wrong_code(i: int) -> str:
    # Really fails every assertion; the marker tells the stub runner so.
    return f"def add{i}(x):\n    return None  # stub: fail=all\n"


def toy_instruction(i: int, with_examples: bool = False) -> str:
    doc = [f'    """Return x plus {i}.']
    if with_examples:
        doc += ["", f"    >>> add{i}(1)", f"    {1 + i}", f"    >>> add{i}(2)", f"    {2 + i}"]
    doc.append('    """')
    return f"def add{i}(x):\n" + "\n".join(doc) + "\n"


def toy_task(i: int, seen_examples: bool = False) -> Task:
    tests = tuple(
        UnitTest(id=f"t{j}", kind=TestKind.HIDDEN, assertion=f"assert add{i}({v}) == {v + i}")
        for j, v in enumerate((1, 2, 5))
    )
    return Task(
        id=f"toy-{i:02d}",
        instruction=toy_instruction(i, with_examples=seen_examples),
        unit_tests=tests,
        canonical_code=correct_code(i),
        origin=TaskOrigin.TEACHER_GENERATED,
    )


@pytest.fixture()
def scenario_corpus() -> list[Task]:
    return [toy_task(i) for i in range(N_SCENARIO_TASKS)]


# -- scripted endpoints --------------------------------------------------------


def _task_index(turns: Sequence[ChatTurn]) -> int:
    text = "\n".join(t.content for t in turns)
    m = re.search(r"add(\d+)\(", text)
    if m is None:
        raise AssertionError(f"scenario backend got an unexpected request: {text[:160]!r}")
    return int(m.group(1))


class ScenarioBackend:
    """Deterministic mock teacher+student for the 20-task scenario."""

    def __init__(
        self,
        student_fails: int = STUDENT_FAILS,
        teacher_repairs: int = TEACHER_REPAIRS,
    ) -> None:
        self.student_fails = student_fails
        self.teacher_repairs = teacher_repairs
        self.calls: list[tuple[str, int]] = []

    def complete(self, endpoint, turns, sampling):
        i = _task_index(turns)
        self.calls.append((endpoint.name, i))
        if endpoint.name == "student":
            code = wrong_code(i) if i < self.student_fails else correct_code(i)
        elif endpoint.name == "teacher":
            code = refined_code(i) if i < self.teacher_repairs else wrong_code(i)
        else:
            raise AssertionError(f"unexpected endpoint {endpoint.name!r}")
        texts = tuple(f"```python\n{code}```" for _ in range(sampling.n_samples))
        return BackendReply(texts=texts, usage=estimate_usage(turns, texts))


@pytest.fixture()
def student_endpoint() -> EndpointConfig:
    return EndpointConfig(name="student", max_in_flight=8)


@pytest.fixture()
def teacher_endpoint() -> EndpointConfig:
    return EndpointConfig(
        name="teacher",
        max_in_flight=8,
        price_per_1k_prompt_tokens=0.0015,
        price_per_1k_completion_tokens=0.002,
    )


@pytest.fixture()
def scenario_backend() -> ScenarioBackend:
    return ScenarioBackend()


@pytest.fixture()
def scenario_gateway(scenario_backend) -> Gateway:
    return Gateway(scenario_backend, ledger=CostLedger())


@pytest.fixture()
def attempt_sampling() -> SamplingConfig:
    return SamplingConfig(temperature=0.3, n_samples=1)
