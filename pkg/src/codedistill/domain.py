"""Shared domain types for the distillation pipeline.

Every type is an immutable value object with a flat JSON representation;
one object per line in JSONL files. Validation that can fail a whole
pipeline run lives in constructors; per-task data quality issues are
reported as violation strings by :func:`validate_task` instead.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence, Type, TypeVar

MESSAGE_CAP = 2000
TRUNCATION_SUFFIX = " ...[truncated]"


class TaskOrigin(str, enum.Enum):
    SEED = "seed"
    TEACHER_GENERATED = "teacher_generated"
    BENCHMARK = "benchmark"


class TestKind(str, enum.Enum):
    SEEN = "seen"
    HIDDEN = "hidden"


class StepKind(str, enum.Enum):
    ONE = "one"
    TWO = "two"


class ExecStatus(str, enum.Enum):
    PASSED = "passed"
    COMPILE_ERROR = "compile_error"
    RUNTIME_ERROR = "runtime_error"
    TEST_FAILURE = "test_failure"
    TIMEOUT = "timeout"
    HARNESS_ERROR = "harness_error"


class TestResult(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    NOT_RUN = "not_run"


class RecordKind(str, enum.Enum):
    CODE_GENERATION = "code_generation"
    CODE_REFINEMENT = "code_refinement"


class Variant(str, enum.Enum):
    STAND = "StanD"
    INPD = "InpD"
    INPD_REFINE = "InpD_refine"
    INPD_COMBINED = "InpD_combined"
    PERSD = "PERsD"
    PERSD_REFINE = "PERsD_refine"
    PERSD_COMBINED = "PERsD_combined"


def truncate_message(text: str, cap: int = MESSAGE_CAP) -> str:
    """Clamp an error message to ``cap`` characters, marking the cut."""
    if len(text) <= cap:
        return text
    keep = max(cap - len(TRUNCATION_SUFFIX), 0)
    return text[:keep] + TRUNCATION_SUFFIX


@dataclass(frozen=True)
class UnitTest:
    id: str
    kind: TestKind
    assertion: str  # one self-contained executable statement

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "kind": self.kind.value, "assertion": self.assertion}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "UnitTest":
        return cls(id=d["id"], kind=TestKind(d["kind"]), assertion=d["assertion"])


@dataclass(frozen=True)
class Task:
    """One code-generation problem: instruction, unit tests, optional solution.

    Deliberately constructible in invalid states so corpora can be loaded,
    inspected and reported on; see :func:`validate_task`.
    """

    id: str
    instruction: str
    unit_tests: tuple[UnitTest, ...] = ()
    canonical_code: str | None = None
    origin: TaskOrigin = TaskOrigin.TEACHER_GENERATED

    def tests_of_kind(self, kind: TestKind) -> tuple[UnitTest, ...]:
        return tuple(t for t in self.unit_tests if t.kind is kind)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "instruction": self.instruction,
            "unit_tests": [t.to_dict() for t in self.unit_tests],
            "canonical_code": self.canonical_code,
            "origin": self.origin.value,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Task":
        return cls(
            id=d["id"],
            instruction=d["instruction"],
            unit_tests=tuple(UnitTest.from_dict(t) for t in d["unit_tests"]),
            canonical_code=d.get("canonical_code"),
            origin=TaskOrigin(d["origin"]),
        )


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 0.0
    top_p: float = 1.0
    n_samples: int = 1
    max_tokens: int = 512

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "n_samples": self.n_samples,
            "max_tokens": self.max_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SamplingConfig":
        return cls(**d)


@dataclass(frozen=True)
class Attempt:
    """A model-generated code candidate bound to a task.

    Two-step attempts must name the one-step attempt they refine via
    ``parent_id`` (see :meth:`attempt_id`).
    """

    task_id: str
    code: str
    producer: str  # endpoint name that generated the code
    sampling: SamplingConfig
    index: int
    step: StepKind = StepKind.ONE
    parent_id: str | None = None

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"index must be >= 0, got {self.index}")
        if self.step is StepKind.TWO and not self.parent_id:
            raise ValueError("step=two attempts must reference a step=one parent_id")

    @property
    def attempt_id(self) -> str:
        return f"{self.task_id}/{self.producer}/{self.step.value}/{self.index}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "code": self.code,
            "producer": self.producer,
            "sampling": self.sampling.to_dict(),
            "index": self.index,
            "step": self.step.value,
            "parent_id": self.parent_id,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Attempt":
        return cls(
            task_id=d["task_id"],
            code=d["code"],
            producer=d["producer"],
            sampling=SamplingConfig.from_dict(d["sampling"]),
            index=d["index"],
            step=StepKind(d["step"]),
            parent_id=d.get("parent_id"),
        )


@dataclass(frozen=True)
class TestOutcome:
    unit_test_id: str
    result: TestResult

    def to_dict(self) -> dict[str, Any]:
        return {"unit_test_id": self.unit_test_id, "result": self.result.value}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TestOutcome":
        return cls(unit_test_id=d["unit_test_id"], result=TestResult(d["result"]))


@dataclass(frozen=True)
class ExecutionFeedback:
    """Outcome of running candidate code against a suite of unit tests."""

    status: ExecStatus
    message: str = ""
    per_test: tuple[TestOutcome, ...] = ()
    wall_time_ms: int = 0

    def __post_init__(self) -> None:
        all_pass = bool(self.per_test) and all(
            o.result is TestResult.PASS for o in self.per_test
        )
        if (self.status is ExecStatus.PASSED) != all_pass:
            raise ValueError(
                f"status {self.status.value} inconsistent with per_test results"
            )
        if self.status is ExecStatus.PASSED and self.message:
            raise ValueError("passed feedback must carry an empty message")
        if self.wall_time_ms < 0:
            raise ValueError("wall_time_ms must be >= 0")

    @property
    def passed(self) -> bool:
        return self.status is ExecStatus.PASSED

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "message": self.message,
            "per_test": [o.to_dict() for o in self.per_test],
            "wall_time_ms": self.wall_time_ms,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExecutionFeedback":
        return cls(
            status=ExecStatus(d["status"]),
            message=d["message"],
            per_test=tuple(TestOutcome.from_dict(o) for o in d["per_test"]),
            wall_time_ms=d["wall_time_ms"],
        )


@dataclass(frozen=True)
class RefinementRecord:
    """A refinement instruction/answer pair collected for one failing attempt.

    ``validated`` is set only after the refined code re-executed to passed on
    the full test suite of its task; the pipeline enforces that gate.
    """

    task_id: str
    student_attempt: Attempt
    feedback: ExecutionFeedback
    refinement_instruction: str
    refined_code: str
    validated: bool

    def __post_init__(self) -> None:
        if self.feedback.status is ExecStatus.PASSED:
            raise ValueError("refinements exist only for failing attempts")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "student_attempt": self.student_attempt.to_dict(),
            "feedback": self.feedback.to_dict(),
            "refinement_instruction": self.refinement_instruction,
            "refined_code": self.refined_code,
            "validated": self.validated,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RefinementRecord":
        return cls(
            task_id=d["task_id"],
            student_attempt=Attempt.from_dict(d["student_attempt"]),
            feedback=ExecutionFeedback.from_dict(d["feedback"]),
            refinement_instruction=d["refinement_instruction"],
            refined_code=d["refined_code"],
            validated=d["validated"],
        )


_TEMPLATE_MARKERS = ("<<TASK>>", "<<CODE>>", "<<ERROR>>", "<<HEADER>>")


@dataclass(frozen=True)
class DatasetRecord:
    """One finetuning example emitted by a dataset variant."""

    input: str
    output: str
    kind: RecordKind
    task_id: str
    variant: Variant

    def __post_init__(self) -> None:
        if self.kind is RecordKind.CODE_REFINEMENT:
            leftover = [m for m in _TEMPLATE_MARKERS if m in self.input]
            if leftover:
                raise ValueError(f"unsubstituted placeholders in input: {leftover}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "input": self.input,
            "output": self.output,
            "kind": self.kind.value,
            "task_id": self.task_id,
            "variant": self.variant.value,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DatasetRecord":
        return cls(
            input=d["input"],
            output=d["output"],
            kind=RecordKind(d["kind"]),
            task_id=d["task_id"],
            variant=Variant(d["variant"]),
        )


def validate_task(task: Task) -> list[str]:
    """Return human-readable invariant violations; empty list means valid."""
    violations: list[str] = []
    if not task.id:
        violations.append("id empty")
    if not task.instruction.strip():
        violations.append("instruction empty")
    if not task.unit_tests and task.origin is not TaskOrigin.SEED:
        violations.append("unit_tests empty")
    seen_ids: set[str] = set()
    for test in task.unit_tests:
        if not test.assertion.strip():
            violations.append(f"unit_test {test.id!r} has empty assertion")
        if test.id in seen_ids:
            violations.append(f"duplicate unit_test id {test.id!r}")
        seen_ids.add(test.id)
    return violations


def validate_corpus(tasks: Sequence[Task]) -> list[str]:
    """Corpus-level validation: per-task violations plus id uniqueness."""
    violations: list[str] = []
    counts: dict[str, int] = {}
    for task in tasks:
        counts[task.id] = counts.get(task.id, 0) + 1
        violations.extend(f"{task.id}: {v}" for v in validate_task(task))
    violations.extend(
        f"duplicate task id {tid!r} ({n} occurrences)"
        for tid, n in sorted(counts.items())
        if n > 1
    )
    return violations


T = TypeVar("T")


def to_json_line(obj: Any) -> str:
    return json.dumps(obj.to_dict(), sort_keys=True, ensure_ascii=False)


def dump_jsonl(items: Iterable[Any]) -> str:
    """Serialize value objects to JSONL text (deterministic byte-for-byte)."""
    return "".join(to_json_line(item) + "\n" for item in items)


def write_jsonl(path: str | Path, items: Iterable[Any]) -> None:
    Path(path).write_text(dump_jsonl(items), encoding="utf-8")


def iter_jsonl(text: str, cls: Type[T]) -> Iterator[T]:
    # Split on \n only: JSON strings may legally contain other Unicode line
    # separators raw when ensure_ascii is off.
    for line in text.split("\n"):
        if line.strip():
            yield cls.from_dict(json.loads(line))


def read_jsonl(path: str | Path, cls: Type[T]) -> list[T]:
    return list(iter_jsonl(Path(path).read_text(encoding="utf-8"), cls))


def relabel_seen(test: UnitTest) -> UnitTest:
    return replace(test, kind=TestKind.SEEN)
