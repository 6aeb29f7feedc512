"""Distillation corpus construction, refinement collection and variant emission.

Stages compose: build a teacher-generated corpus of executable tasks, collect
student attempts and their execution feedback, obtain teacher refinements for
the failing attempts (validated by re-execution against the full test suite),
then emit any of the seven dataset variants from the same collected state.
"""

from __future__ import annotations

import ast
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

from .domain import (
    Attempt,
    DatasetRecord,
    ExecStatus,
    ExecutionFeedback,
    RecordKind,
    RefinementRecord,
    SamplingConfig,
    StepKind,
    Task,
    TaskOrigin,
    TestKind,
    UnitTest,
    Variant,
)
from .gateway import EndpointConfig, Gateway, GatewayError
from .harness import ExecHarness, ExecLimits
from .prompting import (
    PromptError,
    RefinementTemplate,
    parse_code_block,
    parse_test_inputs,
    extract_function_header,
    render_refinement_instruction,
    render_task_generation_prompt,
    render_teacher_refinement_chat,
    render_test_input_prompt,
    user,
)

log = logging.getLogger(__name__)

N_TEST_INPUTS = 5
CAPTURE_MARK = "CAPTURE:"


class DanglingTaskError(ValueError):
    """A refinement or attempt references a task missing from the corpus."""


@dataclass(frozen=True)
class CorpusStats:
    n_tasks_in: int = 0  # generation attempts requested from the teacher
    n_parsed: int = 0  # replies yielding an instruction + solution
    n_with_inputs: int = 0  # tasks with 5 parsed unique test inputs
    n_executed: int = 0  # tasks whose solution executed on all inputs
    n_kept: int = 0  # after validation and dedup
    dollar_cost: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_tasks_in": self.n_tasks_in,
            "n_parsed": self.n_parsed,
            "n_with_inputs": self.n_with_inputs,
            "n_executed": self.n_executed,
            "n_kept": self.n_kept,
            "dollar_cost": self.dollar_cost,
        }


@dataclass(frozen=True)
class RoundStats:
    n_tasks_in: int
    n_wrong_attempts: int
    n_validated_refinements: int
    dollar_cost: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.n_validated_refinements <= self.n_wrong_attempts <= self.n_tasks_in:
            raise ValueError(
                "expected n_validated_refinements <= n_wrong_attempts <= n_tasks_in, got "
                f"{self.n_validated_refinements}/{self.n_wrong_attempts}/{self.n_tasks_in}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_tasks_in": self.n_tasks_in,
            "n_wrong_attempts": self.n_wrong_attempts,
            "n_validated_refinements": self.n_validated_refinements,
            "dollar_cost": self.dollar_cost,
        }


@dataclass(frozen=True)
class PipelineRound:
    """One round of personalised data collection against a student endpoint.

    Rounds beyond the first must point at the endpoint serving the model
    trained on the previous round's data; ``trained_from_round`` makes that
    designation explicit and checkable.
    """

    round_index: int
    student_endpoint: EndpointConfig
    attempt_sampling: SamplingConfig = SamplingConfig(temperature=0.3, n_samples=1)
    trained_from_round: int | None = None

    def __post_init__(self) -> None:
        if self.round_index < 1:
            raise ValueError("round_index must be >= 1")
        if self.round_index > 1 and self.trained_from_round != self.round_index - 1:
            raise ValueError(
                f"round {self.round_index} requires a student endpoint trained on "
                f"round {self.round_index - 1}"
            )


@dataclass
class RoundResult:
    datasets: dict[Variant, list[DatasetRecord]]
    stats: RoundStats
    attempts: list[tuple[Attempt, ExecutionFeedback]]
    refinements: list[RefinementRecord]


@dataclass(frozen=True)
class RefinementCandidate:
    task: Task
    attempt: Attempt
    feedback: ExecutionFeedback


@dataclass(frozen=True)
class AttemptOutcome:
    """Serializable (attempt, feedback) pair for the attempts artifact file."""

    attempt: Attempt
    feedback: ExecutionFeedback

    def to_dict(self) -> dict[str, Any]:
        return {"attempt": self.attempt.to_dict(), "feedback": self.feedback.to_dict()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AttemptOutcome":
        return cls(
            attempt=Attempt.from_dict(d["attempt"]),
            feedback=ExecutionFeedback.from_dict(d["feedback"]),
        )


def _capture_payload(message: str) -> list | None:
    """Extract the literal list a capture assertion smuggled into its message."""
    idx = message.find(CAPTURE_MARK)
    if idx < 0:
        return None
    rest = message[idx + len(CAPTURE_MARK):]
    start = rest.find("[")
    if start < 0:
        return None
    depth = 0
    for i in range(start, len(rest)):
        if rest[i] == "[":
            depth += 1
        elif rest[i] == "]":
            depth -= 1
            if depth == 0:
                try:
                    value = ast.literal_eval(rest[start : i + 1])
                except (ValueError, SyntaxError):
                    return None
                return value if isinstance(value, list) else None
    return None


def _args_source(args: tuple) -> str:
    return ", ".join(repr(a) for a in args)


_DEF_NAME_RE = re.compile(r"^def\s+(\w+)\s*\(")


def function_name_from_header(header: str) -> str | None:
    m = _DEF_NAME_RE.match(header)
    return m.group(1) if m else None


class DistillationPipeline:
    """Bundles the shared collaborators every pipeline stage needs."""

    def __init__(
        self,
        gateway: Gateway,
        harness: ExecHarness,
        limits: ExecLimits,
        refinement_template: RefinementTemplate,
        rng_seed: int = 0,
        max_workers: int = 4,
        n_in_context: int = 3,
        teacher_sampling: SamplingConfig = SamplingConfig(
            temperature=0.7, top_p=0.95, n_samples=1, max_tokens=1024
        ),
    ) -> None:
        self.gateway = gateway
        self.harness = harness
        self.limits = limits
        self.refinement_template = refinement_template
        self.rng_seed = rng_seed
        self.max_workers = max(1, max_workers)
        self.n_in_context = n_in_context
        self.teacher_sampling = teacher_sampling

    # -- corpus construction -------------------------------------------------

    def build_stand_corpus(
        self,
        seed_tasks: Sequence[Task],
        teacher: EndpointConfig,
        target_count: int,
    ) -> tuple[list[Task], CorpusStats]:
        """Generate, test-equip, execution-filter and dedup a task corpus.

        Per generated task the teacher is asked for an instruction+solution
        pair, then for 5 unique test inputs; the solution is executed on the
        inputs to capture expected outputs, forming 5 assertions, and executed
        once more against those assertions as a validation run. A task is
        dropped at whichever stage first fails; drops are attrition, not
        errors.
        """
        if not seed_tasks and target_count > 0:
            raise ValueError("seed_tasks must be non-empty")
        cost_before = self.gateway.ledger.total_cost()
        n_parsed = n_with_inputs = n_executed = 0
        candidates: list[Task] = []

        def generate_one(i: int) -> Task | None:
            prompt = render_task_generation_prompt(
                seed_tasks, self.n_in_context, rng_seed=self.rng_seed + i
            )
            try:
                [reply] = self.gateway.chat(teacher, [user(prompt)], self.teacher_sampling)
            except GatewayError as exc:
                log.warning("task generation %d failed: %s", i, exc)
                return None
            parsed = _parse_generated_task(reply)
            if parsed is None:
                return None
            instruction, code = parsed
            return Task(
                id=f"gen-{i}",
                instruction=instruction,
                canonical_code=code,
                origin=TaskOrigin.TEACHER_GENERATED,
            )

        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            generated = list(pool.map(generate_one, range(target_count)))

        def equip_one(task: Task | None) -> tuple[Task | None, bool, bool]:
            """Returns (task-with-tests or None, had_inputs, executed)."""
            if task is None:
                return None, False, False
            header = _try_header(task)
            fn = function_name_from_header(header) if header else None
            if fn is None:
                return None, False, False
            try:
                [reply] = self.gateway.chat(
                    teacher, [user(render_test_input_prompt(task))], self.teacher_sampling
                )
            except GatewayError as exc:
                log.warning("test-input generation for %s failed: %s", task.id, exc)
                return None, False, False
            inputs = parse_test_inputs(reply, task)
            if len(inputs) != N_TEST_INPUTS:
                return None, False, False
            outputs = self._capture_outputs(task, fn, inputs)
            if outputs is None:
                return None, True, False
            tests = tuple(
                UnitTest(
                    id=f"t{j}",
                    kind=TestKind.HIDDEN,
                    assertion=f"assert {fn}({_args_source(args)}) == {expected!r}",
                )
                for j, (args, expected) in enumerate(zip(inputs, outputs))
            )
            equipped = Task(
                id=task.id,
                instruction=task.instruction,
                unit_tests=tests,
                canonical_code=task.canonical_code,
                origin=task.origin,
            )
            # Validation run; also a flakiness probe on top of the capture run.
            feedback = self.harness.execute(
                equipped.canonical_code or "", equipped.unit_tests, self.limits
            )
            if feedback.status is not ExecStatus.PASSED:
                log.info("dropping %s: validation run returned %s", task.id, feedback.status.value)
                return None, True, False
            return equipped, True, True

        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            equipped = list(pool.map(equip_one, generated))

        n_parsed = sum(1 for t in generated if t is not None)
        n_with_inputs = sum(1 for _, had, _ in equipped if had)
        n_executed = sum(1 for _, _, ran in equipped if ran)

        seen_instructions: set[str] = set()
        for task, _, _ in equipped:
            if task is None:
                continue
            normalized = " ".join(task.instruction.split())
            if normalized in seen_instructions:
                log.info("dropping %s: duplicate instruction", task.id)
                continue
            seen_instructions.add(normalized)
            candidates.append(task)

        stats = CorpusStats(
            n_tasks_in=target_count,
            n_parsed=n_parsed,
            n_with_inputs=n_with_inputs,
            n_executed=n_executed,
            n_kept=len(candidates),
            dollar_cost=self.gateway.ledger.total_cost() - cost_before,
        )
        return candidates, stats

    def _capture_outputs(self, task: Task, fn: str, inputs: list[tuple]) -> list | None:
        """Run the canonical code on the inputs and read back its outputs.

        The capture travels through the ordinary runner protocol: a single
        always-failing assertion whose message carries the repr of the output
        list, parsed back out of the execution feedback.
        """
        calls = ", ".join(f"{fn}({_args_source(args)})" for args in inputs)
        capture_test = UnitTest(
            id="capture",
            kind=TestKind.HIDDEN,
            assertion=f"assert False, {CAPTURE_MARK!r} + repr([{calls}])",
        )
        feedback = self.harness.execute(
            task.canonical_code or "", [capture_test], self.limits
        )
        if feedback.status is not ExecStatus.TEST_FAILURE:
            return None
        outputs = _capture_payload(feedback.message)
        if outputs is None or len(outputs) != len(inputs):
            return None
        return outputs

    # -- attempt collection ---------------------------------------------------

    def collect_student_attempts(
        self,
        corpus: Sequence[Task],
        student: EndpointConfig,
        sampling: SamplingConfig,
        on_result: Callable[[Attempt, ExecutionFeedback], None] | None = None,
    ) -> list[tuple[Attempt, ExecutionFeedback]]:
        """One attempt per task per sample, each executed against all task tests."""
        for task in corpus:
            if not task.unit_tests:
                raise ValueError(f"task {task.id!r} has no unit tests")

        def attempt_task(task: Task) -> list[tuple[Attempt, ExecutionFeedback]]:
            try:
                replies = self.gateway.chat(student, [user(task.instruction)], sampling)
            except GatewayError as exc:
                log.warning("skipping task %s: student endpoint failed: %s", task.id, exc)
                return []
            pairs = []
            for i, reply in enumerate(replies):
                code = parse_code_block(reply)
                attempt = Attempt(
                    task_id=task.id,
                    code=code,
                    producer=student.name,
                    sampling=sampling,
                    index=i,
                    step=StepKind.ONE,
                )
                feedback = self.harness.execute(code, task.unit_tests, self.limits)
                pairs.append((attempt, feedback))
            return pairs

        results: list[tuple[Attempt, ExecutionFeedback]] = []
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            for pairs in pool.map(attempt_task, corpus):
                for pair in pairs:
                    results.append(pair)
                    if on_result is not None:
                        on_result(*pair)
        return results

    # -- personalised refinement ---------------------------------------------

    def collect_personalised_refinements(
        self,
        wrong: Sequence[RefinementCandidate],
        teacher: EndpointConfig,
        on_result: Callable[[RefinementRecord], None] | None = None,
    ) -> list[RefinementRecord]:
        """Ask the teacher for a fix of each failing attempt and gate it by execution.

        A record is validated only when the teacher's refinement passes the
        task's full test suite; teacher/parse failures still yield records
        (validated=False) so attrition stays visible.
        """
        for candidate in wrong:
            if candidate.feedback.status is ExecStatus.PASSED:
                raise ValueError(
                    f"attempt {candidate.attempt.attempt_id} passed; nothing to refine"
                )

        def refine_one(candidate: RefinementCandidate) -> RefinementRecord:
            task, attempt, feedback = candidate.task, candidate.attempt, candidate.feedback
            refined_code = ""
            instruction = ""
            validated = False
            try:
                turns = render_teacher_refinement_chat(task, attempt.code, feedback)
                instruction = render_refinement_instruction(
                    task, attempt.code, feedback, self.refinement_template
                )
                [reply] = self.gateway.chat(teacher, turns, self.teacher_sampling)
                refined_code = parse_code_block(reply)
                check = self.harness.execute(refined_code, task.unit_tests, self.limits)
                validated = check.status is ExecStatus.PASSED
            except (PromptError, GatewayError) as exc:
                log.warning("refinement for task %s failed: %s", task.id, exc)
            return RefinementRecord(
                task_id=task.id,
                student_attempt=attempt,
                feedback=feedback,
                refinement_instruction=instruction,
                refined_code=refined_code,
                validated=validated,
            )

        results: list[RefinementRecord] = []
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            for record in pool.map(refine_one, wrong):
                results.append(record)
                if on_result is not None:
                    on_result(record)
        return results

    # -- round composition ----------------------------------------------------

    def run_round(
        self,
        round_config: PipelineRound,
        corpus: Sequence[Task],
        teacher: EndpointConfig,
        variants: Sequence[Variant] = tuple(Variant),
    ) -> RoundResult:
        """Attempts -> failing-task filter -> refinements -> every requested variant."""
        cost_before = self.gateway.ledger.total_cost()
        attempts = self.collect_student_attempts(
            corpus, round_config.student_endpoint, round_config.attempt_sampling
        )
        wrong = select_first_failing(corpus, attempts)
        refinements = self.collect_personalised_refinements(wrong, teacher)
        stats = RoundStats(
            n_tasks_in=len(corpus),
            n_wrong_attempts=len(wrong),
            n_validated_refinements=sum(1 for r in refinements if r.validated),
            dollar_cost=self.gateway.ledger.total_cost() - cost_before,
        )
        datasets = {
            variant: emit_variant(variant, corpus, attempts, refinements)
            for variant in variants
        }
        return RoundResult(datasets=datasets, stats=stats, attempts=attempts, refinements=refinements)


def _try_header(task: Task) -> str | None:
    try:
        return extract_function_header(task)
    except PromptError:
        return None


def _parse_generated_task(reply: str) -> tuple[str, str] | None:
    """Split a generation reply into (instruction, solution code)."""
    m = re.search(
        r"###\s*Instruction:\s*\n(.*?)###\s*Solution:\s*\n(.*)", reply, re.DOTALL
    )
    if not m:
        return None
    instruction = m.group(1).strip("\n").strip()
    code = parse_code_block(m.group(2))
    if not instruction or not code:
        return None
    return instruction, code


def select_first_failing(
    corpus: Sequence[Task], attempts: Sequence[tuple[Attempt, ExecutionFeedback]]
) -> list[RefinementCandidate]:
    """The first failing attempt (lowest sample index) per task, in corpus order."""
    task_by_id = {task.id: task for task in corpus}
    best: dict[str, tuple[Attempt, ExecutionFeedback]] = {}
    for attempt, feedback in attempts:
        if feedback.status is ExecStatus.PASSED:
            continue
        if attempt.task_id not in task_by_id:
            raise DanglingTaskError(f"attempt references unknown task {attempt.task_id!r}")
        current = best.get(attempt.task_id)
        if current is None or attempt.index < current[0].index:
            best[attempt.task_id] = (attempt, feedback)
    return [
        RefinementCandidate(task=task, attempt=best[task.id][0], feedback=best[task.id][1])
        for task in corpus
        if task.id in best
    ]


def emit_variant(
    variant: Variant,
    stand_corpus: Sequence[Task],
    attempts: Sequence[tuple[Attempt, ExecutionFeedback]],
    refinements: Sequence[RefinementRecord],
) -> list[DatasetRecord]:
    """Materialize one dataset variant from collected pipeline state.

    Only validated refinements contribute. Records are sorted by
    (task_id, kind) so reruns diff cleanly.
    """
    task_by_id = {task.id: task for task in stand_corpus}
    validated = [r for r in refinements if r.validated]
    for record in validated:
        if record.task_id not in task_by_id:
            raise DanglingTaskError(f"refinement references unknown task {record.task_id!r}")
    refined_task_ids = sorted({r.task_id for r in validated})

    def gen(task: Task, output: str) -> DatasetRecord:
        if task.canonical_code is None:
            raise DanglingTaskError(f"task {task.id!r} has no canonical code")
        return DatasetRecord(
            input=task.instruction,
            output=output,
            kind=RecordKind.CODE_GENERATION,
            task_id=task.id,
            variant=variant,
        )

    def refine(record: RefinementRecord, output: str) -> DatasetRecord:
        return DatasetRecord(
            input=record.refinement_instruction,
            output=output,
            kind=RecordKind.CODE_REFINEMENT,
            task_id=record.task_id,
            variant=variant,
        )

    def canonical(task_id: str) -> str:
        code = task_by_id[task_id].canonical_code
        if code is None:
            raise DanglingTaskError(f"task {task_id!r} has no canonical code")
        return code

    records: list[DatasetRecord]
    if variant is Variant.STAND:
        records = [gen(task, canonical(task.id)) for task in stand_corpus]
    elif variant is Variant.INPD:
        records = [gen(task_by_id[tid], canonical(tid)) for tid in refined_task_ids]
    elif variant is Variant.INPD_REFINE:
        records = [refine(r, canonical(r.task_id)) for r in validated]
    elif variant is Variant.INPD_COMBINED:
        records = [gen(task_by_id[tid], canonical(tid)) for tid in refined_task_ids]
        records += [refine(r, canonical(r.task_id)) for r in validated]
    elif variant is Variant.PERSD:
        records = [gen(task_by_id[r.task_id], r.refined_code) for r in validated]
    elif variant is Variant.PERSD_REFINE:
        records = [refine(r, r.refined_code) for r in validated]
    elif variant is Variant.PERSD_COMBINED:
        records = [gen(task_by_id[tid], canonical(tid)) for tid in refined_task_ids]
        records += [refine(r, r.refined_code) for r in validated]
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown variant {variant!r}")
    return sorted(records, key=lambda r: (r.task_id, r.kind.value))
