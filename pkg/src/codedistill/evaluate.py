"""Benchmark evaluation: 1-step and 2-step inference with unbiased pass@k.

pass@k follows the standard unbiased estimator over n samples with c correct:
1 - C(n-c, k) / C(n, k), computed with exact integer binomials. Two-step
inference reruns only the samples that fail their task's seen tests, feeding
the refinement instruction back to the same endpoint, and scores both steps
against the hidden tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

from .domain import (
    ExecStatus,
    SamplingConfig,
    Task,
    TestKind,
)
from .gateway import EndpointConfig, Gateway, GatewayError
from .harness import ExecHarness, ExecLimits
from .prompting import (
    PromptError,
    RefinementTemplate,
    parse_code_block,
    render_refinement_instruction,
    user,
)

log = logging.getLogger(__name__)


class DomainError(ValueError):
    """pass@k arguments outside 0 <= c <= n, 1 <= k <= n."""


def pass_at_k(n: int, c: int, k: int) -> float:
    """Probability that a uniform size-k subset of n samples has >= 1 correct.

    Exact rational computation; stable for n up to well beyond 1000.
    """
    if not 0 <= c <= n:
        raise DomainError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    return float(1 - Fraction(math.comb(n - c, k), math.comb(n, k)))


@dataclass(frozen=True)
class EvalConfig:
    n_samples: int
    temperature: float
    k_values: tuple[int, ...]
    two_step: bool = False
    limits: ExecLimits = ExecLimits()
    top_p: float = 0.95
    max_tokens: int = 768
    max_parallel: int = 4

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        bad = [k for k in self.k_values if not 1 <= k <= self.n_samples]
        if bad:
            raise ValueError(f"k values {bad} exceed n_samples={self.n_samples}")

    def sampling(self) -> SamplingConfig:
        return SamplingConfig(
            temperature=self.temperature,
            top_p=self.top_p,
            n_samples=self.n_samples,
            max_tokens=self.max_tokens,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_samples": self.n_samples,
            "temperature": self.temperature,
            "k_values": list(self.k_values),
            "two_step": self.two_step,
            "limits": self.limits.to_dict(),
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class TaskEval:
    task_id: str
    n: int
    c_step1: int
    c_step2: int | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.c_step1 <= self.n:
            raise ValueError("need 0 <= c_step1 <= n")
        if self.c_step2 is not None and not 0 <= self.c_step2 <= self.n:
            raise ValueError("need 0 <= c_step2 <= n")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "n": self.n,
            "c_step1": self.c_step1,
            "c_step2": self.c_step2,
        }


@dataclass(frozen=True)
class EvalReport:
    per_task: tuple[TaskEval, ...]
    aggregate: dict[str, dict[int, float]]  # step name -> {k: pass@k}
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_task": [t.to_dict() for t in self.per_task],
            "aggregate": {
                step: {str(k): v for k, v in values.items()}
                for step, values in self.aggregate.items()
            },
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalReport":
        return cls(
            per_task=tuple(TaskEval(**t) for t in d["per_task"]),
            aggregate={
                step: {int(k): v for k, v in values.items()}
                for step, values in d["aggregate"].items()
            },
            metadata=d.get("metadata", {}),
        )


def aggregate_pass_at_k(
    evals: Sequence[TaskEval], k_values: Sequence[int], step: int
) -> dict[int, float]:
    """Mean over tasks of the per-task unbiased estimate."""
    if not evals:
        return {k: 0.0 for k in k_values}
    result = {}
    for k in k_values:
        values = []
        for te in evals:
            c = te.c_step1 if step == 1 else te.c_step2
            if c is None:
                raise ValueError(f"task {te.task_id} has no step-{step} counts")
            values.append(pass_at_k(te.n, c, k))
        result[k] = sum(values) / len(values)
    return result


def corpus_hash(corpus: Sequence[Task]) -> str:
    payload = [[t.id, t.instruction] for t in corpus]
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    ).hexdigest()


def _hidden_tests(task: Task):
    hidden = task.tests_of_kind(TestKind.HIDDEN)
    if not hidden:
        raise ValueError(f"task {task.id!r} has no hidden tests to score against")
    return hidden


def _generate_step1(
    corpus: Sequence[Task],
    endpoint: EndpointConfig,
    config: EvalConfig,
    gateway: Gateway,
) -> tuple[list[list[str]], int]:
    """n_samples candidate codes per task; endpoint failures yield empty codes."""

    def generate(task: Task) -> tuple[list[str], int]:
        try:
            replies = gateway.chat(endpoint, [user(task.instruction)], config.sampling())
        except GatewayError as exc:
            log.warning("task %s: generation failed, counting incorrect: %s", task.id, exc)
            return [""] * config.n_samples, 1
        return [parse_code_block(reply) for reply in replies], 0

    with ThreadPoolExecutor(max_workers=config.max_parallel) as pool:
        results = list(pool.map(generate, corpus))
    return [codes for codes, _ in results], sum(warn for _, warn in results)


def _count_passing(
    task: Task, codes: Sequence[str], config: EvalConfig, harness: ExecHarness
) -> int:
    hidden = _hidden_tests(task)
    feedbacks = harness.execute_batch(
        [(code, hidden) for code in codes], config.limits, config.max_parallel
    )
    return sum(1 for fb in feedbacks if fb.status is ExecStatus.PASSED)


def run_inference(
    corpus: Sequence[Task],
    endpoint: EndpointConfig,
    config: EvalConfig,
    gateway: Gateway,
    harness: ExecHarness,
) -> EvalReport:
    """Single-step evaluation against hidden tests."""
    codes_per_task, warnings = _generate_step1(corpus, endpoint, config, gateway)
    per_task = tuple(
        TaskEval(
            task_id=task.id,
            n=config.n_samples,
            c_step1=_count_passing(task, codes, config, harness),
        )
        for task, codes in zip(corpus, codes_per_task)
    )
    return EvalReport(
        per_task=per_task,
        aggregate={"step1": aggregate_pass_at_k(per_task, config.k_values, step=1)},
        metadata={
            "endpoint": endpoint.name,
            "config": config.to_dict(),
            "corpus_hash": corpus_hash(corpus),
            "endpoint_warnings": warnings,
        },
    )


def run_two_step(
    corpus: Sequence[Task],
    endpoint: EndpointConfig,
    config: EvalConfig,
    template: RefinementTemplate,
    gateway: Gateway,
    harness: ExecHarness,
) -> EvalReport:
    """Two-step evaluation: regenerate only the samples failing seen tests.

    Samples that pass their task's seen tests (or whose task has none) are
    reused verbatim as the step-2 attempt.
    """
    if not config.two_step:
        raise ValueError("config.two_step must be set for run_two_step")
    codes_per_task, warnings = _generate_step1(corpus, endpoint, config, gateway)
    refine_sampling = SamplingConfig(
        temperature=config.temperature,
        top_p=config.top_p,
        n_samples=1,
        max_tokens=config.max_tokens,
    )

    def second_step(task: Task, codes: Sequence[str]) -> tuple[list[str], int]:
        seen = task.tests_of_kind(TestKind.SEEN)
        if not seen:
            log.info("task %s has no seen tests; reusing step-1 attempts", task.id)
            return list(codes), 0
        step2: list[str] = []
        warn = 0
        for code in codes:
            feedback = harness.execute(code, seen, config.limits)
            if feedback.status is ExecStatus.PASSED:
                step2.append(code)
                continue
            try:
                instruction = render_refinement_instruction(task, code, feedback, template)
                [reply] = gateway.chat(endpoint, [user(instruction)], refine_sampling)
            except (PromptError, GatewayError) as exc:
                log.warning("task %s: refinement step failed: %s", task.id, exc)
                warn += 1
                step2.append(code)
                continue
            step2.append(parse_code_block(reply))
        return step2, warn

    with ThreadPoolExecutor(max_workers=config.max_parallel) as pool:
        step2_results = list(
            pool.map(lambda pair: second_step(*pair), zip(corpus, codes_per_task))
        )
    step2_per_task = [codes for codes, _ in step2_results]
    warnings += sum(warn for _, warn in step2_results)

    per_task = tuple(
        TaskEval(
            task_id=task.id,
            n=config.n_samples,
            c_step1=_count_passing(task, codes1, config, harness),
            c_step2=_count_passing(task, codes2, config, harness),
        )
        for task, codes1, codes2 in zip(corpus, codes_per_task, step2_per_task)
    )
    return EvalReport(
        per_task=per_task,
        aggregate={
            "step1": aggregate_pass_at_k(per_task, config.k_values, step=1),
            "step2": aggregate_pass_at_k(per_task, config.k_values, step=2),
        },
        metadata={
            "endpoint": endpoint.name,
            "config": config.to_dict(),
            "corpus_hash": corpus_hash(corpus),
            "endpoint_warnings": warnings,
        },
    )


def report_csv(rows: Sequence[tuple[str, EvalReport]]) -> str:
    """Render reports as a CSV table: one row per named report.

    Columns are pass@k per inference step, mirroring the usual results-table
    layout (rows = variant/model, columns = pass@k x step).
    """
    k_values: list[int] = sorted(
        {k for _, report in rows for values in report.aggregate.values() for k in values}
    )
    steps = ["step1", "step2"]
    header = ["name", "n_tasks"] + [
        f"pass@{k}_{step}" for k in k_values for step in steps
    ]
    lines = [",".join(header)]
    for name, report in rows:
        cells = [name, str(len(report.per_task))]
        for k in k_values:
            for step in steps:
                value = report.aggregate.get(step, {}).get(k)
                cells.append("" if value is None else f"{100.0 * value:.2f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
