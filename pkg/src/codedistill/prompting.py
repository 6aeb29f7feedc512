"""Prompt rendering and rule-based parsing of task instructions.

Renders the four prompt families used by the pipeline (task generation,
test-input generation, two-turn teacher refinement, refinement instruction)
and extracts function headers and doc-string example tests from task
instructions. All operations are pure functions.
"""

from __future__ import annotations

import ast
import enum
import logging
import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from .domain import (
    ExecutionFeedback,
    ExecStatus,
    Task,
    TestKind,
    UnitTest,
    relabel_seen,
)

log = logging.getLogger(__name__)

PLACEHOLDERS = ("<<TASK>>", "<<CODE>>", "<<ERROR>>", "<<HEADER>>")
_PLACEHOLDER_RE = re.compile(r"<<(TASK|CODE|ERROR|HEADER)>>")
_FENCE_RE = re.compile(r"```[ \t]*[\w+-]*[ \t]*\n(.*?)```", re.DOTALL)


class PromptError(ValueError):
    """Base class for prompt rendering/parsing failures."""


class TemplateError(PromptError):
    pass


class PassedFeedbackError(PromptError):
    pass


class MissingCanonicalError(PromptError):
    pass


class NoHeaderError(PromptError):
    pass


class EmptySeedsError(PromptError):
    pass


class ChatRole(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatTurn:
    role: ChatRole
    content: str

    def __post_init__(self) -> None:
        if not self.content:
            raise ValueError("chat turn content must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"role": self.role.value, "content": self.content}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ChatTurn":
        return cls(role=ChatRole(d["role"]), content=d["content"])


def user(content: str) -> ChatTurn:
    return ChatTurn(ChatRole.USER, content)


def assistant(content: str) -> ChatTurn:
    return ChatTurn(ChatRole.ASSISTANT, content)


def _substitute(text: str, mapping: dict[str, str]) -> str:
    # Single pass so placeholder-looking text inside values is never re-expanded.
    return _PLACEHOLDER_RE.sub(lambda m: mapping[m.group(1)], text)


def _require_exactly_once(text: str, names: Sequence[str], context: str) -> None:
    for name in names:
        marker = f"<<{name}>>"
        count = text.count(marker)
        if count != 1:
            raise TemplateError(
                f"{context}: placeholder {marker} occurs {count} times, expected 1"
            )


@dataclass(frozen=True)
class RefinementTemplate:
    """Template turning (task, wrong attempt, feedback) into a refinement instruction.

    Must contain each of <<TASK>>, <<CODE>>, <<ERROR>>, <<HEADER>> exactly once.
    """

    template_text: str

    def __post_init__(self) -> None:
        _require_exactly_once(
            self.template_text, ("TASK", "CODE", "ERROR", "HEADER"), "refinement template"
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "RefinementTemplate":
        return cls(Path(path).read_text(encoding="utf-8"))


def builtin_template_text(name: str) -> str:
    """Load one of the canonical templates shipped with the package."""
    return (
        resources.files("codedistill.templates").joinpath(f"{name}.txt").read_text("utf-8")
    )


def default_refinement_template() -> RefinementTemplate:
    return RefinementTemplate(builtin_template_text("refinement_instruction"))


def render_refinement_instruction(
    task: Task,
    attempt_code: str,
    feedback: ExecutionFeedback,
    template: RefinementTemplate,
) -> str:
    """Render the code-refinement instruction for a failing attempt."""
    if feedback.status is ExecStatus.PASSED:
        raise PassedFeedbackError("cannot render a refinement for passing feedback")
    return _substitute(
        template.template_text,
        {
            "TASK": task.instruction,
            "CODE": attempt_code,
            "ERROR": feedback.message,
            "HEADER": extract_function_header(task),
        },
    )


def render_teacher_refinement_chat(
    task: Task, attempt_code: str, feedback: ExecutionFeedback
) -> list[ChatTurn]:
    """Build the two-turn teacher conversation asking for a personalised fix.

    Turn 1 presents the task (user) and the teacher's known-good solution
    (assistant); turn 2 presents the student's failing attempt plus its
    execution feedback and asks for a correction that stays closest in
    semantics to the attempt.
    """
    if task.canonical_code is None:
        raise MissingCanonicalError(f"task {task.id!r} has no canonical code")
    if feedback.status is ExecStatus.PASSED:
        raise PassedFeedbackError("cannot request a refinement for passing feedback")
    turn1_text = builtin_template_text("teacher_turn1")
    turn2_text = builtin_template_text("teacher_turn2")
    _require_exactly_once(turn1_text, ("TASK", "HEADER"), "teacher turn-1 template")
    _require_exactly_once(turn2_text, ("CODE", "ERROR"), "teacher turn-2 template")
    header = extract_function_header(task)
    return [
        user(_substitute(turn1_text, {"TASK": task.instruction, "HEADER": header})),
        assistant(task.canonical_code),
        user(_substitute(turn2_text, {"CODE": attempt_code, "ERROR": feedback.message})),
    ]


def render_task_generation_prompt(
    seed_tasks: Sequence[Task], n_in_context: int, rng_seed: int = 0
) -> str:
    """Render the new-task generation prompt with seeded in-context exemplars."""
    if n_in_context > len(seed_tasks):
        raise EmptySeedsError(
            f"requested {n_in_context} in-context seeds but only {len(seed_tasks)} available"
        )
    rng = random.Random(rng_seed)
    picked = rng.sample(list(seed_tasks), n_in_context)
    if picked:
        blocks = [
            f"### Example {i + 1}\n{task.instruction.strip()}"
            for i, task in enumerate(picked)
        ]
        examples = "\nBelow are example task instructions drawn from an existing\nexercise collection.\n\n" + "\n\n".join(blocks) + "\n"
    else:
        examples = ""
    template = builtin_template_text("task_generation")
    return template.replace("<<EXAMPLES>>", examples)


def render_test_input_prompt(task: Task) -> str:
    """Render the prompt requesting 5 unique test-case inputs for a task."""
    if task.canonical_code is None:
        raise MissingCanonicalError(f"task {task.id!r} has no canonical code")
    template = builtin_template_text("test_input_request")
    _require_exactly_once(template, ("TASK", "CODE"), "test input template")
    return _substitute(template, {"TASK": task.instruction, "CODE": task.canonical_code})


def _colon_after_params(text: str, close_pos: int) -> int | None:
    """Position of the colon ending a def statement, after the closing paren."""
    depth = 0
    for i in range(close_pos + 1, len(text)):
        ch = text[i]
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth -= 1
        elif ch == ":" and depth == 0:
            return i
        elif ch == "#":
            return None
    return None


def extract_function_header(task: Task) -> str:
    """Return the first top-level function signature line, through its colon.

    Whitespace is preserved exactly; signatures spanning several lines are
    returned with their original line breaks.
    """
    lines = task.instruction.splitlines()
    for start, line in enumerate(lines):
        if not line.startswith("def "):
            continue
        open_pos = line.find("(")
        if open_pos < 0:
            continue
        collected = line
        end = start
        while end < len(lines):
            depth = 0
            close_pos = -1
            for i, ch in enumerate(collected):
                if ch == "(":
                    depth += 1
                elif ch == ")":
                    depth -= 1
                    if depth == 0:
                        close_pos = i
                        break
            if close_pos >= 0:
                colon = _colon_after_params(collected, close_pos)
                if colon is not None:
                    return collected[: colon + 1]
                break  # closed paren but no colon: malformed, try next def
            end += 1
            if end >= len(lines):
                break
            collected += "\n" + lines[end]
    raise NoHeaderError(f"task {task.id!r}: no function definition line found")


class SeenTestMode(str, enum.Enum):
    DOCSTRING_EXAMPLES = "docstring_examples"
    ALL_SEEN = "all_seen"


def _literal_expected(text: str) -> bool:
    try:
        ast.literal_eval(text)
        return True
    except (ValueError, SyntaxError):
        return False


def _valid_call_expr(text: str) -> bool:
    try:
        node = ast.parse(text, mode="eval")
        return isinstance(node.body, ast.Call)
    except SyntaxError:
        return False


def extract_seen_tests(task: Task, mode: SeenTestMode) -> list[UnitTest]:
    """Extract seen unit tests from a task.

    ``docstring_examples`` parses ``>>> call(args)`` lines whose next line is
    one literal expected value, yielding ``assert call(args) == expected``
    assertions. Examples it cannot parse (continuation lines, exception
    outputs, missing or non-literal expected values) are skipped, never
    fatal. ``all_seen`` relabels every existing unit test as seen.
    """
    if mode is SeenTestMode.ALL_SEEN:
        return [relabel_seen(t) for t in task.unit_tests]

    lines = task.instruction.splitlines()
    found: list[UnitTest] = []
    i = 0
    while i < len(lines):
        stripped = lines[i].strip()
        if not stripped.startswith(">>>"):
            i += 1
            continue
        expr = stripped[3:].strip()
        i += 1
        if i < len(lines) and lines[i].strip().startswith("..."):
            # multi-line source example: unsupported, skip it entirely
            while i < len(lines) and lines[i].strip().startswith("..."):
                i += 1
            continue
        if not expr or not _valid_call_expr(expr):
            continue
        if i >= len(lines):
            break
        expected = lines[i].strip()
        if not expected or expected.startswith(">>>"):
            continue  # example without an output line
        if expected.startswith("Traceback"):
            i += 1
            continue  # exception-expecting examples are unsupported
        if not _literal_expected(expected):
            i += 1
            continue
        found.append(
            UnitTest(
                id=f"seen-{len(found)}",
                kind=TestKind.SEEN,
                assertion=f"assert {expr} == {expected}",
            )
        )
        i += 1
    return found


def _normalize_entry(entry: Any) -> tuple:
    if isinstance(entry, tuple):
        return entry
    if isinstance(entry, list):
        return tuple(entry)
    return (entry,)


def _first_literal_list(text: str) -> list | None:
    for start in [m.start() for m in re.finditer(r"\[", text)]:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "[":
                depth += 1
            elif text[i] == "]":
                depth -= 1
                if depth == 0:
                    try:
                        value = ast.literal_eval(text[start : i + 1])
                    except (ValueError, SyntaxError):
                        break
                    if isinstance(value, list):
                        return value
                    break
        else:
            continue
    return None


def parse_test_inputs(teacher_reply: str, task: Task) -> list[tuple]:
    """Parse up to 5 unique argument tuples out of a teacher reply.

    Tries the requested format (one Python list literal of tuples) first,
    then falls back to per-line tuple literals. Unparseable entries are
    dropped; duplicates are removed preserving first occurrence.
    """
    text = parse_code_block(teacher_reply)
    entries = _first_literal_list(text)
    if entries is None:
        entries = []
        for line in text.splitlines():
            m = re.search(r"\(.*\)", line)
            if not m:
                continue
            try:
                value = ast.literal_eval(m.group(0))
            except (ValueError, SyntaxError):
                log.debug("task %s: dropping unparseable test input %r", task.id, line)
                continue
            entries.append(value)
    unique: list[tuple] = []
    seen_reprs: set[str] = set()
    for entry in entries:
        tup = _normalize_entry(entry)
        key = repr(tup)
        if key in seen_reprs:
            continue
        seen_reprs.add(key)
        unique.append(tup)
        if len(unique) == 5:
            break
    return unique


def parse_code_block(teacher_reply: str) -> str:
    """Return the first fenced code block, or the whole reply stripped."""
    m = _FENCE_RE.search(teacher_reply)
    if m:
        return m.group(1).strip("\n")
    return teacher_reply.strip()
