"""Core type validation and serialization round-trips."""

import json

import pytest
from hypothesis import given, strategies as st

from codedistill.domain import (
    Attempt,
    DatasetRecord,
    ExecStatus,
    ExecutionFeedback,
    MESSAGE_CAP,
    RecordKind,
    RefinementRecord,
    SamplingConfig,
    StepKind,
    Task,
    TaskOrigin,
    TestKind,
    TestOutcome,
    TestResult,
    TRUNCATION_SUFFIX,
    UnitTest,
    Variant,
    dump_jsonl,
    iter_jsonl,
    truncate_message,
    validate_corpus,
    validate_task,
)

text = st.text(max_size=60)
small_text = st.text(min_size=1, max_size=30)


def make_task(**overrides):
    base = dict(
        id="HumanEval/0",
        instruction="def f(x):\n    return x",
        unit_tests=tuple(
            UnitTest(id=f"t{i}", kind=TestKind.HIDDEN, assertion=f"assert f({i}) == {i}")
            for i in range(5)
        ),
        canonical_code="def f(x):\n    return x",
        origin=TaskOrigin.BENCHMARK,
    )
    base.update(overrides)
    return Task(**base)


class TestValidateTask:
    def test_well_formed_task_has_no_violations(self):
        assert validate_task(make_task()) == []

    def test_empty_id(self):
        assert "id empty" in validate_task(make_task(id=""))

    def test_no_tests_on_generated_task(self):
        task = make_task(unit_tests=(), origin=TaskOrigin.TEACHER_GENERATED)
        assert "unit_tests empty" in validate_task(task)

    def test_seed_tasks_may_lack_tests(self):
        task = make_task(unit_tests=(), origin=TaskOrigin.SEED)
        assert "unit_tests empty" not in validate_task(task)

    def test_never_mutates_input(self):
        task = make_task()
        before = task.to_dict()
        validate_task(task)
        assert task.to_dict() == before

    def test_corpus_duplicate_ids(self):
        violations = validate_corpus([make_task(), make_task()])
        assert any("duplicate task id" in v for v in violations)


class TestConstructionInvariants:
    def test_attempt_negative_index(self):
        with pytest.raises(ValueError):
            Attempt("t", "code", "student", SamplingConfig(), index=-1)

    def test_step_two_requires_parent(self):
        with pytest.raises(ValueError):
            Attempt("t", "code", "student", SamplingConfig(), index=0, step=StepKind.TWO)
        attempt = Attempt(
            "t", "code", "student", SamplingConfig(), index=0,
            step=StepKind.TWO, parent_id="t/student/one/0",
        )
        assert attempt.parent_id == "t/student/one/0"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"temperature": -0.1},
            {"top_p": 0.0},
            {"top_p": 1.5},
            {"n_samples": 0},
            {"max_tokens": 0},
        ],
    )
    def test_sampling_config_rejects(self, kwargs):
        with pytest.raises(ValueError):
            SamplingConfig(**kwargs)

    def test_feedback_passed_requires_all_pass(self):
        with pytest.raises(ValueError):
            ExecutionFeedback(
                status=ExecStatus.PASSED,
                per_test=(TestOutcome("t0", TestResult.FAIL),),
            )
        with pytest.raises(ValueError):
            ExecutionFeedback(status=ExecStatus.PASSED, per_test=())

    def test_feedback_failures_cannot_be_all_pass(self):
        with pytest.raises(ValueError):
            ExecutionFeedback(
                status=ExecStatus.TEST_FAILURE,
                message="boom",
                per_test=(TestOutcome("t0", TestResult.PASS),),
            )

    def test_passed_feedback_has_empty_message(self):
        with pytest.raises(ValueError):
            ExecutionFeedback(
                status=ExecStatus.PASSED,
                message="nope",
                per_test=(TestOutcome("t0", TestResult.PASS),),
            )

    def test_refinement_record_rejects_passing_feedback(self):
        attempt = Attempt("t", "code", "student", SamplingConfig(), index=0)
        passed = ExecutionFeedback(
            status=ExecStatus.PASSED, per_test=(TestOutcome("t0", TestResult.PASS),)
        )
        with pytest.raises(ValueError):
            RefinementRecord(
                task_id="t",
                student_attempt=attempt,
                feedback=passed,
                refinement_instruction="fix it",
                refined_code="code",
                validated=True,
            )

    def test_refinement_dataset_record_rejects_leftover_placeholders(self):
        with pytest.raises(ValueError):
            DatasetRecord(
                input="fix this: <<CODE>>",
                output="code",
                kind=RecordKind.CODE_REFINEMENT,
                task_id="t",
                variant=Variant.PERSD_REFINE,
            )


class TestTruncation:
    def test_short_messages_untouched(self):
        assert truncate_message("boom") == "boom"

    def test_long_messages_capped_with_suffix(self):
        message = truncate_message("x" * (MESSAGE_CAP + 50))
        assert len(message) == MESSAGE_CAP
        assert message.endswith(TRUNCATION_SUFFIX)


# -- serialization round-trips -------------------------------------------------

unit_tests_st = st.lists(
    st.builds(
        UnitTest,
        id=small_text,
        kind=st.sampled_from(TestKind),
        assertion=small_text,
    ),
    max_size=4,
).map(tuple)

tasks_st = st.builds(
    Task,
    id=small_text,
    instruction=text,
    unit_tests=unit_tests_st,
    canonical_code=st.one_of(st.none(), text),
    origin=st.sampled_from(TaskOrigin),
)

sampling_st = st.builds(
    SamplingConfig,
    temperature=st.floats(0, 2, allow_nan=False),
    top_p=st.floats(0.01, 1.0, allow_nan=False),
    n_samples=st.integers(1, 100),
    max_tokens=st.integers(1, 4096),
)

attempts_st = st.builds(
    Attempt,
    task_id=small_text,
    code=text,
    producer=small_text,
    sampling=sampling_st,
    index=st.integers(0, 50),
    step=st.just(StepKind.ONE),
)


def feedback_from_results(results: list[TestResult], message: str) -> ExecutionFeedback:
    per_test = tuple(TestOutcome(f"t{i}", r) for i, r in enumerate(results))
    all_pass = bool(per_test) and all(r is TestResult.PASS for r in results)
    if all_pass:
        return ExecutionFeedback(ExecStatus.PASSED, "", per_test, 0)
    return ExecutionFeedback(ExecStatus.TEST_FAILURE, message or "failed", per_test, 0)


feedback_st = st.builds(
    feedback_from_results,
    results=st.lists(st.sampled_from(TestResult), min_size=1, max_size=5),
    message=small_text,
)


@given(tasks_st)
def test_task_roundtrip(task):
    assert Task.from_dict(json.loads(json.dumps(task.to_dict()))) == task


@given(attempts_st)
def test_attempt_roundtrip(attempt):
    assert Attempt.from_dict(json.loads(json.dumps(attempt.to_dict()))) == attempt


@given(feedback_st)
def test_feedback_roundtrip(feedback):
    restored = ExecutionFeedback.from_dict(json.loads(json.dumps(feedback.to_dict())))
    assert restored == feedback


@given(attempts_st, feedback_st, small_text, text)
def test_refinement_roundtrip(attempt, feedback, instruction, code):
    if feedback.status is ExecStatus.PASSED:
        return
    record = RefinementRecord(
        task_id=attempt.task_id,
        student_attempt=attempt,
        feedback=feedback,
        refinement_instruction=instruction,
        refined_code=code,
        validated=False,
    )
    assert RefinementRecord.from_dict(json.loads(json.dumps(record.to_dict()))) == record


@given(
    st.builds(
        DatasetRecord,
        input=text,
        output=text,
        kind=st.just(RecordKind.CODE_GENERATION),
        task_id=small_text,
        variant=st.sampled_from(Variant),
    )
)
def test_dataset_record_roundtrip(record):
    assert DatasetRecord.from_dict(json.loads(json.dumps(record.to_dict()))) == record


@given(st.lists(tasks_st, max_size=5))
def test_jsonl_roundtrip(tasks):
    assert list(iter_jsonl(dump_jsonl(tasks), Task)) == tasks
