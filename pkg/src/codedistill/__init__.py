"""Distillation data pipeline and evaluation harness for code generation."""

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
    TestOutcome,
    TestResult,
    UnitTest,
    Variant,
    validate_task,
)
from .evaluate import EvalConfig, EvalReport, pass_at_k, run_inference, run_two_step
from .gateway import (
    CostLedger,
    EndpointConfig,
    Gateway,
    HttpBackend,
    MockBackend,
    ReplayBackend,
    RecordingBackend,
    ledger_report,
    mock_backend,
    request_fingerprint,
)
from .harness import ExecHarness, ExecLimits, NoSeenTestsError
from .overlap import (
    OverlapCategory,
    OverlapJudgment,
    analyze_overlap,
    emit_cleaned_benchmark,
    judge_pair,
    overlap_report,
    retrieve_neighbors,
)
from .pipeline import (
    DistillationPipeline,
    PipelineRound,
    RoundStats,
    emit_variant,
    select_first_failing,
)
from .prompting import (
    ChatTurn,
    RefinementTemplate,
    SeenTestMode,
    extract_function_header,
    extract_seen_tests,
    parse_code_block,
    parse_test_inputs,
    render_refinement_instruction,
    render_task_generation_prompt,
    render_teacher_refinement_chat,
    render_test_input_prompt,
)

__version__ = "0.1.0"
