"""Command-line entry point: one subcommand per pipeline stage.

Every stage is idempotent: each output file gets a sibling
``<file>.manifest.json`` recording the config hash, rng seed and input
hashes; rerunning with matching manifests is a no-op unless ``--force``.
Failures print a single machine-parseable line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import yaml

from . import domain
from .domain import SamplingConfig, Task, Variant
from .evaluate import EvalConfig, EvalReport, report_csv, run_inference, run_two_step
from .gateway import (
    CostLedger,
    EndpointConfig,
    Gateway,
    HttpBackend,
    MockBackend,
    MockRule,
    RecordingBackend,
    ReplayBackend,
    RulesBackend,
    ledger_report,
)
from .harness import ExecHarness, ExecLimits
from .overlap import analyze_overlap, emit_cleaned_benchmark, overlap_report, OverlapJudgment
from .pipeline import (
    AttemptOutcome,
    DistillationPipeline,
    emit_variant,
    select_first_failing,
)
from .prompting import (
    RefinementTemplate,
    SeenTestMode,
    default_refinement_template,
    extract_seen_tests,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_INTERRUPTED = 130

PROFILE_DEFAULTS: dict[str, dict[str, Any]] = {
    "attempt": {"temperature": 0.3, "n_samples": 1},
    "pass1": {"temperature": 0.2, "n_samples": 20},
    "passk": {"temperature": 0.8, "n_samples": 100},
}
PROFILE_K_DEFAULTS: dict[str, list[int]] = {
    "pass1": [1],
    "passk": [5, 10, 20, 50, 100],
}


class CliError(Exception):
    def __init__(self, code: str, message: str, exit_code: int = EXIT_STAGE) -> None:
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


def config_error(message: str) -> CliError:
    return CliError("config_invalid", message, EXIT_CONFIG)


def missing_input(message: str) -> CliError:
    return CliError("missing_input", message, EXIT_MISSING_INPUT)


@dataclass
class PipelineConfig:
    raw: dict[str, Any]
    path: Path
    rng_seed: int
    endpoints: dict[str, EndpointConfig]
    limits: ExecLimits
    profiles: dict[str, SamplingConfig]
    runner_cmd: tuple[str, ...]
    outputs_dir: Path
    paths: dict[str, Path]
    backend_cfg: dict[str, Any]
    target_count: int
    n_in_context: int
    max_workers: int
    k_values: dict[str, list[int]]
    extract_seen: str
    template_path: Path | None

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def endpoint(self, role: str) -> EndpointConfig:
        if role not in self.endpoints:
            raise config_error(f"no endpoint configured for role {role!r}")
        return self.endpoints[role]

    def profile(self, name: str) -> SamplingConfig:
        if name not in self.profiles:
            raise config_error(f"unknown sampling profile {name!r}")
        return self.profiles[name]

    def input_path(self, key: str) -> Path:
        if key not in self.paths:
            raise config_error(f"paths.{key} not configured")
        return self.paths[key]

    def refinement_template(self) -> RefinementTemplate:
        if self.template_path is not None:
            return RefinementTemplate.from_file(self.template_path)
        return default_refinement_template()


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise config_error(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise config_error(f"config is not valid YAML: {exc}")
    if not isinstance(raw, dict):
        raise config_error("config root must be a mapping")

    base = path.parent

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    try:
        endpoints = {
            role: EndpointConfig.from_dict({"name": role, **(cfg or {})})
            for role, cfg in (raw.get("endpoints") or {}).items()
        }
        limits = ExecLimits(**(raw.get("limits") or {}))
        profiles: dict[str, SamplingConfig] = {}
        profile_cfg = raw.get("profiles") or {}
        for name in set(PROFILE_DEFAULTS) | set(profile_cfg):
            merged = {**PROFILE_DEFAULTS.get(name, {}), **(profile_cfg.get(name) or {})}
            profiles[name] = SamplingConfig(**merged)
        paths_cfg = raw.get("paths") or {}
        runner = paths_cfg.get("runner")
        if not runner or not isinstance(runner, list):
            raise config_error("paths.runner must be a non-empty argv list")
        outputs_dir = resolve(paths_cfg.get("outputs", "outputs"))
        paths = {
            key: resolve(str(value))
            for key, value in paths_cfg.items()
            if key not in ("runner", "outputs", "refinement_template") and value
        }
        template_path = (
            resolve(str(paths_cfg["refinement_template"]))
            if paths_cfg.get("refinement_template")
            else None
        )
        pipeline_cfg = raw.get("pipeline") or {}
        eval_cfg = raw.get("eval") or {}
        k_values = dict(PROFILE_K_DEFAULTS)
        for name, ks in (eval_cfg.get("k_values") or {}).items():
            k_values[name] = list(ks)
        config = PipelineConfig(
            raw=raw,
            path=path,
            rng_seed=int(raw.get("rng_seed", 0)),
            endpoints=endpoints,
            limits=limits,
            profiles=profiles,
            runner_cmd=tuple(str(part) for part in runner),
            outputs_dir=outputs_dir,
            paths=paths,
            backend_cfg=raw.get("backend") or {"kind": "http"},
            target_count=int(pipeline_cfg.get("target_count", 0)),
            n_in_context=int(pipeline_cfg.get("n_in_context", 3)),
            max_workers=int(pipeline_cfg.get("max_workers", 4)),
            k_values=k_values,
            extract_seen=str(eval_cfg.get("extract_seen", "none")),
            template_path=template_path,
        )
    except CliError:
        raise
    except (TypeError, ValueError) as exc:
        raise config_error(str(exc))
    if template_path is not None and not template_path.exists():
        raise config_error(f"refinement template not found: {template_path}")
    return config


def build_backend(config: PipelineConfig):
    cfg = config.backend_cfg
    kind = cfg.get("kind", "http")
    if kind == "http":
        return HttpBackend()
    if kind == "mock":
        script_path = cfg.get("script")
        if not script_path:
            raise config_error("backend.kind=mock requires backend.script")
        script_file = Path(script_path)
        if not script_file.is_absolute():
            script_file = config.path.parent / script_file
        if not script_file.exists():
            raise config_error(f"mock script not found: {script_file}")
        spec = json.loads(script_file.read_text(encoding="utf-8"))
        strict = bool(spec.get("strict", True))
        if "rules" in spec:
            rules = [MockRule.from_dict(r) for r in spec["rules"]]
            return RulesBackend(rules, strict=strict)
        return MockBackend(script=spec.get("replies", {}), strict=strict)
    if kind == "replay":
        transcript = cfg.get("transcript")
        if not transcript:
            raise config_error("backend.kind=replay requires backend.transcript")
        transcript_path = Path(transcript)
        if not transcript_path.is_absolute():
            transcript_path = config.path.parent / transcript_path
        if not transcript_path.exists():
            raise missing_input(f"replay transcript not found: {transcript_path}")
        return ReplayBackend(transcript_path)
    if kind == "record":
        transcript = cfg.get("transcript")
        if not transcript:
            raise config_error("backend.kind=record requires backend.transcript")
        return RecordingBackend(HttpBackend(), transcript)
    raise config_error(f"unknown backend kind {kind!r}")


@dataclass
class Runtime:
    config: PipelineConfig
    gateway: Gateway
    harness: ExecHarness
    pipeline: DistillationPipeline


def build_runtime(config: PipelineConfig) -> Runtime:
    gateway = Gateway(build_backend(config), ledger=CostLedger())
    harness = ExecHarness(config.runner_cmd)
    pipeline = DistillationPipeline(
        gateway=gateway,
        harness=harness,
        limits=config.limits,
        refinement_template=config.refinement_template(),
        rng_seed=config.rng_seed,
        max_workers=config.max_workers,
        n_in_context=config.n_in_context,
    )
    return Runtime(config=config, gateway=gateway, harness=harness, pipeline=pipeline)


# -- manifests ---------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def manifest_path(output: Path) -> Path:
    return output.with_name(output.name + ".manifest.json")


def write_manifest(
    stage: str,
    config: PipelineConfig,
    inputs: Sequence[Path],
    output: Path,
    counts: Mapping[str, Any],
    cost: float,
    partial: bool = False,
) -> None:
    manifest = {
        "stage": stage,
        "config_sha256": config.config_hash,
        "rng_seed": config.rng_seed,
        "inputs": {str(p): _sha256_file(p) for p in sorted(inputs)},
        "outputs": {str(output): _sha256_file(output)},
        "counts": dict(counts),
        "cost": cost,
        "partial": partial,
    }
    manifest_path(output).write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def up_to_date(config: PipelineConfig, inputs: Sequence[Path], outputs: Sequence[Path]) -> bool:
    for output in outputs:
        mpath = manifest_path(output)
        if not output.exists() or not mpath.exists():
            return False
        try:
            manifest = json.loads(mpath.read_text(encoding="utf-8"))
        except ValueError:
            return False
        if manifest.get("partial"):
            return False
        if manifest.get("config_sha256") != config.config_hash:
            return False
        current = {str(p): _sha256_file(p) for p in sorted(inputs)}
        if manifest.get("inputs") != current:
            return False
    return True


def require_inputs(paths: Sequence[Path]) -> None:
    for p in paths:
        if not p.exists():
            raise missing_input(f"required input missing: {p}")


# -- artifact locations -------------------------------------------------------


def corpus_file(config: PipelineConfig) -> Path:
    return config.paths.get("corpus", config.outputs_dir / "corpus.jsonl")


def attempts_file(config: PipelineConfig) -> Path:
    return config.outputs_dir / "attempts.jsonl"


def refinements_file(config: PipelineConfig) -> Path:
    return config.outputs_dir / "refinements.jsonl"


def dataset_file(config: PipelineConfig, variant: Variant) -> Path:
    return config.outputs_dir / "datasets" / f"{variant.value.lower()}.jsonl"


def eval_file(config: PipelineConfig, profile: str, two_step: bool) -> Path:
    suffix = "2step" if two_step else "1step"
    return config.outputs_dir / "eval" / f"{profile}_{suffix}.json"


def judgments_file(config: PipelineConfig) -> Path:
    return config.outputs_dir / "overlap" / "judgments.jsonl"


def overlap_report_file(config: PipelineConfig) -> Path:
    return config.outputs_dir / "overlap" / "report.json"


def cleaned_benchmark_file(config: PipelineConfig) -> Path:
    return config.outputs_dir / "benchmark_cleaned.jsonl"


def parse_variant(text: str) -> Variant:
    normalized = text.strip().lower().replace("-", "_")
    for variant in Variant:
        if variant.value.lower() == normalized:
            return variant
    raise config_error(
        f"unknown variant {text!r}; expected one of "
        + ", ".join(v.value.lower().replace('_', '-') for v in Variant)
    )


# -- subcommands ---------------------------------------------------------------


def cmd_gen_corpus(runtime: Runtime, args: argparse.Namespace) -> int:
    config = runtime.config
    seeds_path = config.input_path("seeds")
    output = corpus_file(config)
    require_inputs([seeds_path])
    if not args.force and up_to_date(config, [seeds_path], [output]):
        print(f"gen-corpus: up to date ({output})")
        return EXIT_OK
    seeds = domain.read_jsonl(seeds_path, Task)
    corpus, stats = runtime.pipeline.build_stand_corpus(
        seeds, config.endpoint("teacher"), config.target_count
    )
    output.parent.mkdir(parents=True, exist_ok=True)
    domain.write_jsonl(output, corpus)
    write_manifest("gen-corpus", config, [seeds_path], output, stats.to_dict(), stats.dollar_cost)
    print(f"gen-corpus: kept {stats.n_kept}/{stats.n_tasks_in} tasks -> {output}")
    return EXIT_OK


def cmd_attempts(runtime: Runtime, args: argparse.Namespace) -> int:
    config = runtime.config
    corpus_path = corpus_file(config)
    output = attempts_file(config)
    require_inputs([corpus_path])
    if not args.force and up_to_date(config, [corpus_path], [output]):
        print(f"attempts: up to date ({output})")
        return EXIT_OK
    corpus = domain.read_jsonl(corpus_path, Task)
    sampling = config.profile("attempt")
    cost_before = runtime.gateway.ledger.total_cost()
    collected: list[AttemptOutcome] = []
    partial = False
    try:
        runtime.pipeline.collect_student_attempts(
            corpus,
            config.endpoint("student"),
            sampling,
            on_result=lambda a, f: collected.append(AttemptOutcome(a, f)),
        )
    except KeyboardInterrupt:
        partial = True
    output.parent.mkdir(parents=True, exist_ok=True)
    domain.write_jsonl(output, collected)
    cost = runtime.gateway.ledger.total_cost() - cost_before
    n_wrong = sum(1 for o in collected if not o.feedback.passed)
    write_manifest(
        "attempts",
        config,
        [corpus_path],
        output,
        {"n_attempts": len(collected), "n_wrong": n_wrong},
        cost,
        partial=partial,
    )
    if partial:
        print("attempts: interrupted, partial output flushed", file=sys.stderr)
        return EXIT_INTERRUPTED
    print(f"attempts: {len(collected)} attempts ({n_wrong} failing) -> {output}")
    return EXIT_OK


def cmd_refine(runtime: Runtime, args: argparse.Namespace) -> int:
    config = runtime.config
    corpus_path = corpus_file(config)
    attempts_path = attempts_file(config)
    output = refinements_file(config)
    require_inputs([corpus_path, attempts_path])
    if not args.force and up_to_date(config, [corpus_path, attempts_path], [output]):
        print(f"refine: up to date ({output})")
        return EXIT_OK
    corpus = domain.read_jsonl(corpus_path, Task)
    outcomes = domain.read_jsonl(attempts_path, AttemptOutcome)
    wrong = select_first_failing(corpus, [(o.attempt, o.feedback) for o in outcomes])
    cost_before = runtime.gateway.ledger.total_cost()
    collected: list[domain.RefinementRecord] = []
    partial = False
    try:
        runtime.pipeline.collect_personalised_refinements(
            wrong, config.endpoint("teacher"), on_result=collected.append
        )
    except KeyboardInterrupt:
        partial = True
    output.parent.mkdir(parents=True, exist_ok=True)
    domain.write_jsonl(output, collected)
    cost = runtime.gateway.ledger.total_cost() - cost_before
    n_validated = sum(1 for r in collected if r.validated)
    write_manifest(
        "refine",
        config,
        [corpus_path, attempts_path],
        output,
        {"n_wrong": len(wrong), "n_validated": n_validated},
        cost,
        partial=partial,
    )
    if partial:
        print("refine: interrupted, partial output flushed", file=sys.stderr)
        return EXIT_INTERRUPTED
    print(f"refine: {n_validated}/{len(wrong)} refinements validated -> {output}")
    return EXIT_OK


def cmd_emit(runtime: Runtime, args: argparse.Namespace) -> int:
    config = runtime.config
    variant = parse_variant(args.variant)
    corpus_path = corpus_file(config)
    inputs = [corpus_path]
    needs_refinements = variant is not Variant.STAND
    attempts_path = attempts_file(config)
    refinements_path = refinements_file(config)
    if needs_refinements:
        inputs += [attempts_path, refinements_path]
    output = dataset_file(config, variant)
    require_inputs(inputs)
    if not args.force and up_to_date(config, inputs, [output]):
        print(f"emit: up to date ({output})")
        return EXIT_OK
    corpus = domain.read_jsonl(corpus_path, Task)
    attempts = (
        [(o.attempt, o.feedback) for o in domain.read_jsonl(attempts_path, AttemptOutcome)]
        if needs_refinements
        else []
    )
    refinements = (
        domain.read_jsonl(refinements_path, domain.RefinementRecord)
        if needs_refinements
        else []
    )
    records = emit_variant(variant, corpus, attempts, refinements)
    output.parent.mkdir(parents=True, exist_ok=True)
    domain.write_jsonl(output, records)
    write_manifest("emit", config, inputs, output, {"n_records": len(records)}, 0.0)
    print(f"emit: {len(records)} {variant.value} records -> {output}")
    return EXIT_OK


def _load_benchmark(config: PipelineConfig) -> list[Task]:
    benchmark_path = config.input_path("benchmark")
    require_inputs([benchmark_path])
    tasks = domain.read_jsonl(benchmark_path, Task)
    mode = config.extract_seen
    if mode == "none":
        return tasks
    try:
        seen_mode = SeenTestMode(mode)
    except ValueError:
        raise config_error(f"eval.extract_seen must be none|docstring_examples|all_seen, got {mode!r}")
    enriched = []
    for task in tasks:
        seen = extract_seen_tests(task, seen_mode)
        enriched.append(
            Task(
                id=task.id,
                instruction=task.instruction,
                unit_tests=task.unit_tests + tuple(seen),
                canonical_code=task.canonical_code,
                origin=task.origin,
            )
        )
    return enriched


def cmd_eval(runtime: Runtime, args: argparse.Namespace) -> int:
    config = runtime.config
    sampling = config.profile(args.profile)
    benchmark_path = config.input_path("benchmark")
    output = eval_file(config, args.profile, args.two_step)
    if not args.force and up_to_date(config, [benchmark_path], [output]):
        print(f"eval: up to date ({output})")
        return EXIT_OK
    tasks = _load_benchmark(config)
    k_values = [k for k in config.k_values.get(args.profile, [1]) if k <= sampling.n_samples]
    if not k_values:
        raise config_error(
            f"no usable k values for profile {args.profile!r} (n_samples={sampling.n_samples})"
        )
    eval_config = EvalConfig(
        n_samples=sampling.n_samples,
        temperature=sampling.temperature,
        k_values=tuple(k_values),
        two_step=args.two_step,
        limits=config.limits,
        top_p=sampling.top_p,
        max_tokens=sampling.max_tokens,
        max_parallel=config.max_workers,
    )
    endpoint = config.endpoint(args.endpoint)
    if args.two_step:
        report = run_two_step(
            tasks, endpoint, eval_config, config.refinement_template(),
            runtime.gateway, runtime.harness,
        )
    else:
        report = run_inference(tasks, endpoint, eval_config, runtime.gateway, runtime.harness)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(report.to_json() + "\n", encoding="utf-8")
    write_manifest(
        "eval",
        config,
        [benchmark_path],
        output,
        {"n_tasks": len(report.per_task), "aggregate": report.to_dict()["aggregate"]},
        runtime.gateway.ledger.total_cost(),
    )
    print(f"eval: {args.profile} ({'2-step' if args.two_step else '1-step'}) -> {output}")
    return EXIT_OK


def cmd_overlap(runtime: Runtime, args: argparse.Namespace) -> int:
    config = runtime.config
    benchmark_path = config.input_path("benchmark")
    train_path = config.paths.get("overlap_train", corpus_file(config))
    require_inputs([benchmark_path, train_path])
    judgments_out = judgments_file(config)
    report_out = overlap_report_file(config)
    if not args.force and up_to_date(
        config, [benchmark_path, train_path], [judgments_out, report_out]
    ):
        print(f"overlap: up to date ({judgments_out})")
        return EXIT_OK
    benchmark = domain.read_jsonl(benchmark_path, Task)
    train = domain.read_jsonl(train_path, Task)
    judgments = analyze_overlap(
        benchmark, train, config.endpoint("judge"), runtime.gateway
    )
    judgments_out.parent.mkdir(parents=True, exist_ok=True)
    domain.write_jsonl(judgments_out, judgments)
    report = overlap_report(judgments)
    report_out.write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for out, counts in (
        (judgments_out, {"n_judgments": len(judgments)}),
        (report_out, report.to_dict()),
    ):
        write_manifest(
            "overlap", config, [benchmark_path, train_path], out, counts,
            runtime.gateway.ledger.total_cost(),
        )
    print(
        f"overlap: {report.percent_leak:.2f}% leak, mean similarity {report.mean_score:.3f}"
        f" -> {report_out}"
    )
    return EXIT_OK


def cmd_clean_benchmark(runtime: Runtime, args: argparse.Namespace) -> int:
    config = runtime.config
    benchmark_path = config.input_path("benchmark")
    judgments_path = judgments_file(config)
    output = cleaned_benchmark_file(config)
    require_inputs([benchmark_path, judgments_path])
    if not args.force and up_to_date(config, [benchmark_path, judgments_path], [output]):
        print(f"clean-benchmark: up to date ({output})")
        return EXIT_OK
    benchmark = domain.read_jsonl(benchmark_path, Task)
    judgments = domain.read_jsonl(judgments_path, OverlapJudgment)
    cleaned = emit_cleaned_benchmark(benchmark, judgments)
    output.parent.mkdir(parents=True, exist_ok=True)
    domain.write_jsonl(output, cleaned)
    write_manifest(
        "clean-benchmark",
        config,
        [benchmark_path, judgments_path],
        output,
        {"n_in": len(benchmark), "n_kept": len(cleaned)},
        0.0,
    )
    print(f"clean-benchmark: {len(benchmark)} -> {len(cleaned)} tasks ({output})")
    return EXIT_OK


def cmd_report(runtime: Runtime, args: argparse.Namespace) -> int:
    config = runtime.config
    eval_dir = config.outputs_dir / "eval"
    rows: list[tuple[str, EvalReport]] = []
    if eval_dir.is_dir():
        for path in sorted(eval_dir.glob("*.json")):
            if path.name.endswith(".manifest.json"):
                continue
            rows.append(
                (path.stem, EvalReport.from_dict(json.loads(path.read_text(encoding="utf-8"))))
            )
    output = config.outputs_dir / "report.csv"
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(report_csv(rows), encoding="utf-8")

    costs: dict[str, float] = {}
    for mpath in sorted(config.outputs_dir.rglob("*.manifest.json")):
        try:
            manifest = json.loads(mpath.read_text(encoding="utf-8"))
        except ValueError:
            continue
        stage = manifest.get("stage", "unknown")
        costs[stage] = costs.get(stage, 0.0) + float(manifest.get("cost", 0.0))
    print(f"report: {len(rows)} eval runs -> {output}")
    for stage, cost in sorted(costs.items()):
        print(f"cost stage={stage} total=${cost:.4f}")
    print(f"cost total=${sum(costs.values()):.4f}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codedistill",
        description="Distillation data pipeline and evaluation harness for code generation",
    )
    parser.add_argument("--config", required=True, help="path to the YAML run config")
    parser.add_argument(
        "--force", action="store_true", help="rerun even when manifests are up to date"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-corpus", help="generate the teacher task corpus")
    sub.add_parser("attempts", help="collect student attempts with execution feedback")
    sub.add_parser("refine", help="collect teacher refinements for failing attempts")

    p_emit = sub.add_parser("emit", help="emit one dataset variant")
    p_emit.add_argument("--variant", required=True, help="e.g. stand, persd-combined")

    p_eval = sub.add_parser("eval", help="run benchmark inference and pass@k")
    p_eval.add_argument("--profile", required=True, help="sampling profile (pass1, passk)")
    p_eval.add_argument("--two-step", action="store_true", dest="two_step")
    p_eval.add_argument(
        "--endpoint", default="student", help="endpoint role to evaluate (default student)"
    )

    sub.add_parser("overlap", help="train-test contamination analysis")
    sub.add_parser("clean-benchmark", help="drop leaked tasks from the benchmark")
    sub.add_parser("report", help="render the results table and cost summary")
    return parser


COMMANDS: dict[str, Callable[[Runtime, argparse.Namespace], int]] = {
    "gen-corpus": cmd_gen_corpus,
    "attempts": cmd_attempts,
    "refine": cmd_refine,
    "emit": cmd_emit,
    "eval": cmd_eval,
    "overlap": cmd_overlap,
    "clean-benchmark": cmd_clean_benchmark,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    stage = args.command
    try:
        config = load_config(args.config)
        runtime = build_runtime(config)
        return COMMANDS[stage](runtime, args)
    except CliError as exc:
        print(f"error stage={stage} code={exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print(f"error stage={stage} code=interrupted: stage aborted", file=sys.stderr)
        return EXIT_INTERRUPTED
    except Exception as exc:  # surfaced with the stage name per the CLI contract
        print(f"error stage={stage} code={type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
