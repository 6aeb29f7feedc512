"""Fixtures for runner acceptance: a self-contained pipeline workspace.

The cross-component test drives the primary package purely through its
external interfaces: the CLI, the YAML config, the JSONL file schemas and
the runner wire protocol. Fixture files are therefore written as plain JSON
rather than through the primary's own serializers.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import yaml

REPO_ROOT = Path(__file__).resolve().parents[2]
STUB_RUNNER = REPO_ROOT / "tests" / "stub_runner.py"

N_TASKS = 20
STUDENT_FAILS = 12
TEACHER_REPAIRS = 10


def real_runner_cmd() -> list[str]:
    return [sys.executable, "-m", "sandbox_runner"]


def stub_runner_cmd() -> list[str]:
    return [sys.executable, str(STUB_RUNNER)]


def correct_code(i: int) -> str:
    return f"def add{i}(x):\n    return x + {i}\n"


def refined_code(i: int) -> str:
    return f"def add{i}(x):\n    result = x + {i}\n    return result\n"


def wrong_code(i: int) -> str:
    # Fails every assertion when really executed; the marker tells the stub
    # runner to report the same outcome.
    return f"def add{i}(x):\n    return None  # stub: fail=all\n"


def toy_task_record(i: int) -> dict:
    return {
        "id": f"toy-{i:02d}",
        "instruction": f'def add{i}(x):\n    """Return x plus {i}."""\n',
        "unit_tests": [
            {"id": f"t{j}", "kind": "hidden", "assertion": f"assert add{i}({v}) == {v + i}"}
            for j, v in enumerate((1, 2, 5))
        ],
        "canonical_code": correct_code(i),
        "origin": "teacher_generated",
    }


def scenario_rules() -> list[dict]:
    rules = []
    for i in range(N_TASKS):
        student = wrong_code(i) if i < STUDENT_FAILS else correct_code(i)
        teacher = refined_code(i) if i < TEACHER_REPAIRS else wrong_code(i)
        rules.append(
            {"endpoint": "student", "contains": f"def add{i}(", "replies": [f"```python\n{student}```"]}
        )
        rules.append(
            {"endpoint": "teacher", "contains": f"def add{i}(", "replies": [f"```python\n{teacher}```"]}
        )
    return rules


def write_workspace(root: Path, runner_cmd: list[str]) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    with (root / "corpus.jsonl").open("w", encoding="utf-8") as fh:
        for i in range(N_TASKS):
            fh.write(json.dumps(toy_task_record(i), sort_keys=True) + "\n")
    (root / "mock_script.json").write_text(
        json.dumps({"strict": True, "rules": scenario_rules()}), encoding="utf-8"
    )
    config = {
        "rng_seed": 7,
        "endpoints": {"teacher": {}, "student": {}},
        "backend": {"kind": "mock", "script": "mock_script.json"},
        "paths": {
            "corpus": "corpus.jsonl",
            "outputs": "outputs",
            "runner": runner_cmd,
        },
        "limits": {"wall_timeout_ms": 5000},
        "pipeline": {"max_workers": 4},
    }
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return config_path
