"""Train-test contamination analysis.

For each test task: retrieve the closest training tasks by tf-idf cosine
similarity, have a judge endpoint categorize each pair, map categories to
fixed similarity scores, and aggregate per test task by the maximum over its
neighbors. An exact-string-match pre-check runs first and forces a leak
judgment regardless of what the judge says.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.metrics.pairwise import linear_kernel

from .domain import SamplingConfig, Task
from .gateway import EndpointConfig, Gateway, GatewayError
from .prompting import builtin_template_text, user

log = logging.getLogger(__name__)


class OverlapCategory(str, enum.Enum):
    LEAK = "leak"
    SOMEWHAT_SIMILAR = "somewhat_similar"
    SOMEWHAT_NOT_SIMILAR = "somewhat_not_similar"
    NOT_RELATED = "not_related"


CATEGORY_SCORE: dict[OverlapCategory, float] = {
    OverlapCategory.LEAK: 1.0,
    OverlapCategory.SOMEWHAT_SIMILAR: 0.75,
    OverlapCategory.SOMEWHAT_NOT_SIMILAR: 0.25,
    OverlapCategory.NOT_RELATED: 0.0,
}


@dataclass(frozen=True)
class OverlapJudgment:
    """One judged (test task, train task) pair.

    ``score`` is derived from the category, never set independently, so
    scores outside the fixed mapping are unrepresentable.
    """

    test_task_id: str
    train_task_id: str
    category: OverlapCategory
    rationale: str = ""
    parse_failed: bool = False
    score: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "score", CATEGORY_SCORE[self.category])

    def to_dict(self) -> dict[str, Any]:
        return {
            "test_task_id": self.test_task_id,
            "train_task_id": self.train_task_id,
            "category": self.category.value,
            "score": self.score,
            "rationale": self.rationale,
            "parse_failed": self.parse_failed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "OverlapJudgment":
        return cls(
            test_task_id=d["test_task_id"],
            train_task_id=d["train_task_id"],
            category=OverlapCategory(d["category"]),
            rationale=d.get("rationale", ""),
            parse_failed=d.get("parse_failed", False),
        )


_PUNCT_RE = re.compile(r"[^\w\s]")


def _strip_punctuation(text: str) -> str:
    return _PUNCT_RE.sub(" ", text)


class NeighborRetriever(Protocol):
    """Retrieval backend seam; swap in an embedding index if desired."""

    def neighbors(self, test_task: Task, top_k: int = 2) -> list[tuple[Task, float]]:
        ...  # pragma: no cover - protocol signature


class TfidfRetriever:
    """Unigram+bigram tf-idf index over training task descriptions."""

    def __init__(self, train_corpus: Sequence[Task]) -> None:
        if not train_corpus:
            raise ValueError("train_corpus must be non-empty")
        self.train_corpus = list(train_corpus)
        self.vectorizer = TfidfVectorizer(
            lowercase=True,
            preprocessor=lambda text: _strip_punctuation(text.lower()),
            ngram_range=(1, 2),
            token_pattern=r"(?u)\b\w+\b",
        )
        self.matrix = self.vectorizer.fit_transform(
            [task.instruction for task in self.train_corpus]
        )

    def neighbors(self, test_task: Task, top_k: int = 2) -> list[tuple[Task, float]]:
        query = self.vectorizer.transform([test_task.instruction])
        scores = linear_kernel(query, self.matrix).ravel()
        ranked = sorted(
            zip(self.train_corpus, scores.tolist()),
            key=lambda pair: (-pair[1], pair[0].id),
        )
        return ranked[:top_k]


def retrieve_neighbors(
    test_task: Task, train_corpus: Sequence[Task], top_k: int = 2
) -> list[tuple[Task, float]]:
    """Closest training tasks by cosine similarity; ties broken by task id."""
    return TfidfRetriever(train_corpus).neighbors(test_task, top_k)


# Longest names first so substring fallback can't mistake
# "somewhat not similar" for "somewhat similar".
_CATEGORY_PHRASES = [
    ("somewhat not similar", OverlapCategory.SOMEWHAT_NOT_SIMILAR),
    ("somewhat_not_similar", OverlapCategory.SOMEWHAT_NOT_SIMILAR),
    ("somewhat similar", OverlapCategory.SOMEWHAT_SIMILAR),
    ("somewhat_similar", OverlapCategory.SOMEWHAT_SIMILAR),
    ("not related", OverlapCategory.NOT_RELATED),
    ("not_related", OverlapCategory.NOT_RELATED),
    ("leak", OverlapCategory.LEAK),
]

_CATEGORY_LINE_RE = re.compile(r"category\s*[:\-]\s*\"?([\w\s]+)", re.IGNORECASE)


def parse_category(reply: str) -> OverlapCategory | None:
    """Case-insensitive category extraction; last Category: line wins."""
    matches = _CATEGORY_LINE_RE.findall(reply)
    for raw in reversed(matches):
        normalized = " ".join(raw.lower().replace("_", " ").split())
        for phrase, category in _CATEGORY_PHRASES:
            if normalized.startswith(phrase.replace("_", " ")):
                return category
    lowered = " ".join(reply.lower().replace("_", " ").split())
    for phrase, category in _CATEGORY_PHRASES:
        if phrase.replace("_", " ") in lowered:
            return category
    return None


def render_judge_prompt(test_task: Task, train_task: Task) -> str:
    template = builtin_template_text("overlap_judge")
    return template.replace("<<TEST_TASK>>", test_task.instruction).replace(
        "<<TRAIN_TASK>>", train_task.instruction
    )


JUDGE_SAMPLING = SamplingConfig(temperature=0.0, top_p=1.0, n_samples=1, max_tokens=512)


def judge_pair(
    test_task: Task,
    train_task: Task,
    judge: EndpointConfig,
    gateway: Gateway,
) -> OverlapJudgment:
    """Ask the judge endpoint to categorize one pair; unparseable -> not_related."""
    prompt = render_judge_prompt(test_task, train_task)
    [reply] = gateway.chat(judge, [user(prompt)], JUDGE_SAMPLING)
    category = parse_category(reply)
    if category is None:
        return OverlapJudgment(
            test_task_id=test_task.id,
            train_task_id=train_task.id,
            category=OverlapCategory.NOT_RELATED,
            rationale=reply,
            parse_failed=True,
        )
    return OverlapJudgment(
        test_task_id=test_task.id,
        train_task_id=train_task.id,
        category=category,
        rationale=reply,
    )


def analyze_overlap(
    benchmark: Sequence[Task],
    train_corpus: Sequence[Task],
    judge: EndpointConfig,
    gateway: Gateway,
    top_k: int = 2,
    retriever: NeighborRetriever | None = None,
) -> list[OverlapJudgment]:
    """Retrieval + judging for every benchmark task, exact matches forced to leak."""
    if retriever is None:
        retriever = TfidfRetriever(train_corpus)
    exact = {task.instruction: task.id for task in train_corpus}
    judgments: list[OverlapJudgment] = []
    for test_task in benchmark:
        forced_train_id = exact.get(test_task.instruction)
        if forced_train_id is not None:
            judgments.append(
                OverlapJudgment(
                    test_task_id=test_task.id,
                    train_task_id=forced_train_id,
                    category=OverlapCategory.LEAK,
                    rationale="exact string match",
                )
            )
        for train_task, _score in retriever.neighbors(test_task, top_k):
            if train_task.id == forced_train_id:
                continue  # already reported as an exact-match leak
            try:
                judgments.append(judge_pair(test_task, train_task, judge, gateway))
            except GatewayError as exc:
                log.warning(
                    "skipping judgment %s vs %s: %s", test_task.id, train_task.id, exc
                )
    return judgments


@dataclass(frozen=True)
class OverlapReport:
    percent_leak: float  # percentage of test tasks whose max neighbor score is 1.0
    mean_score: float
    n_test_tasks: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "percent_leak": self.percent_leak,
            "mean_score": self.mean_score,
            "n_test_tasks": self.n_test_tasks,
        }


def _max_scores(judgments: Sequence[OverlapJudgment]) -> dict[str, float]:
    scores: dict[str, float] = {}
    for j in judgments:
        scores[j.test_task_id] = max(scores.get(j.test_task_id, 0.0), j.score)
    return scores


def overlap_report(judgments: Sequence[OverlapJudgment]) -> OverlapReport:
    """Aggregate judged pairs per test task by max neighbor score."""
    if not judgments:
        raise ValueError("no judgments to aggregate")
    scores = _max_scores(judgments)
    n = len(scores)
    leaked = sum(1 for s in scores.values() if s == 1.0)
    return OverlapReport(
        percent_leak=100.0 * leaked / n,
        mean_score=sum(scores.values()) / n,
        n_test_tasks=n,
    )


def emit_cleaned_benchmark(
    benchmark_corpus: Sequence[Task], judgments: Sequence[OverlapJudgment]
) -> list[Task]:
    """Drop test tasks judged leaked (max score 1.0), preserving order."""
    scores = _max_scores(judgments)
    return [task for task in benchmark_corpus if scores.get(task.id, 0.0) != 1.0]
