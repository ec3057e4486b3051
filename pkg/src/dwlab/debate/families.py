"""
Task families: how a dataset's items are prompted, how a final message is turned into an answer, and how that answer
is scored. The debate engine never looks inside task content; it goes through a TaskFamily.
"""
import abc
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from dwlab import mathgen, writegen
from dwlab.errors import ParameterError
from dwlab.resources import load_prompts


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskItem:
    id: str
    family: str
    depth: int
    """steps of the task: the tree depth for math, K for writing"""
    width: int
    """width level: children per node for math, the entropy quintile for writing"""
    width_value: float
    """the raw width measure: equal to `width` for math, the normalized entropy for writing"""
    question: str
    payload: Any

    @property
    def cell(self):
        return self.depth, self.width


@dataclass(frozen=True)
class Outcome:
    score: float
    correct: Optional[bool] = None
    standard: Optional[float] = None
    quality: Optional[float] = None
    details: Optional[Dict] = None


class TaskFamily(abc.ABC):
    name: str

    def __init__(self, prompts: Optional[dict] = None):
        self.templates = (prompts or load_prompts())[self.name]

    @abc.abstractmethod
    def load(self, path: str) -> List[TaskItem]:
        raise NotImplementedError

    @abc.abstractmethod
    def _fields(self, item: TaskItem) -> Dict[str, str]:
        """Template fields for an item."""

    def prompt(
        self,
        role: str,
        item: TaskItem,
        self_message: Optional[str] = None,
        peer_messages: Sequence[str] = (),
        messages: Sequence[str] = (),
    ) -> str:
        fields = dict(self._fields(item))
        fields["self_message"] = self_message or ""
        fields["peer_messages"] = _enumerate_messages(peer_messages)
        fields["messages"] = _enumerate_messages(messages)
        return self.templates[role].format(**fields)

    @abc.abstractmethod
    def extract_answer(self, text: str) -> Optional[str]:
        """The answer a message commits to, as text, or None."""

    @abc.abstractmethod
    def evaluate(self, item: TaskItem, text: str, judge: Optional[writegen.JudgeBackend] = None) -> Outcome:
        raise NotImplementedError

    @abc.abstractmethod
    def reference_output(self, item: TaskItem) -> str:
        """A message that scores full marks."""

    @abc.abstractmethod
    def synthetic_output(self, item: TaskItem, step_ok: Sequence[bool], rng: np.random.Generator) -> str:
        """A final output consistent with which steps were carried out correctly."""


def _enumerate_messages(messages: Sequence[str]) -> str:
    return "\n\n".join(f"[{i + 1}] {m}" for i, m in enumerate(messages))


class MathFamily(TaskFamily):
    name = "math"

    def __init__(self, prompts: Optional[dict] = None, tol: float = mathgen.DEFAULT_TOL):
        super().__init__(prompts)
        self.tol = tol

    def items_from(self, problems: Sequence[mathgen.DagProblem]) -> List[TaskItem]:
        return [
            TaskItem(
                id=p.id,
                family=self.name,
                depth=p.depth,
                width=p.width,
                width_value=float(p.width),
                question=p.rendered,
                payload=p,
            )
            for p in problems
        ]

    def load(self, path: str) -> List[TaskItem]:
        problems = mathgen.load_dataset(path)
        missing = [p.id for p in problems if p.ground_truth is None]
        if missing:
            raise ParameterError(f"{len(missing)} problem(s) in {path} have no ground truth, e.g. {missing[0]}")
        return self.items_from(problems)

    def _fields(self, item: TaskItem) -> Dict[str, str]:
        return {"question": item.question}

    def extract_answer(self, text: str) -> Optional[str]:
        parsed = mathgen.extract_answer(text)
        return None if parsed is None else str(parsed[0])

    def evaluate(self, item: TaskItem, text: str, judge: Optional[writegen.JudgeBackend] = None) -> Outcome:
        result = mathgen.grade(text, item.payload.ground_truth, self.tol)
        return Outcome(
            score=1.0 if result.correct else 0.0,
            correct=result.correct,
            details={"failure_kind": result.failure_kind.value},
        )

    def reference_output(self, item: TaskItem) -> str:
        return f"ANSWER: {item.payload.ground_truth}"

    def synthetic_output(self, item: TaskItem, step_ok: Sequence[bool], rng: np.random.Generator) -> str:
        truth: Fraction = item.payload.ground_truth
        if all(step_ok):
            return f"ANSWER: {truth}"
        offset = int(rng.integers(1, 10)) * (1 if rng.random() < 0.5 else -1)
        return f"ANSWER: {truth + offset}"


# sentence frames for synthetic essays; they vary in length so the heuristic judge sees some variety
_FRAMES_WITH_KEYWORD = [
    "Morning came early and the {kw} was already waiting.",
    "Nobody in town expected the {kw} to matter so much.",
    "She kept thinking about the {kw} long after the meeting ended and the hallway lights went dark.",
    "The {kw} changed everything.",
    "By noon, the story of the {kw} had spread through every office on the street.",
    "He laughed when someone mentioned the {kw} again.",
]
_FRAMES_WITHOUT_KEYWORD = [
    "The afternoon drifted by without much to say.",
    "Somewhere a radio played an old song.",
    "It was hard to tell what anyone was really thinking.",
]


class WritingFamily(TaskFamily):
    name = "writing"

    def items_from(self, tasks: Sequence[writegen.KeywordTask]) -> List[TaskItem]:
        missing = [t.id for t in tasks if t.quintile is None]
        if missing:
            raise ParameterError(
                f"{len(missing)} writing task(s) have no quintile, e.g. {missing[0]}; generate with binning enabled"
            )
        return [
            TaskItem(
                id=t.id,
                family=self.name,
                depth=t.K,
                width=int(t.quintile),  # type: ignore[arg-type]
                width_value=t.entropy_norm,
                question=self.templates["single"].format(K=t.K, keywords=", ".join(t.keyword_texts)),
                payload=t,
            )
            for t in tasks
        ]

    def load(self, path: str) -> List[TaskItem]:
        return self.items_from(writegen.load_dataset(path))

    def _fields(self, item: TaskItem) -> Dict[str, str]:
        task: writegen.KeywordTask = item.payload
        return {"question": item.question, "K": str(task.K), "keywords": ", ".join(task.keyword_texts)}

    def extract_answer(self, text: str) -> Optional[str]:
        essay = writegen.extract_essay(text)
        return essay or None

    def evaluate(self, item: TaskItem, text: str, judge: Optional[writegen.JudgeBackend] = None) -> Outcome:
        judge = judge or writegen.HeuristicJudge()
        score = writegen.score_essay(writegen.extract_essay(text), item.payload, judge)
        return Outcome(
            score=score.composite, standard=score.standard, quality=score.quality, details=score.diagnostics
        )

    def _essay(self, keywords: Sequence[str], step_ok: Sequence[bool], rng: Optional[np.random.Generator]) -> str:
        sentences = []
        for k, (kw, ok) in enumerate(zip(keywords, step_ok)):
            if ok:
                frames = _FRAMES_WITH_KEYWORD
                offset = 0 if rng is None else int(rng.integers(len(frames)))
                sentences.append(frames[(k + offset) % len(frames)].format(kw=kw))
            else:
                frames = _FRAMES_WITHOUT_KEYWORD
                offset = 0 if rng is None else int(rng.integers(len(frames)))
                sentences.append(frames[(k + offset) % len(frames)])
        return "ESSAY:\n" + " ".join(sentences)

    def reference_output(self, item: TaskItem) -> str:
        keywords = item.payload.keyword_texts
        return self._essay(keywords, [True] * len(keywords), rng=None)

    def synthetic_output(self, item: TaskItem, step_ok: Sequence[bool], rng: np.random.Generator) -> str:
        return self._essay(item.payload.keyword_texts, step_ok, rng)


FAMILIES = {"math": MathFamily, "writing": WritingFamily}


def family_for(name: str, **kwargs) -> TaskFamily:
    try:
        return FAMILIES[name](**kwargs)
    except KeyError:
        raise ParameterError(f"unknown task family {name!r}; expected one of {sorted(FAMILIES)}") from None
