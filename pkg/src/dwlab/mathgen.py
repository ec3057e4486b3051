"""
Linear-equation math problems over operator trees with controllable depth and width.

A problem is a tree of `depth` node levels. Internal ADD/SUB/MUL nodes take exactly `width` children, SQUARE and
SQRT take one, and every leaf sits on the last level. One leaf is unknown; the examinee is given every other leaf
and the root's value and must recover the unknown. Nodes on the root-to-unknown path are only ADD, SUB or MUL with
nonzero multiplied siblings, so the root is an affine function a*x + b of the unknown with a != 0.

All arithmetic is exact (fractions.Fraction) and generated values are integers.
"""
import dataclasses
import enum
import logging
import math
import os
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from dataclasses_json import config as json_config
from dataclasses_json import dataclass_json

from dwlab.errors import DegenerateProblemError, EvaluationError, GenerationError, ParameterError
from dwlab.utils import fsspec_utils
from dwlab.utils.rng import derive_rng, derive_seed


logger = logging.getLogger(__name__)

ANSWERS_FILE = "answers.jsonl"
DEFAULT_TOL = 1e-6


class Op(str, enum.Enum):
    ADD = "ADD"
    SUB = "SUB"
    MUL = "MUL"
    SQUARE = "SQUARE"
    SQRT = "SQRT"
    LEAF = "LEAF"

    @property
    def arity(self) -> Optional[int]:
        """None for the variadic operators, which take `width` children."""
        if self in (Op.SQUARE, Op.SQRT):
            return 1
        if self == Op.LEAF:
            return 0
        return None


PATH_OPS = (Op.ADD, Op.SUB, Op.MUL)
CONSTANT_OPS = (Op.ADD, Op.SUB, Op.MUL, Op.SQUARE, Op.SQRT)


def _encode_fraction(v: Optional[Fraction]) -> Optional[str]:
    return None if v is None else str(v)


def _decode_fraction(v) -> Optional[Fraction]:
    return None if v is None else Fraction(v)


def _fraction_field(**kwargs):
    return dataclasses.field(metadata=json_config(encoder=_encode_fraction, decoder=_decode_fraction), **kwargs)


@dataclass_json
@dataclass
class DagNode:
    id: str
    op: Op
    children: List[str] = dataclasses.field(default_factory=list)
    value: Optional[Fraction] = _fraction_field(default=None)
    is_unknown: bool = False


@dataclass_json
@dataclass
class DagProblem:
    id: str
    depth: int
    width: int
    seed: int
    nodes: List[DagNode]
    """in topological order: children before parents, root last"""
    root: str
    root_value: Fraction = _fraction_field()
    ground_truth: Optional[Fraction] = _fraction_field(default=None)
    rendered: str = ""

    @property
    def node_table(self) -> Dict[str, DagNode]:
        return {n.id: n for n in self.nodes}

    @property
    def unknown(self) -> DagNode:
        unknowns = [n for n in self.nodes if n.is_unknown]
        if len(unknowns) != 1:
            raise ParameterError(f"problem {self.id} has {len(unknowns)} unknown leaves")
        return unknowns[0]


class FailureKind(str, enum.Enum):
    NONE = "NONE"
    UNPARSEABLE = "UNPARSEABLE"
    WRONG_VALUE = "WRONG_VALUE"


@dataclass_json
@dataclass(frozen=True)
class GradeResult:
    correct: bool
    parsed_answer: Optional[Fraction] = _fraction_field(default=None)
    failure_kind: FailureKind = FailureKind.NONE


@dataclass
class GenConfig:
    leaf_min: int = -9
    leaf_max: int = 9
    op_weights: Dict[str, float] = dataclasses.field(
        default_factory=lambda: {"ADD": 1.0, "SUB": 1.0, "MUL": 1.0, "SQUARE": 0.5, "SQRT": 0.5}
    )
    """relative weights; the path to the unknown only draws from ADD, SUB and MUL"""
    max_retries: int = 100
    """per node: how often a subtree is resampled before giving up"""
    sqrt_retries: int = 8
    """random subtrees tried under a SQRT before falling back to SQRT(SQUARE(...))"""
    max_magnitude: int = 10**6
    max_rendered_chars: Optional[int] = None

    def __post_init__(self):
        if self.leaf_min > self.leaf_max:
            raise ParameterError(f"empty leaf range [{self.leaf_min}, {self.leaf_max}]")
        if self.leaf_min == self.leaf_max == 0:
            raise ParameterError("leaf range must contain a nonzero value")
        unknown_ops = set(self.op_weights) - {op.value for op in CONSTANT_OPS}
        if unknown_ops:
            raise ParameterError(f"unknown operators in op_weights: {sorted(unknown_ops)}")
        if not any(self.op_weights.get(op.value, 0.0) > 0 for op in PATH_OPS):
            raise ParameterError("at least one of ADD, SUB, MUL needs positive weight")
        if self.max_retries < 1 or self.sqrt_retries < 0:
            raise ParameterError("retry budgets must be positive")


# Generation works on drafts; ids are assigned once the whole tree is accepted.
@dataclass
class _Draft:
    op: Op
    children: List["_Draft"]
    value: Fraction
    is_unknown: bool = False


def _apply(op: Op, values: Sequence[Fraction]) -> Fraction:
    if op == Op.ADD:
        return sum(values, Fraction(0))
    if op == Op.SUB:
        out = values[0]
        for v in values[1:]:
            out -= v
        return out
    if op == Op.MUL:
        out = Fraction(1)
        for v in values:
            out *= v
        return out
    if op == Op.SQUARE:
        return values[0] * values[0]
    if op == Op.SQRT:
        return exact_sqrt(values[0])
    raise EvaluationError(f"cannot apply {op}")


def exact_sqrt(v: Fraction) -> Fraction:
    if v < 0:
        raise EvaluationError(f"square root of negative value {v}")
    num, den = math.isqrt(v.numerator), math.isqrt(v.denominator)
    if num * num != v.numerator or den * den != v.denominator:
        raise EvaluationError(f"{v} is not the square of a rational")
    return Fraction(num, den)


def _is_rational_square(v: Fraction) -> bool:
    if v < 0:
        return False
    return math.isqrt(v.numerator) ** 2 == v.numerator and math.isqrt(v.denominator) ** 2 == v.denominator


class _Generator:
    def __init__(self, depth: int, width: int, rng: np.random.Generator, cfg: GenConfig):
        self.depth = depth
        self.width = width
        self.rng = rng
        self.cfg = cfg
        self.bound = Fraction(cfg.max_magnitude)

        self.path_ops, self.path_p = self._weights(PATH_OPS)
        self.const_ops, self.const_p = self._weights(CONSTANT_OPS)

    def _weights(self, ops):
        chosen = [op for op in ops if self.cfg.op_weights.get(op.value, 0.0) > 0]
        w = np.array([self.cfg.op_weights[op.value] for op in chosen], dtype=np.float64)
        return chosen, w / w.sum()

    def _choice(self, ops, p) -> Op:
        return ops[int(self.rng.choice(len(ops), p=p))]

    def leaf_value(self, nonzero: bool) -> Fraction:
        while True:
            v = int(self.rng.integers(self.cfg.leaf_min, self.cfg.leaf_max + 1))
            if v != 0 or not nonzero:
                return Fraction(v)

    def _square_leaf(self, nonzero: bool) -> Fraction:
        candidates = [k * k for k in range(0, 4) if self.cfg.leaf_min <= k * k <= self.cfg.leaf_max]
        if nonzero:
            candidates = [c for c in candidates if c != 0]
        if not candidates:
            raise GenerationError("a perfect-square leaf inside the leaf range", 1)
        return Fraction(candidates[int(self.rng.integers(len(candidates)))])

    def path(self, level: int, truth: Fraction) -> _Draft:
        """The node on the unknown's path at `level` (1 is the root)."""
        if level == self.depth:
            return _Draft(Op.LEAF, [], truth, is_unknown=True)

        for _ in range(self.cfg.max_retries):
            op = self._choice(self.path_ops, self.path_p)
            position = int(self.rng.integers(self.width))
            children = []
            for j in range(self.width):
                if j == position:
                    children.append(self.path(level + 1, truth))
                else:
                    children.append(self.constant(level + 1, nonzero=op == Op.MUL))
            value = _apply(op, [c.value for c in children])
            if abs(value) <= self.bound:
                return _Draft(op, children, value)

        constraint = f"|value| <= {self.cfg.max_magnitude} on the unknown's path at level {level}"
        raise GenerationError(constraint, self.cfg.max_retries)

    def constant(self, level: int, nonzero: bool = False) -> _Draft:
        """A subtree without the unknown whose leaves all sit on the last level."""
        if level == self.depth:
            return _Draft(Op.LEAF, [], self.leaf_value(nonzero))

        for _ in range(self.cfg.max_retries):
            op = self._choice(self.const_ops, self.const_p)
            if op == Op.SQRT:
                child = self._sqrt_operand(level + 1, nonzero)
                children = [child]
            elif op == Op.SQUARE:
                children = [self.constant(level + 1, nonzero)]
            else:
                children = [self.constant(level + 1, nonzero=op == Op.MUL) for _ in range(self.width)]
            value = _apply(op, [c.value for c in children])
            if abs(value) <= self.bound and (value != 0 or not nonzero):
                return _Draft(op, children, value)

        constraint = f"|value| <= {self.cfg.max_magnitude}" + (" and nonzero" if nonzero else "")
        raise GenerationError(f"{constraint} for a constant subtree at level {level}", self.cfg.max_retries)

    def _sqrt_operand(self, level: int, nonzero: bool) -> _Draft:
        if level == self.depth:
            return _Draft(Op.LEAF, [], self._square_leaf(nonzero))

        for _ in range(self.cfg.sqrt_retries):
            candidate = self.constant(level, nonzero)
            if _is_rational_square(candidate.value):
                return candidate

        # SQUARE needs a child level below it
        if level + 1 <= self.depth:
            inner = self.constant(level + 1, nonzero)
            return _Draft(Op.SQUARE, [inner], inner.value * inner.value)

        raise GenerationError("a perfect-square operand under SQRT", self.cfg.sqrt_retries)


def _flatten(root: _Draft) -> Tuple[List[DagNode], str]:
    """Post-order numbering: children get smaller ids than their parents, the root the largest."""
    nodes: List[DagNode] = []

    def visit(draft: _Draft) -> str:
        child_ids = [visit(c) for c in draft.children]
        node_id = f"n{len(nodes) + 1}"
        value = None if draft.is_unknown or draft.op != Op.LEAF else draft.value
        nodes.append(DagNode(id=node_id, op=draft.op, children=child_ids, value=value, is_unknown=draft.is_unknown))
        return node_id

    root_id = visit(root)
    return nodes, root_id


def _check_cell(depth: int, width: int):
    for name, v in (("depth", depth), ("width", width)):
        if isinstance(v, bool) or not isinstance(v, int) or v < 2:
            raise ParameterError(f"{name} must be an integer >= 2, got {v!r}")


def generate_problem(
    depth: int, width: int, seed: int, cfg: Optional[GenConfig] = None, problem_id: Optional[str] = None
) -> DagProblem:
    _check_cell(depth, width)
    cfg = cfg or GenConfig()
    rng = derive_rng(seed, "mathgen/problem")

    gen = _Generator(depth, width, rng, cfg)
    truth = gen.leaf_value(nonzero=False)
    root = gen.path(1, truth)
    nodes, root_id = _flatten(root)

    problem = DagProblem(
        id=problem_id or f"m-d{depth}-w{width}-s{seed}",
        depth=depth,
        width=width,
        seed=seed,
        nodes=nodes,
        root=root_id,
        root_value=root.value,
        ground_truth=truth,
    )
    problem.rendered = render(problem)
    if cfg.max_rendered_chars is not None and len(problem.rendered) > cfg.max_rendered_chars:
        raise GenerationError(f"rendered text within {cfg.max_rendered_chars} characters", 1)
    return problem


def evaluate(problem: DagProblem, unknown_value: Fraction) -> Fraction:
    """Exact bottom-up evaluation with the unknown leaf set to `unknown_value`."""
    table = problem.node_table
    values: Dict[str, Fraction] = {}
    for node in problem.nodes:
        if node.op == Op.LEAF:
            if node.is_unknown:
                values[node.id] = Fraction(unknown_value)
            elif node.value is None:
                raise EvaluationError(f"leaf {node.id} has no value")
            else:
                values[node.id] = node.value
            continue

        arity = node.op.arity
        if arity is not None and len(node.children) != arity:
            raise EvaluationError(f"{node.op.value} node {node.id} needs {arity} child, has {len(node.children)}")
        if not node.children:
            raise EvaluationError(f"{node.op.value} node {node.id} has no children")
        try:
            operands = [values[c] for c in node.children]
        except KeyError as e:
            if e.args[0] not in table:
                raise EvaluationError(f"node {node.id} refers to missing node {e.args[0]}") from e
            raise EvaluationError(f"nodes are not in topological order at {node.id}") from e
        values[node.id] = _apply(node.op, operands)

    if problem.root not in values:
        raise EvaluationError(f"root {problem.root} missing")
    return values[problem.root]


def linear_coefficients(problem: DagProblem) -> Tuple[Fraction, Fraction]:
    """(a, b) with evaluate(problem, x) == a*x + b."""
    b = evaluate(problem, Fraction(0))
    a = evaluate(problem, Fraction(1)) - b
    return a, b


def solve_unknown(problem: DagProblem) -> Fraction:
    a, b = linear_coefficients(problem)
    if a == 0:
        raise DegenerateProblemError(f"problem {problem.id}: the unknown has coefficient 0")
    return (problem.root_value - b) / a


def _join_names(names: Sequence[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def _format_value(v: Fraction) -> str:
    return str(v)


def render(problem: DagProblem) -> str:
    sentences = []
    for node in problem.nodes:
        if node.op == Op.LEAF:
            if not node.is_unknown:
                sentences.append(f"The value of {node.id} is {_format_value(node.value)}.")
        elif node.op == Op.ADD:
            sentences.append(f"The value of {node.id} is the sum of {_join_names(node.children)}.")
        elif node.op == Op.SUB:
            sentences.append(f"The value of {node.id} is {' minus '.join(node.children)}.")
        elif node.op == Op.MUL:
            sentences.append(f"The value of {node.id} is the product of {_join_names(node.children)}.")
        elif node.op == Op.SQUARE:
            sentences.append(f"The value of {node.id} is the square of {node.children[0]}.")
        elif node.op == Op.SQRT:
            sentences.append(f"The value of {node.id} is the square root of {node.children[0]}.")

    sentences.append(f"The value of {problem.root} is {_format_value(problem.root_value)}.")
    sentences.append(f"What is the value of {problem.unknown.id}?")
    return " ".join(sentences)


# a signed integer, decimal or fraction
_NUMBER = r"[-+−]?\d+(?:\.\d+)?(?:\s*/\s*\d+)?"
# not part of an identifier such as n12
_NUMBER_RE = re.compile(r"(?<![\w.])" + _NUMBER + r"(?!\w)")
_MARKER_RE = re.compile(r"ANSWER\s*[:=]\s*\**\s*(" + _NUMBER + r")(?!\w)", re.IGNORECASE)


def _parse_number(text: str) -> Optional[Tuple[Fraction, bool]]:
    """(value, is_fraction)"""
    text = text.replace("\u2212", "-").replace(" ", "")
    try:
        if "/" in text:
            num, den = text.split("/")
            return Fraction(num) / Fraction(den), True
        return Fraction(text), False
    except (ValueError, ZeroDivisionError):
        return None


def extract_answer(answer_text: str) -> Optional[Tuple[Fraction, bool]]:
    markers = _MARKER_RE.findall(answer_text or "")
    if markers:
        parsed = _parse_number(markers[-1])
        if parsed is not None:
            return parsed

    for candidate in reversed(_NUMBER_RE.findall(answer_text or "")):
        parsed = _parse_number(candidate)
        if parsed is not None:
            return parsed
    return None


def grade(answer_text: str, truth: Fraction, tol: float = DEFAULT_TOL) -> GradeResult:
    """
    Takes the number after the last "ANSWER:" marker, or else the last number in the text. Fractions and tol=0
    require an exact match; decimals are accepted within tol.
    """
    if tol < 0:
        raise ParameterError(f"tol must be >= 0, got {tol}")
    parsed = extract_answer(answer_text)
    if parsed is None:
        return GradeResult(correct=False, parsed_answer=None, failure_kind=FailureKind.UNPARSEABLE)

    value, is_fraction = parsed
    truth = Fraction(truth)
    if tol == 0 or is_fraction:
        correct = value == truth
    else:
        correct = abs(value - truth) <= Fraction(tol)

    return GradeResult(
        correct=correct, parsed_answer=value, failure_kind=FailureKind.NONE if correct else FailureKind.WRONG_VALUE
    )


def problem_seed(seed: int, depth: int, width: int, index: int) -> int:
    return derive_seed(seed, "mathgen", depth, width, index)


def iter_dataset(
    depths: Sequence[int], widths: Sequence[int], count: int, seed: int, cfg: Optional[GenConfig] = None
) -> Iterator[DagProblem]:
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    cfg = cfg or GenConfig()
    for d in depths:
        for w in widths:
            for i in range(count):
                yield generate_problem(d, w, problem_seed(seed, d, w, i), cfg, problem_id=f"m-d{d}-w{w}-{i}")


def generate_dataset(
    depths: Sequence[int], widths: Sequence[int], count: int, seed: int, cfg: Optional[GenConfig] = None
) -> List[DagProblem]:
    """`count` problems for every (depth, width) cell, depth-major."""
    return list(iter_dataset(depths, widths, count, seed, cfg))


def _problem_row(problem: DagProblem, exam_mode: bool) -> dict:
    row = problem.to_dict(encode_json=True)
    if exam_mode:
        row.pop("ground_truth")
    return row


def write_dataset(problems: Sequence[DagProblem], path: str, exam_mode: bool = False) -> int:
    """
    Writes one problem per line to `path`. In exam mode ground truths go to answers.jsonl next to it instead.
    """
    n = fsspec_utils.write_jsonl(path, (_problem_row(p, exam_mode) for p in problems))
    if exam_mode:
        answers = fsspec_utils.join(os.path.dirname(path), ANSWERS_FILE)
        fsspec_utils.write_jsonl(answers, ({"id": p.id, "ground_truth": str(p.ground_truth)} for p in problems))
    return n


def load_dataset(path: str) -> List[DagProblem]:
    rows = fsspec_utils.read_jsonl(path)
    answers_path = fsspec_utils.join(os.path.dirname(path), ANSWERS_FILE)
    if any(row.get("ground_truth") is None for row in rows) and fsspec_utils.exists(answers_path):
        truths = {a["id"]: a["ground_truth"] for a in fsspec_utils.iter_jsonl(answers_path)}
        for row in rows:
            if row.get("ground_truth") is None and row["id"] in truths:
                row["ground_truth"] = truths[row["id"]]
    return [DagProblem.from_dict(row) for row in rows]
