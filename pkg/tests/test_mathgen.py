import re
import tempfile
from fractions import Fraction
from typing import Dict, Optional

import pytest

from dwlab import mathgen
from dwlab.errors import DegenerateProblemError, EvaluationError, GenerationError, ParameterError
from dwlab.mathgen import DagNode, DagProblem, FailureKind, GenConfig, Op


CELLS = [(d, w) for d in (2, 3, 4) for w in (2, 3, 4)]


def _leaf(node_id: str, value=None, unknown: bool = False) -> DagNode:
    return DagNode(id=node_id, op=Op.LEAF, value=None if value is None else Fraction(value), is_unknown=unknown)


def _problem(nodes, root_value, depth=2, width=2) -> DagProblem:
    return DagProblem(
        id="hand", depth=depth, width=width, seed=0, nodes=nodes, root=nodes[-1].id, root_value=Fraction(root_value)
    )


def _naive_eval(problem: DagProblem, node_id: str, x: Fraction) -> Fraction:
    """Top-down recursive evaluator, independent of mathgen.evaluate."""
    node = problem.node_table[node_id]
    if node.op == Op.LEAF:
        return x if node.is_unknown else node.value
    vals = [_naive_eval(problem, c, x) for c in node.children]
    if node.op == Op.ADD:
        return sum(vals, Fraction(0))
    if node.op == Op.SUB:
        return vals[0] - sum(vals[1:], Fraction(0))
    if node.op == Op.MUL:
        out = Fraction(1)
        for v in vals:
            out *= v
        return out
    if node.op == Op.SQUARE:
        return vals[0] ** 2
    root = Fraction(int(round(float(vals[0]) ** 0.5)))
    assert root * root == vals[0]
    return root


def _levels(problem: DagProblem) -> Dict[str, int]:
    levels = {problem.root: 1}
    for node in reversed(problem.nodes):
        for c in node.children:
            levels[c] = levels[node.id] + 1
    return levels


def _path_to_unknown(problem: DagProblem):
    table = problem.node_table
    parents = {c: n.id for n in problem.nodes for c in n.children}
    path = []
    cur = problem.unknown.id
    while cur in parents:
        cur = parents[cur]
        path.append(table[cur])
    return path


def _check_invariants(problem: DagProblem):
    assert mathgen.evaluate(problem, problem.ground_truth) == problem.root_value
    assert _naive_eval(problem, problem.root, problem.ground_truth) == problem.root_value
    assert mathgen.solve_unknown(problem) == problem.ground_truth

    assert sum(1 for n in problem.nodes if n.is_unknown) == 1
    assert problem.nodes[-1].id == problem.root
    levels = _levels(problem)
    assert len(levels) == len(problem.nodes)
    for node in problem.nodes:
        if node.op in (Op.SQUARE, Op.SQRT):
            assert len(node.children) == 1
        elif node.op == Op.LEAF:
            assert node.children == []
            assert levels[node.id] == problem.depth
        else:
            assert len(node.children) == problem.width
            assert levels[node.id] < problem.depth
    assert max(levels.values()) == problem.depth

    for node in _path_to_unknown(problem):
        assert node.op in mathgen.PATH_OPS


def test_add_and_mul_examples():
    add = _problem([_leaf("n1", unknown=True), _leaf("n2", 5), DagNode("n3", Op.ADD, ["n1", "n2"])], 8)
    assert mathgen.solve_unknown(add) == 3

    mul = _problem([_leaf("n1", unknown=True), _leaf("n2", 4), DagNode("n3", Op.MUL, ["n1", "n2"])], 12)
    assert mathgen.solve_unknown(mul) == 3


def test_evaluate_sub_left_folds():
    nodes = [_leaf("n1", 10), _leaf("n2", 3), _leaf("n3", 2), _leaf("n4", unknown=True)]
    nodes.append(DagNode("n5", Op.SUB, ["n1", "n2", "n3"]))
    nodes.append(DagNode("n6", Op.ADD, ["n5", "n4"]))
    problem = _problem(nodes, 5, depth=3, width=3)
    assert mathgen.evaluate(problem, Fraction(0)) == 5


def test_square_of_sqrt():
    nodes = [
        _leaf("n1", Fraction(49, 4)),
        DagNode("n2", Op.SQRT, ["n1"]),
        DagNode("n3", Op.SQUARE, ["n2"]),
        _leaf("n4", unknown=True),
        DagNode("n5", Op.ADD, ["n3", "n4"]),
    ]
    problem = _problem(nodes, 0, depth=4)
    assert mathgen.evaluate(problem, Fraction(0)) == Fraction(49, 4)
    assert mathgen.exact_sqrt(Fraction(49, 4)) == Fraction(7, 2)


def test_sqrt_of_negative_or_non_square():
    for bad in (Fraction(-4), Fraction(2), Fraction(1, 3)):
        nodes = [_leaf("n1", bad), DagNode("n2", Op.SQRT, ["n1"]), _leaf("n3", unknown=True)]
        nodes.append(DagNode("n4", Op.ADD, ["n2", "n3"]))
        with pytest.raises(EvaluationError):
            mathgen.evaluate(_problem(nodes, 0, depth=3), Fraction(1))


def test_evaluate_rejects_malformed_trees():
    missing = _problem([_leaf("n1", unknown=True), DagNode("n2", Op.ADD, ["n1", "n9"])], 0)
    with pytest.raises(EvaluationError):
        mathgen.evaluate(missing, Fraction(0))

    out_of_order = _problem([DagNode("n2", Op.ADD, ["n1", "n3"]), _leaf("n1", unknown=True), _leaf("n3", 1)], 0)
    out_of_order.root = "n2"
    with pytest.raises(EvaluationError):
        mathgen.evaluate(out_of_order, Fraction(0))


def test_solve_from_linear_coefficients():
    # eval(0) = 5, eval(1) = 7
    nodes = [_leaf("n1", unknown=True), _leaf("n2", 2), DagNode("n3", Op.MUL, ["n1", "n2"]), _leaf("n4", 5)]
    nodes.append(DagNode("n5", Op.ADD, ["n3", "n4"]))
    problem = _problem(nodes, 11, depth=3)
    assert mathgen.linear_coefficients(problem) == (2, 5)
    assert mathgen.solve_unknown(problem) == 3


def test_pure_add_chain_with_zero_siblings():
    nodes = [_leaf("n1", unknown=True), _leaf("n2", 0), DagNode("n3", Op.ADD, ["n1", "n2"]), _leaf("n4", 0)]
    nodes.append(DagNode("n5", Op.ADD, ["n3", "n4"]))
    assert mathgen.solve_unknown(_problem(nodes, 17, depth=3)) == 17


def test_degenerate_problem():
    nodes = [_leaf("n1", unknown=True), _leaf("n2", 0), DagNode("n3", Op.MUL, ["n1", "n2"])]
    with pytest.raises(DegenerateProblemError):
        mathgen.solve_unknown(_problem(nodes, 0))


def test_generated_problems_are_sound():
    for d, w in CELLS:
        for i in range(40):
            problem = mathgen.generate_problem(d, w, seed=1000 * d + 10 * w + i)
            assert (problem.depth, problem.width) == (d, w)
            _check_invariants(problem)


@pytest.mark.slow
def test_generated_problems_are_sound_at_scale():
    for d, w in CELLS:
        for i in range(1000):
            _check_invariants(mathgen.generate_problem(d, w, seed=mathgen.problem_seed(7, d, w, i)))


def test_linearity():
    for i in range(50):
        problem = mathgen.generate_problem(3, 3, seed=i)
        a, b = mathgen.linear_coefficients(problem)
        assert a != 0
        assert mathgen.evaluate(problem, Fraction(2)) == 2 * a + b
        assert mathgen.evaluate(problem, Fraction(-7, 3)) == Fraction(-7, 3) * a + b


def test_generation_is_deterministic():
    a = mathgen.generate_problem(4, 3, seed=42)
    b = mathgen.generate_problem(4, 3, seed=42)
    assert a.to_dict(encode_json=True) == b.to_dict(encode_json=True)
    assert a.rendered == b.rendered
    assert mathgen.generate_problem(4, 3, seed=43).rendered != a.rendered


def test_generation_rejects_bad_cells():
    for d, w in [(1, 2), (2, 1), (0, 3)]:
        with pytest.raises(ParameterError):
            mathgen.generate_problem(d, w, seed=0)


def test_generation_gives_up_on_impossible_configs():
    cfg = GenConfig(leaf_min=5, leaf_max=5, op_weights={"ADD": 1.0}, max_magnitude=1, max_retries=5)
    with pytest.raises(GenerationError) as e:
        mathgen.generate_problem(2, 2, seed=0, cfg=cfg)
    assert e.value.attempts == 5
    assert "unknown's path" in e.value.constraint


def test_gen_config_validation():
    with pytest.raises(ParameterError):
        GenConfig(leaf_min=3, leaf_max=2)
    with pytest.raises(ParameterError):
        GenConfig(leaf_min=0, leaf_max=0)
    with pytest.raises(ParameterError):
        GenConfig(op_weights={"DIV": 1.0})
    with pytest.raises(ParameterError):
        GenConfig(op_weights={"SQUARE": 1.0})


def test_render_three_node_tree():
    problem = _problem([_leaf("n1", unknown=True), _leaf("n2", 5), DagNode("n3", Op.ADD, ["n1", "n2"])], 8)
    text = mathgen.render(problem)
    assert text == (
        "The value of n2 is 5. The value of n3 is the sum of n1 and n2. The value of n3 is 8. "
        "What is the value of n1?"
    )
    assert text.count(".") == 3
    assert text.endswith("?")


_SENTENCE = re.compile(r"The value of (n\d+) is (.+?)\.(?= |$)")


def _parse_rendered(text: str):
    """Rebuilds (op, children, value) per node, the root value and the unknown from rendered text."""
    nodes: Dict[str, tuple] = {}
    root_value: Optional[Fraction] = None
    for node_id, body in _SENTENCE.findall(text):
        if body.startswith("the sum of "):
            nodes[node_id] = (Op.ADD, re.findall(r"n\d+", body), None)
        elif body.startswith("the product of "):
            nodes[node_id] = (Op.MUL, re.findall(r"n\d+", body), None)
        elif body.startswith("the square root of "):
            nodes[node_id] = (Op.SQRT, re.findall(r"n\d+", body), None)
        elif body.startswith("the square of "):
            nodes[node_id] = (Op.SQUARE, re.findall(r"n\d+", body), None)
        elif " minus " in body:
            nodes[node_id] = (Op.SUB, body.split(" minus "), None)
        elif node_id in nodes:
            root_value = Fraction(body)
        else:
            nodes[node_id] = (Op.LEAF, [], Fraction(body))
    unknown = re.search(r"What is the value of (n\d+)\?$", text).group(1)
    return nodes, root_value, unknown


def test_rendering_round_trips_through_a_parser():
    for i in range(100):
        d, w = CELLS[i % len(CELLS)]
        problem = mathgen.generate_problem(d, w, seed=5000 + i)
        nodes, root_value, unknown = _parse_rendered(problem.rendered)
        assert root_value == problem.root_value
        assert unknown == problem.unknown.id
        for node in problem.nodes:
            if node.is_unknown:
                assert node.id not in nodes
                continue
            op, children, value = nodes[node.id]
            assert op == node.op
            assert children == node.children
            assert value == node.value


def test_rendering_is_injective_within_a_cell():
    by_text = {}
    for problem in mathgen.generate_dataset([3], [2], count=100, seed=3):
        structure = [n.to_dict(encode_json=True) for n in problem.nodes], str(problem.root_value)
        assert by_text.setdefault(problem.rendered, structure) == structure


def test_grade_examples():
    result = mathgen.grade("The answer is 3.", Fraction(3), tol=0)
    assert result.correct
    assert result.failure_kind == FailureKind.NONE
    assert result.parsed_answer == 3

    assert mathgen.grade("x = 2.9999996", Fraction(3), tol=1e-6).correct
    assert not mathgen.grade("x = 2.99", Fraction(3), tol=1e-6).correct

    result = mathgen.grade("I cannot solve this", Fraction(3))
    assert not result.correct
    assert result.failure_kind == FailureKind.UNPARSEABLE
    assert result.parsed_answer is None


def test_grade_prefers_the_answer_marker():
    text = "n3 is 12 and n2 is 4, so n1 = 12 / 4.\nANSWER: 3\nDouble-checked against 5 other steps."
    assert mathgen.grade(text, Fraction(3)).correct

    wrong = mathgen.grade("ANSWER: 4", Fraction(3))
    assert wrong.failure_kind == FailureKind.WRONG_VALUE


def test_grade_fractions_and_identifiers():
    assert mathgen.grade("ANSWER: -7/3", Fraction(-7, 3)).correct
    assert mathgen.grade("ANSWER: −7/3", Fraction(-7, 3)).correct
    # a fraction answer must match exactly even with a tolerance
    assert not mathgen.grade("ANSWER: 1/3", Fraction(333333, 1000000), tol=1e-6).correct
    # node names are not numbers
    assert mathgen.grade("the unknown is n12", Fraction(12)).failure_kind == FailureKind.UNPARSEABLE

    with pytest.raises(ParameterError):
        mathgen.grade("3", Fraction(3), tol=-1)


def test_dataset_cells():
    problems = mathgen.generate_dataset([2, 3, 4], [2, 3, 4], count=100, seed=0)
    assert len(problems) == 900
    assert len({p.id for p in problems}) == 900
    for d, w in CELLS:
        assert sum(1 for p in problems if (p.depth, p.width) == (d, w)) == 100

    with pytest.raises(ParameterError):
        mathgen.generate_dataset([2], [2], count=0, seed=0)


def test_dataset_prefix_is_stable():
    small = mathgen.generate_dataset([2, 3], [2], count=3, seed=9)
    large = mathgen.generate_dataset([2, 3], [2], count=5, seed=9)
    by_id = {p.id: p for p in large}
    for p in small:
        assert by_id[p.id].rendered == p.rendered


def test_write_and_load_dataset():
    problems = mathgen.generate_dataset([2, 3], [2, 3], count=2, seed=1)
    with tempfile.TemporaryDirectory() as tmpdir:
        path = f"{tmpdir}/problems.jsonl"
        assert mathgen.write_dataset(problems, path) == 8
        loaded = mathgen.load_dataset(path)
    assert [p.to_dict(encode_json=True) for p in loaded] == [p.to_dict(encode_json=True) for p in problems]
    assert isinstance(loaded[0].root_value, Fraction)


def test_exam_mode_keeps_answers_apart():
    problems = mathgen.generate_dataset([2], [2, 3], count=3, seed=1)
    with tempfile.TemporaryDirectory() as tmpdir:
        path = f"{tmpdir}/problems.jsonl"
        mathgen.write_dataset(problems, path, exam_mode=True)
        with open(path) as f:
            assert "ground_truth" not in f.read()
        with open(f"{tmpdir}/{mathgen.ANSWERS_FILE}") as f:
            assert len(f.read().splitlines()) == 6
        loaded = mathgen.load_dataset(path)
    assert [p.ground_truth for p in loaded] == [p.ground_truth for p in problems]
