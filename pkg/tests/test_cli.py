import json
import tempfile

import pytest

from dwlab.main import cli
from dwlab.utils import fsspec_utils


def _dwlab(*args) -> int:
    return cli.main([str(a) for a in args])


def _read(path: str) -> str:
    with open(path) as f:
        return f.read()


def _lines(path: str):
    return _read(path).splitlines()


def _write_config(path: str, text: str) -> str:
    with open(path, "w") as f:
        f.write(text)
    return path


@pytest.mark.entry
def test_usage_errors():
    assert _dwlab() == 2
    assert _dwlab("--help") == 0
    assert _dwlab("frobnicate") == 2
    with tempfile.TemporaryDirectory() as tmpdir:
        assert _dwlab("gen-math", "--out", tmpdir, "--count", 0) == 2
        assert _dwlab("gen-math", "--out", tmpdir, "--no_such_flag", 1) == 2
        assert _dwlab("gen-math", "--out", tmpdir, "--cells", "2by2") == 2
        assert _dwlab("run", "--out", f"{tmpdir}/run") == 2
        assert _dwlab("run", "--dataset", f"{tmpdir}/missing.jsonl", "--out", f"{tmpdir}/run") == 2
        assert _dwlab("analyze", "--run", f"{tmpdir}/nowhere") == 2


@pytest.mark.entry
def test_gen_math_cells_and_write_once():
    with tempfile.TemporaryDirectory() as tmpdir:
        out = f"{tmpdir}/math"
        assert _dwlab("gen-math", "--out", out, "--cells", "2x2", "--count", 5) == 0
        rows = [json.loads(line) for line in _lines(f"{out}/problems.jsonl")]
        assert len(rows) == 5
        assert {(r["depth"], r["width"]) for r in rows} == {(2, 2)}

        manifest = fsspec_utils.read_json(f"{out}/manifest.json")
        assert manifest["command"] == "gen-math"
        assert manifest["n_problems"] == 5

        # outputs are write-once
        assert _dwlab("gen-math", "--out", out, "--cells", "2x2", "--count", 5) == 2


@pytest.mark.entry
def test_gen_math_defaults_and_determinism():
    with tempfile.TemporaryDirectory() as tmpdir:
        assert _dwlab("gen-math", "--out", f"{tmpdir}/a") == 0
        assert _dwlab("gen-math", "--out", f"{tmpdir}/b") == 0
        problems = _read(f"{tmpdir}/a/problems.jsonl")
        assert len(problems.splitlines()) == 900
        assert problems == _read(f"{tmpdir}/b/problems.jsonl")

        assert _dwlab("gen-math", "--out", f"{tmpdir}/c", "--seed", 1) == 0
        assert _read(f"{tmpdir}/c/problems.jsonl") != problems


@pytest.mark.entry
def test_gen_math_exam_mode():
    with tempfile.TemporaryDirectory() as tmpdir:
        out = f"{tmpdir}/exam"
        assert _dwlab("gen-math", "--out", out, "--cells", "3x2", "--count", 4, "--exam_mode", "true") == 0
        assert len(_lines(f"{out}/problems.jsonl")) == 4
        assert len(_lines(f"{out}/answers.jsonl")) == 4
        assert "ground_truth" not in _read(f"{out}/problems.jsonl")


@pytest.mark.entry
def test_gen_writing():
    with tempfile.TemporaryDirectory() as tmpdir:
        assert _dwlab("gen-writing", "--out", f"{tmpdir}/a") == 0
        tasks = _read(f"{tmpdir}/a/tasks.jsonl")
        assert len(tasks.splitlines()) == 2500
        assert _dwlab("gen-writing", "--out", f"{tmpdir}/b") == 0
        assert _read(f"{tmpdir}/b/tasks.jsonl") == tasks

        assert _dwlab("gen-writing", "--out", f"{tmpdir}/c", "--count", 7) == 2
        assert _dwlab("gen-writing", "--out", f"{tmpdir}/c", "--count", 7, "--binning", "true") == 2
        assert _dwlab("gen-writing", "--out", f"{tmpdir}/c", "--count", 7, "--binning", "false") == 0
        assert len(_lines(f"{tmpdir}/c/tasks.jsonl")) == 35


@pytest.mark.entry
def test_verify_quick():
    with tempfile.TemporaryDirectory() as tmpdir:
        out = f"{tmpdir}/verify"
        code = _dwlab(
            "verify", "--config", "verify_quick", "--out", out, "--repeats", 2, "--min_pass_fraction", 0.8
        )
        assert code == 0
        report = fsspec_utils.read_json(f"{out}/verify_report.json")
        assert report["passed"]
        names = [c["name"] for c in report["checks"]]
        assert "agreement" in names
        assert len(names) == 4


@pytest.mark.entry
def test_verify_flags_points_without_failing():
    with tempfile.TemporaryDirectory() as tmpdir:
        out = f"{tmpdir}/verify"
        assert _dwlab("verify", "--out", out, "--simulate", "false", "--monotonicity.r", 0.5) == 0
        report = fsspec_utils.read_json(f"{out}/verify_report.json")
        (mono,) = [c for c in report["checks"] if c["name"] == "monotonicity"]
        assert mono["passed"]
        assert mono["flagged"]


@pytest.mark.entry
def test_verify_flags_non_diverging_depth_point():
    with tempfile.TemporaryDirectory() as tmpdir:
        out = f"{tmpdir}/verify"
        assert _dwlab("verify", "--out", out, "--simulate", "false", "--divergence.r", 0.3) == 0
        report = fsspec_utils.read_json(f"{out}/verify_report.json")
        assert report["passed"]
        (div,) = [c for c in report["checks"] if c["name"] == "depth_divergence"]
        assert div["passed"]
        assert div["depth"] is None
        assert len(div["flagged"]) == 1
        assert "<= 1" in div["flagged"][0]["reason"]


@pytest.mark.entry
def test_simulate_exit_codes():
    with tempfile.TemporaryDirectory() as tmpdir:
        cfg = _write_config(
            f"{tmpdir}/grid.yaml",
            "q: [0.9]\nw: [1, 2]\nd: [1, 2]\nn_agents: [3]\nr: [1.0]\ntrials: 2000\n",
        )
        assert _dwlab("simulate", "--config", cfg, "--out", f"{tmpdir}/a") == 0
        result = fsspec_utils.read_json(f"{tmpdir}/a/simulation.json")
        assert result["n_checks"] == 4
        assert len(result["reports"]) == 4

        assert _dwlab("simulate", "--config", cfg, "--out", f"{tmpdir}/b", "--min_pass_fraction", 1.01) == 5


@pytest.mark.entry
def test_run_preflight_failures():
    with tempfile.TemporaryDirectory() as tmpdir:
        assert _dwlab("gen-math", "--out", f"{tmpdir}/math", "--cells", "2x2", "--count", 2) == 0
        dataset = f"{tmpdir}/math/problems.jsonl"
        assert _dwlab("run", "--dataset", dataset, "--out", f"{tmpdir}/run", "--backend.q", 1.5) == 3
        assert not fsspec_utils.exists(f"{tmpdir}/run/records.jsonl")


@pytest.mark.entry
def test_remote_run_needs_an_api_key(monkeypatch):
    monkeypatch.delenv("DWLAB_API_KEY", raising=False)
    with tempfile.TemporaryDirectory() as tmpdir:
        assert _dwlab("gen-math", "--out", f"{tmpdir}/math", "--cells", "2x2", "--count", 2) == 0
        dataset = f"{tmpdir}/math/problems.jsonl"
        assert _dwlab("run", "--dataset", dataset, "--out", f"{tmpdir}/run", "--backend.type", "remote") == 3


@pytest.mark.entry
def test_run_resume_and_analyze_math():
    with tempfile.TemporaryDirectory() as tmpdir:
        assert _dwlab("gen-math", "--out", f"{tmpdir}/math", "--cells", "2x2,2x3,3x2,3x3", "--count", 20) == 0
        dataset = f"{tmpdir}/math/problems.jsonl"

        assert _dwlab("run", "--dataset", dataset, "--out", f"{tmpdir}/full") == 0
        assert len(_lines(f"{tmpdir}/full/records.jsonl")) == 160

        partial = f"{tmpdir}/partial"
        assert _dwlab("run", "--dataset", dataset, "--out", partial, "--limit", 30) == 0
        assert len(_lines(f"{partial}/records.jsonl")) == 60
        # a second run into the same directory needs --resume
        assert _dwlab("run", "--dataset", dataset, "--out", partial) == 2
        assert _dwlab("run", "--dataset", dataset, "--out", partial, "--resume", "true") == 0
        for name in ("records.jsonl", "transcripts.jsonl"):
            assert _read(f"{partial}/{name}") == _read(f"{tmpdir}/full/{name}")

        assert _dwlab("analyze", "--run", f"{tmpdir}/full") == 0
        analysis = f"{tmpdir}/full/analysis"
        assert len(_lines(f"{analysis}/cell_metrics.csv")) == 5
        for name in ("gain_heatmap", "multi_score_heatmap"):
            assert fsspec_utils.exists(f"{analysis}/{name}.csv")
            assert fsspec_utils.exists(f"{analysis}/{name}.svg")
        shapley = fsspec_utils.read_json(f"{analysis}/shapley.json")
        assert shapley["n_cells"] == 4
        assert shapley["dominant"] in ("depth", "width", "tie")

        # analysis is write-once and deterministic
        assert _dwlab("analyze", "--run", f"{tmpdir}/full") == 2
        assert _dwlab("analyze", "--run", f"{tmpdir}/full", "--out", f"{tmpdir}/again") == 0
        assert _read(f"{tmpdir}/again/cell_metrics.csv") == _read(f"{analysis}/cell_metrics.csv")
        assert _read(f"{tmpdir}/again/gain_heatmap.svg") == _read(f"{analysis}/gain_heatmap.svg")


@pytest.mark.entry
def test_writing_run_score_and_analyze():
    with tempfile.TemporaryDirectory() as tmpdir:
        gen_cfg = _write_config(f"{tmpdir}/gen.yaml", f"out: {tmpdir}/writing\nK: [4, 8]\ncount: 5\n")
        assert _dwlab("gen-writing", "--config", gen_cfg) == 0
        dataset = f"{tmpdir}/writing/tasks.jsonl"

        run = f"{tmpdir}/run"
        assert _dwlab("run", "--config", "run_writing_synthetic", "--dataset", dataset, "--out", run) == 0
        assert len(_lines(f"{run}/records.jsonl")) == 20

        assert _dwlab("score", "--run", run, "--dataset", dataset) == 0
        scores = fsspec_utils.read_jsonl(f"{run}/scores.jsonl")
        assert len(scores) == 20
        assert all(s["judge"] == "heuristic" for s in scores)
        assert all(s["composite"] == pytest.approx(s["standard"] * s["quality"]) for s in scores)

        assert _dwlab("analyze", "--run", run, "--scores", f"{run}/scores.jsonl") == 0
        assert len(_lines(f"{run}/analysis/cell_metrics.csv")) == 11


@pytest.mark.entry
def test_score_rejects_math_runs():
    with tempfile.TemporaryDirectory() as tmpdir:
        assert _dwlab("gen-math", "--out", f"{tmpdir}/math", "--cells", "2x2", "--count", 2) == 0
        dataset = f"{tmpdir}/math/problems.jsonl"
        assert _dwlab("run", "--dataset", dataset, "--out", f"{tmpdir}/run") == 0
        assert _dwlab("score", "--run", f"{tmpdir}/run", "--dataset", dataset) == 2
