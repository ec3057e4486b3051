import dataclasses
import tempfile

import pytest

from dwlab import mathgen, metrics, writegen
from dwlab.debate.backends import ScriptedBackend, SyntheticStochasticBackend
from dwlab.debate.engine import DebateConfig
from dwlab.debate.families import MathFamily, WritingFamily
from dwlab.debate.runner import RECORDS_FILE, TRANSCRIPTS_FILE, System, load_records, parse_systems, run_cellwise
from dwlab.errors import BackendError, DatasetCollisionError, ParameterError
from dwlab.utils import fsspec_utils


def _math_setup(count=3, seed=0):
    family = MathFamily()
    items = family.items_from(mathgen.generate_dataset([2, 3], [2, 3], count, seed))
    backend = SyntheticStochasticBackend(family, q=0.85, r=0.95, seed=seed)
    return family, items, backend


def _run(items, family, backend, out_dir, **kwargs):
    return run_cellwise(items, family, DebateConfig(), backend, backend, out_dir, progress=False, **kwargs)


def _read(path: str) -> str:
    with open(path) as f:
        return f.read()


def test_records_for_both_systems():
    family, items, backend = _math_setup()
    with tempfile.TemporaryDirectory() as tmpdir:
        summary = _run(items, family, backend, tmpdir)
        records = load_records(f"{tmpdir}/{RECORDS_FILE}")
        transcripts = fsspec_utils.read_jsonl(f"{tmpdir}/{TRANSCRIPTS_FILE}")

    assert summary.n_tasks == 12
    assert summary.n_records == 24
    assert summary.n_failed == 0
    assert len(records) == 24
    assert [r.key for r in records] == [
        (item.id, system, n) for item in items for system, n in (("single", 1), ("multi", 4))
    ]
    assert len({r.key for r in records}) == 24
    for record, item in zip(records[::2], items):
        assert record.cell == item.cell
        assert record.family == "math"
        assert record.score in (0.0, 1.0)
    assert [(t["task_id"], t["system"]) for t in transcripts] == [(r.task_id, r.system) for r in records]
    assert all(t["summary"] is not None for t in transcripts if t["system"] == "multi")


def test_single_system_only():
    family, items, backend = _math_setup(count=1)
    with tempfile.TemporaryDirectory() as tmpdir:
        summary = _run(items, family, backend, tmpdir, systems=parse_systems("single"))
        records = load_records(f"{tmpdir}/{RECORDS_FILE}")
    assert summary.n_records == len(items)
    assert {r.system for r in records} == {"single"}


def test_parse_systems():
    assert parse_systems("both") == (System.SINGLE, System.MULTI)
    assert parse_systems("multi") == (System.MULTI,)
    with pytest.raises(ParameterError):
        parse_systems("all")


def test_resume_matches_an_uninterrupted_run():
    family, items, backend = _math_setup()
    with tempfile.TemporaryDirectory() as full, tempfile.TemporaryDirectory() as partial:
        _run(items, family, backend, full)

        first = _run(items[:5], family, backend, partial)
        assert first.n_records == 10
        second = _run(items, family, backend, partial, resume=True)
        assert second.n_skipped == 10
        assert second.n_records == 14

        assert _read(f"{partial}/{RECORDS_FILE}") == _read(f"{full}/{RECORDS_FILE}")
        assert _read(f"{partial}/{TRANSCRIPTS_FILE}") == _read(f"{full}/{TRANSCRIPTS_FILE}")

        third = _run(items, family, backend, partial, resume=True)
        assert third.n_records == 0
        assert third.n_skipped == 24
        assert len(load_records(f"{partial}/{RECORDS_FILE}")) == 24


def test_parallel_run_keeps_dataset_order():
    family, items, backend = _math_setup()
    with tempfile.TemporaryDirectory() as serial, tempfile.TemporaryDirectory() as parallel:
        _run(items, family, backend, serial)
        _run(items, family, backend, parallel, jobs=4)
        assert _read(f"{parallel}/{RECORDS_FILE}") == _read(f"{serial}/{RECORDS_FILE}")


def test_existing_records_need_resume():
    family, items, backend = _math_setup(count=1)
    with tempfile.TemporaryDirectory() as tmpdir:
        _run(items, family, backend, tmpdir)
        with pytest.raises(DatasetCollisionError):
            _run(items, family, backend, tmpdir)


def test_empty_dataset():
    family, _, backend = _math_setup(count=1)
    with tempfile.TemporaryDirectory() as tmpdir:
        summary = _run([], family, backend, tmpdir)
        assert summary.n_records == 0
        assert _read(f"{tmpdir}/{RECORDS_FILE}") == ""
        assert _read(f"{tmpdir}/{TRANSCRIPTS_FILE}") == ""


def test_duplicate_ids_are_rejected():
    family, items, backend = _math_setup(count=1)
    with tempfile.TemporaryDirectory() as tmpdir:
        with pytest.raises(ParameterError):
            _run([items[0], items[1], items[0]], family, backend, tmpdir)


def test_failed_tasks_are_recorded_and_not_retried():
    family, items, _ = _math_setup(count=1)
    bad = items[1].id

    def script(request):
        if request.task.id == bad and request.role.value == "summarizer":
            raise BackendError("rate limited")
        return f"ANSWER: {request.task.payload.ground_truth}"

    backend = ScriptedBackend(script)
    with tempfile.TemporaryDirectory() as tmpdir:
        summary = _run(items, family, backend, tmpdir)
        assert summary.failed_ids == [bad]
        records = load_records(f"{tmpdir}/{RECORDS_FILE}")
        failed = [r for r in records if not r.ok]
        assert [(r.task_id, r.system) for r in failed] == [(bad, "multi")]
        assert "rate limited" in failed[0].error
        assert failed[0].score is None
        assert all(r.score == 1.0 for r in records if r.ok)

        again = _run(items, family, backend, tmpdir, resume=True)
        assert again.n_records == 0
        assert again.failed_ids == [bad]


def test_torn_final_line_is_dropped_on_resume():
    family, items, backend = _math_setup(count=1)
    with tempfile.TemporaryDirectory() as clean, tempfile.TemporaryDirectory() as torn:
        _run(items, family, backend, clean)
        _run(items[:2], family, backend, torn)
        with open(f"{torn}/{RECORDS_FILE}") as f:
            lines = f.read().splitlines(keepends=True)
        # simulate a crash halfway through appending the last record
        with open(f"{torn}/{RECORDS_FILE}", "w") as f:
            f.write("".join(lines[:-1]) + lines[-1][: len(lines[-1]) // 2])

        summary = _run(items, family, backend, torn, resume=True)
        assert summary.n_skipped == 3
        # the dropped (task, system) pair is the first pending one, so the file ends up as if never torn
        assert _read(f"{torn}/{RECORDS_FILE}") == _read(f"{clean}/{RECORDS_FILE}")
        assert _read(f"{torn}/{TRANSCRIPTS_FILE}") == _read(f"{clean}/{TRANSCRIPTS_FILE}")


@pytest.mark.parametrize("fraction", [0.5, 1.0])
def test_transcript_without_record_is_rewritten_on_resume(fraction):
    # a crash while appending the transcript (0.5) or between the transcript and its record (1.0)
    family, items, backend = _math_setup(count=1)
    with tempfile.TemporaryDirectory() as clean, tempfile.TemporaryDirectory() as torn:
        _run(items, family, backend, clean)
        _run(items[:2], family, backend, torn)
        next_row = _read(f"{clean}/{TRANSCRIPTS_FILE}").splitlines(keepends=True)[4]
        with open(f"{torn}/{TRANSCRIPTS_FILE}", "a") as f:
            f.write(next_row[: int(len(next_row) * fraction)])

        summary = _run(items, family, backend, torn, resume=True)
        assert summary.n_skipped == 4
        assert _read(f"{torn}/{RECORDS_FILE}") == _read(f"{clean}/{RECORDS_FILE}")
        assert _read(f"{torn}/{TRANSCRIPTS_FILE}") == _read(f"{clean}/{TRANSCRIPTS_FILE}")
        assert len(fsspec_utils.read_jsonl(f"{torn}/{TRANSCRIPTS_FILE}")) == 8


def test_writing_run_records_both_subscores():
    family = WritingFamily()
    items = family.items_from(writegen.generate_dataset([4, 8], 5, seed=2))
    backend = SyntheticStochasticBackend(family, q=0.8, r=0.95, seed=2)
    with tempfile.TemporaryDirectory() as tmpdir:
        _run(items, family, backend, tmpdir, judge=writegen.HeuristicJudge())
        records = load_records(f"{tmpdir}/{RECORDS_FILE}")
    assert len(records) == 20
    for r in records:
        assert r.family == "writing"
        assert 0.0 <= r.standard <= 1.0
        assert 0.0 <= r.quality <= 10.0
        assert r.score == pytest.approx(r.standard * r.quality)
        assert r.width in (1, 2, 3, 4, 5)
        assert r.correct is None


@pytest.mark.slow
def test_synthetic_benchmark_gain_grows_with_depth_and_width():
    family = MathFamily()
    levels = [2, 3, 4]
    templates = family.items_from(mathgen.generate_dataset(levels, levels, 1, seed=0))
    items = [dataclasses.replace(t, id=f"{t.id}-r{i}") for t in templates for i in range(3000)]
    backend = SyntheticStochasticBackend(family, q=0.9, r=0.95, seed=0)

    with tempfile.TemporaryDirectory() as tmpdir:
        _run(items, family, backend, tmpdir, jobs=4)
        records = load_records(f"{tmpdir}/{RECORDS_FILE}")

    cells = metrics.aggregate_cells(records)
    assert len(cells) == 9
    trend = metrics.gain_trend(cells)
    assert trend["depth_increasing"] == trend["depth_pairs"] == 6
    assert trend["width_increasing"] == trend["width_pairs"] == 6

    shapley = metrics.shapley_scores(cells)
    assert shapley.s_depth > shapley.s_width
