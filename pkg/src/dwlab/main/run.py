import logging
from dataclasses import dataclass, field
from typing import Optional

import dwlab
from dwlab.debate import backends as backend_lib
from dwlab.debate.engine import DebateConfig
from dwlab.debate.families import WritingFamily, family_for
from dwlab.debate.runner import RECORDS_FILE, System, load_records, parse_systems, run_cellwise
from dwlab.errors import ParameterError, TaskFailuresError, UsageError
from dwlab.logging import WandbConfig, capture_time, log_metrics
from dwlab.utils import cli_utils, fsspec_utils
from dwlab.utils.py_utils import resolve_jobs
from dwlab.writegen import HeuristicJudgeConfig, JudgeConfig


logger = logging.getLogger(__name__)

RUN_RECORD_FILE = "run_record.json"


@dataclass
class RunConfig:
    dataset: Optional[str] = None
    """problems.jsonl from gen-math or tasks.jsonl from gen-writing"""
    family: str = "math"
    out: str = "runs/run"
    seed: int = 0
    system: str = "both"
    """single, multi or both"""
    debate: DebateConfig = field(default_factory=DebateConfig)
    backend: backend_lib.BackendConfig = field(default_factory=backend_lib.SyntheticBackendConfig)
    judge: JudgeConfig = field(default_factory=HeuristicJudgeConfig)
    """quality judge for writing tasks"""
    jobs: int = 1
    """tasks in flight at once; <= 0 means one per core"""
    resume: bool = False
    limit: Optional[int] = None
    """stop after this many pending tasks; a later --resume picks up the rest"""
    record_timings: bool = False
    """add wall-clock timings to run_record.json (which then differs between runs)"""
    wandb: WandbConfig = field(default_factory=WandbConfig)


def main(config: RunConfig):
    if config.dataset is None:
        raise UsageError("--dataset is required")
    if not fsspec_utils.exists(config.dataset):
        raise UsageError(f"dataset {config.dataset} does not exist")
    try:
        systems = parse_systems(config.system)
        family = family_for(config.family)
    except ParameterError as e:
        raise UsageError(str(e)) from e
    if config.limit is not None and config.limit < 0:
        raise UsageError(f"--limit must be >= 0, got {config.limit}")

    # everything that can be checked without running a task fails here, before any record is written
    agent, summarizer = backend_lib.build_backends(config.backend, family, config.seed)
    judge = None
    if isinstance(family, WritingFamily):
        config.judge.preflight()
        judge = config.judge.build()
    if System.MULTI in systems:
        config.debate.warn_on_agent_count()

    items = family.load(config.dataset)
    if config.limit is not None:
        done = set()
        records_path = fsspec_utils.join(config.out, RECORDS_FILE)
        if config.resume and fsspec_utils.exists(records_path):
            done = {r.task_id for r in load_records(records_path)}
        pending = [item for item in items if item.id not in done]
        allowed = {item.id for item in pending[: config.limit]} | done
        items = [item for item in items if item.id in allowed]

    config.wandb.init(hparams=config)
    logger.info(f"running {len(items)} {family.name} task(s) with systems {[s.value for s in systems]}")
    with capture_time() as elapsed:
        summary = run_cellwise(
            items,
            family,
            config.debate,
            agent,
            summarizer,
            config.out,
            systems=systems,
            judge=judge,
            resume=config.resume,
            jobs=resolve_jobs(config.jobs),
        )

    records = load_records(fsspec_utils.join(config.out, RECORDS_FILE))
    extra = {
        "records_file": RECORDS_FILE,
        "n_tasks": summary.n_tasks,
        "n_records": len(records),
        "n_failed": summary.n_failed,
        "systems": [s.value for s in systems],
    }
    if config.record_timings:
        extra["timings"] = {"run_seconds": elapsed(), "records_this_invocation": summary.n_records}
    fsspec_utils.write_json(
        fsspec_utils.join(config.out, RUN_RECORD_FILE), cli_utils.manifest("run", config, extra)
    )
    log_metrics({"records": len(records), "failed": summary.n_failed}, prefix="run")
    logger.info(
        f"{summary.n_records} record(s) written, {summary.n_skipped} already present, {summary.n_failed} failed"
    )
    config.wandb.finish()

    if summary.n_failed:
        raise TaskFailuresError(summary.failed_ids)
    return summary


if __name__ == "__main__":
    dwlab.config.main(main)()
