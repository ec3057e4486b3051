"""Re-scores the essays of a writing run with another quality judge. Writes scores.jsonl; records are left alone."""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import dwlab
from dwlab import writegen
from dwlab.debate.runner import RECORDS_FILE, TRANSCRIPTS_FILE, System, load_records
from dwlab.errors import UsageError
from dwlab.utils import fsspec_utils


logger = logging.getLogger(__name__)

SCORES_FILE = "scores.jsonl"


@dataclass
class ScoreConfig:
    run: Optional[str] = None
    """a run directory holding records.jsonl and transcripts.jsonl"""
    dataset: Optional[str] = None
    """the tasks.jsonl the run was made from"""
    out: Optional[str] = None
    """where to write scores.jsonl; defaults to the run directory"""
    judge: writegen.JudgeConfig = field(default_factory=writegen.HeuristicJudgeConfig)
    jobs: int = 1
    """judge calls in flight at once"""


def _final_texts(transcripts_path: str) -> Dict[Tuple[str, str, int], str]:
    out = {}
    for row in fsspec_utils.iter_jsonl(transcripts_path):
        if row["system"] == System.SINGLE.value:
            text = row.get("response")
        else:
            text = (row.get("summary") or {}).get("text")
        if text is not None:
            out[(row["task_id"], row["system"], row["n_agents"])] = text
    return out


def main(config: ScoreConfig):
    if config.run is None or config.dataset is None:
        raise UsageError("--run and --dataset are required")
    records_path = fsspec_utils.join(config.run, RECORDS_FILE)
    if not fsspec_utils.exists(records_path):
        raise UsageError(f"no {RECORDS_FILE} in {config.run}")
    out_path = fsspec_utils.join(config.out or config.run, SCORES_FILE)
    fsspec_utils.ensure_write_once(out_path)

    records = [r for r in load_records(records_path) if r.ok]
    families = {r.family for r in records}
    if families - {"writing"}:
        raise UsageError(f"score re-judges writing runs; this run holds {sorted(families)}")

    tasks = {t.id: t for t in writegen.load_dataset(config.dataset)}
    texts = _final_texts(fsspec_utils.join(config.run, TRANSCRIPTS_FILE))
    missing = [r.task_id for r in records if r.task_id not in tasks]
    if missing:
        raise UsageError(f"{len(missing)} record(s) are not in {config.dataset}, e.g. {missing[0]}")

    config.judge.preflight()
    judge = config.judge.build()

    # judge_many keys by task id, which is unique within a (system, agent count) group
    groups: Dict[Tuple[str, int], List] = defaultdict(list)
    for r in records:
        groups[(r.system, r.n_agents)].append(r)

    rows = []
    with dwlab.logging.log_time("judging"):
        for (system, n_agents), group in sorted(groups.items()):
            essays = {r.task_id: writegen.extract_essay(texts.get(r.key, "")) for r in group}
            quality = writegen.judge_many(
                [(essays[r.task_id], tasks[r.task_id]) for r in group], judge, max_in_flight=max(1, config.jobs)
            )
            for r in group:
                task = tasks[r.task_id]
                std = writegen.standard_score(essays[r.task_id], task.K, task.keyword_texts)
                rows.append(
                    {
                        "task_id": r.task_id,
                        "system": system,
                        "n_agents": n_agents,
                        "standard": std.standard,
                        "quality": quality[r.task_id],
                        "composite": writegen.composite_score(std.standard, quality[r.task_id]),
                        "judge": judge.name,
                    }
                )

    rows.sort(key=lambda row: (row["task_id"], row["system"], row["n_agents"]))
    n = fsspec_utils.write_jsonl(out_path, rows)
    logger.info(f"wrote {n} score(s) to {out_path}")
    return out_path


if __name__ == "__main__":
    dwlab.config.main(main)()
