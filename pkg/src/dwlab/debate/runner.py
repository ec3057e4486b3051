"""
The experiment loop: every task of a dataset through the single-agent system and/or the debate system, graded by
the task family, one ResultRecord per (task, system) appended to records.jsonl in dataset order.

records.jsonl doubles as the completed-work ledger. A resumed run reads the (task id, system, agent count) keys
already present and only runs what is missing, so an interrupted run finished by a resume writes the same records
as an uninterrupted one.
"""
import enum
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import fsspec
import tqdm
from dataclasses_json import dataclass_json
from filelock import FileLock

from dwlab.debate.backends import AgentBackend
from dwlab.debate.engine import DebateConfig, run_debate, run_single, transcript_row
from dwlab.debate.families import Outcome, TaskFamily, TaskItem
from dwlab.errors import DatasetCollisionError, ParameterError
from dwlab.utils import fsspec_utils
from dwlab.writegen import JudgeBackend


logger = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"
TRANSCRIPTS_FILE = "transcripts.jsonl"


class System(str, enum.Enum):
    SINGLE = "single"
    MULTI = "multi"


def parse_systems(selection: str) -> Tuple[System, ...]:
    if selection == "both":
        return System.SINGLE, System.MULTI
    try:
        return (System(selection),)
    except ValueError:
        raise ParameterError(f"system must be one of single, multi, both; got {selection!r}") from None


class Status(str, enum.Enum):
    OK = "ok"
    FAILED = "failed"


@dataclass_json
@dataclass
class ResultRecord:
    task_id: str
    family: str
    depth: int
    width: int
    width_value: float
    system: str
    n_agents: int
    """total agents that produced the answer: 1 for single, debaters + summarizer for multi"""
    status: str
    answer: Optional[str] = None
    score: Optional[float] = None
    correct: Optional[bool] = None
    standard: Optional[float] = None
    quality: Optional[float] = None
    details: Optional[Dict] = None
    error: Optional[str] = None

    @property
    def key(self) -> Tuple[str, str, int]:
        return self.task_id, self.system, self.n_agents

    @property
    def cell(self) -> Tuple[int, int]:
        return self.depth, self.width

    @property
    def ok(self) -> bool:
        return self.status == Status.OK.value


@dataclass
class RunSummary:
    n_tasks: int
    n_records: int
    """records written by this invocation"""
    n_skipped: int
    """(task, system) pairs already in the ledger"""
    failed_ids: List[str] = field(default_factory=list)
    """failed task ids over the whole record file, including earlier invocations"""

    @property
    def n_failed(self) -> int:
        return len(self.failed_ids)


def load_records(path: str) -> List[ResultRecord]:
    return [ResultRecord.from_dict(row) for row in fsspec_utils.iter_jsonl(path)]  # type: ignore[attr-defined]


def _read_ledger(path: str) -> List[ResultRecord]:
    """Reads an existing records file. A torn final line (a crash mid-append) is dropped and the file rewritten."""
    with fsspec.open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()

    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(ResultRecord.from_json(line))  # type: ignore[attr-defined]
        except (ValueError, KeyError, TypeError):
            if i != len(lines) - 1:
                raise
            logger.warning(f"{path}: dropping a truncated final record")
            fsspec_utils.write_text(path, "".join(fsspec_utils.dumps_jsonl_row(r.to_dict()) + "\n" for r in records))
    return records


def _repair_transcripts(path: str, recorded: Set[Tuple[str, str, int]]) -> None:
    """
    Keeps one transcript row per recorded key, in file order. A torn line and the rows of pairs whose record never
    made it to records.jsonl are dropped, since a resume writes those pairs again.
    """
    if not fsspec_utils.exists(path):
        fsspec_utils.write_text(path, "")
        return
    with fsspec.open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()

    kept: List[str] = []
    seen: Set[Tuple[str, str, int]] = set()
    for line in lines:
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            key = (row["task_id"], row["system"], row["n_agents"])
        except (ValueError, KeyError, TypeError):
            logger.warning(f"{path}: dropping an unreadable transcript line")
            continue
        if key in recorded and key not in seen:
            seen.add(key)
            kept.append(line)

    if len(kept) != len(lines):
        logger.info(f"{path}: kept {len(kept)} of {len(lines)} transcript lines")
        fsspec_utils.write_text(path, "".join(line + "\n" for line in kept))


def _record(
    item: TaskItem,
    system: System,
    n_agents: int,
    outcome: Optional[Outcome],
    answer: Optional[str],
    error: Optional[str],
) -> ResultRecord:
    record = ResultRecord(
        task_id=item.id,
        family=item.family,
        depth=item.depth,
        width=item.width,
        width_value=item.width_value,
        system=system.value,
        n_agents=n_agents,
        status=Status.FAILED.value if error else Status.OK.value,
        answer=answer,
        error=error,
    )
    if outcome is not None:
        record.score = outcome.score
        record.correct = outcome.correct
        record.standard = outcome.standard
        record.quality = outcome.quality
        record.details = outcome.details
    return record


class CellwiseRunner:
    def __init__(
        self,
        family: TaskFamily,
        debate: DebateConfig,
        agent: AgentBackend,
        summarizer: AgentBackend,
        systems: Sequence[System] = (System.SINGLE, System.MULTI),
        judge: Optional[JudgeBackend] = None,
    ):
        self.family = family
        self.debate = debate
        self.agent = agent
        self.summarizer = summarizer
        self.systems = tuple(systems)
        self.judge = judge

    def n_agents(self, system: System) -> int:
        return 1 if system == System.SINGLE else self.debate.total_agents

    def key(self, item: TaskItem, system: System) -> Tuple[str, str, int]:
        return item.id, system.value, self.n_agents(system)

    def _evaluate(self, item: TaskItem, text: str) -> Tuple[Optional[Outcome], Optional[str]]:
        try:
            return self.family.evaluate(item, text, self.judge), None
        except Exception as e:
            logger.warning(f"task {item.id}: scoring failed: {e}")
            return None, f"scoring: {type(e).__name__}: {e}"

    def run_task(self, item: TaskItem, todo: Sequence[System]) -> List[Tuple[ResultRecord, Dict]]:
        """(record, transcript row) per system, in system order."""
        out = []
        for system in todo:
            if system == System.SINGLE:
                trace = run_single(item, self.family, self.agent)
                text, error = trace.response, trace.failure and trace.failure.error
                row = trace.to_dict()  # type: ignore[attr-defined]
                row["system"] = system.value
                row["n_agents"] = 1
            else:
                transcript = run_debate(
                    item, self.family, self.debate, [self.agent] * self.debate.n_agents, self.summarizer
                )
                text = transcript.summary.text if transcript.summary else None
                error = transcript.failure and transcript.failure.error
                row = transcript_row(transcript, system.value, self.debate.total_agents)

            outcome, answer = None, None
            if not error:
                assert text is not None
                answer = self.family.extract_answer(text)
                outcome, error = self._evaluate(item, text)
            out.append((_record(item, system, self.n_agents(system), outcome, answer, error), row))
        return out

    def _pending(self, items: Sequence[TaskItem], done: Set[Tuple[str, str, int]]):
        for item in items:
            todo = [s for s in self.systems if self.key(item, s) not in done]
            if todo:
                yield item, todo

    def _execute(self, pending, jobs: int) -> Iterator[List[Tuple[ResultRecord, Dict]]]:
        if jobs <= 1:
            for item, todo in pending:
                yield self.run_task(item, todo)
            return
        # map keeps dataset order whatever order the tasks finish in
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            yield from pool.map(lambda p: self.run_task(*p), pending)

    def run(
        self, items: Sequence[TaskItem], out_dir: str, *, resume: bool = False, jobs: int = 1, progress: bool = True
    ) -> RunSummary:
        _check_unique_ids(items)
        records_path = fsspec_utils.join(out_dir, RECORDS_FILE)
        transcripts_path = fsspec_utils.join(out_dir, TRANSCRIPTS_FILE)
        fsspec_utils.mkdirs(out_dir)

        previous: List[ResultRecord] = []
        if fsspec_utils.exists(records_path):
            if not resume:
                raise DatasetCollisionError(records_path)
            previous = _read_ledger(records_path)
            _repair_transcripts(transcripts_path, {r.key for r in previous})
        else:
            if resume:
                logger.info(f"nothing to resume in {out_dir}; starting fresh")
            fsspec_utils.write_text(records_path, "")
            fsspec_utils.write_text(transcripts_path, "")

        done = {r.key for r in previous}
        pending = list(self._pending(items, done))
        n_skipped = len(items) * len(self.systems) - sum(len(todo) for _, todo in pending)
        if n_skipped:
            logger.info(f"resuming: {n_skipped} (task, system) pairs already recorded, {len(pending)} tasks to go")

        failed = [r.task_id for r in previous if not r.ok]
        n_written = 0
        lock = FileLock(os.path.join(out_dir, ".records.lock")) if _is_local(out_dir) else None
        pbar = tqdm.tqdm(total=len(pending), desc="tasks", disable=not progress)
        for results in self._execute(pending, jobs):
            _append(records_path, transcripts_path, results, lock)
            for record, _ in results:
                n_written += 1
                if not record.ok:
                    failed.append(record.task_id)
            pbar.update(1)
        pbar.close()

        summary = RunSummary(n_tasks=len(items), n_records=n_written, n_skipped=n_skipped, failed_ids=failed)
        if summary.n_failed:
            logger.warning(f"{summary.n_failed} record(s) failed")
        return summary


def _is_local(url: str) -> bool:
    protocol = fsspec.core.split_protocol(url)[0]
    return protocol in (None, "file")


def _append(records_path: str, transcripts_path: str, results, lock: Optional[FileLock]):
    # transcripts go first so a record never exists without its transcript
    transcripts = "".join(fsspec_utils.dumps_jsonl_row(row) + "\n" for _, row in results)
    records = "".join(fsspec_utils.dumps_jsonl_row(record.to_dict()) + "\n" for record, _ in results)
    if lock is None:
        _append_text(transcripts_path, transcripts)
        _append_text(records_path, records)
        return
    with lock:
        _append_text(transcripts_path, transcripts)
        _append_text(records_path, records)


def _append_text(path: str, text: str):
    with fsspec.open(path, "a", encoding="utf-8") as f:
        f.write(text)


def _check_unique_ids(items: Sequence[TaskItem]):
    seen: Set[str] = set()
    dupes = []
    for item in items:
        if item.id in seen:
            dupes.append(item.id)
        seen.add(item.id)
    if dupes:
        raise ParameterError(f"dataset has duplicate task ids: {', '.join(sorted(set(dupes))[:10])}")


def run_cellwise(
    items: Sequence[TaskItem],
    family: TaskFamily,
    debate: DebateConfig,
    agent: AgentBackend,
    summarizer: AgentBackend,
    out_dir: str,
    *,
    systems: Sequence[System] = (System.SINGLE, System.MULTI),
    judge: Optional[JudgeBackend] = None,
    resume: bool = False,
    jobs: int = 1,
    progress: bool = True,
) -> RunSummary:
    runner = CellwiseRunner(family, debate, agent, summarizer, systems=systems, judge=judge)
    return runner.run(items, out_dir, resume=resume, jobs=jobs, progress=progress)
