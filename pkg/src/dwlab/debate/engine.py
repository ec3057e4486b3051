"""
Single-agent chain-of-thought and multi-agent debate with a summarizer.

Turn 1: every debater answers on its own. Turn t > 1: every debater sees its own turn t-1 message (marked as self)
and all other debaters' turn t-1 messages. After the last turn the summarizer reads the final-turn messages and
produces the final answer. Generations within a turn only depend on the previous turn, so they may run
concurrently; messages are always stored in agent order.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from dataclasses_json import dataclass_json

from dwlab.debate.backends import AgentBackend, ContextMessage, GenerationRequest, Role
from dwlab.debate.families import TaskFamily, TaskItem
from dwlab.errors import ParameterError


logger = logging.getLogger(__name__)

USUAL_TOTAL_AGENTS = (4, 6)


@dataclass
class DebateConfig:
    n_agents: int = 3
    """debaters, not counting the summarizer"""
    turns: int = 2
    turn_jobs: int = 1
    """debater generations run concurrently within a turn when > 1"""

    def __post_init__(self):
        if self.n_agents < 2:
            raise ParameterError(f"debate needs at least 2 debaters, got {self.n_agents}")
        if self.turns < 1:
            raise ParameterError(f"debate needs at least 1 turn, got {self.turns}")

    @property
    def total_agents(self) -> int:
        return self.n_agents + 1

    def warn_on_agent_count(self):
        lo, hi = USUAL_TOTAL_AGENTS
        if not lo <= self.total_agents <= hi:
            logger.warning(
                f"{self.total_agents} agents including the summarizer; the benchmark setup uses between {lo} and {hi}"
            )


@dataclass_json
@dataclass
class TurnMessage:
    agent: str
    agent_index: int
    text: str


@dataclass_json
@dataclass
class Failure:
    turn: int
    agent_index: int
    error: str


@dataclass_json
@dataclass
class DebateTranscript:
    task_id: str
    turns: List[List[TurnMessage]] = field(default_factory=list)
    summary: Optional[TurnMessage] = None
    final_answer: Optional[str] = None
    failure: Optional[Failure] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


@dataclass_json
@dataclass
class SingleTrace:
    task_id: str
    prompt: str
    response: Optional[str] = None
    final_answer: Optional[str] = None
    failure: Optional[Failure] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


def run_single(item: TaskItem, family: TaskFamily, backend: AgentBackend) -> SingleTrace:
    prompt = family.prompt(Role.SINGLE.value, item)
    trace = SingleTrace(task_id=item.id, prompt=prompt)
    request = GenerationRequest(task=item, role=Role.SINGLE, turn=0, agent_index=0, prompt=prompt)
    try:
        trace.response = backend.generate(request)
    except Exception as e:
        logger.warning(f"task {item.id}: single agent failed: {e}")
        trace.failure = Failure(turn=0, agent_index=0, error=f"{type(e).__name__}: {e}")
        return trace
    trace.final_answer = family.extract_answer(trace.response)
    return trace


def debater_requests(
    item: TaskItem, family: TaskFamily, turn: int, previous: Sequence[TurnMessage], n_agents: int
) -> List[GenerationRequest]:
    requests = []
    for i in range(n_agents):
        if turn == 1:
            prompt = family.prompt("debate_first", item)
            context: tuple = ()
        else:
            own = previous[i].text
            peers = [m.text for m in previous if m.agent_index != i]
            prompt = family.prompt("debate_followup", item, self_message=own, peer_messages=peers)
            context = tuple(ContextMessage(m.agent_index, m.text, is_self=m.agent_index == i) for m in previous)
        requests.append(
            GenerationRequest(task=item, role=Role.DEBATER, turn=turn, agent_index=i, prompt=prompt, context=context)
        )
    return requests


def _generate_all(backends: Sequence[AgentBackend], requests: Sequence[GenerationRequest], jobs: int) -> List:
    """Results in request order; an exception stands in for a failed generation."""

    def one(pair):
        backend, request = pair
        try:
            return backend.generate(request)
        except Exception as e:
            return e

    pairs = list(zip(backends, requests))
    if jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, len(pairs))) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]


def run_debate(
    item: TaskItem,
    family: TaskFamily,
    cfg: DebateConfig,
    backends: Sequence[AgentBackend],
    summarizer: AgentBackend,
) -> DebateTranscript:
    if len(backends) != cfg.n_agents:
        raise ParameterError(f"need {cfg.n_agents} debater backends, got {len(backends)}")

    transcript = DebateTranscript(task_id=item.id)
    previous: List[TurnMessage] = []
    for turn in range(1, cfg.turns + 1):
        requests = debater_requests(item, family, turn, previous, cfg.n_agents)
        results = _generate_all(backends, requests, cfg.turn_jobs)

        messages = []
        for i, result in enumerate(results):
            if isinstance(result, Exception):
                logger.warning(f"task {item.id}: debater {i} failed at turn {turn}: {result}")
                transcript.failure = Failure(turn=turn, agent_index=i, error=f"{type(result).__name__}: {result}")
                break
            messages.append(TurnMessage(agent=f"{backends[i].identity}-{i}", agent_index=i, text=result))
        transcript.turns.append(messages)
        if transcript.failed:
            return transcript
        previous = messages

    summary_turn = cfg.turns + 1
    prompt = family.prompt(Role.SUMMARIZER.value, item, messages=[m.text for m in previous])
    request = GenerationRequest(
        task=item,
        role=Role.SUMMARIZER,
        turn=summary_turn,
        agent_index=cfg.n_agents,
        prompt=prompt,
        context=tuple(ContextMessage(m.agent_index, m.text) for m in previous),
    )
    try:
        text = summarizer.generate(request)
    except Exception as e:
        logger.warning(f"task {item.id}: summarizer failed: {e}")
        transcript.failure = Failure(turn=summary_turn, agent_index=cfg.n_agents, error=f"{type(e).__name__}: {e}")
        return transcript

    transcript.summary = TurnMessage(agent=f"{summarizer.identity}-summarizer", agent_index=cfg.n_agents, text=text)
    transcript.final_answer = family.extract_answer(text)
    return transcript


def transcript_row(transcript: DebateTranscript, system: str, n_agents: int) -> Dict:
    row = transcript.to_dict()
    row["system"] = system
    row["n_agents"] = n_agents
    return row
