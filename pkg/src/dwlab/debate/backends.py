"""
Agent backends. A backend turns a GenerationRequest (the rendered prompt plus the prior-turn messages) into text.

The synthetic backends make desk-scale runs possible: OracleBackend always answers correctly, AdversarialBackend
never commits to an answer, ScriptedBackend replays fixed texts, and SyntheticStochasticBackend emulates the
depth/width success model inside the real orchestration path.
"""
import abc
import dataclasses
import enum
import logging
import re
from dataclasses import dataclass
from typing import Callable, List, Mapping, Optional, Sequence, Tuple, Union

import draccus
import numpy as np

from dwlab.debate.families import TaskFamily, TaskItem
from dwlab.errors import BackendError, PreflightError
from dwlab.remote import ChatClient, ChatEndpointConfig
from dwlab.utils.rng import derive_rng


logger = logging.getLogger(__name__)


class Role(str, enum.Enum):
    SINGLE = "single"
    DEBATER = "debater"
    SUMMARIZER = "summarizer"


@dataclass(frozen=True)
class ContextMessage:
    agent_index: int
    text: str
    is_self: bool = False


@dataclass(frozen=True)
class GenerationRequest:
    task: TaskItem
    role: Role
    turn: int
    """1-based debate turn; 0 for single-agent runs, turns + 1 for the summarizer"""
    agent_index: int
    prompt: str
    context: Tuple[ContextMessage, ...] = ()


class AgentBackend(abc.ABC):
    identity: str = "agent"
    deterministic: bool = True

    @abc.abstractmethod
    def generate(self, request: GenerationRequest) -> str:
        raise NotImplementedError


class OracleBackend(AgentBackend):
    identity = "oracle"

    def __init__(self, family: TaskFamily):
        self.family = family

    def generate(self, request: GenerationRequest) -> str:
        return self.family.reference_output(request.task)


class AdversarialBackend(AgentBackend):
    identity = "adversarial"

    def generate(self, request: GenerationRequest) -> str:
        return "I don't know."


Script = Union[str, Mapping[str, str], Callable[[GenerationRequest], str]]


class ScriptedBackend(AgentBackend):
    """
    Replays fixed responses. A mapping is looked up by "{role}:{turn}:{agent_index}", then "{role}:{agent_index}",
    then "{role}", then "*".
    """

    identity = "scripted"

    def __init__(self, script: Script):
        self.script = script

    def generate(self, request: GenerationRequest) -> str:
        if callable(self.script):
            return self.script(request)
        if isinstance(self.script, str):
            return self.script

        role = request.role.value
        for key in (f"{role}:{request.turn}:{request.agent_index}", f"{role}:{request.agent_index}", role, "*"):
            if key in self.script:
                return self.script[key]
        raise BackendError(
            f"script has no response for {role}", task_id=request.task.id, turn=request.turn, agent=request.agent_index
        )


_STEP_RE = re.compile(r"^Step (\d+): (verified|failed)$", re.MULTILINE)


def format_steps(step_ok: Sequence[bool]) -> str:
    return "\n".join(f"Step {k + 1}: {'verified' if ok else 'failed'}" for k, ok in enumerate(step_ok))


def parse_steps(text: str, depth: int) -> List[bool]:
    ok = [False] * depth
    for m in _STEP_RE.finditer(text or ""):
        k = int(m.group(1)) - 1
        if 0 <= k < depth and m.group(2) == "verified":
            ok[k] = True
    return ok


class SyntheticStochasticBackend(AgentBackend):
    """
    Emulates the stochastic task model. A task has `depth` steps; an agent carries out a step correctly when all
    `width` of its capabilities succeed, each with probability q. Messages list "Step k: verified|failed" followed
    by the family's output for those steps.

    Debaters on later turns keep their own verified steps and adopt any step a peer verified on the previous turn.
    The summarizer takes the union of verified steps over the final turn; when every step is covered it emits the
    correct output with probability r. Every draw comes from a stream keyed by (seed, task, role, turn, agent), so
    a message does not depend on generation order.
    """

    identity = "synthetic"

    def __init__(self, family: TaskFamily, q: float, r: float, seed: int):
        if not 0 < q < 1:
            raise PreflightError(f"synthetic backend needs q in (0, 1), got {q}")
        if not 0 < r <= 1:
            raise PreflightError(f"synthetic backend needs r in (0, 1], got {r}")
        self.family = family
        self.q = q
        self.r = r
        self.seed = seed

    def _rng(self, request: GenerationRequest) -> np.random.Generator:
        return derive_rng(
            self.seed, "debate/synthetic", request.task.id, request.role.value, request.turn, request.agent_index
        )

    def _attempt(self, rng: np.random.Generator, depth: int, width: int) -> List[bool]:
        return [bool(x) for x in np.all(rng.random((depth, width)) < self.q, axis=1)]

    def _message(self, item: TaskItem, step_ok: Sequence[bool], rng: np.random.Generator) -> str:
        return format_steps(step_ok) + "\n" + self.family.synthetic_output(item, step_ok, rng)

    def generate(self, request: GenerationRequest) -> str:
        item = request.task
        rng = self._rng(request)

        if request.role == Role.SUMMARIZER:
            covered = [False] * item.depth
            for m in request.context:
                covered = [a or b for a, b in zip(covered, parse_steps(m.text, item.depth))]
            if all(covered) and rng.random() >= self.r:
                # the aggregator picks a wrong candidate for some step
                covered[int(rng.integers(item.depth))] = False
            return self._message(item, covered, rng)

        if request.role == Role.DEBATER and request.turn > 1:
            # the context holds this agent's own previous message and every peer's
            steps = [False] * item.depth
            for m in request.context:
                steps = [a or b for a, b in zip(steps, parse_steps(m.text, item.depth))]
        else:
            steps = self._attempt(rng, item.depth, item.width)
        return self._message(item, steps, rng)


class RemoteChatBackend(AgentBackend):
    """Debaters and the single agent sample at `temperature`; the summarizer at `summarizer_temperature`."""

    identity = "remote"
    deterministic = False

    def __init__(self, client: ChatClient, temperature: float = 0.7, summarizer_temperature: float = 0.0):
        self.client = client
        self.temperature = temperature
        self.summarizer_temperature = summarizer_temperature

    def generate(self, request: GenerationRequest) -> str:
        temperature = self.summarizer_temperature if request.role == Role.SUMMARIZER else self.temperature
        try:
            return self.client.complete([{"role": "user", "content": request.prompt}], temperature=temperature)
        except BackendError as e:
            raise BackendError(str(e), task_id=request.task.id, turn=request.turn, agent=request.agent_index) from e


@dataclass
class BackendConfig(draccus.ChoiceRegistry, abc.ABC):
    @abc.abstractmethod
    def build(self, family: TaskFamily, seed: int) -> AgentBackend:
        raise NotImplementedError

    def preflight(self):
        pass

    @classmethod
    def default_choice_name(cls) -> Optional[str]:
        return "synthetic"


@BackendConfig.register_subclass("synthetic")
@dataclass
class SyntheticBackendConfig(BackendConfig):
    q: float = 0.9
    """per-capability success probability"""
    r: float = 0.95
    """summarizer reliability"""

    def preflight(self):
        if not 0 < self.q < 1 or not 0 < self.r <= 1:
            raise PreflightError(f"synthetic backend needs 0 < q < 1 and 0 < r <= 1, got q={self.q}, r={self.r}")

    def build(self, family: TaskFamily, seed: int) -> AgentBackend:
        return SyntheticStochasticBackend(family, q=self.q, r=self.r, seed=seed)


@BackendConfig.register_subclass("oracle")
@dataclass
class OracleBackendConfig(BackendConfig):
    def build(self, family: TaskFamily, seed: int) -> AgentBackend:
        return OracleBackend(family)


@BackendConfig.register_subclass("adversarial")
@dataclass
class AdversarialBackendConfig(BackendConfig):
    def build(self, family: TaskFamily, seed: int) -> AgentBackend:
        return AdversarialBackend()


@BackendConfig.register_subclass("remote")
@dataclass
class RemoteBackendConfig(BackendConfig):
    endpoint: ChatEndpointConfig = dataclasses.field(default_factory=ChatEndpointConfig)
    temperature: float = 0.7
    summarizer_temperature: float = 0.0

    def preflight(self):
        self.endpoint.preflight()

    def build(self, family: TaskFamily, seed: int) -> AgentBackend:
        return RemoteChatBackend(ChatClient(self.endpoint), self.temperature, self.summarizer_temperature)


def build_backends(
    config: BackendConfig, family: TaskFamily, seed: int, summarizer: Optional[BackendConfig] = None
) -> Tuple[AgentBackend, AgentBackend]:
    """(agent backend, summarizer backend); one agent backend serves every debater since requests carry the agent
    index."""
    config.preflight()
    agent = config.build(family, seed)
    if summarizer is None:
        return agent, agent
    summarizer.preflight()
    return agent, summarizer.build(family, seed)

