from dwlab.debate.backends import (
    AdversarialBackend,
    AgentBackend,
    BackendConfig,
    ContextMessage,
    GenerationRequest,
    OracleBackend,
    RemoteChatBackend,
    Role,
    ScriptedBackend,
    SyntheticStochasticBackend,
    build_backends,
)
from dwlab.debate.engine import DebateConfig, DebateTranscript, SingleTrace, TurnMessage, run_debate, run_single
from dwlab.debate.families import MathFamily, Outcome, TaskFamily, TaskItem, WritingFamily, family_for
from dwlab.debate.runner import ResultRecord, RunSummary, System, load_records, parse_systems, run_cellwise
