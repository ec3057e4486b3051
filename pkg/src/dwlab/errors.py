from typing import Optional, Sequence


class DwlabError(Exception):
    """Base class for errors raised by dwlab. `exit_code` is what the CLI exits with."""

    exit_code: int = 1


class ParameterError(DwlabError, ValueError):
    """A parameter is outside its documented range."""


class AssumptionViolatedError(DwlabError, ValueError):
    """f(s) <= 1, so the gain analysis does not apply at these parameters."""


class GenerationError(DwlabError):
    def __init__(self, constraint: str, attempts: int):
        super().__init__(f"gave up after {attempts} attempts: could not satisfy {constraint}")
        self.constraint = constraint
        self.attempts = attempts


class EvaluationError(DwlabError, ArithmeticError):
    pass


class DegenerateProblemError(DwlabError):
    """The unknown has coefficient zero. Generated problems never do this."""


class BackendError(DwlabError):
    def __init__(
        self,
        message: str,
        *,
        task_id: Optional[str] = None,
        turn: Optional[int] = None,
        agent: Optional[int] = None,
    ):
        where = []
        if task_id is not None:
            where.append(f"task={task_id}")
        if turn is not None:
            where.append(f"turn={turn}")
        if agent is not None:
            where.append(f"agent={agent}")
        prefix = f"[{' '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.task_id = task_id
        self.turn = turn
        self.agent = agent


class UsageError(DwlabError):
    exit_code = 2


class DatasetCollisionError(UsageError):
    def __init__(self, path: str):
        super().__init__(f"{path} already exists; outputs are write-once (pick another --out or pass --resume)")
        self.path = path


class PreflightError(DwlabError):
    exit_code = 3


class TaskFailuresError(DwlabError):
    exit_code = 4

    def __init__(self, failed_ids: Sequence[str]):
        shown = ", ".join(list(failed_ids)[:10])
        more = "" if len(failed_ids) <= 10 else f" (+{len(failed_ids) - 10} more)"
        super().__init__(f"{len(failed_ids)} task(s) failed: {shown}{more}")
        self.failed_ids = list(failed_ids)


class CheckFailedError(DwlabError):
    exit_code = 5

    def __init__(self, failed_checks: Sequence[str]):
        super().__init__("failed checks: " + ", ".join(failed_checks))
        self.failed_checks = list(failed_checks)
