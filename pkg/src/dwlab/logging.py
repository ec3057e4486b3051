import contextlib
import dataclasses
import logging as pylogging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import humanfriendly
import wandb
from draccus import field
from rich.console import Console
from rich.table import Table


logger = pylogging.getLogger(__name__)


def init_logger(path: Optional[Union[str, Path]], level: int = pylogging.INFO) -> None:
    """
    Initialize logging.Logger with the appropriate name, console, and file handlers.

    :param path: Path for writing log file. If None, only log to the console.
    :param level: Default logging level
    """
    log_format = "%(asctime)s - %(name)s - %(filename)s:%(lineno)d - %(levelname)s :: %(message)s"
    # use ISO 8601 format for timestamps, except no TZ, because who cares
    date_format = "%Y-%m-%dT%H:%M:%S"

    handlers: List[pylogging.Handler] = [pylogging.StreamHandler()]
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, pylogging.FileHandler(path, mode="a"))

    # Create Root Logger w/ Base Formatting
    pylogging.basicConfig(level=level, format=log_format, datefmt=date_format, handlers=handlers, force=True)

    # these are chatty at INFO
    for noisy in ["httpx", "openai", "jax._src"]:
        pylogging.getLogger(noisy).setLevel(max(level, pylogging.WARNING))


@contextlib.contextmanager
def capture_time():
    start = time.perf_counter()
    end: Optional[float] = None

    def fn():
        if end is not None:
            return end - start
        else:
            return time.perf_counter() - start

    yield fn
    end = time.perf_counter()


@contextlib.contextmanager
def log_time(name: str, level: int = pylogging.INFO):
    with capture_time() as fn:
        yield fn
    logger.log(level, f"{name} took {humanfriendly.format_timespan(fn())}")
    log_metrics({f"time/{name}": fn()})


def is_wandb_available():
    return wandb is not None and wandb.run is not None


def log_metrics(metrics: Mapping[str, Any], *, step: Optional[int] = None, prefix: Optional[str] = None):
    """Forwards scalar metrics to wandb if a run is active. Non-numeric values are dropped."""
    if not is_wandb_available():
        return

    to_log: Dict[str, Any] = {}
    for k, v in metrics.items():
        if isinstance(v, bool):
            v = int(v)
        if isinstance(v, (int, float)):
            to_log[f"{prefix}/{k}" if prefix else k] = v

    if to_log:
        wandb.log(to_log, step=step)


def print_table(title: str, columns: Sequence[str], rows: Sequence[Sequence[Any]], console: Optional[Console] = None):
    table = Table(title=title)
    for column in columns:
        table.add_column(column)
    for row in rows:
        table.add_row(*[_format_cell(v) for v in row])
    (console or Console(stderr=True)).print(table)


def _format_cell(v: Any) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@dataclass
class WandbConfig:
    """
    Configuration for wandb. Tracking is off unless `mode` is set to "online" or "offline".
    """

    entity: Optional[str] = None  # An entity is a username or team name where you send runs
    project: Optional[str] = "dwlab"  # The name of the project where you are sending the new run.
    name: Optional[str] = None  # A short display name for this run, which is how you'll identify this run in the UI.
    tags: List[str] = field(default_factory=list)  # Will populate the list of tags on this run in the UI.
    id: Optional[str] = None  # A unique ID for this run, used for resuming. It must be unique in the project
    group: Optional[str] = None  # Specify a group to organize individual runs into a larger experiment.
    mode: str = "disabled"  # Can be "online", "offline" or "disabled".

    def init(self, run_id: Optional[str] = None, hparams=None, **extra_hparams):
        if self.mode == "disabled":
            logger.debug("wandb disabled")
            return None

        if hparams is None:
            hparams_to_save = {}
        elif dataclasses.is_dataclass(hparams):
            import draccus

            hparams_to_save = draccus.encode(hparams)
        else:
            hparams_to_save = dict(hparams)

        if extra_hparams:
            hparams_to_save.update(extra_hparams)

        r = wandb.init(
            entity=self.entity,
            project=self.project,
            name=self.name,
            tags=self.tags,
            id=self.id or run_id,
            group=self.group,
            mode=self.mode,
            config=hparams_to_save,
            allow_val_change=True,
        )
        logger.info(f"wandb run {r.name if r else None} initialized in {self.mode} mode")
        return r

    @staticmethod
    def finish():
        if is_wandb_available():
            wandb.finish()
