import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional

import dwlab
from dwlab import writegen
from dwlab.errors import ParameterError, UsageError
from dwlab.utils import cli_utils, fsspec_utils


logger = logging.getLogger(__name__)

TASKS_FILE = "tasks.jsonl"


@dataclass
class GenWritingConfig:
    out: str = "data/writing"
    K: List[int] = field(default_factory=lambda: list(writegen.DEFAULT_KS))
    count: int = 500
    """keyword sets per K"""
    seed: int = 0
    binning: Optional[bool] = None
    """quintile-bin each K by entropy; unset bins when count is a multiple of 5 and otherwise asks for a choice"""
    slot_indexed: bool = False
    """weight each group's entropy term by its slot count"""
    lexicon: Optional[str] = None
    """a lexicon JSON file; the shipped lexicon when unset"""


def main(config: GenWritingConfig):
    if config.count < 1:
        raise UsageError(f"--count must be >= 1, got {config.count}")
    cli_utils.check_levels("K", config.K, 1)

    divisible = config.count % writegen.N_QUINTILES == 0
    binning = config.binning
    if binning is None:
        if not divisible:
            raise UsageError(
                f"--count {config.count} is not a multiple of {writegen.N_QUINTILES}, so the sets cannot be split "
                "into equal quintiles; pass --binning false to skip binning"
            )
        binning = True
    elif binning and not divisible:
        raise UsageError(f"quintile binning needs --count to be a multiple of {writegen.N_QUINTILES}")

    tasks_path = fsspec_utils.join(config.out, TASKS_FILE)
    fsspec_utils.ensure_write_once(tasks_path, fsspec_utils.join(config.out, cli_utils.MANIFEST_FILE))

    lexicon = writegen.load_lexicon(config.lexicon)
    try:
        tasks = writegen.generate_dataset(
            config.K, config.count, config.seed, lexicon, binning=binning, slot_indexed=config.slot_indexed
        )
    except ParameterError as e:
        raise UsageError(str(e)) from e

    fsspec_utils.mkdirs(config.out)
    n = writegen.write_dataset(tasks, tasks_path)
    per_cell = Counter(f"{t.K}x{t.quintile}" for t in tasks) if binning else Counter(f"{t.K}" for t in tasks)
    cli_utils.write_manifest(
        config.out,
        "gen-writing",
        config,
        {"n_tasks": n, "binned": binning, "per_cell": dict(per_cell), "lexicon_version": lexicon.version},
    )
    logger.info(f"wrote {n} keyword tasks to {tasks_path}{'' if binning else ' (not binned)'}")
    return tasks_path


if __name__ == "__main__":
    dwlab.config.main(main)()
