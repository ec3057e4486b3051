import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional

import tqdm

import dwlab
from dwlab import mathgen
from dwlab.errors import ParameterError, UsageError
from dwlab.utils import cli_utils, fsspec_utils


logger = logging.getLogger(__name__)

PROBLEMS_FILE = "problems.jsonl"


@dataclass
class GenMathConfig:
    out: str = "data/math"
    depths: List[int] = field(default_factory=lambda: [2, 3, 4])
    widths: List[int] = field(default_factory=lambda: [2, 3, 4])
    cells: Optional[str] = None
    """comma-separated DEPTHxWIDTH cells, e.g. "2x2,3x4"; overrides depths x widths"""
    count: int = 100
    """problems per cell"""
    seed: int = 0
    exam_mode: bool = False
    """write ground truths to answers.jsonl instead of alongside the problems"""
    gen: mathgen.GenConfig = field(default_factory=mathgen.GenConfig)


def main(config: GenMathConfig):
    if config.count < 1:
        raise UsageError(f"--count must be >= 1, got {config.count}")
    if config.cells is not None:
        cells = cli_utils.parse_cells(config.cells)
    else:
        cli_utils.check_levels("depths", config.depths, 2)
        cli_utils.check_levels("widths", config.widths, 2)
        cells = [(d, w) for d in config.depths for w in config.widths]
    cli_utils.check_levels("depths", [d for d, _ in cells], 2)
    cli_utils.check_levels("widths", [w for _, w in cells], 2)

    problems_path = fsspec_utils.join(config.out, PROBLEMS_FILE)
    targets = [problems_path, fsspec_utils.join(config.out, cli_utils.MANIFEST_FILE)]
    if config.exam_mode:
        targets.append(fsspec_utils.join(config.out, mathgen.ANSWERS_FILE))
    fsspec_utils.ensure_write_once(*targets)
    fsspec_utils.mkdirs(config.out)

    problems = []
    with dwlab.logging.log_time("generating math problems"):
        for d, w in tqdm.tqdm(cells, desc="cells"):
            try:
                problems.extend(mathgen.iter_dataset([d], [w], config.count, config.seed, config.gen))
            except ParameterError as e:
                raise UsageError(str(e)) from e

    n = mathgen.write_dataset(problems, problems_path, exam_mode=config.exam_mode)
    per_cell = Counter(f"{p.depth}x{p.width}" for p in problems)
    cli_utils.write_manifest(config.out, "gen-math", config, {"n_problems": n, "per_cell": dict(per_cell)})
    logger.info(f"wrote {n} problems over {len(cells)} cell(s) to {problems_path}")
    return problems_path


if __name__ == "__main__":
    dwlab.config.main(main)()
