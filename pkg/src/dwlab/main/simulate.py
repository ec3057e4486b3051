import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import dwlab
from dwlab import simkit, theory
from dwlab.errors import CheckFailedError, UsageError
from dwlab.logging import WandbConfig, log_metrics, print_table
from dwlab.utils import cli_utils, fsspec_utils
from dwlab.utils.py_utils import resolve_jobs


logger = logging.getLogger(__name__)

SIMULATION_FILE = "simulation.json"

dwlab.config.register_enum_codec(simkit.CIMethod)
dwlab.config.register_enum_codec(theory.AggregationMode)


@dataclass
class SimulateConfig:
    out: str = "simulation"
    seed: int = 0
    jobs: int = 1
    """grid points simulated at once; <= 0 means one per core"""
    q: List[float] = field(default_factory=lambda: [0.5, 0.7, 0.9])
    w: List[int] = field(default_factory=lambda: [1, 2, 3])
    d: List[int] = field(default_factory=lambda: [1, 2, 4])
    n_agents: List[int] = field(default_factory=lambda: [2, 3, 5])
    r: List[float] = field(default_factory=lambda: [0.8, 1.0])
    trials: int = 100_000
    repeats: int = 1
    ci_method: simkit.CIMethod = simkit.CIMethod.NORMAL
    aggregation: theory.AggregationMode = theory.AggregationMode.PER_TASK
    """where the simulated summarizer applies its reliability; the closed form of the same mode is the reference"""
    min_pass_fraction: Optional[float] = None
    """fail with the check-failure exit code below this fraction"""
    wandb: WandbConfig = field(default_factory=WandbConfig)


def build_grid(config: SimulateConfig) -> List[theory.ModelParams]:
    try:
        return [
            theory.ModelParams(q=q, w=w, d=d, n_agents=n, r=r)
            for q, w, d, n, r in itertools.product(config.q, config.w, config.d, config.n_agents, config.r)
        ]
    except ValueError as e:
        raise UsageError(str(e)) from e


def main(config: SimulateConfig):
    grid = build_grid(config)
    if not grid:
        raise UsageError("the simulation grid is empty")
    out_path = fsspec_utils.join(config.out, SIMULATION_FILE)
    fsspec_utils.ensure_write_once(out_path)

    config.wandb.init(hparams=config)
    with dwlab.logging.log_time("simulation"):
        summary = simkit.agreement_suite(
            grid,
            trials=config.trials,
            seed=config.seed,
            repeats=config.repeats,
            ci_method=config.ci_method,
            aggregation=config.aggregation,
            jobs=resolve_jobs(config.jobs),
            progress=True,
        )

    failing = summary.failing()
    if failing:
        print_table("cells outside the CI", simkit.REPORT_COLUMNS, simkit.report_rows(failing))
    print_table(
        "simulation",
        ["cells", "passed", "pass fraction", "gain increasing", "adjacent pairs"],
        [[summary.n_checks, summary.n_passed, summary.pass_fraction, summary.trend.increasing, summary.trend.pairs]],
    )
    log_metrics(
        {"pass_fraction": summary.pass_fraction, "trend_fraction": summary.trend.fraction}, prefix="simulate"
    )

    fsspec_utils.mkdirs(config.out)
    fsspec_utils.write_json(
        out_path,
        cli_utils.manifest(
            "simulate",
            config,
            {
                "n_checks": summary.n_checks,
                "n_passed": summary.n_passed,
                "pass_fraction": summary.pass_fraction,
                "trend": summary.trend.to_dict(),
                "reports": [r.to_dict(encode_json=True) for r in summary.reports],
            },
        ),
    )
    logger.info(f"wrote {out_path}")
    config.wandb.finish()

    if config.min_pass_fraction is not None and summary.pass_fraction < config.min_pass_fraction:
        raise CheckFailedError([f"agreement {summary.pass_fraction:.4f} < {config.min_pass_fraction}"])
    return summary


if __name__ == "__main__":
    dwlab.config.main(main)()
