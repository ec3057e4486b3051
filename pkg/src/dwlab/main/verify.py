"""
Checks the closed-form gain model (monotonicity, width saturation, depth divergence) and the Monte Carlo simulator's
agreement with it. Exits with the check-failure code when any check fails; points where the gain analysis does not
apply are reported but do not fail the run.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import dwlab
from dwlab import simkit, theory
from dwlab.errors import AssumptionViolatedError, CheckFailedError, UsageError
from dwlab.logging import WandbConfig, log_metrics, print_table
from dwlab.utils import cli_utils, fsspec_utils
from dwlab.utils.py_utils import resolve_jobs


logger = logging.getLogger(__name__)

REPORT_FILE = "verify_report.json"

dwlab.config.register_enum_codec(simkit.CIMethod)


@dataclass
class MonotonicityCheck:
    q: float = 0.9
    n_agents: int = 3
    r: float = 0.95
    d_max: int = 6
    w_max: int = 6


@dataclass
class SaturationCheck:
    q: float = 0.9
    d: int = 2
    n_agents: int = 3
    r: float = 1.0
    w_max: int = 500
    tol: float = 1e-6


@dataclass
class DivergenceCheck:
    q: float = 0.9
    w: int = 2
    n_agents: int = 4
    r: float = 0.99
    threshold: float = 1e6


@dataclass
class VerifyConfig:
    out: Optional[str] = "verify"
    """directory for verify_report.json; nothing is written when unset"""
    seed: int = 0
    jobs: int = 1
    """grid points simulated at once; <= 0 means one per core"""
    trials: int = 100_000
    repeats: int = 100
    """independent seeds per canonical grid point"""
    ci_method: simkit.CIMethod = simkit.CIMethod.NORMAL
    min_pass_fraction: float = 0.99
    n_agents: int = 3
    r: float = 0.95
    simulate: bool = True
    monotonicity: MonotonicityCheck = field(default_factory=MonotonicityCheck)
    saturation: SaturationCheck = field(default_factory=SaturationCheck)
    divergence: DivergenceCheck = field(default_factory=DivergenceCheck)
    wandb: WandbConfig = field(default_factory=WandbConfig)


def _agreement_check(config: VerifyConfig) -> Dict:
    summary = simkit.agreement_suite(
        simkit.canonical_grid(config.n_agents, config.r),
        trials=config.trials,
        seed=config.seed,
        repeats=config.repeats,
        ci_method=config.ci_method,
        jobs=resolve_jobs(config.jobs),
        progress=True,
    )
    failing = summary.failing()
    return {
        "name": "agreement",
        "passed": summary.pass_fraction >= config.min_pass_fraction,
        "comparisons": summary.n_checks,
        "n_passed": summary.n_passed,
        "pass_fraction": summary.pass_fraction,
        "min_pass_fraction": config.min_pass_fraction,
        "trials": config.trials,
        "ci_method": simkit.CIMethod(config.ci_method).value,
        "trend": summary.trend.to_dict(),
        "failing": [r.to_dict(encode_json=True) for r in failing[:50]],
    }


def run_checks(config: VerifyConfig) -> List[Dict]:
    m = config.monotonicity
    mono = theory.verify_monotonicity(
        theory.ModelParams(q=m.q, w=1, d=1, n_agents=m.n_agents, r=m.r), (1, m.d_max), (1, m.w_max)
    )
    s = config.saturation
    sat = theory.verify_width_saturation(
        theory.ModelParams(q=s.q, w=1, d=s.d, n_agents=s.n_agents, r=s.r), s.w_max, s.tol
    )

    dv = config.divergence
    try:
        depth = theory.verify_depth_divergence(
            theory.ModelParams(q=dv.q, w=dv.w, d=1, n_agents=dv.n_agents, r=dv.r), dv.threshold
        )
        divergence = {"name": "depth_divergence", "passed": True, "depth": depth, "threshold": dv.threshold}
    except AssumptionViolatedError as e:
        # nothing diverges when debate does not beat one agent; the point is reported, not failed
        point = {"q": dv.q, "w": dv.w, "n_agents": dv.n_agents, "r": dv.r, "reason": str(e)}
        divergence = {"name": "depth_divergence", "passed": True, "depth": None, "threshold": dv.threshold}
        divergence["flagged"] = [point]

    checks = [mono.to_dict(), sat.to_dict(), divergence]
    if config.simulate:
        checks.append(_agreement_check(config))
    return checks


def main(config: VerifyConfig):
    if config.trials < 1 or config.repeats < 1:
        raise UsageError("--trials and --repeats must be positive")
    report_path = None
    if config.out is not None:
        report_path = fsspec_utils.join(config.out, REPORT_FILE)
        fsspec_utils.ensure_write_once(report_path)

    config.wandb.init(hparams=config)
    with dwlab.logging.log_time("verification"):
        checks = run_checks(config)

    rows = []
    for c in checks:
        n_flagged = len(c.get("flagged", []))
        rows.append([c["name"], "pass" if c["passed"] else "FAIL", c.get("comparisons"), n_flagged])
        log_metrics({"passed": c["passed"], "flagged": n_flagged}, prefix=f"verify/{c['name']}")
    print_table("verification", ["check", "result", "comparisons", "flagged"], rows)

    flagged = sum(len(c.get("flagged", [])) for c in checks)
    if flagged:
        logger.info(f"{flagged} point(s) flagged where f(s) <= 1; the gain analysis does not apply there")

    failed = [c["name"] for c in checks if not c["passed"]]
    if report_path is not None:
        fsspec_utils.mkdirs(config.out)
        report = cli_utils.manifest("verify", config, {"passed": not failed, "checks": checks})
        fsspec_utils.write_json(report_path, report)
        logger.info(f"wrote {report_path}")
    config.wandb.finish()

    if failed:
        raise CheckFailedError(failed)
    return checks


if __name__ == "__main__":
    dwlab.config.main(main)()
