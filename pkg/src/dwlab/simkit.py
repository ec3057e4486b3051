"""
Monte Carlo simulator for the depth/width task model.

One trial draws every micro-operation: a single agent attempts d steps of w capabilities; N debating agents attempt
the same steps independently and a step is covered when any of them gets it right; the aggregator then passes the
covered candidate with probability r (once per task, or once per step under AggregationMode.PER_STEP).

Randomness is JAX's counter-based Threefry generator. Trial i's key is fold_in(base_key(seed), i), so counts do not
depend on how trials are chunked or how many workers evaluate the chunks.
"""
import enum
import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np
from dataclasses_json import dataclass_json
from scipy import stats
from tqdm import tqdm

from dwlab.errors import ParameterError
from dwlab.theory import AggregationMode, ModelParams, multi_success, performance_gain, single_success
from dwlab.utils.py_utils import chunk_ranges, resolve_jobs
from dwlab.utils.rng import derive_seed


logger = logging.getLogger(__name__)

SIGMAS = 3.0
# two-sided coverage of +-3 sigma
CP_CONFIDENCE = 0.9973
DEFAULT_CHUNK_SIZE = 1 << 15
_MAX_SEED = (1 << 64) - 1
_MAX_TRIALS = 1 << 31


class CIMethod(str, enum.Enum):
    NORMAL = "normal"
    CLOPPER_PEARSON = "clopper_pearson"


@dataclass_json
@dataclass(frozen=True)
class TrialConfig:
    params: ModelParams
    trials: int
    seed: int
    aggregation: AggregationMode = AggregationMode.PER_TASK
    ci_method: CIMethod = CIMethod.NORMAL
    chunk_size: int = DEFAULT_CHUNK_SIZE
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.trials, bool) or not isinstance(self.trials, int) or not 1 <= self.trials <= _MAX_TRIALS:
            raise ParameterError(f"trials must be an integer in [1, 2^31], got {self.trials!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed <= _MAX_SEED:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if self.chunk_size < 1:
            raise ParameterError(f"chunk_size must be positive, got {self.chunk_size}")


@dataclass_json
@dataclass(frozen=True)
class BinomialEstimate:
    successes: int
    trials: int
    p_hat: float
    ci_low: float
    ci_high: float

    @property
    def ci_halfwidth(self) -> float:
        return max(self.p_hat - self.ci_low, self.ci_high - self.p_hat)

    def covers(self, p: float) -> bool:
        """Whether p lies in the interval. With no successes or no failures it is widened to 3/trials."""
        if 0 < self.successes < self.trials:
            return self.ci_low <= p <= self.ci_high
        floor = 3.0 / self.trials
        return min(self.ci_low, self.p_hat - floor) <= p <= max(self.ci_high, self.p_hat + floor)


@dataclass_json
@dataclass(frozen=True)
class EmpiricalRates:
    single_hat: float
    multi_hat: float
    trials: int
    ci_halfwidth_single: float
    ci_halfwidth_multi: float
    single: BinomialEstimate
    multi: BinomialEstimate


@dataclass_json
@dataclass(frozen=True)
class ComparisonReport:
    params: ModelParams
    trials: int
    seed: int
    aggregation: AggregationMode
    reference: AggregationMode
    ci_method: CIMethod
    single_hat: float
    multi_hat: float
    single_closed: float
    multi_closed: float
    single_error: float
    multi_error: float
    ci_halfwidth_single: float
    ci_halfwidth_multi: float
    single_pass: bool
    multi_pass: bool
    closed_gain: float
    empirical_gain: Optional[float]
    """None when no single-agent trial succeeded"""

    @property
    def passed(self) -> bool:
        return self.single_pass and self.multi_pass


@dataclass_json
@dataclass
class TrendSummary:
    pairs: int = 0
    increasing: int = 0
    undefined: int = 0

    @property
    def fraction(self) -> float:
        return self.increasing / self.pairs if self.pairs else 1.0


@dataclass_json
@dataclass
class AgreementSummary:
    reports: List[ComparisonReport]
    n_checks: int
    n_passed: int
    trend: TrendSummary

    @property
    def pass_fraction(self) -> float:
        return self.n_passed / self.n_checks if self.n_checks else 1.0

    def failing(self) -> List[ComparisonReport]:
        return [r for r in self.reports if not r.passed]


def canonical_grid(n_agents: int = 3, r: float = 0.95) -> List[ModelParams]:
    """q in {0.7, 0.8, 0.9} x w in {1, 2, 3} x d in {1, 2}."""
    return [
        ModelParams(q=q, w=w, d=d, n_agents=n_agents, r=r) for q in (0.7, 0.8, 0.9) for w in (1, 2, 3) for d in (1, 2)
    ]


def base_key(seed: int) -> jax.Array:
    key = jax.random.PRNGKey(0)
    key = jax.random.fold_in(key, np.uint32(seed & 0xFFFFFFFF))
    return jax.random.fold_in(key, np.uint32((seed >> 32) & 0xFFFFFFFF))


def _trial(key, q, r, *, depth: int, width: int, n_agents: int, aggregation: AggregationMode):
    k_single, k_multi, k_agg = jax.random.split(key, 3)

    single_ok = jnp.all(jax.random.bernoulli(k_single, q, (depth, width)))

    # (depth, agents): did this agent get every capability of this step right
    agent_steps = jnp.all(jax.random.bernoulli(k_multi, q, (depth, n_agents, width)), axis=-1)
    covered = jnp.any(agent_steps, axis=-1)
    if aggregation == AggregationMode.PER_STEP:
        multi_ok = jnp.all(covered & jax.random.bernoulli(k_agg, r, (depth,)))
    else:
        multi_ok = jnp.all(covered) & jax.random.bernoulli(k_agg, r)

    return single_ok, multi_ok


@functools.partial(jax.jit, static_argnames=("chunk_size", "depth", "width", "n_agents", "aggregation"))
def _count_chunk(key, start, stop, q, r, *, chunk_size, depth, width, n_agents, aggregation):
    indices = start + jnp.arange(chunk_size, dtype=jnp.uint32)
    valid = indices < stop
    keys = jax.vmap(lambda i: jax.random.fold_in(key, i))(indices)
    trial = functools.partial(_trial, depth=depth, width=width, n_agents=n_agents, aggregation=aggregation)
    single_ok, multi_ok = jax.vmap(trial, in_axes=(0, None, None))(keys, q, r)
    return jnp.sum(single_ok & valid, dtype=jnp.int32), jnp.sum(multi_ok & valid, dtype=jnp.int32)


def _count_successes(cfg: TrialConfig) -> Tuple[int, int]:
    p = cfg.params
    key = base_key(cfg.seed)
    # equal chunks, so the padded tail of the last one stays small
    n_chunks = -(-cfg.trials // cfg.chunk_size)
    chunk_size = -(-cfg.trials // n_chunks)
    count = functools.partial(
        _count_chunk,
        key,
        q=jnp.float32(p.q),
        r=jnp.float32(p.r),
        chunk_size=chunk_size,
        depth=p.d,
        width=p.w,
        n_agents=p.n_agents,
        aggregation=cfg.aggregation,
    )

    def run(bounds: Tuple[int, int]) -> Tuple[int, int]:
        start, stop = bounds
        s, m = count(np.uint32(start), np.uint32(stop))
        return int(s), int(m)

    ranges = list(chunk_ranges(cfg.trials, chunk_size))
    jobs = min(resolve_jobs(cfg.jobs), len(ranges))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, ranges))
    else:
        results = [run(b) for b in ranges]

    single = sum(s for s, _ in results)
    multi = sum(m for _, m in results)
    return single, multi


def binomial_estimate(successes: int, trials: int, method: CIMethod = CIMethod.NORMAL) -> BinomialEstimate:
    p_hat = successes / trials
    if method == CIMethod.CLOPPER_PEARSON:
        alpha = 1.0 - CP_CONFIDENCE
        low = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, trials - successes + 1))
        high = 1.0 if successes == trials else float(stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    else:
        halfwidth = SIGMAS * math.sqrt(p_hat * (1.0 - p_hat) / trials)
        low, high = p_hat - halfwidth, p_hat + halfwidth
    return BinomialEstimate(successes=successes, trials=trials, p_hat=p_hat, ci_low=low, ci_high=high)


def simulate(cfg: TrialConfig) -> EmpiricalRates:
    single, multi = _count_successes(cfg)
    s = binomial_estimate(single, cfg.trials, cfg.ci_method)
    m = binomial_estimate(multi, cfg.trials, cfg.ci_method)
    return EmpiricalRates(
        single_hat=s.p_hat,
        multi_hat=m.p_hat,
        trials=cfg.trials,
        ci_halfwidth_single=s.ci_halfwidth,
        ci_halfwidth_multi=m.ci_halfwidth,
        single=s,
        multi=m,
    )


def simulate_single(cfg: TrialConfig) -> BinomialEstimate:
    return simulate(cfg).single


def simulate_multi(cfg: TrialConfig) -> BinomialEstimate:
    return simulate(cfg).multi


def compare_to_closed_form(cfg: TrialConfig, reference: Optional[AggregationMode] = None) -> ComparisonReport:
    """
    Simulates `cfg` and checks both rates against the closed forms. `reference` picks which closed form to compare
    the multi-agent rate with; it defaults to the mode that was simulated.
    """
    reference = cfg.aggregation if reference is None else reference
    rates = simulate(cfg)
    single_closed = single_success(cfg.params)
    multi_closed = multi_success(cfg.params, reference)

    assessment = performance_gain(cfg.params)
    closed_gain = assessment.gain if reference == AggregationMode.PER_STEP else assessment.gain_per_task

    empirical_gain = None
    if rates.single.successes > 0:
        empirical_gain = (rates.multi_hat - rates.single_hat) / rates.single_hat

    return ComparisonReport(
        params=cfg.params,
        trials=cfg.trials,
        seed=cfg.seed,
        aggregation=cfg.aggregation,
        reference=reference,
        ci_method=cfg.ci_method,
        single_hat=rates.single_hat,
        multi_hat=rates.multi_hat,
        single_closed=single_closed,
        multi_closed=multi_closed,
        single_error=abs(rates.single_hat - single_closed),
        multi_error=abs(rates.multi_hat - multi_closed),
        ci_halfwidth_single=rates.ci_halfwidth_single,
        ci_halfwidth_multi=rates.ci_halfwidth_multi,
        single_pass=rates.single.covers(single_closed),
        multi_pass=rates.multi.covers(multi_closed),
        closed_gain=closed_gain,
        empirical_gain=empirical_gain,
    )


def agreement_suite(
    grid: Sequence[ModelParams],
    trials: int,
    seed: int,
    repeats: int = 1,
    ci_method: CIMethod = CIMethod.NORMAL,
    aggregation: AggregationMode = AggregationMode.PER_TASK,
    jobs: int = 1,
    progress: bool = False,
) -> AgreementSummary:
    """
    Runs compare_to_closed_form for every grid point `repeats` times. Repeat k of point i uses the seed
    derive_seed(seed, "simkit/agreement", i, k), so adding repeats never changes earlier ones. With `jobs` > 1 the
    comparisons run on that many threads; reports keep grid order.
    """
    if not grid:
        raise ParameterError("agreement grid is empty")
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    jobs = resolve_jobs(jobs)

    configs = [
        TrialConfig(
            params=grid[i],
            trials=trials,
            seed=derive_seed(seed, "simkit/agreement", i, k),
            aggregation=aggregation,
            ci_method=ci_method,
        )
        for i in range(len(grid))
        for k in range(repeats)
    ]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            it = pool.map(compare_to_closed_form, configs)
            reports = list(tqdm(it, total=len(configs), desc="simulating", disable=not progress))
    else:
        reports = [compare_to_closed_form(cfg) for cfg in tqdm(configs, desc="simulating", disable=not progress)]

    n_passed = sum(1 for r in reports if r.passed)
    summary = AgreementSummary(
        reports=reports, n_checks=len(reports), n_passed=n_passed, trend=empirical_gain_trend(reports)
    )
    logger.info(
        f"agreement: {n_passed}/{len(reports)} cell checks within CI ({summary.pass_fraction:.2%}); "
        f"gain increases on {summary.trend.increasing}/{summary.trend.pairs} adjacent pairs"
    )
    return summary


def empirical_gain_trend(reports: Sequence[ComparisonReport]) -> TrendSummary:
    """
    Counts adjacent grid pairs, (d, w) -> (d+1, w) and (d, w) -> (d, w+1) at fixed (q, N, r), whose mean empirical
    gain increases. Pairs where either side has no defined gain are counted as undefined.
    """
    by_point: Dict[Tuple, List[Optional[float]]] = {}
    for report in reports:
        p = report.params
        by_point.setdefault((p.q, p.n_agents, p.r, p.d, p.w), []).append(report.empirical_gain)

    means: Dict[Tuple, Optional[float]] = {}
    for point, gains in by_point.items():
        defined = [g for g in gains if g is not None]
        means[point] = float(np.mean(defined)) if defined else None

    trend = TrendSummary()
    for (q, n, r, d, w), gain in means.items():
        for neighbour in ((q, n, r, d + 1, w), (q, n, r, d, w + 1)):
            if neighbour not in means:
                continue
            trend.pairs += 1
            other = means[neighbour]
            if gain is None or other is None:
                trend.undefined += 1
            elif other > gain:
                trend.increasing += 1
    return trend


def report_rows(reports: Sequence[ComparisonReport]) -> List[List]:
    """Rows for a rich summary table."""
    rows = []
    for r in reports:
        p = r.params
        rows.append(
            [p.q, p.w, p.d, p.n_agents, p.r, r.single_hat, r.single_closed, r.multi_hat, r.multi_closed, r.passed]
        )
    return rows


REPORT_COLUMNS = ["q", "w", "d", "N", "r", "single", "S_single", "multi", "S_multi", "pass"]
