"""
Closed-form success model for single agents vs. multi-agent debate, and numeric verifiers for its two claims:
the gain grows with both depth and width, and it saturates in width at (rN)^d - 1 while diverging in depth.

Notation: q is the per-capability success probability, w the width (capabilities per step), d the depth (steps),
N the number of debating agents and r the aggregator's reliability. s = q^w is the per-step success of one agent,
A(s) = r[1 - (1 - s)^N] is the aggregated per-step success and f(s) = A(s)/s.
"""
import dataclasses
import enum
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from dataclasses_json import dataclass_json

from dwlab.errors import AssumptionViolatedError, ParameterError


logger = logging.getLogger(__name__)

IntRange = Union[Tuple[int, int], Sequence[int]]

# past this depth, f**d is evaluated as expm1(d * log f)
LOG_SPACE_DEPTH = 1000
# below this per-step success, 1 - (1 - s)^N is evaluated with log1p/expm1
_SMALL_S = 1e-4
TWO_ROUTE_RTOL = 1e-12


class AggregationMode(str, enum.Enum):
    """Where the aggregator's reliability r enters the multi-agent success rate."""

    PER_TASK = "per_task"  # r * [1 - (1 - s)^N]^d: the aggregator decides once, after all steps
    PER_STEP = "per_step"  # [r * (1 - (1 - s)^N)]^d: the form behind Delta = f(s)^d - 1


def _check_probability(name: str, value: float, *, allow_one: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float, np.floating)):
        raise ParameterError(f"{name} must be a number, got {value!r}")
    upper_ok = value <= 1 if allow_one else value < 1
    if not (value > 0 and upper_ok) or math.isnan(value):
        interval = "(0, 1]" if allow_one else "(0, 1)"
        raise ParameterError(f"{name} must be in {interval}, got {value}")


def _check_count(name: str, value: int, minimum: int):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value}")


@dataclass_json
@dataclass(frozen=True)
class ModelParams:
    q: float
    w: int
    d: int
    n_agents: int
    r: float

    def __post_init__(self):
        _check_probability("q", self.q)
        _check_count("w", self.w, 1)
        _check_count("d", self.d, 1)
        _check_count("n_agents", self.n_agents, 2)
        _check_probability("r", self.r, allow_one=True)

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)


@dataclass_json
@dataclass(frozen=True)
class GainAssessment:
    gain: float
    """f(s)^d - 1, the relative improvement with the aggregator applied at every step"""
    assumption_ok: bool
    """f(s) > 1, i.e. r[1 - (1 - s)^N] > s"""
    s: float
    f: float
    gain_per_task: float
    """(S_multi - S_single) / S_single with the aggregator applied once per task"""


@dataclass_json
@dataclass
class VerificationReport:
    name: str
    passed: bool
    comparisons: int = 0
    violations: List[Dict] = dataclasses.field(default_factory=list)
    flagged: List[Dict] = dataclasses.field(default_factory=list)
    details: Dict = dataclasses.field(default_factory=dict)
    converged: Optional[bool] = None
    first_w: Optional[int] = None


def per_step_success(q: float, w: int) -> float:
    """s(w) = q^w: one agent completes a step only if all w capabilities succeed."""
    _check_probability("q", q)
    _check_count("w", w, 1)
    return q**w


def per_step_success_hetero(qs: Sequence[float]) -> float:
    """s = prod_j q_j, for capabilities with different success probabilities."""
    if len(qs) == 0:
        raise ParameterError("need at least one capability probability")
    out = 1.0
    for j, q in enumerate(qs):
        _check_probability(f"qs[{j}]", q)
        out *= q
    return out


def coverage(s: float, n_agents: int) -> float:
    """1 - (1 - s)^N: probability at least one of N independent agents gets the step right."""
    if s < _SMALL_S:
        return -math.expm1(n_agents * math.log1p(-s))
    return 1.0 - (1.0 - s) ** n_agents


def single_success(p: ModelParams) -> float:
    s = per_step_success(p.q, p.w)
    if p.d > LOG_SPACE_DEPTH:
        return math.exp(p.d * math.log(s))
    return s**p.d


def multi_success(p: ModelParams, aggregation: AggregationMode = AggregationMode.PER_TASK) -> float:
    s = per_step_success(p.q, p.w)
    c = coverage(s, p.n_agents)
    if aggregation == AggregationMode.PER_STEP:
        c = p.r * c
        scale = 1.0
    else:
        scale = p.r

    if p.d > LOG_SPACE_DEPTH:
        return scale * math.exp(p.d * math.log(c))
    return scale * c**p.d


def aggregated_step_success(s: float, n_agents: int, r: float) -> float:
    """A(s) = r[1 - (1 - s)^N]"""
    return r * coverage(s, n_agents)


def _pow_minus_one(base: float, d: int) -> float:
    """base^d - 1, switching to log space for large d."""
    if d <= LOG_SPACE_DEPTH:
        try:
            return base**d - 1.0
        except OverflowError:
            return math.inf
    try:
        return math.expm1(d * math.log(base))
    except OverflowError:
        return math.inf


def _gain_from_f(f: float, d: int) -> float:
    return _pow_minus_one(f, d)


def performance_gain(p: ModelParams) -> GainAssessment:
    s = per_step_success(p.q, p.w)
    a = aggregated_step_success(s, p.n_agents, p.r)
    f = a / s
    gain = _gain_from_f(f, p.d)

    # r * (c / s)^d - 1
    c_over_s = coverage(s, p.n_agents) / s
    if p.d <= LOG_SPACE_DEPTH:
        try:
            gain_per_task = p.r * c_over_s**p.d - 1.0
        except OverflowError:
            gain_per_task = math.inf
    else:
        try:
            gain_per_task = math.expm1(math.log(p.r) + p.d * math.log(c_over_s))
        except OverflowError:
            gain_per_task = math.inf

    return GainAssessment(gain=gain, assumption_ok=a > s, s=s, f=f, gain_per_task=gain_per_task)


def direct_gain(p: ModelParams, aggregation: AggregationMode = AggregationMode.PER_STEP) -> float:
    """(S_multi - S_single) / S_single computed literally from the two success rates."""
    single = single_success(p)
    if single == 0.0:
        raise ParameterError(f"S_single underflows to 0 at {p}; use performance_gain instead")
    return (multi_success(p, aggregation) - single) / single


def two_route_consistent(p: ModelParams, rtol: float = TWO_ROUTE_RTOL) -> bool:
    """The literal ratio under per-step aggregation agrees with f(s)^d - 1."""
    direct = direct_gain(p, AggregationMode.PER_STEP)
    closed = performance_gain(p).gain
    return math.isclose(direct, closed, rel_tol=rtol, abs_tol=1e-15)


def width_limit_gain(d: int, n_agents: int, r: float) -> float:
    """lim_{w -> inf} Delta = (rN)^d - 1"""
    _check_count("d", d, 1)
    _check_count("n_agents", n_agents, 2)
    _check_probability("r", r, allow_one=True)
    return _pow_minus_one(r * n_agents, d)


def gain_gradient(p: ModelParams) -> Tuple[float, float]:
    """
    Closed-form partial derivatives of Delta = f(s)^d - 1, treating d and w as continuous:
    dDelta/dd = ln f * f^d, and dDelta/dw = d f^(d-1) f'(s) s'(w) with s'(w) = q^w ln q.
    """
    s = per_step_success(p.q, p.w)
    a = aggregated_step_success(s, p.n_agents, p.r)
    f = a / s
    a_prime = p.r * p.n_agents * (1.0 - s) ** (p.n_agents - 1)
    f_prime = (a_prime * s - a) / (s * s)
    s_prime = s * math.log(p.q)

    log_f = math.log(f)
    try:
        d_partial = log_f * math.exp(p.d * log_f)
        w_partial = p.d * math.exp((p.d - 1) * log_f) * f_prime * s_prime
    except OverflowError:
        d_partial = math.copysign(math.inf, log_f)
        w_partial = math.inf if f_prime * s_prime > 0 else -math.inf
    return d_partial, w_partial


def gain_surface(
    base: ModelParams,
    depths: Sequence[int],
    widths: Sequence[int],
    aggregation: AggregationMode = AggregationMode.PER_STEP,
) -> np.ndarray:
    """Gain at every (depth, width) with base's q, N and r. Rows are depths, columns widths."""
    out = np.empty((len(depths), len(widths)), dtype=np.float64)
    for i, d in enumerate(depths):
        for j, w in enumerate(widths):
            assessment = performance_gain(base.replace(d=d, w=w))
            out[i, j] = assessment.gain if aggregation == AggregationMode.PER_STEP else assessment.gain_per_task
    return out


def _as_values(name: str, r: IntRange) -> List[int]:
    if isinstance(r, tuple) and len(r) == 2:
        lo, hi = r
        values = list(range(lo, hi + 1))
    else:
        values = sorted(set(r))
    if not values:
        raise ParameterError(f"{name} range is empty: {r}")
    return values


def verify_monotonicity(base: ModelParams, d_range: IntRange, w_range: IntRange) -> VerificationReport:
    """
    Checks Delta(d+1, w) > Delta(d, w) and Delta(d, w+1) > Delta(d, w) at every grid point where f(s) > 1.
    Points where the assumption fails are flagged and left out of the comparisons. Also checks that both
    closed-form partials are positive and that the literal ratio agrees with f(s)^d - 1.

    `d_range` and `w_range` are inclusive (lo, hi) tuples or explicit lists of values.
    """
    depths = _as_values("d", d_range)
    widths = _as_values("w", w_range)
    depth_set = set(depths)
    width_set = set(widths)

    report = VerificationReport(name="monotonicity", passed=True)
    gains: Dict[Tuple[int, int], GainAssessment] = {}
    for d in depths:
        for w in widths:
            gains[(d, w)] = performance_gain(base.replace(d=d, w=w))

    gradient_checks = 0
    two_route_checks = 0
    max_two_route_error = 0.0
    for (d, w), here in gains.items():
        if not here.assumption_ok:
            report.flagged.append({"d": d, "w": w, "f": here.f, "reason": "f(s) <= 1"})
            continue

        for axis, neighbour in (("d", (d + 1, w)), ("w", (d, w + 1))):
            if neighbour[0] not in depth_set or neighbour[1] not in width_set:
                continue
            report.comparisons += 1
            there = gains[neighbour]
            if not there.gain > here.gain:
                report.violations.append(
                    {"kind": f"increase_in_{axis}", "d": d, "w": w, "gain": here.gain, "next_gain": there.gain}
                )

        params = base.replace(d=d, w=w)
        d_partial, w_partial = gain_gradient(params)
        gradient_checks += 1
        if not (d_partial > 0 and w_partial > 0):
            report.violations.append(
                {"kind": "gradient", "d": d, "w": w, "d_partial": d_partial, "w_partial": w_partial}
            )

        if single_success(params) > 0:
            two_route_checks += 1
            direct = direct_gain(params, AggregationMode.PER_STEP)
            err = abs(direct - here.gain) / max(abs(here.gain), 1e-300)
            max_two_route_error = max(max_two_route_error, err)
            if not two_route_consistent(params):
                report.violations.append({"kind": "two_route", "d": d, "w": w, "direct": direct, "closed": here.gain})

    report.passed = not report.violations
    report.details = {
        "q": base.q,
        "n_agents": base.n_agents,
        "r": base.r,
        "depths": depths,
        "widths": widths,
        "gradient_checks": gradient_checks,
        "two_route_checks": two_route_checks,
        "max_two_route_rel_error": max_two_route_error,
    }
    logger.debug(f"monotonicity: {report.comparisons} comparisons, {len(report.violations)} violations")
    return report


def _geometric_widths(w_max: int) -> List[int]:
    ws = []
    w = 1
    while w < w_max:
        ws.append(w)
        w *= 2
    ws.append(w_max)
    return ws


def verify_width_saturation(base: ModelParams, w_max: int, tol: float) -> VerificationReport:
    """
    Checks |Delta(d, w) - ((rN)^d - 1)| shrinks along w = 1, 2, 4, ..., w_max and is below `tol` at w_max.
    Reports the first w (scanning every width) at which the gap is within tol.
    """
    _check_count("w_max", w_max, 1)
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")

    limit = width_limit_gain(base.d, base.n_agents, base.r)

    def gap(w: int) -> float:
        return abs(performance_gain(base.replace(w=w)).gain - limit)

    report = VerificationReport(name="width_saturation", passed=True)
    subsequence = _geometric_widths(w_max)
    gaps = [gap(w) for w in subsequence]
    for (w0, g0), (w1, g1) in zip(zip(subsequence, gaps), zip(subsequence[1:], gaps[1:])):
        report.comparisons += 1
        # rounding noise once the gap reaches machine precision
        if g1 > g0 * (1 + 1e-9) + 1e-15:
            report.violations.append({"kind": "gap_not_shrinking", "w": w0, "next_w": w1, "gap": g0, "next_gap": g1})

    first_w = None
    for w in range(1, w_max + 1):
        if gap(w) <= tol:
            first_w = w
            break

    report.first_w = first_w
    report.converged = gaps[-1] <= tol
    report.passed = report.converged and not report.violations
    report.details = {
        "limit": limit,
        "d": base.d,
        "n_agents": base.n_agents,
        "r": base.r,
        "q": base.q,
        "w_max": w_max,
        "tol": tol,
        "final_gap": gaps[-1],
        "subsequence": subsequence,
    }
    return report


def verify_depth_divergence(base: ModelParams, threshold: float) -> int:
    """Smallest depth d with Delta(d, w) > threshold. Exists whenever f(s) > 1 since Delta = f^d - 1 diverges."""
    if threshold < 0 or math.isnan(threshold):
        raise ParameterError(f"threshold must be non-negative, got {threshold}")

    assessment = performance_gain(base.replace(d=1))
    if not assessment.assumption_ok:
        raise AssumptionViolatedError(
            f"f(s) = {assessment.f:.6g} <= 1 at q={base.q}, w={base.w}, N={base.n_agents}, r={base.r}; "
            "the gain does not diverge"
        )

    f = assessment.f
    estimate = math.floor(math.log1p(threshold) / math.log(f)) + 1
    d = max(1, estimate)
    while not _gain_from_f(f, d) > threshold:
        d += 1
    while d > 1 and _gain_from_f(f, d - 1) > threshold:
        d -= 1
    return d
