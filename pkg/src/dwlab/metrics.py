"""
Per-cell aggregation of run records, relative gain, OLS R², and the two-player Shapley split of R² between depth
and width.
"""
import enum
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from dataclasses_json import dataclass_json

from dwlab import visualization
from dwlab.debate.runner import ResultRecord, System
from dwlab.errors import ParameterError
from dwlab.utils import fsspec_utils


logger = logging.getLogger(__name__)

MIN_SHAPLEY_CELLS = 4


class WidthPredictor(str, enum.Enum):
    LEVEL = "level"
    """the integer width level (children per node, or entropy quintile 1..5)"""
    ENTROPY = "entropy"
    """the mean normalized entropy of the cell's keyword sets"""


@dataclass_json
@dataclass
class CellMetrics:
    depth: int
    width: int
    n: int
    """distinct tasks seen in the cell"""
    single_score: Optional[float]
    multi_score: Optional[float]
    gain: Optional[float]
    """(multi - single) / single, None when single_score is 0 or a system is missing"""
    width_value: float
    n_single: int = 0
    n_multi: int = 0
    n_failed: int = 0
    n_agents: Optional[int] = None
    """total agents of the multi system, summarizer included"""
    single_standard: Optional[float] = None
    multi_standard: Optional[float] = None
    single_quality: Optional[float] = None
    multi_quality: Optional[float] = None

    @property
    def cell(self) -> Tuple[int, int]:
        return self.depth, self.width

    @property
    def gain_defined(self) -> bool:
        return self.gain is not None


@dataclass_json
@dataclass
class ShapleyResult:
    r2_empty: float
    r2_depth: float
    r2_width: float
    r2_full: float
    s_depth: float
    s_width: float
    dominant: str
    n_cells: int
    n_excluded: int = 0
    """cells left out because their gain is undefined"""
    width_predictor: str = WidthPredictor.LEVEL.value
    constant_response: bool = False


@dataclass
class OlsFit:
    r2: float
    coef: np.ndarray
    """intercept first"""
    constant_response: bool = False


def _mean(values: Sequence[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def relative_gain(single: Optional[float], multi: Optional[float]) -> Optional[float]:
    if single is None or multi is None or single <= 0:
        return None
    return (multi - single) / single


def agent_counts(records: Iterable[ResultRecord]) -> List[int]:
    return sorted({r.n_agents for r in records if r.system == System.MULTI.value})


def aggregate_cells(
    records: Sequence[ResultRecord],
    expected_cells: Optional[Iterable[Tuple[int, int]]] = None,
    n_agents: Optional[int] = None,
) -> List[CellMetrics]:
    """
    Mean score per (cell, system) over successful records, and the relative gain per cell. Failed records are
    counted but do not enter the means. Output is sorted by (depth, width) and does not depend on record order.

    :param expected_cells: when given, records outside these cells are rejected
    :param n_agents: which multi-system agent count to use when the records hold several
    """
    expected: Optional[Set[Tuple[int, int]]] = None if expected_cells is None else set(expected_cells)
    unknown = sorted(
        r.task_id for r in records if r.depth is None or r.width is None or (expected and r.cell not in expected)
    )
    if unknown:
        shown = ", ".join(unknown[:10]) + ("" if len(unknown) <= 10 else f" (+{len(unknown) - 10} more)")
        raise ParameterError(f"{len(unknown)} record(s) have unknown cells: {shown}")

    families = sorted({r.family for r in records})
    if len(families) > 1:
        raise ParameterError(f"records mix task families {families}; analyze one family at a time")

    counts = agent_counts(records)
    if n_agents is None and len(counts) > 1:
        raise ParameterError(f"records hold several agent counts {counts}; pick one with n_agents")
    if n_agents is not None:
        records = [r for r in records if r.system != System.MULTI.value or r.n_agents == n_agents]
        counts = [n_agents] if n_agents in counts else []

    by_cell: Dict[Tuple[int, int], List[ResultRecord]] = defaultdict(list)
    for r in records:
        by_cell[r.cell].append(r)
    if expected:
        for cell in expected:
            by_cell.setdefault(cell, [])

    out = []
    for cell in sorted(by_cell):
        # a fixed summation order keeps the means bit-identical under any permutation of the input
        rows = sorted(by_cell[cell], key=lambda r: (r.task_id, r.system, r.n_agents))
        single = [r for r in rows if r.system == System.SINGLE.value and r.ok]
        multi = [r for r in rows if r.system == System.MULTI.value and r.ok]
        single_score = _mean([r.score for r in single])  # type: ignore[misc]
        multi_score = _mean([r.score for r in multi])  # type: ignore[misc]
        tasks = {r.task_id: r.width_value for r in rows}
        out.append(
            CellMetrics(
                depth=cell[0],
                width=cell[1],
                n=len(tasks),
                single_score=single_score,
                multi_score=multi_score,
                gain=relative_gain(single_score, multi_score),
                width_value=_mean([tasks[t] for t in sorted(tasks)]) or 0.0,
                n_single=len(single),
                n_multi=len(multi),
                n_failed=sum(1 for r in rows if not r.ok),
                n_agents=counts[0] if counts else None,
                single_standard=_mean([r.standard for r in single if r.standard is not None]),
                multi_standard=_mean([r.standard for r in multi if r.standard is not None]),
                single_quality=_mean([r.quality for r in single if r.quality is not None]),
                multi_quality=_mean([r.quality for r in multi if r.quality is not None]),
            )
        )

    undefined = [c.cell for c in out if not c.gain_defined]
    if undefined:
        logger.info(f"{len(undefined)} cell(s) have undefined gain: {undefined}")
    return out


def ols_fit(X: np.ndarray, y: np.ndarray) -> OlsFit:
    """
    Least squares with an intercept. `X` has one column per predictor and may have zero columns, in which case the
    fit is the intercept-only model with R² = 0.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if y.shape != (n,):
        raise ParameterError(f"y has shape {y.shape}, expected ({n},)")
    if n < k + 1:
        raise ParameterError(f"need at least {k + 1} rows for {k} predictor(s), got {n}")
    for j in range(k):
        if np.ptp(X[:, j]) == 0:
            raise ParameterError(f"predictor column {j} is constant")

    design = np.column_stack([np.ones(n), X])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)

    # on the data itself: the float SST of a constant vector can be a small positive number
    if np.ptp(y) == 0:
        logger.warning("response is constant; R² is taken as 0")
        return OlsFit(r2=0.0, coef=coef, constant_response=True)
    sst = float(np.sum((y - y.mean()) ** 2))
    if k == 0:
        return OlsFit(r2=0.0, coef=coef)

    ssr = float(np.sum((y - design @ coef) ** 2))
    r2 = min(1.0, max(0.0, 1.0 - ssr / sst))
    return OlsFit(r2=r2, coef=coef)


def ols_r2(X: np.ndarray, y: np.ndarray) -> float:
    return ols_fit(X, y).r2


def shapley_scores(
    cells: Sequence[CellMetrics], width_predictor: WidthPredictor = WidthPredictor.LEVEL
) -> ShapleyResult:
    """
    Fits gain on the empty, depth-only, width-only and full predictor sets and splits the full R² between the two
    predictors: S(x) = ½[R²({x}) - R²(∅)] + ½[R²({x, y}) - R²({y})].
    """
    width_predictor = WidthPredictor(width_predictor)
    usable = [c for c in cells if c.gain_defined]
    excluded = len(cells) - len(usable)
    if excluded:
        logger.info(f"excluding {excluded} cell(s) with undefined gain from the regression")
    if len(usable) < MIN_SHAPLEY_CELLS:
        raise ParameterError(
            f"Shapley decomposition needs at least {MIN_SHAPLEY_CELLS} cells with defined gain, got {len(usable)}"
        )

    y = np.array([c.gain for c in usable], dtype=np.float64)
    depth = np.array([c.depth for c in usable], dtype=np.float64)
    if width_predictor == WidthPredictor.LEVEL:
        width = np.array([c.width for c in usable], dtype=np.float64)
    else:
        width = np.array([c.width_value for c in usable], dtype=np.float64)

    return shapley_from_columns(depth, width, y, excluded=excluded, width_predictor=width_predictor)


def shapley_from_columns(
    depth: np.ndarray,
    width: np.ndarray,
    y: np.ndarray,
    excluded: int = 0,
    width_predictor: WidthPredictor = WidthPredictor.LEVEL,
) -> ShapleyResult:
    n = len(y)
    r2_empty = ols_r2(np.empty((n, 0)), y)
    fit_depth = ols_fit(depth, y)
    fit_width = ols_fit(width, y)
    fit_full = ols_fit(np.column_stack([depth, width]), y)

    s_depth = 0.5 * (fit_depth.r2 - r2_empty) + 0.5 * (fit_full.r2 - fit_width.r2)
    s_width = 0.5 * (fit_width.r2 - r2_empty) + 0.5 * (fit_full.r2 - fit_depth.r2)
    if s_depth > s_width:
        dominant = "depth"
    elif s_width > s_depth:
        dominant = "width"
    else:
        dominant = "tie"

    return ShapleyResult(
        r2_empty=r2_empty,
        r2_depth=fit_depth.r2,
        r2_width=fit_width.r2,
        r2_full=fit_full.r2,
        s_depth=s_depth,
        s_width=s_width,
        dominant=dominant,
        n_cells=n,
        n_excluded=excluded,
        width_predictor=WidthPredictor(width_predictor).value,
        constant_response=fit_full.constant_response,
    )


def gain_trend(cells: Sequence[CellMetrics]) -> Dict[str, int]:
    """Counts adjacent cell pairs along depth and along width whose gain increases."""
    gains = {c.cell: c.gain for c in cells}
    depths = sorted({c.depth for c in cells})
    widths = sorted({c.width for c in cells})
    out = {"depth_pairs": 0, "depth_increasing": 0, "width_pairs": 0, "width_increasing": 0}
    for w in widths:
        for a, b in zip(depths, depths[1:]):
            ga, gb = gains.get((a, w)), gains.get((b, w))
            if ga is not None and gb is not None:
                out["depth_pairs"] += 1
                out["depth_increasing"] += int(gb > ga)
    for d in depths:
        for a, b in zip(widths, widths[1:]):
            ga, gb = gains.get((d, a)), gains.get((d, b))
            if ga is not None and gb is not None:
                out["width_pairs"] += 1
                out["width_increasing"] += int(gb > ga)
    return out


CELL_TABLE_COLUMNS = [
    "depth",
    "width",
    "width_value",
    "n",
    "n_single",
    "n_multi",
    "n_failed",
    "n_agents",
    "single_score",
    "multi_score",
    "gain",
    "single_standard",
    "multi_standard",
    "single_quality",
    "multi_quality",
]


def _csv_value(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_cell_table(cells: Sequence[CellMetrics], path: str) -> None:
    lines = [",".join(CELL_TABLE_COLUMNS)]
    for c in cells:
        lines.append(",".join(_csv_value(getattr(c, col)) for col in CELL_TABLE_COLUMNS))
    fsspec_utils.write_text(path, "\n".join(lines) + "\n")


HEATMAP_VALUES = ("gain", "single_score", "multi_score")


def cell_matrix(cells: Sequence[CellMetrics], value: str = "gain") -> Tuple[List[int], List[int], List[List]]:
    """(depths, widths, rows) with rows indexed by depth; missing cells are None."""
    if value not in HEATMAP_VALUES:
        raise ParameterError(f"heatmap value must be one of {HEATMAP_VALUES}, got {value!r}")
    lookup = {c.cell: getattr(c, value) for c in cells}
    depths = sorted({c.depth for c in cells})
    widths = sorted({c.width for c in cells})
    rows = [[lookup.get((d, w)) for w in widths] for d in depths]
    return depths, widths, rows


def emit_heatmap(cells: Sequence[CellMetrics], path: str, value: str = "gain") -> Tuple[str, str]:
    """
    Writes `{path}.csv` (rows are depths, columns widths) and `{path}.svg`. Returns both paths.
    """
    if not cells:
        raise ParameterError("no cells to plot")
    depths, widths, rows = cell_matrix(cells, value)
    csv_path, svg_path = f"{path}.csv", f"{path}.svg"
    fsspec_utils.write_text(csv_path, visualization.matrix_csv(rows, depths, widths))
    title = {"gain": "performance gain", "single_score": "single agent", "multi_score": "multi agent"}[value]
    fsspec_utils.write_text(svg_path, visualization.heatmap_svg(rows, depths, widths, title=title))
    return csv_path, svg_path


@dataclass
class AnalysisArtifacts:
    paths: List[str] = field(default_factory=list)
    shapley: Optional[ShapleyResult] = None
    trend: Dict[str, int] = field(default_factory=dict)
