import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import dwlab
from dwlab import metrics
from dwlab.debate.runner import RECORDS_FILE, ResultRecord, load_records
from dwlab.errors import ParameterError, UsageError
from dwlab.logging import WandbConfig, log_metrics, print_table
from dwlab.utils import cli_utils, fsspec_utils


logger = logging.getLogger(__name__)

CELL_METRICS_FILE = "cell_metrics.csv"
SHAPLEY_FILE = "shapley.json"

dwlab.config.register_enum_codec(metrics.WidthPredictor)


@dataclass
class AnalyzeConfig:
    run: Optional[str] = None
    """a run directory holding records.jsonl"""
    out: Optional[str] = None
    """defaults to {run}/analysis"""
    scores: Optional[str] = None
    """a scores.jsonl from `dwlab score` whose composite scores replace the recorded ones"""
    width_predictor: metrics.WidthPredictor = metrics.WidthPredictor.LEVEL
    n_agents: Optional[int] = None
    """agent count for the top-level artifacts when the run holds several; the smallest by default"""
    wandb: WandbConfig = field(default_factory=WandbConfig)


def apply_scores(records: Sequence[ResultRecord], scores_path: str) -> List[ResultRecord]:
    scores = {(s["task_id"], s["system"], s["n_agents"]): s for s in fsspec_utils.iter_jsonl(scores_path)}
    out = []
    for r in records:
        s = scores.get(r.key)
        if s is not None and r.ok:
            r = ResultRecord.from_dict(r.to_dict())  # type: ignore[attr-defined]
            r.score, r.standard, r.quality = s["composite"], s["standard"], s["quality"]
        out.append(r)
    return out


def analyze_records(
    records: Sequence[ResultRecord],
    out_dir: str,
    width_predictor: metrics.WidthPredictor = metrics.WidthPredictor.LEVEL,
    n_agents: Optional[int] = None,
) -> metrics.AnalysisArtifacts:
    """Writes the cell table, the gain and multi-agent heatmaps and, with enough cells, the Shapley split."""
    cells = metrics.aggregate_cells(records, n_agents=n_agents)
    if not cells:
        raise UsageError("no records to analyze")
    fsspec_utils.mkdirs(out_dir)

    artifacts = metrics.AnalysisArtifacts()
    table_path = fsspec_utils.join(out_dir, CELL_METRICS_FILE)
    metrics.write_cell_table(cells, table_path)
    artifacts.paths.append(table_path)
    for value, name in (("gain", "gain_heatmap"), ("multi_score", "multi_score_heatmap")):
        artifacts.paths.extend(metrics.emit_heatmap(cells, fsspec_utils.join(out_dir, name), value=value))

    artifacts.trend = metrics.gain_trend(cells)
    try:
        artifacts.shapley = metrics.shapley_scores(cells, width_predictor)
    except ParameterError as e:
        logger.warning(f"skipping the Shapley decomposition: {e}")
    if artifacts.shapley is not None:
        shapley_path = fsspec_utils.join(out_dir, SHAPLEY_FILE)
        payload: Dict = artifacts.shapley.to_dict()  # type: ignore[attr-defined]
        payload["trend"] = artifacts.trend
        fsspec_utils.write_json(shapley_path, payload)
        artifacts.paths.append(shapley_path)

    print_table(
        f"cells ({out_dir})",
        ["depth", "width", "n", "single", "multi", "gain"],
        [[c.depth, c.width, c.n, c.single_score, c.multi_score, c.gain] for c in cells],
    )
    for c in cells:
        log_metrics(
            {"single": c.single_score, "multi": c.multi_score, "gain": c.gain}, prefix=f"cell/{c.depth}x{c.width}"
        )
    return artifacts


def main(config: AnalyzeConfig):
    if config.run is None:
        raise UsageError("--run is required")
    records_path = fsspec_utils.join(config.run, RECORDS_FILE)
    if not fsspec_utils.exists(records_path):
        raise UsageError(f"no {RECORDS_FILE} in {config.run}")
    out_dir = config.out or fsspec_utils.join(config.run, "analysis")
    fsspec_utils.ensure_write_once(fsspec_utils.join(out_dir, CELL_METRICS_FILE))

    records = load_records(records_path)
    if config.scores is not None:
        records = apply_scores(records, config.scores)
    families = sorted({r.family for r in records})
    if len(families) > 1:
        raise UsageError(f"records mix task families {families}; analyze one family at a time")

    config.wandb.init(hparams=config)
    counts = metrics.agent_counts(records)
    top = config.n_agents if config.n_agents is not None else (counts[0] if counts else None)
    if config.n_agents is not None and config.n_agents not in counts:
        raise UsageError(f"no multi-agent records with {config.n_agents} agents; the run has {counts}")

    artifacts = analyze_records(records, out_dir, config.width_predictor, n_agents=top)
    if len(counts) > 1:
        for n in counts:
            analyze_records(records, fsspec_utils.join(out_dir, f"agents_{n}"), config.width_predictor, n_agents=n)

    cli_utils.write_manifest(out_dir, "analyze", config, {"agent_counts": counts, "top_level_agents": top})
    if artifacts.shapley is not None:
        s = artifacts.shapley
        print_table(
            "Shapley decomposition of R²",
            ["R² depth", "R² width", "R² full", "S depth", "S width", "dominant"],
            [[s.r2_depth, s.r2_width, s.r2_full, s.s_depth, s.s_width, s.dominant]],
        )
        log_metrics({"s_depth": s.s_depth, "s_width": s.s_width, "r2_full": s.r2_full}, prefix="shapley")
    config.wandb.finish()
    return artifacts


if __name__ == "__main__":
    dwlab.config.main(main)()
