"""Training-component ablations: one toy-scale pipeline run per grid cell."""

import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence

import pandas as pd

from cpheno.config import RunConfig, apply_overrides
from cpheno.errors import ConfigError
from cpheno.evaluation.analyzer import Analyzer
from cpheno.pipeline import run_pipeline

logger = logging.getLogger(__name__)

# Grid axis -> (config key, allowed values)
AXES = {
    "init": ("vlp.init", ("scratch", "pretrained")),
    "kd": ("vlp.kd_enabled", ("on", "off")),
    "curation": ("curation.enabled", ("on", "off")),
    "kg_components": ("knowledge.kg_components", ("full", "no-def", "no-syn", "no-rel")),
}

DEFAULT_GRID = {"kd": ["on", "off"], "curation": ["on", "off"]}


def parse_grid(text: str) -> Dict[str, List[str]]:
    """
    Parse "axis=v1,v2;axis=v1" into an ordered grid

    Raises:
        ConfigError: unknown axis or value
    """
    grid = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "=" not in part:
            raise ConfigError(f"grid axis must look like axis=v1,v2: {part}")
        axis, values = part.split("=", 1)
        axis = axis.strip()
        grid[axis] = [v.strip() for v in values.split(",") if v.strip()]
    validate_grid(grid)
    return grid


def validate_grid(grid: Dict[str, Sequence[str]]):
    for axis, values in grid.items():
        if axis not in AXES:
            raise ConfigError(f"unknown ablation axis: {axis} (known: {sorted(AXES)})")
        bad = [v for v in values if v not in AXES[axis][1]]
        if bad or not values:
            raise ConfigError(f"invalid values for {axis}: {bad or 'none'}")


def grid_cells(grid: Dict[str, Sequence[str]]) -> List[Dict[str, str]]:
    axes = list(grid)
    return [dict(zip(axes, combo)) for combo in itertools.product(*(grid[a] for a in axes))]


def cell_name(cell: Dict[str, str]) -> str:
    return "_".join(f"{axis}-{value}" for axis, value in cell.items()) or "base"


def cell_config(cfg: RunConfig, cell: Dict[str, str], output_root: str) -> RunConfig:
    overrides = [f"output_root={os.path.join(output_root, cell_name(cell))}"]
    for axis, value in cell.items():
        key = AXES[axis][0]
        if value in ("on", "off"):
            value = "true" if value == "on" else "false"
        overrides.append(f"{key}={value}")
    return apply_overrides(cfg, overrides)


def _run_cell(cfg: RunConfig, cell: Dict[str, str], config_dir: Optional[str]) -> Dict[str, object]:
    run_pipeline(cfg, config_dir)
    analyzer = Analyzer.load(os.path.join(cfg.output_root, "eval", "results.json"), cell_name(cell))
    row: Dict[str, object] = dict(cell)
    row.update(analyzer.flat_metrics())
    return row


def run_ablations(
    cfg: RunConfig,
    grid: Optional[Dict[str, Sequence[str]]] = None,
    config_dir: Optional[str] = None,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Run the pipeline once per grid cell and collect the metrics

    Parameters:
        cfg (RunConfig): Shared base configuration (same seed for every cell)
        grid (dict): axis -> values over init, kd, curation and kg_components
        config_dir (str): Directory relative config paths resolve against
        workers (int): Cells run in separate processes when > 1

    Returns:
        pd.DataFrame: One row per cell, axis columns first, written to
        <output_root>/ablation/results.csv
    """
    grid = dict(grid or DEFAULT_GRID)
    validate_grid(grid)
    out_dir = os.path.join(cfg.output_root, "ablation")
    cells = grid_cells(grid)
    configs = [cell_config(cfg, cell, out_dir) for cell in cells]
    logger.info(f"Ablation grid: {len(cells)} cells over {list(grid)}")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, c, cell, config_dir) for c, cell in zip(configs, cells)]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_cell(c, cell, config_dir) for c, cell in zip(configs, cells)]

    table = pd.DataFrame(rows)
    metric_columns = [c for c in table.columns if c not in grid]
    table = table[list(grid) + metric_columns]
    os.makedirs(out_dir, exist_ok=True)
    table.to_csv(os.path.join(out_dir, "results.csv"), index=False, float_format="%.4f")
    logger.info(f"Saved ablation table to {os.path.join(out_dir, 'results.csv')}")
    return table
