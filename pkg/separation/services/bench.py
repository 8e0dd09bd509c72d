"""
Seed-grid benchmark: generate → separate → score.

A grid is written as `key=value` pairs separated by semicolons, e.g.

    sources=3;dist=uniform;samples=100000;cond=20;seeds=10

`seeds` is either a count (0..k−1) or a comma list. One row is produced per
(seed, case); when both cases run, `case_agreement` holds the Amari index
between their two solutions for that seed.

Columns:
    seed, case, converged, iterations, warm_start_steps, amari, amari_nongaussian,
    order, coordinate_order, runtime, warm_stationarity, final_stationarity,
    cost_case1, cost_case2, case_agreement, error

amari and the two cost columns come from evaluation.score on the centered data;
the stationarity columns are scaled residuals (newton.scaled_stationarity).
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
import logging
import time

import numpy as np
import pandas as pd

from separation.exceptions import ConfigurationError, SeparationError
from separation.schemas import MixtureSpec, SolverConfig, parse_warm_start
from separation.services.cost_kurtosis import get_cost_model
from separation.services.evaluation import agreement, generate_mixture, partial_amari_index, score
from separation.services.moments import center
from separation.services.newton import PHASE_NEWTON, coordinate_convergence_order, evaluate, run

logger = logging.getLogger(__name__)

DEFAULT_GRID = "sources=3;dist=uniform;samples=100000;cond=20;seeds=10"

BENCH_COLUMNS = [
    "seed", "case", "converged", "iterations", "warm_start_steps", "amari", "amari_nongaussian",
    "order", "coordinate_order", "runtime", "warm_stationarity", "final_stationarity",
    "cost_case1", "cost_case2", "case_agreement", "error",
]


@dataclass(frozen=True)
class BenchGrid:
    sources: int
    distributions: List[str]
    samples: int
    condition: float
    seeds: List[int]

    def mixture(self, seed: int) -> MixtureSpec:
        return MixtureSpec(
            n_sources=self.sources,
            distributions=self.distributions,
            condition=self.condition,
            samples=self.samples,
            seed=seed,
        )


def parse_grid(text: str = DEFAULT_GRID) -> BenchGrid:
    """
    Parse a grid specification; missing keys take DEFAULT_GRID's values.

    Raises:
        ConfigurationError: unknown key or malformed value.
    """
    values: Dict[str, str] = {}
    for source in (DEFAULT_GRID, text or ""):
        for part in source.split(";"):
            if not part.strip():
                continue
            if "=" not in part:
                raise ConfigurationError(f"Grid entry '{part}' is not key=value")
            key, value = (item.strip() for item in part.split("=", 1))
            if key not in ("sources", "dist", "samples", "cond", "seeds"):
                raise ConfigurationError(f"Unknown grid key '{key}'")
            values[key] = value
    try:
        seeds_text = values["seeds"]
        seeds = [int(s) for s in seeds_text.split(",")] if "," in seeds_text else list(range(int(seeds_text)))
        grid = BenchGrid(
            sources=int(values["sources"]),
            distributions=[d.strip() for d in values["dist"].split(",") if d.strip()],
            samples=int(values["samples"]),
            condition=float(values["cond"]),
            seeds=seeds,
        )
    except ValueError as exc:
        raise ConfigurationError(f"Malformed grid '{text}': {exc}") from None
    if grid.sources < 2 or not grid.seeds:
        raise ConfigurationError("A grid needs at least 2 sources and 1 seed")
    # validate names and lengths once, up front
    try:
        grid.mixture(grid.seeds[0])
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    return grid


def _stationarity(case: str, C: np.ndarray, x) -> Optional[float]:
    try:
        return evaluate(C, x, get_cost_model(case)).stationarity
    except SeparationError:
        return None


def run_bench(
    grid: BenchGrid,
    cases: Sequence[str] = ("case1",),
    order_fit: bool = False,
    warm_start: Optional[str] = None,
    base_config: Optional[SolverConfig] = None,
) -> pd.DataFrame:
    """
    Run every (seed, case) of the grid sequentially and collect one row each.

    Args:
        grid: parsed grid
        cases: cost cases to run per seed
        order_fit: also fill `order` and `coordinate_order`
        warm_start: "off" or "<steps>:<rate>[:<tol>]"; the base config's when None
        base_config: solver config the per-run overrides start from
    """
    base = base_config or SolverConfig.from_settings()
    overrides = {"keep_history": order_fit}
    if warm_start is not None:
        overrides["warm_start"] = parse_warm_start(warm_start)
    rows = []
    for seed in grid.seeds:
        spec = grid.mixture(seed)
        x, A, _ = generate_mixture(spec)
        x_centered = center(x)
        non_gaussian = [j for j, name in enumerate(spec.distributions) if name != "gaussian"]
        solutions = {}
        for case in cases:
            cfg = base.model_copy(update={**overrides, "cost_case": case, "seed": seed})
            started = time.perf_counter()
            result = run(x, cfg=cfg)
            runtime = time.perf_counter() - started

            report = score(result.C_final, A, x_centered)
            newton = result.trace.phase_records(PHASE_NEWTON)
            row = {
                "seed": seed,
                "case": case,
                "converged": result.converged,
                "iterations": result.newton_iterations,
                "warm_start_steps": result.warm_start_steps,
                "amari": report.amari_index,
                "amari_nongaussian": partial_amari_index(result.C_final, A, non_gaussian) if non_gaussian else None,
                "order": result.convergence_order if order_fit else None,
                "coordinate_order": None,
                "runtime": runtime,
                "warm_stationarity": newton[0].stationarity_norm if newton else None,
                "final_stationarity": _stationarity(case, result.C_final, x_centered),
                "cost_case1": report.cost_case1,
                "cost_case2": report.cost_case2,
                "case_agreement": None,
                "error": result.error,
            }
            if order_fit and result.converged:
                newton_history = result.history[result.warm_start_steps:]
                row["coordinate_order"] = coordinate_convergence_order(newton_history)
            solutions[case] = result.C_final
            rows.append(row)
            logger.info(
                f"bench seed={seed} case={case} converged={result.converged} "
                f"iterations={row['iterations']} amari={row['amari']:.3e}"
            )
        if len(solutions) > 1:
            first, second = (solutions[c] for c in cases[:2])
            match = agreement(first, second)
            for row in rows[-len(solutions):]:
                row["case_agreement"] = match
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Per-case medians and convergence counts."""
    numeric = ["amari", "iterations", "order", "case_agreement"]
    frame = frame.assign(**{column: pd.to_numeric(frame[column], errors="coerce") for column in numeric})
    return frame.groupby("case").agg(
        runs=("seed", "count"),
        converged=("converged", "sum"),
        median_amari=("amari", "median"),
        median_iterations=("iterations", "median"),
        median_order=("order", "median"),
        median_agreement=("case_agreement", "median"),
    ).reset_index()
