"""Scenario valuation tables, percentile reports, and benchmarks.

Every simulated curve contributes one instrument value per horizon: its
march is evaluated at the curve's own spot rate (the first tenor point) by
linear interpolation on the rate grid. Percentiles follow the nearest-rank
convention on the ascending sort, rank ceil(q/100 * s) with 1-based ranks:
favorable, moderate, and unfavorable scenarios sit at the 90th, 50th, and
10th percentile.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import ParameterSpace
from .errors import OutOfDomain, ValidationError
from .fdm import (
    HdmSolution,
    InstrumentSpec,
    MarchSchedule,
    RateGrid,
    build_schedule,
    price_instrument,
)
from .market_data import PipelineConfig
from .rom import ReducedBasis, RomSolution, solve_rom


def extract_spot_value(
    solution: HdmSolution | RomSolution,
    r_sp: float,
    grid: RateGrid | None = None,
    at_time: float | None = None,
) -> float:
    """Interpolate a marched state at the scenario's spot rate.

    Uses the final state unless ``at_time`` names an earlier stored
    checkpoint. Spot rates outside the grid raise OutOfDomain rather than
    extrapolating.
    """
    grid = grid if grid is not None else solution.grid
    if not grid.lower <= r_sp <= grid.upper:
        raise OutOfDomain(
            f"spot rate {r_sp} outside the grid [{grid.lower}, {grid.upper}]"
        )
    state = solution.final if at_time is None else solution.at_time(at_time)
    return float(np.interp(r_sp, grid.points, state))


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """q-th percentile of an ascending sample by the nearest-rank rule."""
    s = sorted_values.size
    if s == 0:
        raise ValidationError("empty sample")
    rank = int(np.ceil(q / 100.0 * s))
    return float(sorted_values[max(rank, 1) - 1])


@dataclass(frozen=True)
class ScenarioReport:
    """Percentile summary of one horizon's scenario values."""

    favorable: float      # 90th percentile
    moderate: float       # 50th percentile
    unfavorable: float    # 10th percentile
    n_scenarios: int
    horizon: float | None = None   # years, when known
    engine: str = ""
    percentile_ranks: tuple[int, int, int] = (90, 50, 10)

    def to_dict(self) -> dict:
        return {
            "favorable": self.favorable,
            "moderate": self.moderate,
            "unfavorable": self.unfavorable,
            "n_scenarios": self.n_scenarios,
            "horizon": self.horizon,
            "engine": self.engine,
            "percentile_ranks": list(self.percentile_ranks),
        }


def percentile_scenarios(
    values: np.ndarray, horizon: float | None = None, engine: str = ""
) -> ScenarioReport:
    """Favorable / moderate / unfavorable values of one scenario sample."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValidationError("scenario values must be a non-empty vector")
    if not np.all(np.isfinite(values)):
        raise ValidationError("scenario values contain non-finite entries")
    ordered = np.sort(values)
    return ScenarioReport(
        favorable=nearest_rank(ordered, 90),
        moderate=nearest_rank(ordered, 50),
        unfavorable=nearest_rank(ordered, 10),
        n_scenarios=values.size,
        horizon=horizon,
        engine=engine,
    )


# --- scenario evaluation ----------------------------------------------------------


@dataclass(frozen=True)
class ScenarioTable:
    """Instrument values for every scenario and reporting horizon."""

    horizons: tuple[float, ...]
    values: np.ndarray       # (s, n_horizons)
    spot_rates: np.ndarray   # (s,)
    engine: str
    timings: dict

    def report(self, horizon: float) -> ScenarioReport:
        j = self.horizons.index(horizon)
        return percentile_scenarios(self.values[:, j], horizon, self.engine)

    def reports(self) -> list[ScenarioReport]:
        return [self.report(h) for h in self.horizons]


def default_horizons(maturity: float) -> tuple[float, ...]:
    """Mid-term and final reporting horizons: 5 years when the instrument
    lives at least that long, always the maturity itself."""
    return (5.0, maturity) if maturity > 5.0 else (maturity,)


def evaluate_scenarios(
    space: ParameterSpace,
    instrument: InstrumentSpec,
    grid: RateGrid,
    schedule: MarchSchedule,
    engine: str = "hdm",
    basis: ReducedBasis | None = None,
    horizons: Sequence[float] | None = None,
    theta: float = 0.5,
    march: str = "forward",
    horizon_mode: str = "checkpoint",
    spot_rates: np.ndarray | None = None,
    workers: int = 1,
) -> ScenarioTable:
    """Value the instrument for every parameter group of the space.

    ``horizon_mode="checkpoint"`` reads intermediate horizons off the single
    march's stored checkpoints; ``"rerun"`` prices a shortened copy of the
    instrument per horizon instead. ROM evaluation requires a basis and skips
    residual collection entirely. ``workers`` > 1 prices scenarios on a thread
    pool; the banded solves drop the interpreter lock, so this scales.
    """
    if engine not in ("hdm", "rom"):
        raise ValidationError(f"unknown engine {engine!r}")
    if engine == "rom" and basis is None:
        raise ValidationError("rom engine requires a reduced basis")
    if horizon_mode not in ("checkpoint", "rerun"):
        raise ValidationError(f"unknown horizon mode {horizon_mode!r}")
    raw_spots = spot_rates if spot_rates is not None else space.spot_rates
    if raw_spots is None:
        raise ValidationError("need one spot rate per parameter group")
    spots = np.asarray(raw_spots, dtype=float)
    if spots.shape != (space.size,):
        raise ValidationError("need one spot rate per parameter group")
    horizons = tuple(horizons) if horizons else default_horizons(instrument.maturity)
    for h in horizons:
        if not 0.0 < h <= instrument.maturity:
            raise ValidationError(f"horizon {h}y outside (0, {instrument.maturity}]")

    def march_one(rho, inst, sched):
        if engine == "hdm":
            return price_instrument(inst, rho, grid, sched, theta, march)
        return solve_rom(inst, rho, basis, grid, sched, theta, march)

    def run_rows(fn, count):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(fn, range(count)))
        else:
            for i in range(count):
                fn(i)

    values = np.empty((space.size, len(horizons)))
    start = time.perf_counter()
    if horizon_mode == "checkpoint":

        def price_row(i):
            sol = march_one(space.group(i), instrument, schedule)
            for j, h in enumerate(horizons):
                at = None if h == instrument.maturity else h
                values[i, j] = extract_spot_value(sol, spots[i], grid, at_time=at)

        run_rows(price_row, space.size)
    else:
        for j, h in enumerate(horizons):
            inst = (
                instrument
                if h == instrument.maturity
                else _shortened(instrument, h)
            )
            sched = (
                schedule
                if h == instrument.maturity
                else build_schedule(inst, schedule.dt_days, checkpoint_days=None)
            )

            def price_row(i, inst=inst, sched=sched, j=j):
                sol = march_one(space.group(i), inst, sched)
                values[i, j] = extract_spot_value(sol, spots[i], grid)

            run_rows(price_row, space.size)
    total = time.perf_counter() - start

    timings = {
        "total_seconds": total,
        "per_solve_seconds": total / max(space.size, 1),
        "engine": engine,
    }
    return ScenarioTable(horizons, values, spots, engine, timings)


def _shortened(instrument: InstrumentSpec, maturity: float) -> InstrumentSpec:
    return InstrumentSpec(
        instrument.kind,
        instrument.nominal,
        maturity,
        instrument.coupon_frequency,
        instrument.cap_rate,
        instrument.floor_rate,
        instrument.reference_tenor,
    )


def save_values(table: ScenarioTable, path: str | Path) -> None:
    """Write one row per scenario: index, spot rate, value per horizon."""
    header = ["scenario", "spot_rate"] + [f"value_{h:g}y" for h in table.horizons]
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(table.values.shape[0]):
            cells = [str(i), repr(float(table.spot_rates[i]))]
            cells += [repr(float(v)) for v in table.values[i]]
            fh.write(",".join(cells) + "\n")


def save_report(
    reports: Sequence[ScenarioReport],
    path: str | Path,
    timings: dict | None = None,
    metadata: dict | None = None,
) -> None:
    data = {
        "scenarios": [r.to_dict() for r in reports],
        "timings": timings or {},
        "metadata": metadata or {},
    }
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- benchmark ----------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkResult:
    strategy: str
    n_scenarios: int
    grid_size: int
    basis_dim: int
    iterations: int
    t_q_seconds: float              # training wall time (basis construction)
    hdm_per_solve: float            # median of repeated single solves
    rom_per_solve: float
    hdm_total_extrapolated: float   # per-solve median times s
    rom_total: float                # measured full evaluation
    per_solve_ratio: float          # rom / hdm
    speedup_end_to_end: float       # hdm_total / (t_q + rom_total)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _median_time(fn, repeats: int = 3) -> float:
    fn()  # warm caches and allocations outside the timed runs
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def benchmark(
    space: ParameterSpace,
    instrument: InstrumentSpec,
    grid: RateGrid,
    schedule: MarchSchedule,
    config: PipelineConfig,
    strategies: Sequence[str] = ("classical", "adaptive"),
    max_dim: int | None = None,
    theta: float = 0.5,
    march: str = "forward",
) -> list[BenchmarkResult]:
    """Time training and evaluation for each strategy on one instrument.

    Per-solve numbers are medians of three timed runs after a warm-up; the
    full-order total is that median extrapolated to all scenarios, while the
    reduced total is a genuine full evaluation. The end-to-end speedup
    charges the basis construction to the reduced pipeline.
    """
    from .greedy import adaptive_greedy, classical_greedy, instrument_solvers

    pricer, rom_solver = instrument_solvers(instrument, grid, schedule, theta, march)
    results = []
    for strategy in strategies:
        if strategy not in ("classical", "adaptive"):
            raise ValidationError(f"unknown strategy {strategy!r}")
        t0 = time.perf_counter()
        if strategy == "classical":
            basis, trace = classical_greedy(space, config, pricer, rom_solver, max_dim)
        else:
            basis, trace, _ = adaptive_greedy(space, config, pricer, rom_solver, max_dim)
        t_q = time.perf_counter() - t0

        probe = space.group(0)
        hdm_per = _median_time(
            lambda: price_instrument(instrument, probe, grid, schedule, theta, march)
        )
        rom_per = _median_time(
            lambda: solve_rom(instrument, probe, basis, grid, schedule, theta, march)
        )
        rom_table = evaluate_scenarios(
            space, instrument, grid, schedule, "rom", basis, theta=theta, march=march
        )
        rom_total = rom_table.timings["total_seconds"]
        hdm_total = hdm_per * space.size
        results.append(
            BenchmarkResult(
                strategy=strategy,
                n_scenarios=space.size,
                grid_size=grid.size,
                basis_dim=basis.d,
                iterations=len(trace.records),
                t_q_seconds=t_q,
                hdm_per_solve=hdm_per,
                rom_per_solve=rom_per,
                hdm_total_extrapolated=hdm_total,
                rom_total=rom_total,
                per_solve_ratio=rom_per / hdm_per if hdm_per > 0 else float("inf"),
                speedup_end_to_end=hdm_total / (t_q + rom_total),
            )
        )
    return results


def save_benchmark(results: Sequence[BenchmarkResult], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True) + "\n"
    )
