"""Snapshot selection over the calibrated parameter space.

Both strategies start the snapshot matrix from parameter group 0, build a
basis, and repeatedly add the group whose reduced solve shows the largest
relative residual. They differ in how candidates are found and when they
stop:

* classical: one random candidate subset of size C is drawn up front; the
  loop stops once the worst candidate residual falls below ``eps_tol``.
* adaptive: each iteration draws C_0 fresh random candidates, scores them
  with the reduced solver, and grows the set to C in rounds of C_k by
  ranking all unseen groups with a principal-component regression surrogate
  fitted to the residuals gathered so far. The stop rule converts the worst
  residual into a predicted true error through a log-log error model

      log(e) = gamma log(eps) + log(tau),

  refitted after every enrichment from (true error, residual) pairs measured
  before and after the basis update; the loop stops once that prediction
  drops below ``e_max_tol``.

No group is solved by the full-order model twice, and every iteration adds
exactly one parameter group to the snapshot sources.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .calibration import ParameterGroup, ParameterSpace
from .errors import (
    DegenerateDesign,
    InsufficientSpace,
    NonPositiveError,
    ValidationError,
)
from .fdm import (
    HdmSolution,
    InstrumentSpec,
    MarchSchedule,
    RateGrid,
    price_instrument,
)
from .market_data import PipelineConfig
from .rom import (
    ReducedBasis,
    RomSolution,
    SnapshotMatrix,
    aggregate_residuals,
    build_basis,
    solve_rom,
)

Pricer = Callable[[ParameterGroup], HdmSolution]
RomSolver = Callable[[ParameterGroup, ReducedBasis], RomSolution]


def instrument_solvers(
    instrument: InstrumentSpec,
    grid: RateGrid,
    schedule: MarchSchedule,
    theta: float = 0.5,
    march: str = "forward",
) -> tuple[Pricer, RomSolver]:
    """Bind the full- and reduced-order solvers to one instrument setup.

    The reduced solver collects residual norms, which is what the greedy
    loops consume."""

    def pricer(rho: ParameterGroup) -> HdmSolution:
        return price_instrument(instrument, rho, grid, schedule, theta, march)

    def rom_solver(rho: ParameterGroup, basis: ReducedBasis) -> RomSolution:
        return solve_rom(
            instrument, rho, basis, grid, schedule, theta, march,
            collect_residuals=True,
        )

    return pricer, rom_solver


def relative_solution_error(hdm: HdmSolution, rom_solution: RomSolution) -> float:
    """Frobenius-relative mismatch between checkpointed trajectories."""
    ref = np.linalg.norm(hdm.values)
    return float(np.linalg.norm(hdm.values - rom_solution.values) / max(ref, 1e-300))


# --- surrogate ----------------------------------------------------------------


@dataclass(frozen=True)
class SurrogateModel:
    """Linear residual predictor fitted on z-scored drift vectors."""

    eta: np.ndarray              # (m,), coefficients on standardized predictors
    p: int                       # principal components actually used
    predictor_means: np.ndarray  # (m,)
    predictor_stds: np.ndarray   # (m,), 1.0 for dropped columns
    response_mean: float
    response_std: float
    dropped_columns: tuple[int, ...] = ()


def fit_pcr_surrogate(design: np.ndarray, responses: np.ndarray, p: int) -> SurrogateModel:
    """Principal-component regression of residuals on drift vectors.

    Both sides are z-scored; the regression runs on the leading p principal
    directions of the standardized design (capped at its numerical rank) and
    the coefficients are rotated back, so predictions are ordinary linear
    forms. Zero-variance predictor columns are dropped from the fit and get
    coefficient zero; if every column is degenerate the design carries no
    information and DegenerateDesign is raised.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(responses, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValidationError("design rows and responses must align")
    if X.shape[0] < 2:
        raise ValidationError("need at least two rows to fit a surrogate")
    if p < 1:
        raise ValidationError("component count must be positive")

    means = X.mean(axis=0)
    stds = X.std(axis=0)
    degenerate = stds < 1e-14 * np.maximum(1.0, np.abs(means))
    if degenerate.all():
        raise DegenerateDesign("every predictor column has zero variance")
    kept = ~degenerate

    safe_stds = np.where(kept, stds, 1.0)
    eta = np.zeros(X.shape[1])
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std > 0.0:
        Xs = (X[:, kept] - means[kept]) / stds[kept]
        ys = (y - y_mean) / y_std
        _, sing, vt = np.linalg.svd(Xs, full_matrices=False)
        rank = int(np.sum(sing > sing[0] * 1e-12)) if sing.size else 0
        p_eff = max(1, min(p, rank)) if rank else 0
        if p_eff:
            components = vt.T[:, :p_eff]
            scores = Xs @ components
            omega, *_ = np.linalg.lstsq(scores, ys, rcond=None)
            eta[kept] = components @ omega
        p = p_eff if p_eff else 0
    else:
        p = 0

    return SurrogateModel(
        eta,
        p,
        means,
        safe_stds,
        y_mean,
        y_std,
        tuple(int(i) for i in np.nonzero(degenerate)[0]),
    )


def evaluate_surrogate(model: SurrogateModel, space) -> np.ndarray:
    """Predicted residuals for every group of a parameter space (or a raw
    drift matrix). Predictions are on the response's original scale, so a
    zero-coefficient model returns the training mean everywhere."""
    X = np.asarray(getattr(space, "drifts", space), dtype=float)
    Xs = (X - model.predictor_means) / model.predictor_stds
    return model.response_mean + model.response_std * (Xs @ model.eta)


def default_component_count(n_rows: int, n_columns: int, p: int = 4) -> int:
    """Component count used by the adaptive loop: p capped by the design."""
    return max(1, min(p, n_rows - 1, n_columns))


# --- error model ----------------------------------------------------------------


@dataclass(frozen=True)
class ErrorModel:
    """Power-law map from residual estimate to predicted true error."""

    gamma: float    # log-log slope
    log_tau: float  # log-log intercept
    points: np.ndarray  # (k, 2) columns (error, residual)

    def predict(self, eps) -> np.ndarray | float:
        eps = np.asarray(eps, dtype=float)
        if np.any(eps <= 0):
            raise NonPositiveError("residual estimates must be positive")
        out = np.exp(self.log_tau + self.gamma * np.log(eps))
        return float(out) if out.ndim == 0 else out


def fit_error_model(pairs) -> ErrorModel:
    """Least-squares line through log(error) versus log(residual).

    ``pairs`` holds (true error, residual estimate) rows; two rows fit the
    line exactly. Any non-positive entry is meaningless in log space and
    raises NonPositiveError.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError("expected rows of (error, residual) pairs")
    if arr.shape[0] < 2:
        raise ValidationError("need at least two pairs to fit the error model")
    if np.any(arr <= 0):
        raise NonPositiveError("errors and residuals must be positive to fit in log space")
    log_e = np.log(arr[:, 0])
    log_eps = np.log(arr[:, 1])
    gamma, log_tau = np.polyfit(log_eps, log_e, 1)
    return ErrorModel(float(gamma), float(log_tau), arr.copy())


# --- traces ----------------------------------------------------------------------


@dataclass(frozen=True)
class GreedyRecord:
    iteration: int
    chosen: int
    max_eps: float
    mean_eps: float
    d: int
    predicted_error: float | None = None


@dataclass(frozen=True)
class GreedyTrace:
    strategy: str
    records: tuple[GreedyRecord, ...]
    terminated_reason: str  # "tolerance" or "max_iterations"
    seed: int

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "terminated_reason": self.terminated_reason,
            "records": [
                {
                    "iteration": r.iteration,
                    "chosen": r.chosen,
                    "max_eps": r.max_eps,
                    "mean_eps": r.mean_eps,
                    "d": r.d,
                    "predicted_error": r.predicted_error,
                }
                for r in self.records
            ],
        }


def save_trace(trace: GreedyTrace, path: str | Path, error_model: ErrorModel | None = None) -> None:
    data = trace.to_dict()
    if error_model is not None:
        data["error_model"] = {
            "gamma": error_model.gamma,
            "log_tau": error_model.log_tau,
            "points": [[float(a), float(b)] for a, b in error_model.points],
        }
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- greedy loops -----------------------------------------------------------------


def _check_space(space: ParameterSpace, C: int) -> None:
    if space.size < 2:
        raise InsufficientSpace(f"need at least 2 parameter groups, got {space.size}")
    if C > space.size:
        raise InsufficientSpace(
            f"candidate set size {C} exceeds the {space.size} available groups"
        )


def _argmax_lowest_index(scores: dict[int, float]) -> tuple[int, float]:
    best_idx, best = -1, -np.inf
    for idx in sorted(scores):
        if scores[idx] > best:
            best_idx, best = idx, scores[idx]
    return best_idx, best


def classical_greedy(
    space: ParameterSpace,
    config: PipelineConfig,
    pricer: Pricer,
    rom: RomSolver,
    max_dim: int | None = None,
    aggregation: str = "max",
) -> tuple[ReducedBasis, GreedyTrace]:
    """Greedy sampling over one fixed random candidate subset.

    Group 0 seeds the basis. Each iteration scores the not-yet-solved
    candidates with the reduced solver, records the worst residual, and
    either stops (worst <= eps_tol, returning the basis that produced the
    scores) or solves the worst group full-order and rebuilds the basis.
    """
    g = config.greedy
    _check_space(space, g.C)
    rng = np.random.default_rng(config.seed)
    candidates = sorted(int(i) for i in rng.choice(space.size, size=g.C, replace=False))

    solved = {0}
    snapshots = SnapshotMatrix.from_solution(pricer(space.group(0)))
    basis = build_basis(snapshots, config.energy_level, max_dim)

    records: list[GreedyRecord] = []
    reason = "max_iterations"
    for iteration in range(1, g.I_max):
        scores = {
            idx: aggregate_residuals(rom(space.group(idx), basis).residual_norms, aggregation)
            for idx in candidates
            if idx not in solved
        }
        if not scores:
            break
        chosen, worst = _argmax_lowest_index(scores)
        records.append(
            GreedyRecord(
                iteration, chosen, worst, float(np.mean(list(scores.values()))), basis.d
            )
        )
        if worst <= g.eps_tol:
            reason = "tolerance"
            break
        snapshots = snapshots.append(pricer(space.group(chosen)))
        solved.add(chosen)
        basis = build_basis(snapshots, config.energy_level, max_dim)

    trace = GreedyTrace("classical", tuple(records), reason, config.seed)
    return basis, trace


def adaptive_greedy(
    space: ParameterSpace,
    config: PipelineConfig,
    pricer: Pricer,
    rom: RomSolver,
    max_dim: int | None = None,
    aggregation: str = "max",
    surrogate_components: int = 4,
) -> tuple[ReducedBasis, GreedyTrace, ErrorModel | None]:
    """Greedy sampling with surrogate-assisted candidate search.

    Candidate scoring within an iteration always uses the current basis;
    the surrogate training set is scoped to the iteration so stale residuals
    never leak into the ranking. After each enrichment the (error, residual)
    pairs measured before and after the basis update extend the error model.
    """
    g = config.greedy
    _check_space(space, g.C)
    rng = np.random.default_rng(config.seed)

    solved = {0}
    snapshots = SnapshotMatrix.from_solution(pricer(space.group(0)))
    basis = build_basis(snapshots, config.energy_level, max_dim)

    error_pairs: list[tuple[float, float]] = []
    error_model: ErrorModel | None = None
    records: list[GreedyRecord] = []
    reason = "max_iterations"

    for iteration in range(1, g.I_max):
        pool = np.array(sorted(set(range(space.size)) - solved))
        if pool.size == 0:
            break
        first = rng.choice(pool.size, size=min(g.C_0, pool.size), replace=False)
        chosen_set = [int(pool[i]) for i in sorted(first)]
        scores = {
            idx: aggregate_residuals(rom(space.group(idx), basis).residual_norms, aggregation)
            for idx in chosen_set
        }

        while len(scores) < min(g.C, pool.size):
            rows = np.array(sorted(scores))
            p = default_component_count(rows.size, space.grid.size, surrogate_components)
            model = fit_pcr_surrogate(
                space.drifts[rows], np.array([scores[i] for i in rows]), p
            )
            preds = evaluate_surrogate(model, space)
            taken = set(scores) | solved
            order = np.argsort(-preds, kind="stable")  # ties resolve to lower index
            fresh = [int(i) for i in order if int(i) not in taken]
            batch = fresh[: min(g.C_k, min(g.C, pool.size) - len(scores))]
            if not batch:
                break
            for idx in batch:
                scores[idx] = aggregate_residuals(
                    rom(space.group(idx), basis).residual_norms, aggregation
                )

        chosen, worst = _argmax_lowest_index(scores)
        predicted = None
        if error_model is not None and worst > 0:
            predicted = float(error_model.predict(worst))
        records.append(
            GreedyRecord(
                iteration,
                chosen,
                worst,
                float(np.mean(list(scores.values()))),
                basis.d,
                predicted,
            )
        )
        if iteration >= 2 and predicted is not None and predicted <= g.e_max_tol:
            reason = "tolerance"
            break

        hdm = pricer(space.group(chosen))
        before = rom(space.group(chosen), basis)
        pair_before = (
            relative_solution_error(hdm, before),
            aggregate_residuals(before.residual_norms, aggregation),
        )
        snapshots = snapshots.append(hdm)
        solved.add(chosen)
        basis = build_basis(snapshots, config.energy_level, max_dim)
        after = rom(space.group(chosen), basis)
        pair_after = (
            relative_solution_error(hdm, after),
            aggregate_residuals(after.residual_norms, aggregation),
        )
        for pair in (pair_before, pair_after):
            if pair[0] > 0 and pair[1] > 0:
                error_pairs.append(pair)
        if len(error_pairs) >= 2:
            error_model = fit_error_model(error_pairs)

    trace = GreedyTrace("adaptive", tuple(records), reason, config.seed)
    return basis, trace, error_model
