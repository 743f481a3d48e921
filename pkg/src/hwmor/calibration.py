"""Short-rate drift calibration from simulated yield curves.

The short rate follows the one-factor mean-reverting dynamics

    dr(t) = (a(t) - b r(t)) dt + sigma dW(t),

with constant reversion speed b > 0 and volatility sigma, and a drift a(t)
that is piecewise constant on the tenor buckets (T[j-1], T[j]] of the curve
grid (T[0] bucket starts at zero, the last bucket extends beyond T[m]).
Zero-coupon bond prices then have the closed form

    B(t,T) = exp( -r(t) G(t,T) - L(t,T) ),
    G(t,T) = (exp(-b t) - exp(-b T)) / b,
    L(t,T) = int_t^T a(v) (1 - exp(-b(T-v)))/b dv
             - sigma^2/(2 b^2) int_t^T (1 - exp(-b(T-v)))^2 dv,

and both integrals admit exact per-bucket antiderivatives. Writing the drift
integral bucket by bucket turns -ln B(0,T_i) = y_i T_i into a lower
triangular linear system E a = F in the bucket values a_j, solved directly
or in Tikhonov-regularized normal form (E^T E + mu I) a = E^T F.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize

from .curve_sim import YieldCurveSet
from .errors import (
    CalibrationFailed,
    DomainError,
    SingularDiagonal,
    ValidationError,
)
from .market_data import TenorGrid

_DIAG_TOL = 1e-14


@dataclass(frozen=True)
class HullWhiteStatics:
    """Non-calibrated model constants."""

    b: float       # mean reversion speed, > 0
    sigma: float   # short-rate volatility, >= 0
    r0: float      # short rate at valuation time

    def __post_init__(self):
        if self.b <= 0:
            raise ValidationError(f"mean reversion b must be positive, got {self.b!r}")
        if self.sigma < 0:
            raise ValidationError(f"volatility must be non-negative, got {self.sigma!r}")


@dataclass(frozen=True)
class DriftVector:
    """Piecewise-constant drift a(t) on the tenor buckets of a grid."""

    values: np.ndarray  # (m,)
    grid: TenorGrid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.size,):
            raise ValidationError("drift needs one value per tenor bucket")

    def value_at(self, t):
        """Drift on the bucket containing t; clamps outside the grid."""
        idx = np.searchsorted(self.grid.times, t, side="left")
        idx = np.clip(idx, 0, self.grid.size - 1)
        return self.values[idx]

    @classmethod
    def constant(cls, value: float, grid: TenorGrid) -> "DriftVector":
        return cls(np.full(grid.size, float(value)), grid)


@dataclass(frozen=True)
class ParameterGroup:
    """One scenario's PDE coefficients: drift curve plus shared constants."""

    drift: DriftVector
    b: float
    sigma: float
    index: int = 0


@dataclass(frozen=True)
class ParameterSpace:
    """Calibrated drift vectors for a whole curve set."""

    drifts: np.ndarray  # (s, m)
    statics: HullWhiteStatics
    grid: TenorGrid
    mu: float
    spot_rates: np.ndarray | None = None       # first-tenor rate per scenario
    source_indices: np.ndarray | None = None   # original curve row per drift row
    failed_indices: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return self.drifts.shape[0]

    def group(self, index: int) -> ParameterGroup:
        return ParameterGroup(
            DriftVector(self.drifts[index], self.grid),
            self.statics.b,
            self.statics.sigma,
            index,
        )


def reversion_integral(b: float, t, T):
    """G(t,T) = int_t^T exp(-b z) dz = (exp(-b t) - exp(-b T)) / b."""
    return -np.exp(-b * np.asarray(t, dtype=float)) * np.expm1(-b * (np.asarray(T) - t)) / b


def variance_integral(b: float, sigma: float, t, T):
    """sigma^2/(2 b^2) * int_t^T (1 - exp(-b(T-v)))^2 dv, closed form."""
    tau = np.asarray(T, dtype=float) - t
    one_m = -np.expm1(-b * tau)       # 1 - exp(-b tau)
    one_m2 = -np.expm1(-2.0 * b * tau)
    return sigma**2 / (2.0 * b**2) * (tau - 2.0 * one_m / b + one_m2 / (2.0 * b))


def drift_weights(b: float, grid: TenorGrid, t: float, T: float) -> np.ndarray:
    """Exact integrals of (1 - exp(-b(T-v)))/b over each bucket within [t, T].

    Bucket j spans (T[j-1], T[j]] with T[-1] := 0; the last bucket absorbs
    any remainder beyond the grid horizon. Row vectors of the calibration
    matrix are this function evaluated at t = 0, T = T_i.
    """
    times = grid.times
    lows = np.concatenate([[0.0], times[:-1]])
    highs = times.copy()
    highs[-1] = max(highs[-1], T)
    alpha = np.maximum(lows, t)
    beta = np.minimum(highs, T)
    width = np.maximum(beta - alpha, 0.0)
    # int_alpha^beta (1 - e^{-b(T-v)})/b dv
    #   = [width + e^{-b(T-beta)} * expm1(-b width) / b] / b
    tail = np.exp(-b * (T - beta)) * np.expm1(-b * width) / b
    return np.where(width > 0.0, (width + tail) / b, 0.0)


def bond_price_closed_form(
    statics: HullWhiteStatics, drift: DriftVector, t: float, T: float
) -> float:
    """Zero-coupon price B(t,T) evaluated at the model's current short rate."""
    if t > T:
        raise DomainError(f"bond start {t} is after maturity {T}")
    if t == T:
        return 1.0
    weights = drift_weights(statics.b, drift.grid, t, T)
    level = float(weights @ drift.values)
    lam = level - variance_integral(statics.b, statics.sigma, t, T)
    return float(np.exp(-statics.r0 * reversion_integral(statics.b, t, T) - lam))


@dataclass(frozen=True)
class CalibrationSystem:
    """Lower-triangular system E a = F tying bucket drifts to quoted yields."""

    matrix: np.ndarray  # (m, m), lower triangular
    rhs: np.ndarray     # (m,)
    mu: float


def _system_matrix(statics: HullWhiteStatics, grid: TenorGrid) -> np.ndarray:
    rows = [drift_weights(statics.b, grid, 0.0, float(T)) for T in grid.times]
    return np.array(rows)


def _system_rhs(
    curve: np.ndarray, statics: HullWhiteStatics, grid: TenorGrid, yield_convention: str
) -> np.ndarray:
    times = grid.times
    if yield_convention == "annualized":
        log_prices = np.asarray(curve) * times
    elif yield_convention == "total":
        log_prices = np.asarray(curve, dtype=float)
    else:
        raise ValidationError(f"unknown yield convention {yield_convention!r}")
    return (
        log_prices
        - statics.r0 * reversion_integral(statics.b, 0.0, times)
        + variance_integral(statics.b, statics.sigma, 0.0, times)
    )


def assemble_calibration_system(
    curve: np.ndarray,
    statics: HullWhiteStatics,
    grid: TenorGrid,
    mu: float = 0.0,
    yield_convention: str = "annualized",
) -> CalibrationSystem:
    """Build E and F for one curve of observed (or simulated) yields.

    With mu = 0 the system is solved as-is, so a vanishing diagonal entry
    (degenerate bucket) raises SingularDiagonal; with mu > 0 regularization
    makes that harmless and no check is applied.
    """
    curve = np.asarray(curve, dtype=float)
    if curve.shape != (grid.size,):
        raise ValidationError(f"curve must have {grid.size} values")
    if mu < 0:
        raise ValidationError("tikhonov mu must be non-negative")
    matrix = _system_matrix(statics, grid)
    if mu == 0.0:
        diag = np.abs(np.diag(matrix))
        worst = int(np.argmin(diag))
        if diag[worst] < _DIAG_TOL:
            raise SingularDiagonal(worst, float(np.diag(matrix)[worst]))
    return CalibrationSystem(matrix, _system_rhs(curve, statics, grid, yield_convention), mu)


def calibrate_drift(
    curve: np.ndarray,
    statics: HullWhiteStatics,
    grid: TenorGrid,
    mu: float = 0.0,
    yield_convention: str = "annualized",
) -> DriftVector:
    """Recover bucket drifts from one yield curve.

    mu = 0 solves the triangular system exactly (the unregularized limit);
    mu > 0 solves the normal equations (E^T E + mu I) a = E^T F.
    """
    system = assemble_calibration_system(curve, statics, grid, mu, yield_convention)
    return DriftVector(_solve_system(system), grid)


def _solve_system(system: CalibrationSystem) -> np.ndarray:
    E, F = system.matrix, system.rhs
    try:
        if system.mu == 0.0:
            a = scipy.linalg.solve_triangular(E, F, lower=True)
        else:
            gram = E.T @ E + system.mu * np.eye(E.shape[0])
            a = np.linalg.solve(gram, E.T @ F)
    except np.linalg.LinAlgError as exc:
        raise CalibrationFailed(f"calibration solve failed: {exc}") from None
    if not np.all(np.isfinite(a)):
        raise CalibrationFailed("calibration produced non-finite drift values")
    return a


def default_tikhonov_mu(statics: HullWhiteStatics, grid: TenorGrid) -> float:
    """Automatic regularization weight: 1e-8 times ||E||_F^2."""
    return 1e-8 * float(np.sum(_system_matrix(statics, grid) ** 2))


def select_mu_discrepancy(system: CalibrationSystem, noise_delta: float) -> float:
    """Pick the Tikhonov weight whose fit residual matches a noise estimate.

    Solves ||E a_mu - F|| = noise_delta for mu. The residual is monotone
    increasing in mu from the least-squares residual toward ||F||, so the
    root is unique; it is found on a log scale. A noise estimate at or below
    the unregularized residual returns 0.
    """
    if noise_delta <= 0:
        raise ValidationError("noise estimate must be positive")
    U, s, _ = np.linalg.svd(system.matrix)
    c = U.T @ system.rhs
    floor2 = max(float(system.rhs @ system.rhs - c @ c), 0.0)

    def residual(mu: float) -> float:
        return float(np.sqrt(np.sum((mu / (s**2 + mu) * c) ** 2) + floor2))

    if noise_delta >= float(np.linalg.norm(system.rhs)):
        raise ValidationError("noise estimate exceeds the data norm")
    top = float(s[0] ** 2)
    lo, hi = top * 1e-16, top * 1e16
    if residual(lo) >= noise_delta:
        return 0.0
    root = scipy.optimize.brentq(
        lambda x: residual(10.0**x) - noise_delta, np.log10(lo), np.log10(hi)
    )
    return float(10.0**root)


def calibrate_all(
    curves: YieldCurveSet,
    statics: HullWhiteStatics,
    mu: float | None = None,
    yield_convention: str = "annualized",
) -> ParameterSpace:
    """Calibrate every curve in the set against a shared system matrix.

    The matrix E depends only on the grid and statics, so all right-hand
    sides are solved in one vectorized call. Rows with non-finite yields are
    dropped and recorded; more than 1% such rows aborts the run.
    """
    grid = curves.grid
    if mu is None:
        mu = default_tikhonov_mu(statics, grid)
    rates = np.asarray(curves.curves, dtype=float)
    if rates.ndim != 2 or rates.shape[1] != grid.size:
        raise ValidationError("curve set shape does not match its grid")

    ok = np.all(np.isfinite(rates), axis=1)
    failed = tuple(int(i) for i in np.nonzero(~ok)[0])
    if len(failed) > 0.01 * rates.shape[0]:
        raise CalibrationFailed(
            f"{len(failed)} of {rates.shape[0]} curves failed calibration (>1%)"
        )

    sample = assemble_calibration_system(
        np.zeros(grid.size), statics, grid, mu, yield_convention
    )
    E = sample.matrix
    times = grid.times
    if yield_convention == "annualized":
        log_prices = rates[ok] * times
    else:
        log_prices = rates[ok]
    F = (
        log_prices
        - statics.r0 * reversion_integral(statics.b, 0.0, times)
        + variance_integral(statics.b, statics.sigma, 0.0, times)
    )
    try:
        if mu == 0.0:
            drifts = scipy.linalg.solve_triangular(E, F.T, lower=True).T
        else:
            gram = E.T @ E + mu * np.eye(grid.size)
            drifts = np.linalg.solve(gram, E.T @ F.T).T
    except np.linalg.LinAlgError as exc:
        raise CalibrationFailed(f"calibration solve failed: {exc}") from None
    if not np.all(np.isfinite(drifts)):
        raise CalibrationFailed("calibration produced non-finite drift values")

    kept = np.nonzero(ok)[0]
    return ParameterSpace(drifts, statics, grid, mu, rates[ok][:, 0], kept, failed)


# --- persistence --------------------------------------------------------------


def save_params(space: ParameterSpace, path: str | Path, extra_meta: dict | None = None) -> Path:
    """Write drift rows as CSV plus a JSON sidecar with the shared statics."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(space.grid.labels) + "\n")
        for row in space.drifts:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    meta = {
        "b": space.statics.b,
        "sigma": space.statics.sigma,
        "r0": space.statics.r0,
        "mu": space.mu,
        "labels": list(space.grid.labels),
        "times": [float(t) for t in space.grid.times],
        "spot_rates": None
        if space.spot_rates is None
        else [float(v) for v in space.spot_rates],
        "failed_indices": list(space.failed_indices),
    }
    if extra_meta:
        meta.update(extra_meta)
    side = path.with_suffix(".meta.json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def load_params(path: str | Path) -> ParameterSpace:
    path = Path(path)
    side = path.with_suffix(".meta.json")
    if not side.exists():
        raise ValidationError(f"parameter sidecar {side} not found")
    meta = json.loads(side.read_text())
    with path.open() as fh:
        labels = [c.strip() for c in fh.readline().strip().split(",")]
        drifts = np.loadtxt(fh, delimiter=",", ndmin=2)
    grid = (
        TenorGrid(tuple(meta["labels"]), np.array(meta["times"], dtype=float))
        if meta.get("times")
        else TenorGrid.from_labels(labels)
    )
    statics = HullWhiteStatics(meta["b"], meta["sigma"], meta["r0"])
    spots = (
        np.array(meta["spot_rates"], dtype=float)
        if meta.get("spot_rates") is not None
        else None
    )
    return ParameterSpace(
        drifts,
        statics,
        grid,
        float(meta.get("mu", 0.0)),
        spots,
        None,
        tuple(meta.get("failed_indices", ())),
    )
