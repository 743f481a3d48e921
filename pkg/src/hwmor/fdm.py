"""Finite-difference valuation of rate instruments on the short-rate PDE.

The value function satisfies

    dV/dt + (a(t) - b r) dV/dr + sigma^2/2 d2V/dr2 - r V = 0.

Space is discretized on M uniform nodes with central differences for the
diffusion term and first-order upwinding for the convection term (backward
difference where a - b r > 0, forward difference otherwise), giving a
tridiagonal operator L. Time stepping is the one-parameter theta scheme

    (I - theta dt L) V[n+1] = (I + (1-theta) dt L) V[n],

theta = 1/2 by default. The march starts from the known principal value at
step zero and advances through remaining time, which for this equation
reproduces maturity-anchored induction; zero-gradient boundary rows
(V[0] = V[1], V[M-1] = V[M-2]) close the system at the domain cut-offs.
Coupons are deposited into the solution vector after the solve on their
payment steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .calibration import ParameterGroup
from .errors import (
    DegenerateDomain,
    ScheduleMismatch,
    SolveFailure,
    ValidationError,
)

DAY_COUNT = 360  # days per year on the pricing clock


@dataclass(frozen=True)
class RateGrid:
    """Uniform short-rate grid between the domain cut-offs."""

    points: np.ndarray  # (M,), ascending
    spacing: float

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def lower(self) -> float:
        return float(self.points[0])

    @property
    def upper(self) -> float:
        return float(self.points[-1])


def build_rate_grid(
    sigma: float,
    r_sp: float,
    maturity: float,
    M: int,
    window: tuple[float, float] | None = None,
) -> RateGrid:
    """Locate the domain cut-offs and mesh them with M nodes.

    Without an explicit window the cut-offs are r_sp +/- 7 sigma sqrt(T),
    which collapses for sigma = 0 (DegenerateDomain). A window such as
    (-0.1, 0.1) overrides the rule and is what the scenario pipeline uses so
    every scenario shares one grid.
    """
    if M < 3:
        raise ValidationError(f"need at least 3 grid points, got {M}")
    if window is not None:
        lo, hi = float(window[0]), float(window[1])
    else:
        half = 7.0 * sigma * np.sqrt(maturity)
        if half <= 0.0:
            raise DegenerateDomain(
                "domain cut-offs collapse for sigma = 0; pass an explicit window"
            )
        lo, hi = r_sp - half, r_sp + half
    if not lo < hi:
        raise DegenerateDomain(f"empty rate domain [{lo}, {hi}]")
    points = np.linspace(lo, hi, M)
    return RateGrid(points, float(points[1] - points[0]))


@dataclass(frozen=True)
class TridiagonalMatrix:
    """Tridiagonal operator stored as its three diagonals."""

    lower: np.ndarray  # (M-1,), subdiagonal
    diag: np.ndarray   # (M,)
    upper: np.ndarray  # (M-1,), superdiagonal

    @property
    def size(self) -> int:
        return self.diag.size

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[:-1] += self.upper * v[1:]
        out[1:] += self.lower * v[:-1]
        return out

    def banded(self) -> np.ndarray:
        """(3, M) layout accepted by scipy.linalg.solve_banded."""
        ab = np.zeros((3, self.size))
        ab[0, 1:] = self.upper
        ab[1, :] = self.diag
        ab[2, :-1] = self.lower
        return ab

    def to_dense(self) -> np.ndarray:
        return (
            np.diag(self.diag)
            + np.diag(self.upper, 1)
            + np.diag(self.lower, -1)
        )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        try:
            return scipy.linalg.solve_banded((1, 1), self.banded(), rhs)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SolveFailure(f"tridiagonal solve failed: {exc}") from None


def _operator_diagonals(grid: RateGrid, b: float, sigma: float, a_value: float):
    """Diagonals of the spatial operator L for one drift bucket value."""
    r = grid.points
    dx = grid.spacing
    diffusion = 0.5 * sigma**2 / dx**2
    speed = a_value - b * r

    diag = np.full(grid.size, -2.0 * diffusion) - r
    lower = np.full(grid.size - 1, diffusion)
    upper = np.full(grid.size - 1, diffusion)

    pos = speed > 0.0
    diag[pos] += speed[pos] / dx
    diag[~pos] -= speed[~pos] / dx
    lower[pos[1:]] -= speed[1:][pos[1:]] / dx
    upper[~pos[:-1]] += speed[:-1][~pos[:-1]] / dx
    return lower, diag, upper


def apply_boundary_conditions(
    A: TridiagonalMatrix, rhs: np.ndarray
) -> tuple[TridiagonalMatrix, np.ndarray]:
    """Impose zero-gradient rows at both cut-offs.

    The first row becomes (-1, 1, 0, ...), the last (..., 0, 1, -1), and the
    matching right-hand side entries are set to zero.
    """
    lower = A.lower.copy()
    diag = A.diag.copy()
    upper = A.upper.copy()
    diag[0], upper[0] = -1.0, 1.0
    diag[-1], lower[-1] = -1.0, 1.0
    out = np.asarray(rhs, dtype=float).copy()
    out[0] = 0.0
    out[-1] = 0.0
    return TridiagonalMatrix(lower, diag, upper), out


def mask_boundary_rows(B: TridiagonalMatrix) -> TridiagonalMatrix:
    """Zero the first and last rows of a right-hand side operator.

    The time march never uses those two entries of B V (they are replaced by
    the boundary equations), so any projection of the step must project this
    masked operator to stay consistent with the full-order solve.
    """
    diag = B.diag.copy()
    upper = B.upper.copy()
    lower = B.lower.copy()
    diag[0] = 0.0
    upper[0] = 0.0
    diag[-1] = 0.0
    lower[-1] = 0.0
    return TridiagonalMatrix(lower, diag, upper)


def _theta_pair(
    grid: RateGrid,
    b: float,
    sigma: float,
    a_for_B: float,
    a_for_A: float,
    dt: float,
    theta: float,
) -> tuple[TridiagonalMatrix, TridiagonalMatrix]:
    lo_a, di_a, up_a = _operator_diagonals(grid, b, sigma, a_for_A)
    A = TridiagonalMatrix(-theta * dt * lo_a, 1.0 - theta * dt * di_a, -theta * dt * up_a)
    lo_b, di_b, up_b = _operator_diagonals(grid, b, sigma, a_for_B)
    w = (1.0 - theta) * dt
    B = TridiagonalMatrix(w * lo_b, 1.0 + w * di_b, w * up_b)
    A, _ = apply_boundary_conditions(A, np.zeros(grid.size))
    return A, B


def assemble_operators(
    grid: RateGrid,
    rho: ParameterGroup,
    t: float,
    dt: float,
    theta: float,
) -> tuple[TridiagonalMatrix, TridiagonalMatrix]:
    """Build the theta-scheme pair for one step from t to t + dt.

    A = I - theta dt L(t + dt) carries the zero-gradient boundary rows;
    B = I + (1 - theta) dt L(t) is returned raw (its boundary rows are
    irrelevant because the right-hand side entries are zeroed each step).
    """
    a_b = float(rho.drift.value_at(t))
    a_a = float(rho.drift.value_at(t + dt))
    return _theta_pair(grid, rho.b, rho.sigma, a_b, a_a, dt, theta)


def step(
    A: TridiagonalMatrix,
    B: TridiagonalMatrix,
    V: np.ndarray,
    coupon: np.ndarray | None = None,
) -> np.ndarray:
    """Advance one time step: solve A V' = B V, then deposit the coupon
    vector if one is due.

    To reproduce one step of the instrument march exactly, pass the
    assembled A (which carries the boundary rows) together with
    ``mask_boundary_rows(B)``; the mask plays the role of zeroing the
    boundary entries of B V."""
    out = A.solve(B.matvec(V))
    if coupon is not None:
        out = out + coupon
    return out


# --- instruments and schedules -------------------------------------------------

_KINDS = ("zero_coupon_bond", "capped_floored_floater")


@dataclass(frozen=True)
class InstrumentSpec:
    """Static terms of the priced instrument."""

    kind: str
    nominal: float = 1.0
    maturity: float = 10.0            # years
    coupon_frequency: int = 0         # payments per year, 0 = none
    cap_rate: float | None = None     # p.a.
    floor_rate: float | None = None   # p.a.
    reference_tenor: str = "3M"       # label of the proxied fixing rate

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown instrument kind {self.kind!r}")
        if self.nominal <= 0 or self.maturity <= 0:
            raise ValidationError("nominal and maturity must be positive")
        if self.kind == "capped_floored_floater":
            if self.coupon_frequency < 1:
                raise ValidationError("floater needs a positive coupon frequency")
            if self.cap_rate is None or self.floor_rate is None:
                raise ValidationError("floater needs cap_rate and floor_rate")
            if self.floor_rate > self.cap_rate:
                raise ValidationError("floor_rate exceeds cap_rate")
        elif self.coupon_frequency:
            raise ValidationError("zero-coupon bond takes no coupon frequency")

    @classmethod
    def from_json(cls, path: str | Path) -> "InstrumentSpec":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read instrument {path}: {exc}") from None
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown instrument fields {sorted(unknown)}")
        return cls(**data)

    def to_json(self, path: str | Path) -> None:
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def coupon_vector(instrument: InstrumentSpec, grid: RateGrid) -> np.ndarray | None:
    """Per-node coupon amount: the node rate collared to [floor, cap], as a
    fraction of nominal for one period. None for coupon-free instruments."""
    if instrument.coupon_frequency == 0:
        return None
    rate = np.clip(grid.points, instrument.floor_rate, instrument.cap_rate)
    return rate * instrument.nominal / instrument.coupon_frequency


@dataclass(frozen=True)
class MarchSchedule:
    """Discrete time axis for one instrument march."""

    maturity: float
    dt_days: int
    n_steps: int
    coupon_steps: frozenset[int]
    checkpoint_steps: np.ndarray  # sorted, includes 0 and n_steps
    day_count: int = DAY_COUNT

    @property
    def dt(self) -> float:
        return self.dt_days / self.day_count

    def time_at(self, step_index: int) -> float:
        return step_index * self.dt

    @property
    def checkpoint_times(self) -> np.ndarray:
        return self.checkpoint_steps * self.dt


def build_schedule(
    instrument: InstrumentSpec,
    dt_days: int = 1,
    checkpoint_days: int | None = 30,
    full_history: bool = False,
) -> MarchSchedule:
    """Lay out steps, coupon steps, and checkpoint steps for an instrument.

    All intervals must be whole multiples of the step: maturity, the coupon
    period (day_count / frequency), and the checkpoint spacing. Misalignment
    raises ScheduleMismatch rather than silently shifting a date.
    checkpoint_days=None stores only the initial and final states;
    full_history stores every step.
    """
    if dt_days < 1:
        raise ValidationError("dt_days must be a positive whole number of days")
    total_days = instrument.maturity * DAY_COUNT
    if abs(total_days - round(total_days)) > 1e-9:
        raise ScheduleMismatch(
            f"maturity {instrument.maturity}y is not a whole number of days"
        )
    total_days = int(round(total_days))
    if total_days % dt_days:
        raise ScheduleMismatch(f"{total_days} days is not a multiple of dt = {dt_days}d")
    n_steps = total_days // dt_days

    coupon_steps: frozenset[int] = frozenset()
    if instrument.coupon_frequency:
        period = DAY_COUNT / instrument.coupon_frequency
        if abs(period - round(period)) > 1e-9 or int(round(period)) % dt_days:
            raise ScheduleMismatch(
                f"coupon period {period} days does not align with dt = {dt_days}d"
            )
        period_steps = int(round(period)) // dt_days
        coupon_steps = frozenset(range(period_steps, n_steps + 1, period_steps))

    if full_history:
        checkpoints = np.arange(n_steps + 1)
    elif checkpoint_days is None:
        checkpoints = np.array([0, n_steps])
    else:
        if checkpoint_days % dt_days:
            raise ScheduleMismatch(
                f"checkpoint spacing {checkpoint_days}d does not align with dt = {dt_days}d"
            )
        stride = checkpoint_days // dt_days
        checkpoints = np.unique(np.append(np.arange(0, n_steps + 1, stride), n_steps))
    return MarchSchedule(
        instrument.maturity, dt_days, n_steps, coupon_steps, checkpoints
    )


# --- full-order march ----------------------------------------------------------


@dataclass(frozen=True)
class HdmSolution:
    """Checkpointed states of one full-order march."""

    values: np.ndarray           # (M, n_checkpoints)
    checkpoint_steps: np.ndarray
    schedule: MarchSchedule
    grid: RateGrid
    parameter_index: int = -1

    @property
    def final(self) -> np.ndarray:
        return self.values[:, -1]

    def at_time(self, t: float) -> np.ndarray:
        """State stored at march time t (must be a checkpoint)."""
        steps = self.checkpoint_steps
        target = t / self.schedule.dt
        hits = np.nonzero(np.abs(steps - target) < 1e-9)[0]
        if hits.size == 0:
            raise ValidationError(f"no checkpoint stored at t = {t}")
        return self.values[:, hits[0]]


class OperatorCache:
    """One operator pair per drift bucket pair, looked up by step index.

    The drift is piecewise constant, so operators only change when the march
    crosses a bucket boundary. Bucket membership is resolved in whole days
    (every tenor label is an integral day count on the 360-day year), which
    keeps boundary steps exact instead of trusting accumulated float time.
    """

    def __init__(
        self,
        grid: RateGrid,
        rho: ParameterGroup,
        schedule: MarchSchedule,
        theta: float,
        march: str = "forward",
    ):
        self.grid = grid
        self.rho = rho
        self.theta = theta
        self.march = march
        self.dt = schedule.dt
        self._dt_days = schedule.dt_days
        self._total_days = schedule.n_steps * schedule.dt_days
        bounds = np.rint(rho.drift.grid.times * schedule.day_count).astype(np.int64)
        self._bounds = bounds
        self._pairs: dict[tuple[int, int], tuple[TridiagonalMatrix, TridiagonalMatrix]] = {}

    def _bucket(self, day: int) -> int:
        idx = int(np.searchsorted(self._bounds, day, side="left"))
        return min(idx, self._bounds.size - 1)

    def buckets(self, n: int) -> tuple[int, int]:
        """Drift buckets sampled by (B, A) for the step from n to n+1."""
        day_b = n * self._dt_days
        day_a = day_b + self._dt_days
        if self.march == "backward":
            day_b = self._total_days - day_b
            day_a = self._total_days - day_a
        return self._bucket(day_b), self._bucket(day_a)

    def step_buckets(self, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized ``buckets`` over steps 0..n_steps-1."""
        days = np.arange(n_steps, dtype=np.int64) * self._dt_days
        days_next = days + self._dt_days
        if self.march == "backward":
            days = self._total_days - days
            days_next = self._total_days - days_next
        top = self._bounds.size - 1
        kb = np.minimum(np.searchsorted(self._bounds, days, side="left"), top)
        ka = np.minimum(np.searchsorted(self._bounds, days_next, side="left"), top)
        return kb, ka

    def pair(self, n: int) -> tuple[TridiagonalMatrix, TridiagonalMatrix]:
        key = self.buckets(n)
        hit = self._pairs.get(key)
        if hit is None:
            values = self.rho.drift.values
            hit = _theta_pair(
                self.grid, self.rho.b, self.rho.sigma,
                float(values[key[0]]), float(values[key[1]]),
                self.dt, self.theta,
            )
            self._pairs[key] = hit
        return hit


def price_instrument(
    instrument: InstrumentSpec,
    rho: ParameterGroup,
    grid: RateGrid,
    schedule: MarchSchedule,
    theta: float = 0.5,
    march: str = "forward",
) -> HdmSolution:
    """March the full-order value vector from principal to maturity.

    ``march="forward"`` (default) samples the drift at elapsed march time;
    ``"backward"`` samples it at remaining time, i.e. reverses the drift
    timeline. Both coincide for constant coefficients.
    """
    if march not in ("forward", "backward"):
        raise ValidationError(f"unknown march direction {march!r}")
    M = grid.size
    V = np.full(M, float(instrument.nominal))
    coupon = coupon_vector(instrument, grid)
    cache = OperatorCache(grid, rho, schedule, theta, march)
    banded: dict[tuple[int, int], tuple[np.ndarray, TridiagonalMatrix]] = {}

    keep = {int(s): j for j, s in enumerate(schedule.checkpoint_steps)}
    out = np.empty((M, len(keep)))
    if 0 in keep:
        out[:, keep[0]] = V

    for n in range(schedule.n_steps):
        key = cache.buckets(n)
        hit = banded.get(key)
        if hit is None:
            A, B = cache.pair(n)
            hit = (A.banded(), B)
            banded[key] = hit
        ab, B = hit
        rhs = B.matvec(V)
        rhs[0] = 0.0
        rhs[-1] = 0.0
        try:
            V = scipy.linalg.solve_banded((1, 1), ab, rhs, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SolveFailure(f"march failed at step {n}: {exc}") from None
        if coupon is not None and (n + 1) in schedule.coupon_steps:
            V = V + coupon
        j = keep.get(n + 1)
        if j is not None:
            out[:, j] = V
    if not np.all(np.isfinite(out)):
        raise SolveFailure("march produced non-finite values")
    return HdmSolution(out, schedule.checkpoint_steps.copy(), schedule, grid, rho.index)
