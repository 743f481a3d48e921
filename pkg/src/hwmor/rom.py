"""Projection-based model order reduction for the pricing march.

Snapshots are checkpointed states of full-order marches, gathered column-wise
per parameter group. A reduced basis Q keeps the d leading left singular
vectors of the snapshot matrix, where d is the smallest count whose
cumulative energy share (singular values over their sum, times 100) exceeds
the requested level. Galerkin projection of the theta-scheme pair gives

    A_d = Q^T A Q,   B_d = Q^T B Q

with B's boundary rows zeroed first (the full-order step replaces those two
equations with the boundary conditions), so a reduced march costs d x d work
per step. The error proxy is the
relative full-space residual of the reduced update,

    eps = max_n ||A Q v[n+1] - B Q v[n]|| / ||B Q v[n]||,

computed directly in full space; the projected residual Q^T R vanishes by
construction, which the test suite checks to machine precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibration import ParameterGroup
from .errors import (
    ConvergenceFailure,
    RankDeficient,
    SolveFailure,
    ValidationError,
)
from .fdm import (
    HdmSolution,
    InstrumentSpec,
    MarchSchedule,
    OperatorCache,
    RateGrid,
    TridiagonalMatrix,
    coupon_vector,
    mask_boundary_rows,
)


def truncated_svd(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD with singular values descending.

    Returns (left_vectors, singular_values, right_vectors); right singular
    vectors are returned as columns.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ValidationError("expected a two-dimensional snapshot matrix")
    try:
        u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"singular value decomposition failed: {exc}") from None
    return u, s, vt.T


@dataclass(frozen=True)
class SnapshotMatrix:
    """Checkpointed states collected from full-order solves."""

    columns: np.ndarray        # (M, total columns)
    sources: tuple[int, ...]   # parameter index per contributing solve

    def __post_init__(self):
        if len(set(self.sources)) != len(self.sources):
            raise ValidationError("duplicate parameter group in snapshot matrix")

    @classmethod
    def from_solution(cls, solution: HdmSolution) -> "SnapshotMatrix":
        return cls(np.array(solution.values), (solution.parameter_index,))

    def append(self, solution: HdmSolution) -> "SnapshotMatrix":
        if solution.parameter_index in self.sources:
            raise ValidationError(
                f"parameter group {solution.parameter_index} already in snapshot matrix"
            )
        return SnapshotMatrix(
            np.hstack([self.columns, solution.values]),
            self.sources + (solution.parameter_index,),
        )

    @property
    def n_columns(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True)
class ReducedBasis:
    """Energy-truncated left singular basis of a snapshot matrix."""

    Q: np.ndarray             # (M, d), orthonormal columns
    energies: np.ndarray      # full spectrum shares, length min(M, columns)
    d: int
    energy_level: float
    sources: tuple[int, ...] = ()

    @property
    def dim(self) -> int:
        return self.d

    @property
    def size(self) -> int:
        return self.Q.shape[0]


def build_basis(
    snapshots: SnapshotMatrix,
    energy_level: float,
    max_dim: int | None = None,
) -> ReducedBasis:
    """Truncate the snapshot SVD at the requested cumulative energy level.

    d is the smallest column count whose cumulative energy share times 100
    exceeds ``energy_level``; ``max_dim`` optionally caps it.
    """
    if not 0.0 < energy_level <= 100.0:
        raise ValidationError("energy_level must lie in (0, 100]")
    u, s, _ = truncated_svd(snapshots.columns)
    total = s.sum()
    if total <= 0.0 or not np.isfinite(total):
        raise RankDeficient("snapshot matrix has no energy")
    energies = s / total
    above = np.cumsum(energies) * 100.0 > energy_level
    d = int(np.argmax(above)) + 1 if above.any() else s.size
    if max_dim is not None:
        d = min(d, int(max_dim))
    d = max(d, 1)
    return ReducedBasis(u[:, :d].copy(), energies, d, energy_level, snapshots.sources)


def assemble_rom(
    A: TridiagonalMatrix, B: TridiagonalMatrix, Q: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Galerkin-project one operator pair onto the basis columns.

    B is projected with its boundary rows zeroed, because the full-order step
    never uses those two entries of B V; projecting the raw B would couple
    A's boundary equations to stale right-hand side data and the reduced
    march would drift away from the full one.
    """
    B = mask_boundary_rows(B)
    return Q.T @ _matmat(A, Q), Q.T @ _matmat(B, Q)


def _matmat(T: TridiagonalMatrix, X: np.ndarray) -> np.ndarray:
    out = T.diag[:, None] * X
    out[:-1] += T.upper[:, None] * X[1:]
    out[1:] += T.lower[:, None] * X[:-1]
    return out


@dataclass(frozen=True)
class RomSolution:
    """Checkpointed states of one reduced march, lifted back to full space."""

    values: np.ndarray            # (M, n_checkpoints), Q v at checkpoints
    reduced: np.ndarray           # (d, n_checkpoints)
    checkpoint_steps: np.ndarray
    schedule: MarchSchedule
    grid: RateGrid
    parameter_index: int = -1
    residual_norms: np.ndarray | None = None  # per step, when collected

    @property
    def final(self) -> np.ndarray:
        return self.values[:, -1]

    @property
    def dim(self) -> int:
        return self.reduced.shape[0]

    def at_time(self, t: float) -> np.ndarray:
        steps = self.checkpoint_steps
        target = t / self.schedule.dt
        hits = np.nonzero(np.abs(steps - target) < 1e-9)[0]
        if hits.size == 0:
            raise ValidationError(f"no checkpoint stored at t = {t}")
        return self.values[:, hits[0]]


class _ReducedCache:
    """Per bucket-pair reduced operators, plus full-space products for the
    residual when requested."""

    def __init__(self, cache: OperatorCache, Q: np.ndarray, with_residual: bool):
        self._cache = cache
        self._Q = Q
        self._with_residual = with_residual
        self._entries: dict = {}

    def entry(self, n: int):
        key = self._cache.buckets(n)
        hit = self._entries.get(key)
        if hit is None:
            A, B = self._cache.pair(n)
            AQ = _matmat(A, self._Q)
            BQ = _matmat(mask_boundary_rows(B), self._Q)
            A_d = self._Q.T @ AQ
            B_d = self._Q.T @ BQ
            try:
                stepper = np.linalg.solve(A_d, B_d)
            except np.linalg.LinAlgError as exc:
                raise SolveFailure(f"reduced operator is singular: {exc}") from None
            hit = (stepper, AQ if self._with_residual else None,
                   BQ if self._with_residual else None)
            self._entries[key] = hit
        return hit


def solve_rom(
    instrument: InstrumentSpec,
    rho: ParameterGroup,
    basis: ReducedBasis,
    grid: RateGrid,
    schedule: MarchSchedule,
    theta: float = 0.5,
    march: str = "forward",
    collect_residuals: bool = False,
) -> RomSolution:
    """March the reduced coordinates through the instrument schedule.

    Mirrors the full-order march: same schedule, operators projected per
    drift bucket, coupons deposited after the solve in reduced coordinates.
    With ``collect_residuals`` the full-space relative residual of every
    linear step (before coupon deposit) is stored, at O(M d) extra cost per
    step; leave it off on the pure evaluation path, where runs of steps
    sharing one operator pair collapse into a single d x d matrix power.
    """
    Q = basis.Q
    if Q.shape[0] != grid.size:
        raise ValidationError("basis and grid sizes differ")
    cache = OperatorCache(grid, rho, schedule, theta, march)
    reduced_cache = _ReducedCache(cache, Q, collect_residuals)

    nominal = np.full(grid.size, float(instrument.nominal))
    v = Q.T @ nominal
    coupon = coupon_vector(instrument, grid)
    coupon_d = None if coupon is None else Q.T @ coupon

    keep = {int(s): j for j, s in enumerate(schedule.checkpoint_steps)}
    red = np.empty((basis.d, len(keep)))
    if 0 in keep:
        red[:, keep[0]] = v
    norms = np.empty(schedule.n_steps) if collect_residuals else None

    if collect_residuals:
        for n in range(schedule.n_steps):
            stepper, AQ, BQ = reduced_cache.entry(n)
            v_next = stepper @ v
            residual = AQ @ v_next - BQ @ v
            den = float(np.linalg.norm(BQ @ v))
            norms[n] = float(np.linalg.norm(residual)) / max(den, 1e-300)
            if coupon_d is not None and (n + 1) in schedule.coupon_steps:
                v_next = v_next + coupon_d
            v = v_next
            j = keep.get(n + 1)
            if j is not None:
                red[:, j] = v
    else:
        powers: dict = {}
        for start, length, key in _segments(cache, schedule, keep):
            power = powers.get((key, length))
            if power is None:
                stepper = reduced_cache.entry(start)[0]
                power = np.linalg.matrix_power(stepper, length)
                powers[(key, length)] = power
            v = power @ v
            end = start + length
            if coupon_d is not None and end in schedule.coupon_steps:
                v = v + coupon_d
            j = keep.get(end)
            if j is not None:
                red[:, j] = v

    if not np.all(np.isfinite(red)):
        raise SolveFailure("reduced march produced non-finite values")
    return RomSolution(
        Q @ red,
        red,
        schedule.checkpoint_steps.copy(),
        schedule,
        grid,
        rho.index,
        norms,
    )


def _segments(cache: OperatorCache, schedule: MarchSchedule, keep: dict):
    """Split the march into runs of steps with a shared operator pair.

    A run also breaks wherever its end step deposits a coupon or stores a
    checkpoint, so applying the run as one matrix power leaves the schedule
    semantics unchanged. Yields (start_step, length, bucket_key) triples.
    """
    n_steps = schedule.n_steps
    kb, ka = cache.step_buckets(n_steps)
    cut = np.zeros(n_steps, dtype=bool)
    cut[-1] = True
    changed = (kb[1:] != kb[:-1]) | (ka[1:] != ka[:-1])
    cut[:-1] |= changed
    for s in schedule.coupon_steps:
        if 1 <= s <= n_steps:
            cut[s - 1] = True
    for s in keep:
        if 1 <= s <= n_steps:
            cut[s - 1] = True
    ends = np.nonzero(cut)[0]
    start = 0
    for e in ends:
        yield start, int(e) - start + 1, (int(kb[start]), int(ka[start]))
        start = int(e) + 1


def residual_estimator(
    A: TridiagonalMatrix,
    B: TridiagonalMatrix,
    Q: np.ndarray,
    trajectory: np.ndarray,
    aggregation: str = "max",
) -> float:
    """Relative full-space residual of a reduced trajectory under one
    constant operator pair.

    ``trajectory`` holds reduced states column-wise, consecutive steps of a
    coupon-free march. ``aggregation`` is ``"max"`` over steps (default) or
    ``"rms"``.
    """
    trajectory = np.asarray(trajectory, dtype=float)
    if trajectory.ndim != 2 or trajectory.shape[1] < 2:
        raise ValidationError("trajectory needs at least two reduced states")
    AQ = _matmat(A, Q)
    BQ = _matmat(mask_boundary_rows(B), Q)
    residuals = AQ @ trajectory[:, 1:] - BQ @ trajectory[:, :-1]
    nums = np.linalg.norm(residuals, axis=0)
    dens = np.maximum(np.linalg.norm(BQ @ trajectory[:, :-1], axis=0), 1e-300)
    return aggregate_residuals(nums / dens, aggregation)


def aggregate_residuals(ratios: np.ndarray, aggregation: str = "max") -> float:
    if aggregation == "max":
        return float(np.max(ratios))
    if aggregation == "rms":
        return float(np.sqrt(np.mean(np.square(ratios))))
    raise ValidationError(f"unknown residual aggregation {aggregation!r}")


# --- persistence (.rob container) ----------------------------------------------

_ROB_DTYPE = "<f8"


def save_basis(basis: ReducedBasis, path: str | Path, extra_meta: dict | None = None) -> None:
    """Write a basis as one JSON header line plus the raw little-endian
    float64 column-major payload of Q."""
    header = {
        "M": int(basis.size),
        "d": int(basis.d),
        "energy_level": float(basis.energy_level),
        "energies": [float(e) for e in basis.energies],
        "sources": [int(i) for i in basis.sources],
        "dtype": _ROB_DTYPE,
        "order": "F",
    }
    if extra_meta:
        header.update(extra_meta)
    payload = np.asfortranarray(basis.Q, dtype=_ROB_DTYPE).tobytes(order="F")
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        fh.write(payload)


def load_basis(path: str | Path) -> tuple[ReducedBasis, dict]:
    """Read a .rob container; returns the basis and its full header."""
    raw = Path(path).read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise ValidationError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:cut].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: bad header: {exc}") from None
    M, d = int(header["M"]), int(header["d"])
    payload = raw[cut + 1:]
    expected = M * d * 8
    if len(payload) != expected:
        raise ValidationError(
            f"{path}: payload holds {len(payload)} bytes, expected {expected}"
        )
    Q = np.frombuffer(payload, dtype=_ROB_DTYPE).reshape((M, d), order="F").copy()
    basis = ReducedBasis(
        Q,
        np.array(header.get("energies", []), dtype=float),
        d,
        float(header.get("energy_level", 100.0)),
        tuple(int(i) for i in header.get("sources", ())),
    )
    return basis, header
