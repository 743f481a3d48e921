"""Grid construction, the upwinded operators, and the full-order march."""

import numpy as np
import pytest

from conftest import constant_group
from hwmor.calibration import DriftVector, HullWhiteStatics, ParameterGroup
from hwmor.errors import (
    DegenerateDomain,
    ScheduleMismatch,
    ValidationError,
)
from hwmor.fdm import (
    InstrumentSpec,
    OperatorCache,
    assemble_operators,
    apply_boundary_conditions,
    build_rate_grid,
    build_schedule,
    coupon_vector,
    mask_boundary_rows,
    price_instrument,
    step,
)
from hwmor.market_data import TenorGrid

GRID11 = TenorGrid.from_labels(
    ["3M", "6M", "1Y", "2Y", "3Y", "4Y", "5Y", "6Y", "7Y", "8Y", "10Y"]
)
STATICS = HullWhiteStatics(b=0.015, sigma=0.006, r0=0.012)


def bond(maturity=5.0):
    return InstrumentSpec(kind="zero_coupon_bond", nominal=1.0, maturity=maturity)


# --- grid -----------------------------------------------------------------------


def test_cutoff_rule_arithmetic():
    grid = build_rate_grid(0.006, 0.01, 10.0, 5)
    half = 7 * 0.006 * np.sqrt(10.0)
    assert grid.upper == pytest.approx(0.01 + half)
    assert grid.lower == pytest.approx(0.01 - half)
    assert grid.upper == pytest.approx(0.1428, abs=5e-5)


def test_zero_volatility_needs_explicit_window():
    with pytest.raises(DegenerateDomain):
        build_rate_grid(0.0, 0.01, 10.0, 5)
    grid = build_rate_grid(0.0, 0.01, 10.0, 5, window=(-0.1, 0.1))
    assert grid.size == 5


def test_window_override_spacing():
    grid = build_rate_grid(0.006, 0.01, 10.0, 600, window=(-0.1, 0.1))
    assert grid.spacing == pytest.approx(0.2 / 599)
    diffs = np.diff(grid.points)
    assert np.all(np.abs(diffs - grid.spacing) < 1e-14)


def test_grid_needs_three_points():
    with pytest.raises(ValidationError):
        build_rate_grid(0.006, 0.01, 10.0, 2)


# --- operators ------------------------------------------------------------------


def dense_theta_pair_oracle(grid, b, sigma, a_value, dt, theta):
    """Element-wise rebuild of the theta pair from the stencil definitions:
    central second difference for diffusion, one-sided first differences
    switched on the sign of the local speed, and the rate itself as reaction.
    """
    M = grid.size
    dx = grid.spacing
    L = np.zeros((M, M))
    for i in range(M):
        r = grid.points[i]
        c = sigma**2 / 2.0
        L[i, i] += -2.0 * c / dx**2 - r
        if i > 0:
            L[i, i - 1] += c / dx**2
        if i < M - 1:
            L[i, i + 1] += c / dx**2
        speed = a_value - b * r
        if speed > 0:  # backward difference
            L[i, i] += speed / dx
            if i > 0:
                L[i, i - 1] -= speed / dx
        else:  # forward difference
            L[i, i] -= speed / dx
            if i < M - 1:
                L[i, i + 1] += speed / dx
    A = np.eye(M) - theta * dt * L
    A[0, :] = 0.0
    A[0, 0], A[0, 1] = -1.0, 1.0
    A[-1, :] = 0.0
    A[-1, -2], A[-1, -1] = 1.0, -1.0
    B = np.eye(M) + (1 - theta) * dt * L
    return A, B


def test_assembled_pair_matches_dense_oracle():
    grid = build_rate_grid(0.006, 0.0, 10.0, 12, window=(-0.1, 0.1))
    rho = constant_group(0.0, GRID11, STATICS)  # speed changes sign mid-grid
    dt = 5 / 360
    A, B = assemble_operators(grid, rho, 0.0, dt, theta=0.5)
    A_ref, B_ref = dense_theta_pair_oracle(grid, 0.015, 0.006, 0.0, dt, 0.5)
    assert np.allclose(A.to_dense(), A_ref, atol=1e-15)
    assert np.allclose(B.to_dense(), B_ref, atol=1e-15)


def test_positive_speed_uses_backward_differences_only():
    grid = build_rate_grid(0.006, 0.0, 10.0, 20, window=(-0.1, 0.1))
    rho = constant_group(0.05, GRID11, STATICS)  # 0.05 - 0.015 r > 0 everywhere
    dt = 5 / 360
    _, B = assemble_operators(grid, rho, 0.0, dt, theta=0.0)
    diffusion_only = (1 - 0.0) * dt * 0.5 * 0.006**2 / grid.spacing**2
    assert np.allclose(B.upper, diffusion_only, atol=1e-18)
    assert np.all(B.lower < diffusion_only)  # convection joined the subdiagonal


def test_degenerate_coefficients_leave_reaction_only():
    grid = build_rate_grid(0.0, 0.0, 1.0, 8, window=(0.01, 0.05))
    statics = HullWhiteStatics(b=1e-12, sigma=0.0, r0=0.02)
    rho = constant_group(0.0, GRID11, statics, index=0)
    dt = 0.1
    A, B = assemble_operators(grid, rho, 0.0, dt, theta=0.5)
    interior = slice(1, -1)
    assert np.allclose(
        np.asarray(B.diag)[interior], 1 - 0.5 * dt * grid.points[interior], atol=1e-12
    )
    assert np.allclose(B.upper[1:-1], 0.0, atol=1e-11)
    assert np.allclose(B.lower[1:-1], 0.0, atol=1e-11)


def test_boundary_rows_and_rhs():
    grid = build_rate_grid(0.006, 0.01, 5.0, 6, window=(-0.1, 0.1))
    rho = constant_group(0.002, GRID11, STATICS)
    A, _ = assemble_operators(grid, rho, 0.0, 1 / 360, 0.5)
    assert (A.diag[0], A.upper[0]) == (-1.0, 1.0)
    assert (A.diag[-1], A.lower[-1]) == (-1.0, 1.0)

    any_matrix, rhs = apply_boundary_conditions(A, np.arange(6.0) + 1)
    assert rhs[0] == 0.0 and rhs[-1] == 0.0
    # zero-gradient rows kill constants and see through linear slopes
    const = np.full(6, 3.0)
    assert any_matrix.matvec(const)[0] == 0.0
    linear = grid.points.copy()
    assert any_matrix.matvec(linear)[0] == pytest.approx(grid.spacing)


def test_step_identity_and_coupon():
    from hwmor.fdm import TridiagonalMatrix

    I = TridiagonalMatrix(np.zeros(4), np.ones(5), np.zeros(4))
    v = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert np.allclose(step(I, I, v), v)
    assert np.allclose(step(I, I, v, coupon=np.ones(5)), v + 1)


def test_step_is_linear():
    grid = build_rate_grid(0.006, 0.01, 5.0, 30, window=(-0.1, 0.1))
    rho = constant_group(0.002, GRID11, STATICS)
    A, B = assemble_operators(grid, rho, 0.0, 5 / 360, 0.5)
    Bm = mask_boundary_rows(B)
    rng = np.random.default_rng(1)
    v1, v2 = rng.random(30), rng.random(30)
    lhs = step(A, Bm, 2.0 * v1 - 3.0 * v2)
    rhs = 2.0 * step(A, Bm, v1) - 3.0 * step(A, Bm, v2)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_masked_step_reproduces_march():
    """Repeated low-level steps equal the packaged march, coupons included."""
    inst = InstrumentSpec(
        kind="capped_floored_floater", nominal=1.0, maturity=1.0,
        coupon_frequency=4, cap_rate=0.0225, floor_rate=0.005,
    )
    grid = build_rate_grid(0.006, 0.012, 1.0, 24, window=(-0.1, 0.1))
    rho = constant_group(0.002, GRID11, STATICS)
    schedule = build_schedule(inst, dt_days=10, checkpoint_days=None)
    cache = OperatorCache(grid, rho, schedule, 0.5)
    coupon = coupon_vector(inst, grid)
    v = np.ones(24)
    for n in range(schedule.n_steps):
        A, B = cache.pair(n)
        due = coupon if (n + 1) in schedule.coupon_steps else None
        v = step(A, mask_boundary_rows(B), v, due)
    sol = price_instrument(inst, rho, grid, schedule)
    assert np.allclose(v, sol.final, atol=1e-13)


# --- schedules ------------------------------------------------------------------


def test_schedule_layout():
    inst = InstrumentSpec(
        kind="capped_floored_floater", nominal=1.0, maturity=3.0,
        coupon_frequency=4, cap_rate=0.02, floor_rate=0.005,
    )
    sched = build_schedule(inst, dt_days=15, checkpoint_days=30)
    assert sched.n_steps == 72
    assert sched.coupon_steps == frozenset(range(6, 73, 6))
    assert sched.checkpoint_steps[0] == 0
    assert sched.checkpoint_steps[-1] == 72
    assert sched.dt == pytest.approx(15 / 360)


def test_schedule_rejects_misalignment():
    with pytest.raises(ScheduleMismatch):
        build_schedule(bond(10.0), dt_days=7)
    floater = InstrumentSpec(
        kind="capped_floored_floater", nominal=1.0, maturity=1.0,
        coupon_frequency=4, cap_rate=0.02, floor_rate=0.005,
    )
    with pytest.raises(ScheduleMismatch):
        build_schedule(floater, dt_days=4)  # 90-day coupon period, 4 does not divide
    with pytest.raises(ScheduleMismatch):
        build_schedule(floater, dt_days=2, checkpoint_days=45)


def test_instrument_validation():
    with pytest.raises(ValidationError):
        InstrumentSpec(kind="swaption", nominal=1.0, maturity=1.0)
    with pytest.raises(ValidationError):
        InstrumentSpec(
            kind="capped_floored_floater", nominal=1.0, maturity=1.0,
            coupon_frequency=4, cap_rate=0.005, floor_rate=0.02,
        )
    with pytest.raises(ValidationError):
        InstrumentSpec(kind="zero_coupon_bond", nominal=1.0, maturity=1.0, coupon_frequency=2)


def test_instrument_json_round_trip(tmp_path):
    inst = InstrumentSpec(
        kind="capped_floored_floater", nominal=2.0, maturity=4.0,
        coupon_frequency=4, cap_rate=0.03, floor_rate=0.001,
    )
    p = tmp_path / "inst.json"
    inst.to_json(p)
    assert InstrumentSpec.from_json(p) == inst
    with pytest.raises(ValidationError):
        InstrumentSpec.from_json(tmp_path / "missing.json")


# --- march ----------------------------------------------------------------------


def test_march_stays_positive_on_discounting_domain():
    grid = build_rate_grid(0.006, 0.02, 5.0, 80, window=(0.001, 0.1))
    rho = constant_group(0.002, GRID11, STATICS)
    sched = build_schedule(bond(5.0), dt_days=5, checkpoint_days=None)
    sol = price_instrument(bond(5.0), rho, grid, sched)
    assert sol.final.min() >= 0.0
    assert sol.final.max() <= 1.0 + 1e-12


def test_bond_march_approaches_closed_form():
    from hwmor.calibration import bond_price_closed_form

    statics = HullWhiteStatics(b=0.015, sigma=0.006, r0=0.012)
    rho = constant_group(0.002, GRID11, statics)
    grid = build_rate_grid(0.006, statics.r0, 5.0, 300, window=(-0.1, 0.1))
    sched = build_schedule(bond(5.0), dt_days=5, checkpoint_days=None)
    sol = price_instrument(bond(5.0), rho, grid, sched)
    got = float(np.interp(statics.r0, grid.points, sol.final))
    want = bond_price_closed_form(statics, rho.drift, 0.0, 5.0)
    assert got == pytest.approx(want, rel=5e-3)


def test_march_directions_agree_for_constant_drift(small):
    rho = constant_group(0.003, small["space"].grid, small["statics"])
    fwd = price_instrument(
        small["instrument"], rho, small["grid"], small["schedule"], march="forward"
    )
    bwd = price_instrument(
        small["instrument"], rho, small["grid"], small["schedule"], march="backward"
    )
    assert np.allclose(fwd.values, bwd.values, atol=1e-12)


def test_march_directions_differ_for_time_varying_drift(small):
    rho = small["space"].group(3)
    fwd = price_instrument(small["instrument"], rho, small["grid"], small["schedule"])
    bwd = price_instrument(
        small["instrument"], rho, small["grid"], small["schedule"], march="backward"
    )
    assert not np.allclose(fwd.final, bwd.final, atol=1e-10)


def test_degenerate_collar_pays_fixed_coupons(small):
    fixed = InstrumentSpec(
        kind="capped_floored_floater", nominal=1.0, maturity=3.0,
        coupon_frequency=4, cap_rate=0.01, floor_rate=0.01,
    )
    vec = coupon_vector(fixed, small["grid"])
    assert np.allclose(vec, 0.01 / 4)


def test_floater_between_floor_and_cap_bonds(small):
    inst = small["instrument"]
    rho = small["space"].group(0)

    def degenerate(rate):
        return InstrumentSpec(
            kind="capped_floored_floater", nominal=1.0, maturity=inst.maturity,
            coupon_frequency=4, cap_rate=rate, floor_rate=rate,
        )

    lo = price_instrument(degenerate(inst.floor_rate), rho, small["grid"], small["schedule"])
    hi = price_instrument(degenerate(inst.cap_rate), rho, small["grid"], small["schedule"])
    mid = price_instrument(inst, rho, small["grid"], small["schedule"])
    assert np.all(mid.final >= lo.final - 1e-12)
    assert np.all(mid.final <= hi.final + 1e-12)


def test_checkpoint_lookup(small):
    sol = price_instrument(
        small["instrument"], small["space"].group(1), small["grid"], small["schedule"]
    )
    assert np.array_equal(sol.at_time(0.0), np.ones(small["grid"].size))
    assert np.array_equal(sol.at_time(3.0), sol.final)
    with pytest.raises(ValidationError):
        sol.at_time(0.1234)


def test_bucket_lookup_is_consistent(small):
    rho = small["space"].group(0)
    cache = OperatorCache(small["grid"], rho, small["schedule"], 0.5)
    kb, ka = cache.step_buckets(small["schedule"].n_steps)
    for n in range(small["schedule"].n_steps):
        assert (kb[n], ka[n]) == cache.buckets(n)
    # bucket index increments when the march crosses a tenor boundary
    assert kb[0] == 0
    assert kb[-1] > 0
