"""Snapshot bases, Galerkin projection, and the reduced march."""

import numpy as np
import pytest

from conftest import constant_group
from hwmor.calibration import HullWhiteStatics
from hwmor.errors import RankDeficient, ValidationError
from hwmor.fdm import (
    InstrumentSpec,
    OperatorCache,
    assemble_operators,
    build_rate_grid,
    build_schedule,
    mask_boundary_rows,
    price_instrument,
    step,
)
from hwmor.market_data import TenorGrid
from hwmor.rom import (
    ReducedBasis,
    SnapshotMatrix,
    aggregate_residuals,
    assemble_rom,
    build_basis,
    load_basis,
    residual_estimator,
    save_basis,
    solve_rom,
    truncated_svd,
)

GRID11 = TenorGrid.from_labels(
    ["3M", "6M", "1Y", "2Y", "3Y", "4Y", "5Y", "6Y", "7Y", "8Y", "10Y"]
)
STATICS = HullWhiteStatics(b=0.015, sigma=0.006, r0=0.012)


def random_orthonormal(m, d, seed=0):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((m, d)))
    return q


# --- svd and basis construction ---------------------------------------------------


def test_svd_reconstructs_and_orders():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((15, 7))
    u, s, v = truncated_svd(x)
    assert np.all(np.diff(s) <= 0)
    assert np.allclose(u * s @ v.T, x, atol=1e-12)
    assert np.allclose(v.T @ v, np.eye(7), atol=1e-12)


def test_svd_of_rank_one_matrix():
    a = np.outer([1.0, 2.0, 2.0], [3.0, 4.0])
    _, s, _ = truncated_svd(a)
    assert s[0] == pytest.approx(15.0)  # |[1,2,2]| * |[3,4]| = 3 * 5
    assert np.allclose(s[1:], 0.0, atol=1e-12)


def test_repeated_column_collapses_to_one_mode():
    col = np.linspace(1.0, 2.0, 9)[:, None]
    snaps = SnapshotMatrix(np.hstack([col, col, col]), (0, 1, 2))
    basis = build_basis(snaps, 99.99)
    assert basis.d == 1
    assert abs(abs(basis.Q[:, 0] @ (col[:, 0] / np.linalg.norm(col))) - 1) < 1e-12


def test_dimension_grows_with_energy_level():
    rng = np.random.default_rng(11)
    u = random_orthonormal(30, 8, 1)
    x = u @ np.diag(2.0 ** -np.arange(8)) @ random_orthonormal(8, 8, 2).T
    snaps = SnapshotMatrix(x, tuple(range(8)))
    dims = [build_basis(snaps, lvl).d for lvl in (20.0, 60.0, 90.0, 99.0, 99.999)]
    assert dims == sorted(dims)
    assert dims[0] == 1
    assert build_basis(snaps, 99.999, max_dim=3).d == 3


def test_projection_error_equals_discarded_spectrum():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((40, 12)) * np.exp(-np.arange(12) / 3.0)
    snaps = SnapshotMatrix(x, tuple(range(12)))
    s = np.linalg.svd(x, compute_uv=False)
    for lvl in (50.0, 90.0, 99.0):
        basis = build_basis(snaps, lvl)
        q = basis.Q
        assert np.allclose(q.T @ q, np.eye(basis.d), atol=1e-10)
        err = np.linalg.norm(x - q @ (q.T @ x))
        want = np.sqrt(np.sum(s[basis.d:] ** 2))
        assert abs(err - want) < 1e-10


def test_zero_snapshots_rejected():
    snaps = SnapshotMatrix(np.zeros((6, 3)), (0, 1, 2))
    with pytest.raises(RankDeficient):
        build_basis(snaps, 99.99)


def test_energy_level_bounds():
    snaps = SnapshotMatrix(np.eye(3), (0, 1, 2))
    with pytest.raises(ValidationError):
        build_basis(snaps, 0.0)
    with pytest.raises(ValidationError):
        build_basis(snaps, 100.5)


def test_snapshot_sources_stay_unique(small):
    sol = price_instrument(
        small["instrument"], small["space"].group(0), small["grid"], small["schedule"]
    )
    snaps = SnapshotMatrix.from_solution(sol)
    with pytest.raises(ValidationError):
        snaps.append(sol)
    other = price_instrument(
        small["instrument"], small["space"].group(1), small["grid"], small["schedule"]
    )
    grown = snaps.append(other)
    assert grown.sources == (0, 1)
    assert grown.n_columns == 2 * sol.values.shape[1]


# --- projection --------------------------------------------------------------------


def make_pair(m=18, a_value=0.002, dt=5 / 360, theta=0.5):
    grid = build_rate_grid(0.006, 0.012, 5.0, m, window=(-0.1, 0.1))
    rho = constant_group(a_value, GRID11, STATICS)
    A, B = assemble_operators(grid, rho, 0.0, dt, theta)
    return grid, A, B


def test_identity_basis_projection_is_dense_pair():
    _, A, B = make_pair()
    a_d, b_d = assemble_rom(A, B, np.eye(18))
    assert np.allclose(a_d, A.to_dense(), atol=1e-15)
    assert np.allclose(b_d, mask_boundary_rows(B).to_dense(), atol=1e-15)


def test_unit_vector_basis_picks_one_entry():
    _, A, B = make_pair()
    e = np.zeros((18, 1))
    e[7, 0] = 1.0
    a_d, b_d = assemble_rom(A, B, e)
    assert a_d[0, 0] == pytest.approx(A.diag[7])
    assert b_d[0, 0] == pytest.approx(B.diag[7])


def test_projection_matches_dense_congruence():
    _, A, B = make_pair()
    q = random_orthonormal(18, 5, seed=9)
    a_d, b_d = assemble_rom(A, B, q)
    assert np.allclose(a_d, q.T @ A.to_dense() @ q, atol=1e-13)
    assert np.allclose(b_d, q.T @ mask_boundary_rows(B).to_dense() @ q, atol=1e-13)


def test_reduced_march_is_galerkin_orthogonal():
    _, A, B = make_pair()
    q = random_orthonormal(18, 4, seed=2)
    a_d, b_d = assemble_rom(A, B, q)
    bm = mask_boundary_rows(B)
    v = q.T @ np.ones(18)
    for _ in range(25):
        v_next = np.linalg.solve(a_d, b_d @ v)
        full_residual = A.matvec(q @ v_next) - bm.matvec(q @ v)
        scale = max(np.linalg.norm(b_d @ v), 1.0)
        assert np.linalg.norm(q.T @ full_residual) / scale < 1e-12
        v = v_next


# --- reduced march vs full order -----------------------------------------------------


def full_history_setup(small, maturity=1.0, dt_days=30):
    inst = InstrumentSpec(
        kind="capped_floored_floater", nominal=1.0, maturity=maturity,
        coupon_frequency=4, cap_rate=0.0225, floor_rate=0.005,
    )
    schedule = build_schedule(inst, dt_days=dt_days, full_history=True)
    return inst, schedule


def test_exact_subspace_reproduces_full_march(small):
    # coupon-free, so every intermediate state sits in the snapshot span
    inst = InstrumentSpec(kind="zero_coupon_bond", nominal=1.0, maturity=1.0)
    schedule = build_schedule(inst, dt_days=30, full_history=True)
    rho = small["space"].group(2)
    sol = price_instrument(inst, rho, small["grid"], schedule)
    snaps = SnapshotMatrix.from_solution(sol)
    basis = build_basis(snaps, 100.0)
    rom = solve_rom(inst, rho, basis, small["grid"], schedule)
    denom = np.linalg.norm(sol.values)
    assert np.linalg.norm(rom.values - sol.values) / denom < 1e-9


def test_full_dimension_basis_equals_hdm(small):
    m = small["grid"].size
    basis = ReducedBasis(np.eye(m), np.full(m, 1.0 / m), m, 100.0, ())
    rho = small["space"].group(4)
    rom = solve_rom(
        small["instrument"], rho, basis, small["grid"], small["schedule"]
    )
    hdm = price_instrument(
        small["instrument"], rho, small["grid"], small["schedule"]
    )
    assert np.allclose(rom.values, hdm.values, atol=1e-9)


def test_residual_collection_matches_fast_path(small):
    rho = small["space"].group(5)
    sols = [
        price_instrument(small["instrument"], small["space"].group(i),
                         small["grid"], small["schedule"])
        for i in (0, 3, 7)
    ]
    snaps = SnapshotMatrix.from_solution(sols[0])
    for s in sols[1:]:
        snaps = snaps.append(s)
    basis = build_basis(snaps, 99.99)
    fast = solve_rom(small["instrument"], rho, basis, small["grid"], small["schedule"])
    slow = solve_rom(
        small["instrument"], rho, basis, small["grid"], small["schedule"],
        collect_residuals=True,
    )
    assert fast.residual_norms is None
    assert slow.residual_norms is not None and slow.residual_norms.size == small["schedule"].n_steps
    assert np.allclose(fast.values, slow.values, atol=1e-9)


def test_rom_checkpoint_lookup(small):
    inst, schedule = full_history_setup(small)
    rho = small["space"].group(0)
    sol = price_instrument(inst, rho, small["grid"], schedule)
    basis = build_basis(SnapshotMatrix.from_solution(sol), 100.0)
    rom = solve_rom(inst, rho, basis, small["grid"], schedule)
    assert rom.dim == basis.d
    assert np.allclose(rom.at_time(0.0), np.ones(small["grid"].size), atol=1e-9)
    with pytest.raises(ValidationError):
        rom.at_time(0.123)


# --- residual estimator -------------------------------------------------------------


def test_estimator_vanishes_on_exact_subspace():
    grid, A, B = make_pair(m=20, a_value=0.002)
    bm = mask_boundary_rows(B)
    states = [np.ones(20)]
    for _ in range(12):
        states.append(step(A, bm, states[-1]))
    x = np.column_stack(states)
    q, _ = np.linalg.qr(x)
    traj = q.T @ x
    assert residual_estimator(A, B, q, traj) < 1e-10


def test_estimator_flags_projected_march():
    grid, A, B = make_pair(m=30, a_value=0.002)
    q = random_orthonormal(30, 3, seed=4)
    a_d, b_d = assemble_rom(A, B, q)
    v = q.T @ np.ones(30)
    traj = [v]
    for _ in range(12):
        v = np.linalg.solve(a_d, b_d @ v)
        traj.append(v)
    eps = residual_estimator(A, B, q, np.column_stack(traj))
    assert eps > 1e-6  # a 3-mode random basis cannot carry this march


def test_estimator_needs_two_states():
    _, A, B = make_pair()
    q = random_orthonormal(18, 2, seed=1)
    with pytest.raises(ValidationError):
        residual_estimator(A, B, q, q.T @ np.ones((18, 1)))


def test_residual_aggregation_rules():
    ratios = np.array([3.0, 4.0])
    assert aggregate_residuals(ratios, "max") == 4.0
    assert aggregate_residuals(ratios, "rms") == pytest.approx(np.sqrt(12.5))
    with pytest.raises(ValidationError):
        aggregate_residuals(ratios, "median")


def test_right_vectors_diagonalize_gram_matrix():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((25, 6))
    _, s, v = truncated_svd(x)
    lam, w = np.linalg.eigh(x.T @ x)
    lam, w = lam[::-1], w[:, ::-1]
    assert np.allclose(lam, s**2, atol=1e-8)
    for k in range(6):
        assert abs(abs(w[:, k] @ v[:, k]) - 1.0) < 1e-8


# --- persistence --------------------------------------------------------------------


def test_basis_container_round_trip(tmp_path):
    q = random_orthonormal(14, 4, seed=6)
    energies = np.array([0.7, 0.2, 0.06, 0.04])
    basis = ReducedBasis(q, energies, 4, 99.99, (3, 1, 4))
    path = tmp_path / "basis.rob"
    save_basis(basis, path, extra_meta={"params_digest": "abc123"})
    loaded, header = load_basis(path)
    assert np.array_equal(loaded.Q, q)
    assert loaded.d == 4 and loaded.sources == (3, 1, 4)
    assert np.array_equal(loaded.energies, energies)
    assert header["params_digest"] == "abc123"


def test_basis_container_rejects_truncation(tmp_path):
    q = random_orthonormal(10, 3, seed=7)
    basis = ReducedBasis(q, np.ones(3) / 3, 3, 99.0, ())
    path = tmp_path / "basis.rob"
    save_basis(basis, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(ValidationError):
        load_basis(path)
    path.write_bytes(b"not json at all")
    with pytest.raises(ValidationError):
        load_basis(path)
