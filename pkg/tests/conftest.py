"""Shared fixtures: a synthetic rate history and the pipelines built from it.

The history is a smooth three-factor panel (level, slope, curvature with
exponential tenor loadings) so the calibrated drifts stay well inside the
regime where the upwinded march is contractive. Everything downstream is
deterministic given the seeds pinned here.
"""

import datetime as dt

import numpy as np
import pytest

from hwmor.calibration import DriftVector, HullWhiteStatics, ParameterGroup, calibrate_all
from hwmor.curve_sim import bootstrap_curves, build_simulation_basis, log_returns
from hwmor.fdm import InstrumentSpec, build_rate_grid, build_schedule
from hwmor.market_data import (
    FdmConfig,
    GreedyConfig,
    PipelineConfig,
    RateHistory,
    TenorGrid,
    positivity_shift,
)

TENOR_LABELS = ["3M", "6M", "1Y", "2Y", "3Y", "4Y", "5Y", "6Y", "7Y", "8Y", "10Y"]


def make_history(n_days=260, seed=2024, vols=(1.2e-4, 1.6e-4, 0.8e-4)) -> RateHistory:
    """Business-day panel of smooth mean-reverting curves over TENOR_LABELS."""
    rng = np.random.default_rng(seed)
    grid = TenorGrid.from_labels(TENOR_LABELS)
    tau = grid.times
    shape_s = 1.0 - np.exp(-tau / 2.5)
    shape_c = (tau / 2.5) * np.exp(-tau / 2.5)
    level, slope, curv = 0.012, 0.014, -0.004
    rows = []
    for _ in range(n_days):
        level += 0.9 * (0.012 - level) / 260 + vols[0] * rng.standard_normal()
        slope += 1.2 * (0.014 - slope) / 260 + vols[1] * rng.standard_normal()
        curv += 1.5 * (-0.004 - curv) / 260 + vols[2] * rng.standard_normal()
        rows.append(level + slope * shape_s + curv * shape_c)
    dates = []
    day = dt.date(2023, 1, 2)
    while len(dates) < n_days:
        if day.weekday() < 5:
            dates.append(day)
        day += dt.timedelta(days=1)
    return RateHistory(tuple(dates), grid, np.array(rows))


def simulate_space(history, config, b=0.015, sigma=0.006):
    """history -> curves -> calibrated drifts, r0 centered on the simulated
    short end (the forward-rate adjustment roughly doubles it relative to the
    observed curve, and a far-off r0 inflates the first drift bucket)."""
    shifted, gamma = positivity_shift(history, config.shift_epsilon)
    basis = build_simulation_basis(log_returns(shifted), config.pca_components)
    curves = bootstrap_curves(shifted, basis, config, gamma)
    statics = HullWhiteStatics(b, sigma, float(curves.curves[:, 0].mean()))
    space = calibrate_all(curves, statics, mu=0.0)
    return curves, statics, space


def constant_group(a_value, grid, statics, index=0) -> ParameterGroup:
    return ParameterGroup(
        DriftVector.constant(a_value, grid), statics.b, statics.sigma, index
    )


TABLE_FLOATER = InstrumentSpec(
    kind="capped_floored_floater",
    nominal=1.0,
    maturity=10.0,
    coupon_frequency=4,
    cap_rate=0.0225,
    floor_rate=0.005,
    reference_tenor="3M",
)


@pytest.fixture(scope="session")
def history():
    return make_history()


@pytest.fixture(scope="session")
def desk():
    """200-scenario floater setup on the production-size grid (M=600).

    The history panel is level-dominated (slope and curvature vols cut to a
    third and a tenth of the level vol) and sigma is doubled versus the small
    fixture's base.  That keeps the scenario cloud close to a ten-dimensional
    manifold, so a d <= 10 reduced basis prices every group to ~1e-3 while the
    greedy residual floor stays well above machine noise."""
    config = PipelineConfig(
        bootstrap_count=200,
        holding_period_days=260,
        seed=20240,
        greedy=GreedyConfig(
            I_max=10, C=40, C_0=20, C_k=10, eps_tol=1e-14, e_max_tol=1e-14
        ),
        fdm=FdmConfig(M=600, theta=0.5, dt_days=2),
    ).validate()
    panel = make_history(vols=(2.16e-4, 0.72e-4, 0.225e-4))
    curves, statics, space = simulate_space(panel, config, sigma=0.012)
    grid = build_rate_grid(
        statics.sigma, statics.r0, TABLE_FLOATER.maturity, config.fdm.M,
        window=(-0.1, 0.1),
    )
    schedule = build_schedule(
        TABLE_FLOATER, dt_days=config.fdm.dt_days, checkpoint_days=30
    )
    return {
        "config": config,
        "curves": curves,
        "statics": statics,
        "space": space,
        "instrument": TABLE_FLOATER,
        "grid": grid,
        "schedule": schedule,
    }


@pytest.fixture(scope="session")
def small(history):
    """Fast 3-year floater setup: coarse grid, wide steps, 18 scenarios.

    sigma is raised to 0.02 so the coarse mesh keeps the march contractive
    (the upwind threshold scales as sigma^2 over the spacing)."""
    config = PipelineConfig(
        bootstrap_count=18,
        holding_period_days=260,
        seed=77,
        greedy=GreedyConfig(I_max=6, C=10, C_0=4, C_k=3, eps_tol=1e-10),
        fdm=FdmConfig(M=100, theta=0.5, dt_days=15),
    ).validate()
    curves, statics, space = simulate_space(history, config, sigma=0.02)
    instrument = InstrumentSpec(
        kind="capped_floored_floater",
        nominal=1.0,
        maturity=3.0,
        coupon_frequency=4,
        cap_rate=0.0225,
        floor_rate=0.005,
    )
    grid = build_rate_grid(
        statics.sigma, statics.r0, instrument.maturity, config.fdm.M,
        window=(-0.1, 0.1),
    )
    schedule = build_schedule(
        instrument, dt_days=config.fdm.dt_days, checkpoint_days=30
    )
    return {
        "config": config,
        "curves": curves,
        "statics": statics,
        "space": space,
        "instrument": instrument,
        "grid": grid,
        "schedule": schedule,
    }
