"""Yield-curve scenario generation by PCA-filtered bootstrapping.

Starting from a positivity-shifted rate panel D (n dates by m tenors):

1. take centered log returns R[i,j] = ln(D[i+1,j]) - ln(D[i,j]) - mu[j],
2. decompose R = Phi Sigma Psi^T and keep the p leading right singular
   vectors Psi_p,
3. filter the returns back through the retained subspace,
   M_R = (R Psi_p) Psi_p^T,
4. for each trial draw h filtered return rows uniformly with replacement,
   sum them per tenor, and compound the final observed curve:
   y[j] = D[n,j] * exp(chi[j]) - gamma + f[j],

where gamma is the positivity shift being removed and f[j] a forward-rate
adjustment keeping the simulated mean in line with the current curve.

Trial i draws from an independent counter-based stream keyed by
(seed, i), so curve sets are reproducible regardless of evaluation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonPositiveRate, RankDeficient, ValidationError
from .market_data import PipelineConfig, RateHistory, TenorGrid


@dataclass(frozen=True)
class ReturnMatrix:
    """Centered log returns plus the column means removed from them."""

    values: np.ndarray        # (n-1, m), columns have zero mean
    column_means: np.ndarray  # (m,)
    formula: str = "log_of_ratio"


@dataclass(frozen=True)
class SimulationBasis:
    """SVD of the centered returns and the rank-p filtered return matrix."""

    singular_values: np.ndarray  # (m,), descending, zero-padded if needed
    right_vectors: np.ndarray    # (m, m), orthonormal columns
    energies: np.ndarray         # (m,), singular values / their sum
    p: int                       # retained components
    reduced_matrix: np.ndarray   # (n-1, m)


@dataclass(frozen=True)
class YieldCurveSet:
    """Bootstrapped curves, one row per trial."""

    curves: np.ndarray  # (s, m)
    grid: TenorGrid
    seed: int
    gamma: float
    last_observed: np.ndarray | None = None  # final unshifted input curve

    @property
    def spot_rates(self) -> np.ndarray:
        """Rate at the first tenor point of every simulated curve."""
        return self.curves[:, 0]


def log_returns(shifted: RateHistory, formula: str = "log_of_ratio") -> ReturnMatrix:
    """Column-centered log returns of a strictly positive rate panel.

    ``formula="log_of_ratio"`` is the default ln(D[i+1]/D[i]);
    ``"ratio_of_logs"`` computes ln(D[i+1])/ln(D[i]) instead and exists only
    for comparison runs. Raises NonPositiveRate (0-based matrix indices) when
    any entry is not positive.
    """
    rates = shifted.rates
    if rates.shape[0] < 2:
        raise ValidationError("need at least two observations for returns")
    if np.any(rates <= 0) or not np.all(np.isfinite(rates)):
        bad = np.argwhere(~(rates > 0) | ~np.isfinite(rates))[0]
        raise NonPositiveRate(int(bad[0]), int(bad[1]), float(rates[bad[0], bad[1]]))
    logs = np.log(rates)
    if formula == "log_of_ratio":
        raw = logs[1:] - logs[:-1]
    elif formula == "ratio_of_logs":
        if np.any(logs[:-1] == 0.0):
            raise ValidationError("ratio_of_logs is undefined when a rate equals 1.0")
        raw = logs[1:] / logs[:-1]
    else:
        raise ValidationError(f"unknown return formula {formula!r}")
    means = raw.mean(axis=0)
    return ReturnMatrix(raw - means, means, formula)


def build_simulation_basis(returns: ReturnMatrix, p: int | None = None) -> SimulationBasis:
    """Decompose the centered returns and filter them to rank p.

    When p is None the smallest component count whose cumulative energy
    share reaches 99% is used. Energy shares are singular values divided by
    their sum. Raises RankDeficient when the return matrix is zero.
    """
    values = returns.values
    n_rows, m = values.shape
    if n_rows >= m:
        _, sigma, vt = np.linalg.svd(values, full_matrices=False)
    else:
        _, sigma, vt = np.linalg.svd(values, full_matrices=True)
        sigma = np.concatenate([sigma, np.zeros(m - n_rows)])
    total = sigma.sum()
    if total <= 0.0 or not np.isfinite(total):
        raise RankDeficient("return matrix has no signal (all singular values zero)")
    energies = sigma / total
    if p is None:
        p = int(np.searchsorted(np.cumsum(energies), 0.99) + 1)
        p = min(p, m)
    if not 1 <= p <= m:
        raise ValidationError(f"pca component count {p} outside [1, {m}]")
    psi = vt.T[:, :p]
    reduced = (values @ psi) @ psi.T
    return SimulationBasis(sigma, vt.T, energies, p, reduced)


def forward_rate_adjustments(grid: TenorGrid, final_curve: np.ndarray) -> np.ndarray:
    """Per-tenor forward rate implied by the final observed curve.

    For tenor j with maturity t2 and preceding tenor maturity t1 (zero for
    the first tenor), the adjustment is the forward rate
    (r(0,t2)*t2 - r(0,t1)*t1) / (t2 - t1).
    """
    times = grid.times
    t1 = np.concatenate([[0.0], times[:-1]])
    r1_terms = np.concatenate([[0.0], final_curve[:-1] * times[:-1]])
    return (final_curve * times - r1_terms) / (times - t1)


def bootstrap_curves(
    history: RateHistory,
    basis: SimulationBasis,
    config: PipelineConfig,
    gamma: float = 0.0,
    forward_adjustment: bool = True,
) -> YieldCurveSet:
    """Draw ``config.bootstrap_count`` curves over the holding period.

    ``history`` must be the positivity-shifted panel whose returns produced
    ``basis``; ``gamma`` is the shift to remove from the compounded curves.
    Trial i sums ``config.holding_period_days`` rows of the filtered return
    matrix drawn with replacement from stream (seed, i).
    """
    reduced = basis.reduced_matrix
    n_rows = reduced.shape[0]
    if n_rows == 0:
        raise ValidationError("empty return matrix")
    if reduced.shape[1] != history.grid.size:
        raise ValidationError("basis and history tenor counts differ")
    s, h = config.bootstrap_count, config.holding_period_days
    final_shifted = history.rates[-1]
    final_curve = final_shifted - gamma
    adjust = (
        forward_rate_adjustments(history.grid, final_curve)
        if forward_adjustment
        else np.zeros(history.grid.size)
    )

    curves = np.empty((s, history.grid.size))
    for trial in range(s):
        rng = np.random.Generator(np.random.Philox(key=[config.seed, trial]))
        picks = rng.integers(0, n_rows, size=h)
        chi = reduced[picks].sum(axis=0)
        curves[trial] = final_shifted * np.exp(chi) - gamma + adjust
    if not np.all(np.isfinite(curves)):
        raise RankDeficient("bootstrap produced non-finite curves")
    return YieldCurveSet(curves, history.grid, config.seed, gamma, final_curve)


# --- persistence --------------------------------------------------------------


def meta_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".meta.json")


def save_curves(
    curve_set: YieldCurveSet,
    path: str | Path,
    basis: SimulationBasis | None = None,
    extra_meta: dict | None = None,
) -> Path:
    """Write curves as CSV (tenor labels as header) plus a JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(curve_set.grid.labels) + "\n")
        for row in curve_set.curves:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    meta = {
        "seed": curve_set.seed,
        "gamma": curve_set.gamma,
        "labels": list(curve_set.grid.labels),
        "times": [float(t) for t in curve_set.grid.times],
        "last_observed": None
        if curve_set.last_observed is None
        else [float(v) for v in curve_set.last_observed],
    }
    if basis is not None:
        meta["p"] = basis.p
        meta["energies"] = [float(e) for e in basis.energies]
    if extra_meta:
        meta.update(extra_meta)
    side = meta_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def load_curves(path: str | Path) -> YieldCurveSet:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        labels = [c.strip() for c in header.split(",")]
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    side = meta_path(path)
    seed, gamma, last = 0, 0.0, None
    if side.exists():
        meta = json.loads(side.read_text())
        seed = int(meta.get("seed", 0))
        gamma = float(meta.get("gamma", 0.0))
        if meta.get("last_observed") is not None:
            last = np.array(meta["last_observed"], dtype=float)
        if meta.get("labels") == labels and meta.get("times"):
            grid = TenorGrid(tuple(labels), np.array(meta["times"], dtype=float))
            return YieldCurveSet(rows, grid, seed, gamma, last)
    return YieldCurveSet(rows, TenorGrid.from_labels(labels), seed, gamma, last)
