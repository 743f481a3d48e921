"""Command-line pipeline: simulate -> calibrate -> train -> price / bench.

Exit codes: 0 on success, 2 for validation problems (bad inputs, malformed
config, stale artifacts), 3 for numerical failures. Every command writes a
``<output>.manifest.json`` recording the effective config hash, input file
hashes, seed, produced artifacts, and stage timings.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import HullWhiteStatics, calibrate_all, load_params, save_params
from .curve_sim import (
    bootstrap_curves,
    build_simulation_basis,
    load_curves,
    log_returns,
    save_curves,
)
from .errors import PipelineError, StaleArtifact, ValidationError
from .fdm import InstrumentSpec, RateGrid, build_rate_grid, build_schedule
from .greedy import (
    adaptive_greedy,
    classical_greedy,
    instrument_solvers,
    save_trace,
)
from .market_data import load_config, load_rate_history, positivity_shift, sha256_file
from .report import (
    benchmark,
    default_horizons,
    evaluate_scenarios,
    save_benchmark,
    save_report,
    save_values,
)
from .rom import load_basis, save_basis

DEFAULT_WINDOW = (-0.1, 0.1)


@dataclasses.dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    input_hashes: dict
    artifacts: list
    timings: dict
    version: str = __version__

    def write(self, path: Path) -> None:
        for artifact in self.artifacts:
            if not Path(artifact).exists():
                raise PipelineError(f"manifest lists missing artifact {artifact}")
        path.write_text(
            json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"
        )


def _manifest_path(primary: Path) -> Path:
    return primary.with_name(primary.name + ".manifest.json")


def _config_overrides(args) -> dict:
    overrides: dict = {}
    mapping = {
        "seed": "seed",
        "count": "bootstrap_count",
        "holding_days": "holding_period_days",
        "components": "pca_components",
        "shift_epsilon": "shift_epsilon",
        "energy_level": "energy_level",
        "mu": "tikhonov_mu",
    }
    for attr, field in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[field] = value
    greedy: dict = {}
    for attr, field in (
        ("i_max", "I_max"), ("candidates", "C"), ("seed_candidates", "C_0"),
        ("batch", "C_k"), ("eps_tol", "eps_tol"), ("e_max_tol", "e_max_tol"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            greedy[field] = value
    if greedy:
        overrides["greedy"] = greedy
    fdm: dict = {}
    for attr, field in (("grid_points", "M"), ("theta", "theta"), ("dt_days", "dt_days")):
        value = getattr(args, attr, None)
        if value is not None:
            fdm[field] = value
    if fdm:
        overrides["fdm"] = fdm
    return overrides


def _load_cfg(args):
    return load_config(getattr(args, "config", None), _config_overrides(args))


def _grid_from_args(args, statics_sigma: float, maturity: float, M: int) -> RateGrid:
    if getattr(args, "auto_window", False):
        return build_rate_grid(statics_sigma, args.spot_rate, maturity, M, window=None)
    window = tuple(args.window) if getattr(args, "window", None) else DEFAULT_WINDOW
    return build_rate_grid(statics_sigma, 0.0, maturity, M, window=window)


# --- commands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    t0 = time.perf_counter()
    history = load_rate_history(args.history)
    shifted, gamma = positivity_shift(history, cfg.shift_epsilon)
    returns = log_returns(shifted, formula=args.return_formula)
    basis = build_simulation_basis(returns, cfg.pca_components)
    curves = bootstrap_curves(
        shifted, basis, cfg, gamma, forward_adjustment=not args.no_forward_adjustment
    )
    elapsed = time.perf_counter() - t0

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    history_hash = sha256_file(args.history)
    side = save_curves(
        curves, out, basis,
        extra_meta={"history_sha256": history_hash, "return_formula": args.return_formula},
    )
    artifacts = [str(out), str(side)]
    if not args.no_figures:
        from .figures import plot_curve_fan

        artifacts.append(str(plot_curve_fan(curves, out.with_suffix(".fan.png"))))
    RunManifest(
        "simulate", cfg.hash(), cfg.seed, {str(args.history): history_hash},
        artifacts, {"simulate_seconds": elapsed},
    ).write(_manifest_path(out))
    print(
        f"wrote {out} ({curves.curves.shape[0]} curves x {curves.curves.shape[1]} tenors, "
        f"gamma={gamma:g}, p={basis.p})"
    )
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_cfg(args)
    t0 = time.perf_counter()
    curves = load_curves(args.curves)
    r0 = args.r0
    if r0 is None:
        if curves.last_observed is None:
            raise ValidationError(
                "no --r0 given and the curve sidecar has no last observed curve"
            )
        r0 = float(curves.last_observed[0])
    statics = HullWhiteStatics(args.b, args.sigma, r0)
    space = calibrate_all(curves, statics, cfg.tikhonov_mu, args.yield_convention)
    elapsed = time.perf_counter() - t0

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curves_hash = sha256_file(args.curves)
    side = save_params(
        space, out,
        extra_meta={"curves_sha256": curves_hash, "yield_convention": args.yield_convention},
    )
    RunManifest(
        "calibrate", cfg.hash(), cfg.seed, {str(args.curves): curves_hash},
        [str(out), str(side)], {"calibrate_seconds": elapsed},
    ).write(_manifest_path(out))
    failed = len(space.failed_indices)
    print(
        f"wrote {out} ({space.size} drift vectors, mu={space.mu:g}"
        + (f", {failed} rows dropped" if failed else "")
        + ")"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    space = load_params(args.params)
    instrument = InstrumentSpec.from_json(args.instrument)
    grid = _grid_from_args(args, space.statics.sigma, instrument.maturity, cfg.fdm.M)
    schedule = build_schedule(instrument, cfg.fdm.dt_days, args.checkpoint_days)
    pricer, rom_solver = instrument_solvers(
        instrument, grid, schedule, cfg.fdm.theta, args.march
    )

    t0 = time.perf_counter()
    error_model = None
    if args.strategy == "classical":
        basis, trace = classical_greedy(
            space, cfg, pricer, rom_solver, args.max_dim, args.aggregation
        )
    else:
        basis, trace, error_model = adaptive_greedy(
            space, cfg, pricer, rom_solver, args.max_dim, args.aggregation
        )
    t_q = time.perf_counter() - t0

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    params_hash = sha256_file(args.params)
    save_basis(
        basis, out,
        extra_meta={
            "params_sha256": params_hash,
            "strategy": args.strategy,
            "window": [grid.lower, grid.upper],
            "theta": cfg.fdm.theta,
            "dt_days": cfg.fdm.dt_days,
            "march": args.march,
            "instrument": instrument.kind,
        },
    )
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.json")
    save_trace(trace, trace_path, error_model)
    artifacts = [str(out), str(trace_path)]
    if not args.no_figures:
        from .figures import plot_error_model, plot_greedy_trace

        artifacts.append(str(plot_greedy_trace(trace, out.with_suffix(".trace.png"))))
        if error_model is not None:
            artifacts.append(
                str(plot_error_model(error_model, out.with_suffix(".errmodel.png")))
            )
    RunManifest(
        "train", cfg.hash(), cfg.seed, {str(args.params): params_hash},
        artifacts, {"train_seconds": t_q},
    ).write(_manifest_path(out))
    print(
        f"wrote {out} (d={basis.d}, {len(trace.records)} iterations, "
        f"stopped on {trace.terminated_reason}, {t_q:.2f}s)"
    )
    return 0


def cmd_price(args) -> int:
    cfg = _load_cfg(args)
    space = load_params(args.params)
    instrument = InstrumentSpec.from_json(args.instrument)
    params_hash = sha256_file(args.params)
    input_hashes = {str(args.params): params_hash}

    basis = None
    if args.engine == "rom":
        if not args.basis:
            raise ValidationError("--engine rom requires --basis")
        basis, header = load_basis(args.basis)
        input_hashes[str(args.basis)] = sha256_file(args.basis)
        recorded = header.get("params_sha256")
        if recorded and recorded != params_hash and not args.allow_stale:
            raise StaleArtifact(
                f"basis {args.basis} was trained on different parameters than "
                f"{args.params}; re-train or pass --allow-stale"
            )
        window = header.get("window")
        if window:
            grid = build_rate_grid(
                space.statics.sigma, 0.0, instrument.maturity, header["M"],
                window=(float(window[0]), float(window[1])),
            )
        else:
            grid = _grid_from_args(args, space.statics.sigma, instrument.maturity, header["M"])
    else:
        grid = _grid_from_args(args, space.statics.sigma, instrument.maturity, cfg.fdm.M)

    schedule = build_schedule(instrument, cfg.fdm.dt_days, args.checkpoint_days)
    horizons = tuple(args.horizons) if args.horizons else default_horizons(instrument.maturity)
    table = evaluate_scenarios(
        space, instrument, grid, schedule, args.engine, basis,
        horizons=horizons, theta=cfg.fdm.theta, march=args.march,
        horizon_mode=args.horizon_mode, workers=args.workers,
    )
    reports = table.reports()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_values(table, out)
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    metadata = {
        "engine": args.engine,
        "M": grid.size,
        "d": basis.d if basis is not None else None,
        "horizon_mode": args.horizon_mode,
        "n_scenarios": space.size,
    }
    save_report(reports, report_path, table.timings, metadata)
    artifacts = [str(out), str(report_path)]
    if not args.no_figures:
        from .figures import plot_scenario_distribution

        artifacts.append(
            str(plot_scenario_distribution(table, reports, out.with_suffix(".hist.png")))
        )
    RunManifest(
        "price", cfg.hash(), cfg.seed, input_hashes, artifacts, table.timings,
    ).write(_manifest_path(out))

    print(f"scenario values ({args.engine}, {space.size} scenarios):")
    for rep in reports:
        print(
            f"  {rep.horizon:>5g}y  favorable={rep.favorable:.6f}  "
            f"moderate={rep.moderate:.6f}  unfavorable={rep.unfavorable:.6f}"
        )
    print(f"wrote {out}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    space = load_params(args.params)
    instrument = InstrumentSpec.from_json(args.instrument)
    grid = _grid_from_args(args, space.statics.sigma, instrument.maturity, cfg.fdm.M)
    schedule = build_schedule(instrument, cfg.fdm.dt_days, args.checkpoint_days)
    results = benchmark(
        space, instrument, grid, schedule, cfg,
        strategies=args.strategies, max_dim=args.max_dim,
        theta=cfg.fdm.theta, march=args.march,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_benchmark(results, out)
    RunManifest(
        "bench", cfg.hash(), cfg.seed, {str(args.params): sha256_file(args.params)},
        [str(out)], {},
    ).write(_manifest_path(out))
    for r in results:
        print(
            f"{r.strategy:>9}: T_Q={r.t_q_seconds:.2f}s d={r.basis_dim} "
            f"hdm={r.hdm_per_solve * 1e3:.1f}ms rom={r.rom_per_solve * 1e3:.1f}ms "
            f"end-to-end speedup={r.speedup_end_to_end:.1f}x"
        )
    print(f"wrote {out}")
    return 0


# --- parser ----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file mirroring PipelineConfig")
    p.add_argument("--seed", type=int, help="override the pipeline seed")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def _add_pricing_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--params", required=True, help="calibrated drift CSV")
    p.add_argument("--instrument", required=True, help="instrument JSON")
    p.add_argument("--grid-points", type=int, help="spatial grid size M")
    p.add_argument("--dt-days", type=int, help="time step in days")
    p.add_argument("--theta", type=float, help="time-stepping weight")
    p.add_argument("--march", choices=("forward", "backward"), default="forward")
    p.add_argument(
        "--window", nargs=2, type=float, metavar=("LO", "HI"),
        help=f"rate domain cut-offs (default {DEFAULT_WINDOW})",
    )
    p.add_argument(
        "--auto-window", action="store_true",
        help="derive cut-offs from volatility instead of a fixed window",
    )
    p.add_argument(
        "--spot-rate", type=float, default=0.0,
        help="centre for --auto-window cut-offs",
    )
    p.add_argument(
        "--checkpoint-days", type=int, default=30,
        help="spacing of stored march states (default 30)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hwmor",
        description="Hull-White model order reduction pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="bootstrap yield curves from a rate history")
    _add_common(p)
    p.add_argument("--history", required=True, help="observed rate panel CSV")
    p.add_argument("--out", required=True, help="output curves CSV")
    p.add_argument("--count", type=int, help="number of curves (bootstrap_count)")
    p.add_argument("--holding-days", type=int, help="holding period in observation days")
    p.add_argument("--components", type=int, help="retained principal components")
    p.add_argument("--shift-epsilon", type=float, help="positivity shift margin")
    p.add_argument(
        "--return-formula", choices=("log_of_ratio", "ratio_of_logs"),
        default="log_of_ratio",
    )
    p.add_argument(
        "--no-forward-adjustment", action="store_true",
        help="skip the forward-rate adjustment of simulated curves",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit drift vectors to simulated curves")
    _add_common(p)
    p.add_argument("--curves", required=True, help="simulated curves CSV")
    p.add_argument("--out", required=True, help="output parameter CSV")
    p.add_argument("--b", type=float, default=0.015, help="mean reversion speed")
    p.add_argument("--sigma", type=float, default=0.006, help="short-rate volatility")
    p.add_argument(
        "--r0", type=float,
        help="initial short rate (default: first tenor of the last observed curve)",
    )
    p.add_argument("--mu", type=float, help="Tikhonov weight (default: automatic)")
    p.add_argument(
        "--yield-convention", choices=("annualized", "total"), default="annualized"
    )
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="build a reduced basis by greedy sampling")
    _add_common(p)
    _add_pricing_common(p)
    p.add_argument("--out", required=True, help="output basis (.rob)")
    p.add_argument("--trace", help="greedy trace JSON (default <out>.trace.json)")
    p.add_argument(
        "--strategy", choices=("classical", "adaptive"), default="adaptive"
    )
    p.add_argument("--energy-level", type=float, help="basis energy level in percent")
    p.add_argument("--max-dim", type=int, help="hard cap on the basis dimension")
    p.add_argument("--i-max", type=int, help="greedy iteration cap")
    p.add_argument("--candidates", type=int, help="candidate set size C")
    p.add_argument("--seed-candidates", type=int, help="random seeding size C_0")
    p.add_argument("--batch", type=int, help="surrogate batch size C_k")
    p.add_argument("--eps-tol", type=float, help="classical residual tolerance")
    p.add_argument("--e-max-tol", type=float, help="adaptive predicted error tolerance")
    p.add_argument("--aggregation", choices=("max", "rms"), default="max")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("price", help="value the instrument across all scenarios")
    _add_common(p)
    _add_pricing_common(p)
    p.add_argument("--out", required=True, help="output values CSV")
    p.add_argument("--report", help="report JSON (default <out>.report.json)")
    p.add_argument("--engine", choices=("hdm", "rom"), default="hdm")
    p.add_argument("--basis", help="reduced basis (.rob), required for rom")
    p.add_argument(
        "--allow-stale", action="store_true",
        help="price even if the basis was trained on different parameters",
    )
    p.add_argument(
        "--horizons", nargs="+", type=float,
        help="reporting horizons in years (default: 5y and maturity)",
    )
    p.add_argument("--horizon-mode", choices=("checkpoint", "rerun"), default="checkpoint")
    p.add_argument("--workers", type=int, default=1, help="solver threads")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("bench", help="time training and evaluation per strategy")
    _add_common(p)
    _add_pricing_common(p)
    p.add_argument("--out", required=True, help="output benchmark JSON")
    p.add_argument(
        "--strategies", nargs="+", choices=("classical", "adaptive"),
        default=("classical", "adaptive"),
    )
    p.add_argument("--max-dim", type=int, help="hard cap on the basis dimension")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
