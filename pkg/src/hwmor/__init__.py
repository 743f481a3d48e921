"""Reduced-order scenario pricing for Hull-White short-rate models.

The pipeline runs in four stages: bootstrap yield curves from an observed
rate history (``curve_sim``), calibrate one piecewise-constant drift vector
per curve (``calibration``), build a reduced basis for the pricing operator
by greedy sampling (``rom``, ``greedy``), and evaluate percentile scenario
reports over the whole curve set (``report``). ``cli`` exposes the same
stages as the ``hwmor`` command.
"""

__version__ = "0.1.0"

from .calibration import (
    DriftVector,
    HullWhiteStatics,
    ParameterGroup,
    ParameterSpace,
    assemble_calibration_system,
    bond_price_closed_form,
    calibrate_all,
    calibrate_drift,
    load_params,
    save_params,
    select_mu_discrepancy,
)
from .curve_sim import (
    SimulationBasis,
    YieldCurveSet,
    bootstrap_curves,
    build_simulation_basis,
    load_curves,
    log_returns,
    save_curves,
)
from .errors import (
    NumericalError,
    PipelineError,
    StaleArtifact,
    ValidationError,
)
from .fdm import (
    HdmSolution,
    InstrumentSpec,
    MarchSchedule,
    RateGrid,
    build_rate_grid,
    build_schedule,
    price_instrument,
)
from .greedy import (
    ErrorModel,
    GreedyTrace,
    SurrogateModel,
    adaptive_greedy,
    classical_greedy,
    evaluate_surrogate,
    fit_error_model,
    fit_pcr_surrogate,
    instrument_solvers,
)
from .market_data import (
    FdmConfig,
    GreedyConfig,
    PipelineConfig,
    RateHistory,
    TenorGrid,
    load_config,
    load_rate_history,
    parse_tenor,
    positivity_shift,
)
from .report import (
    ScenarioReport,
    ScenarioTable,
    benchmark,
    evaluate_scenarios,
    percentile_scenarios,
)
from .rom import (
    ReducedBasis,
    RomSolution,
    SnapshotMatrix,
    build_basis,
    load_basis,
    residual_estimator,
    save_basis,
    solve_rom,
)

__all__ = [
    "__version__",
    "DriftVector",
    "HullWhiteStatics",
    "ParameterGroup",
    "ParameterSpace",
    "assemble_calibration_system",
    "bond_price_closed_form",
    "calibrate_all",
    "calibrate_drift",
    "load_params",
    "save_params",
    "select_mu_discrepancy",
    "SimulationBasis",
    "YieldCurveSet",
    "bootstrap_curves",
    "build_simulation_basis",
    "load_curves",
    "log_returns",
    "save_curves",
    "NumericalError",
    "PipelineError",
    "StaleArtifact",
    "ValidationError",
    "HdmSolution",
    "InstrumentSpec",
    "MarchSchedule",
    "RateGrid",
    "build_rate_grid",
    "build_schedule",
    "price_instrument",
    "ErrorModel",
    "GreedyTrace",
    "SurrogateModel",
    "adaptive_greedy",
    "classical_greedy",
    "evaluate_surrogate",
    "fit_error_model",
    "fit_pcr_surrogate",
    "instrument_solvers",
    "FdmConfig",
    "GreedyConfig",
    "PipelineConfig",
    "RateHistory",
    "TenorGrid",
    "load_config",
    "load_rate_history",
    "parse_tenor",
    "positivity_shift",
    "ScenarioReport",
    "ScenarioTable",
    "benchmark",
    "evaluate_scenarios",
    "percentile_scenarios",
    "ReducedBasis",
    "RomSolution",
    "SnapshotMatrix",
    "build_basis",
    "load_basis",
    "residual_estimator",
    "save_basis",
    "solve_rom",
]
