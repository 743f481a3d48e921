"""Observed yield-curve data and pipeline configuration.

The input format is a delimited text file with one observation date per row:

    date,1D,1Y,2Y,...,50Y[,unit=percent|decimal]
    2015-01-02,-0.153,0.18,...,1.573
    ...

Header cells after ``date`` are tenor labels (``<n>D``, ``<n>W``, ``<n>M``,
``<n>Y``). An optional trailing ``unit=`` cell declares whether rates are
quoted in percent (divided by 100 on load) or plain decimals (default).
Dates are ISO-8601 and must be strictly increasing.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    MissingValue,
    NonMonotonicDates,
    TenorParseError,
    ValidationError,
)

_TENOR_RE = re.compile(r"^(\d+)([DWMY])$", re.IGNORECASE)

# Year fractions per unit, on the 360-day convention used by the pricing grid.
_UNIT_YEARS = {"D": 1.0 / 360.0, "W": 7.0 / 360.0, "M": 1.0 / 12.0, "Y": 1.0}


def parse_tenor(label: str) -> float:
    """Convert a tenor label such as ``3M`` or ``10Y`` to a year fraction."""
    m = _TENOR_RE.match(label.strip())
    if not m:
        raise TenorParseError(label)
    count, unit = int(m.group(1)), m.group(2).upper()
    if count == 0:
        raise TenorParseError(label)
    return count * _UNIT_YEARS[unit]


@dataclass(frozen=True)
class TenorGrid:
    """Ordered tenor points of a yield curve."""

    labels: tuple[str, ...]
    times: np.ndarray  # year fractions, strictly increasing, > 0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != times.size:
            raise ValidationError(
                f"{len(self.labels)} labels but {times.size} tenor times"
            )
        if times.size == 0:
            raise ValidationError("tenor grid is empty")
        if times[0] <= 0 or np.any(np.diff(times) <= 0):
            raise ValidationError("tenor times must be positive and strictly increasing")

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "TenorGrid":
        return cls(tuple(labels), np.array([parse_tenor(l) for l in labels]))

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class RateHistory:
    """Panel of observed rates: one row per date, one column per tenor."""

    dates: tuple[_dt.date, ...]
    grid: TenorGrid
    rates: np.ndarray  # shape (n, m), decimals

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "dates", tuple(self.dates))
        if rates.ndim != 2:
            raise ValidationError("rate matrix must be two-dimensional")
        n, m = rates.shape
        if n != len(self.dates):
            raise ValidationError(f"{len(self.dates)} dates but {n} rate rows")
        if m != self.grid.size:
            raise ValidationError(f"{self.grid.size} tenors but {m} rate columns")

    @property
    def n_observations(self) -> int:
        return self.rates.shape[0]

    @property
    def n_tenors(self) -> int:
        return self.rates.shape[1]


def load_rate_history(path: str | Path, fmt: str = "csv") -> RateHistory:
    """Read a rate panel from disk.

    Raises MissingValue (blank or unparsable cell), NonMonotonicDates, or
    TenorParseError. Row and column numbers in errors are 1-based file
    positions (the header is row 1).
    """
    if fmt != "csv":
        raise ValidationError(f"unsupported rate history format {fmt!r}")
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path} is empty") from None
        if not header or header[0].strip().lower() != "date":
            raise ValidationError(f"{path}: first header cell must be 'date'")

        scale = 1.0
        labels = [c.strip() for c in header[1:]]
        if labels and labels[-1].lower().startswith("unit="):
            unit = labels.pop().split("=", 1)[1].strip().lower()
            if unit == "percent":
                scale = 0.01
            elif unit != "decimal":
                raise ValidationError(f"{path}: unknown unit {unit!r}")
        if not labels:
            raise ValidationError(f"{path}: no tenor columns")
        grid = TenorGrid.from_labels(labels)

        dates: list[_dt.date] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 1 + grid.size:
                raise MissingValue(line_no, len(row) + 1)
            try:
                when = _dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise MissingValue(line_no, 1) from None
            if dates and when <= dates[-1]:
                raise NonMonotonicDates(line_no)
            values = []
            for col, cell in enumerate(row[1 : 1 + grid.size], start=2):
                cell = cell.strip()
                if not cell:
                    raise MissingValue(line_no, col)
                try:
                    values.append(float(cell))
                except ValueError:
                    raise MissingValue(line_no, col) from None
            dates.append(when)
            rows.append(values)

    if not rows:
        raise ValidationError(f"{path}: no observation rows")
    return RateHistory(tuple(dates), grid, np.array(rows) * scale)


def write_rate_history(history: RateHistory, path: str | Path) -> None:
    """Write a rate panel as CSV (decimal units, shortest round-trip floats)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *history.grid.labels])
        for when, row in zip(history.dates, history.rates):
            writer.writerow([when.isoformat(), *(repr(float(v)) for v in row)])


def positivity_shift(history: RateHistory, shift_epsilon: float) -> tuple[RateHistory, float]:
    """Shift all rates by a common constant so every entry becomes positive.

    gamma = 0 when the panel is already strictly positive, otherwise
    -min(rates) + shift_epsilon. Returns the shifted panel and gamma; the
    shift is removed again after bootstrapping.
    """
    if shift_epsilon <= 0:
        raise ValidationError(f"shift_epsilon must be positive, got {shift_epsilon!r}")
    lowest = float(history.rates.min())
    gamma = 0.0 if lowest > 0.0 else -lowest + shift_epsilon
    if gamma == 0.0:
        return history, 0.0
    shifted = RateHistory(history.dates, history.grid, history.rates + gamma)
    return shifted, gamma


# --- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class GreedyConfig:
    I_max: int = 10      # outer iteration cap
    C: int = 40          # candidate set size per iteration
    C_0: int = 20        # random candidates seeding the adaptive set
    C_k: int = 10        # surrogate-ranked candidates added per inner round
    eps_tol: float = 1e-4     # residual tolerance (classical stopping rule)
    e_max_tol: float = 1e-3   # predicted true-error tolerance (adaptive rule)

    def validate(self) -> None:
        if self.I_max < 2:
            raise ValidationError("greedy.I_max must be at least 2")
        if self.C_0 < 1 or self.C_k < 1:
            raise ValidationError("greedy.C_0 and greedy.C_k must be positive")
        if self.C <= self.C_0:
            raise ValidationError("greedy.C must exceed greedy.C_0")
        if self.eps_tol <= 0 or self.e_max_tol <= 0:
            raise ValidationError("greedy tolerances must be positive")


@dataclass(frozen=True)
class FdmConfig:
    M: int = 600         # spatial grid points
    theta: float = 0.5   # time-stepping weight
    dt_days: int = 1     # step size on a 360-day year

    def validate(self) -> None:
        if self.M < 3:
            raise ValidationError("fdm.M must be at least 3")
        if not 0.0 <= self.theta <= 1.0:
            raise ValidationError("fdm.theta must lie in [0, 1]")
        if self.dt_days < 1:
            raise ValidationError("fdm.dt_days must be a positive whole number of days")


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable knobs for the full simulation-to-report pipeline.

    JSON config files mirror these field names exactly; nested sections are
    objects under ``greedy`` and ``fdm``. ``pca_components`` and
    ``tikhonov_mu`` accept null for the automatic rules (smallest component
    count reaching 99% cumulative energy; 1e-8 times the squared Frobenius
    norm of the calibration matrix).
    """

    shift_epsilon: float = 1e-4
    energy_level: float = 99.99
    seed: int = 1234
    bootstrap_count: int = 10_000
    holding_period_days: int = 2_600
    pca_components: int | None = None
    greedy: GreedyConfig = field(default_factory=GreedyConfig)
    fdm: FdmConfig = field(default_factory=FdmConfig)
    tikhonov_mu: float | None = None

    def validate(self) -> "PipelineConfig":
        if self.shift_epsilon <= 0:
            raise ValidationError("shift_epsilon must be positive")
        if not 0.0 < self.energy_level <= 100.0:
            raise ValidationError("energy_level must lie in (0, 100]")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.bootstrap_count < 1:
            raise ValidationError("bootstrap_count must be at least 1")
        if self.holding_period_days < 1:
            raise ValidationError("holding_period_days must be at least 1")
        if self.pca_components is not None and self.pca_components < 1:
            raise ValidationError("pca_components must be positive or null")
        if self.tikhonov_mu is not None and self.tikhonov_mu < 0:
            raise ValidationError("tikhonov_mu must be non-negative or null")
        self.greedy.validate()
        self.fdm.validate()
        return self

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Stable digest of the effective configuration."""
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_ENV_PREFIX = "HWMOR_"

_INT_FIELDS = {"seed", "bootstrap_count", "holding_period_days", "pca_components",
               "I_max", "C", "C_0", "C_k", "M", "dt_days"}
_NULLABLE = {"pca_components", "tikhonov_mu"}


def _coerce(section: str | None, name: str, raw):
    key = name
    if isinstance(raw, str):
        raw = raw.strip()
        if raw.lower() in ("null", "none", "") and key in _NULLABLE:
            return None
    if raw is None:
        if key in _NULLABLE:
            return None
        raise ValidationError(f"config field {name!r} may not be null")
    try:
        return int(raw) if key in _INT_FIELDS else float(raw)
    except (TypeError, ValueError):
        where = f"{section}.{name}" if section else name
        raise ValidationError(f"config field {where!r} has invalid value {raw!r}") from None


def _merge(base: dict, update: dict, source: str) -> None:
    for key, value in update.items():
        if key in ("greedy", "fdm"):
            if not isinstance(value, dict):
                raise ValidationError(f"{source}: section {key!r} must be an object")
            for sub, sval in value.items():
                if sub not in base[key]:
                    raise ValidationError(f"{source}: unknown config field {key}.{sub}")
                base[key][sub] = _coerce(key, sub, sval)
        elif key in base:
            base[key] = _coerce(None, key, value)
        else:
            raise ValidationError(f"{source}: unknown config field {key!r}")


def _env_updates(environ) -> dict:
    """Collect HWMOR_* overrides, e.g. HWMOR_SEED=7 or HWMOR_GREEDY_I_MAX=5."""
    flat = {f.name for f in dataclasses.fields(PipelineConfig)} - {"greedy", "fdm"}
    updates: dict = {}
    for key, value in environ.items():
        if not key.startswith(_ENV_PREFIX):
            continue
        name = key[len(_ENV_PREFIX):].lower()
        if name in flat:
            updates[name] = value
        elif name.startswith("greedy_"):
            updates.setdefault("greedy", {})[_match_greedy(name[7:])] = value
        elif name.startswith("fdm_"):
            updates.setdefault("fdm", {})[name[4:].lower()] = value
        else:
            raise ValidationError(f"unknown environment override {key}")
    return updates


def _match_greedy(name: str) -> str:
    for f in dataclasses.fields(GreedyConfig):
        if f.name.lower() == name.lower():
            return f.name
    return name


def load_config(
    path: str | Path | None = None,
    overrides: dict | None = None,
    environ=None,
) -> PipelineConfig:
    """Resolve the effective configuration.

    Precedence, lowest to highest: built-in defaults, JSON config file,
    HWMOR_* environment variables, explicit overrides (CLI flags).
    """
    base = dataclasses.asdict(PipelineConfig())
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ValidationError(f"config {path} must contain a JSON object")
        _merge(base, data, str(path))
    _merge(base, _env_updates(os.environ if environ is None else environ), "environment")
    if overrides:
        _merge(base, overrides, "overrides")
    cfg = PipelineConfig(
        greedy=GreedyConfig(**base.pop("greedy")),
        fdm=FdmConfig(**base.pop("fdm")),
        **base,
    )
    return cfg.validate()


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
