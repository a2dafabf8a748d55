"""CSV ingestion/serialization and strict key-value config parsing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .data import Observation, PanelDataset, PeriodTaxonomy
from .exceptions import ConfigError, CsvParseError

PANEL_HEADER = ["unit_id", "period", "running", "treated", "outcome"]
_MAX_DIAGNOSTICS = 20


def parse_panel_csv(
    path: str | Path,
    *,
    cutoff: float,
    taxonomy: PeriodTaxonomy,
    sampling: str,
) -> PanelDataset:
    """Read a long-format panel CSV into a dataset.

    The header must be exactly ``unit_id,period,running,treated,outcome``.
    Problems are reported with line numbers; parsing stops after
    accumulating 20 diagnostics.
    """
    diagnostics: list[str] = []
    observations: list[Observation] = []
    seen: set[tuple[str, int]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(["line 1: empty file"]) from None
        if header != PANEL_HEADER:
            raise CsvParseError(
                [f"line 1: header must be {','.join(PANEL_HEADER)!r}, got {','.join(header)!r}"]
            )
        for lineno, row in enumerate(reader, start=2):
            if len(diagnostics) >= _MAX_DIAGNOSTICS:
                diagnostics.append("further diagnostics suppressed")
                break
            if not row:
                continue
            if len(row) != 5:
                diagnostics.append(f"line {lineno}: expected 5 fields, got {len(row)}")
                continue
            unit, period_s, running_s, treated_s, outcome_s = (f.strip() for f in row)
            try:
                period = int(period_s)
            except ValueError:
                diagnostics.append(f"line {lineno}: period {period_s!r} is not an integer")
                continue
            try:
                running = float(running_s)
                if not math.isfinite(running):
                    raise ValueError
            except ValueError:
                diagnostics.append(f"line {lineno}: running {running_s!r} is not a finite number")
                continue
            if treated_s not in ("0", "1"):
                diagnostics.append(f"line {lineno}: treated must be 0 or 1, got {treated_s!r}")
                continue
            try:
                outcome = float(outcome_s)
                if not math.isfinite(outcome):
                    raise ValueError
            except ValueError:
                diagnostics.append(f"line {lineno}: outcome {outcome_s!r} is not a finite number")
                continue
            key = (unit, period)
            if key in seen:
                diagnostics.append(f"line {lineno}: duplicate (unit_id, period) = {key!r}")
                continue
            seen.add(key)
            observations.append(Observation(unit, period, running, int(treated_s), outcome))
    if diagnostics:
        raise CsvParseError(diagnostics)
    return PanelDataset.from_observations(
        observations, cutoff=cutoff, taxonomy=taxonomy, sampling=sampling
    )


def write_panel_csv(ds: PanelDataset, path: str | Path) -> None:
    """Serialize a dataset back to the panel CSV schema (round-trips exactly)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PANEL_HEADER)
        for obs in ds.observations():
            writer.writerow(
                [obs.unit_id, obs.period, repr(obs.running), obs.treated, repr(obs.outcome)]
            )


def write_table_csv(rows: list[dict], path, columns: list[str] | None = None) -> None:
    """Write homogeneous dict rows as CSV; floats use shortest round-trip repr."""
    if columns is None:
        columns = list(rows[0]) if rows else []

    def fmt(v: Any) -> Any:
        if isinstance(v, float):
            return repr(v)
        if v is None:
            return ""
        return v

    writer = csv.writer(path) if hasattr(path, "write") else None
    if writer is None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for row in rows:
                w.writerow([fmt(row.get(c)) for c in columns])
    else:
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row.get(c)) for c in columns])


# --- configuration ---------------------------------------------------------

def _parse_int_list(raw: str) -> list[int]:
    if not raw.strip():
        return []
    try:
        return [int(x) for x in raw.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") from None


def _parse_weights(raw: str):
    raw = raw.strip()
    if raw in ("uniform", "nearest", "minvar"):
        return raw
    out = {}
    try:
        for item in raw.split(","):
            period, value = item.split(":")
            out[int(period)] = float(value)
    except ValueError:
        raise ConfigError(
            f"weights must be 'uniform', 'nearest', 'minvar' or 'period:weight,...', got {raw!r}"
        ) from None
    return out


def _parse_grid(raw: str) -> list[tuple[str, int, float]]:
    cells = []
    try:
        for item in raw.split(";"):
            dgp, n, h = item.split(":")
            cells.append((dgp.strip(), int(n), float(h)))
    except ValueError:
        raise ConfigError(f"grid must be 'DGP:n:h;DGP:n:h;...', got {raw!r}") from None
    return cells


def _parse_float_list(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {raw!r}") from None


#: key -> parser. Unknown keys are rejected outright.
CONFIG_SCHEMA = {
    "input": str,
    "out": str,
    "cutoff": float,
    "sampling": str,
    "seed": int,
    "taxonomy.t0": _parse_int_list,
    "taxonomy.t1": _parse_int_list,
    "taxonomy.rd": _parse_int_list,
    "taxonomy.target": int,
    "fit.h": float,
    "fit.b": float,
    "fit.p": int,
    "fit.q": int,
    "fit.kernel": str,
    "fit.weights": _parse_weights,
    "fit.trend": str,
    "fit.estimand": str,
    "fit.design": str,
    "fit.scheme": str,
    "fit.alpha": float,
    "equivalence.periods": _parse_int_list,
    "equivalence.delta": float,
    "composition.baseline": int,
    "composition.running_period": int,
    "switchers.periods": _parse_int_list,
    "density.period": int,
    "density.bin_width": float,
    "density.omit_switchers": lambda raw: raw.strip().lower() in ("1", "true", "yes"),
    "sim.grid": _parse_grid,
    "sim.reps": int,
    "sim.workers": int,
    "sim.dgp": str,
    "sim.n": int,
    "sim.beta_a": float,
    "sim.beta_b": float,
    "sim.shift": float,
    "sim.scale": float,
    "sim.pv_slope": float,
    "sim.pv_noise_mean": float,
    "sim.pv_noise_sd": float,
    "sim.d1": float,
    "sim.d2": float,
    "sim.unit_fe_mean": float,
    "sim.unit_fe_sd": float,
    "sim.time_fe_1": float,
    "sim.time_fe_2": float,
    "sim.noise_sd": float,
}

_POLY_KEYS = {
    f"sim.poly.{t}.{side}" for t in ("1", "2") for side in ("above", "below")
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse flat ``key = value`` lines; '#' starts a comment.

    Unknown keys are errors: a typoed key silently changing estimates is
    worse than a failure.
    """
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = parse_config_value(key, value, f"{source}:{lineno}")
    return values


def parse_config_value(key: str, value: str, where: str = "<config>") -> Any:
    if key in _POLY_KEYS:
        coeffs = _parse_float_list(value)
        if len(coeffs) != 5:
            raise ConfigError(f"{where}: {key} needs 5 coefficients (powers 1..5)")
        return coeffs
    parser = CONFIG_SCHEMA.get(key)
    if parser is None:
        raise ConfigError(f"{where}: unknown configuration key {key!r}")
    try:
        return parser(value)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: invalid value for {key}: {value!r} ({exc})") from None


def load_config(path: str | Path) -> dict[str, Any]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), source=str(path))


@dataclass
class RunConfig:
    """Merged configuration for one CLI invocation."""

    values: dict[str, Any] = field(default_factory=dict)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def require(self, key: str):
        if key not in self.values:
            raise ConfigError(f"missing required configuration key {key!r}")
        return self.values[key]

    def taxonomy(self) -> PeriodTaxonomy:
        return PeriodTaxonomy(
            t0_periods=frozenset(self.get("taxonomy.t0", [])),
            t1_periods=frozenset(self.get("taxonomy.t1", [])),
            rd_periods=frozenset(self.require("taxonomy.rd")),
            target=self.require("taxonomy.target"),
        )

    def dataset(self) -> PanelDataset:
        return parse_panel_csv(
            self.require("input"),
            cutoff=self.require("cutoff"),
            taxonomy=self.taxonomy(),
            sampling=self.get("sampling", "CS"),
        )

    def fit_spec(self) -> "Any":
        from .estimators import FitSpec

        kwargs = dict(h=self.require("fit.h"))
        optional = {
            "fit.b": "b",
            "fit.p": "p",
            "fit.q": "q",
            "fit.kernel": "kernel",
            "fit.weights": "weights",
            "fit.trend": "trend",
            "fit.estimand": "estimand",
            "fit.design": "design",
            "fit.scheme": "scheme",
            "fit.alpha": "alpha",
        }
        for key, name in optional.items():
            if key in self.values:
                kwargs[name] = self.values[key]
        return FitSpec(**kwargs)

    def sim_overrides(self) -> dict[str, Any]:
        """DGP parameter overrides shared by every grid cell of a study."""
        from .simulate import DEFAULT_POLY

        mapping = {
            "sim.beta_a": "beta_a",
            "sim.beta_b": "beta_b",
            "sim.shift": "shift",
            "sim.scale": "scale",
            "sim.pv_slope": "pv_slope",
            "sim.pv_noise_mean": "pv_noise_mean",
            "sim.pv_noise_sd": "pv_noise_sd",
            "sim.d1": "d1",
            "sim.d2": "d2",
            "sim.unit_fe_mean": "unit_fe_mean",
            "sim.unit_fe_sd": "unit_fe_sd",
            "sim.noise_sd": "noise_sd",
        }
        kwargs = {name: self.values[key] for key, name in mapping.items() if key in self.values}
        if "sim.time_fe_1" in self.values or "sim.time_fe_2" in self.values:
            kwargs["time_fe"] = (
                self.get("sim.time_fe_1", -46.0),
                self.get("sim.time_fe_2", 0.0),
            )
        poly_overrides = {k: v for k, v in self.values.items() if k in _POLY_KEYS}
        if poly_overrides:
            poly = dict(DEFAULT_POLY)
            for key, value in poly_overrides.items():
                _, _, t, side = key.split(".")
                poly[(t, side)] = value
            kwargs["poly"] = poly
        return kwargs

    def sim_config(self) -> "Any":
        from .simulate import SimConfig

        return SimConfig(
            dgp=self.require("sim.dgp"),
            n=self.require("sim.n"),
            seed=self.get("seed"),
            **self.sim_overrides(),
        )


def build_run_config(
    config_path: str | None, overrides: Mapping[str, str] | None = None
) -> RunConfig:
    """File values overlaid by CLI overrides (CLI wins)."""
    values: dict[str, Any] = {}
    if config_path:
        values.update(load_config(config_path))
    for key, raw in (overrides or {}).items():
        values[key] = parse_config_value(key, raw, "<cli>")
    return RunConfig(values)
