"""Diagnostics for time-varying running variables.

Cross-period discontinuities classify one period's outcomes by another
period's running values; their difference against the own-period jump
isolates the composition effect of units crossing the cutoff. Also counts
treatment switchers and exports running-variable histograms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .covariance import _sandwich_cross, _sandwich_variance
from .data import ABOVE, BELOW, PanelDataset, SideSlice
from .exceptions import BandwidthError, SchemeError, TaxonomyError
from .local_fit import SideFit, fit_side

if TYPE_CHECKING:  # pragma: no cover
    from .estimators import FitSpec


@dataclass(frozen=True)
class CrossPeriodJump:
    """Outcome jump of period ``outcome_period`` classified by the running
    values of ``running_period``."""

    running_period: int
    outcome_period: int
    value: float
    fit_above: SideFit
    fit_below: SideFit


@dataclass(frozen=True)
class CompositionEstimate:
    outcome_period: int
    alt_running_period: int
    point: float
    se: float
    components: tuple[CrossPeriodJump, CrossPeriodJump]


@dataclass(frozen=True)
class SwitcherSummary:
    total_units: int
    switchers: int
    upward: int
    downward: int
    switcher_ids: tuple


@dataclass(frozen=True)
class DensityBin:
    bin_left: float
    bin_right: float
    count: int
    count_no_switchers: int


def _require_panel(ds: PanelDataset, what: str) -> None:
    if ds.sampling == "CS":
        raise SchemeError(f"{what} requires panel data; dataset is declared CS")


def _matched(ds: PanelDataset, s: int, t: int):
    units_s, running_s, _, _ = ds.period_arrays(s)
    units_t, _, _, outcome_t = ds.period_arrays(t)
    common, idx_s, idx_t = np.intersect1d(units_s, units_t, return_indices=True)
    return common, running_s[idx_s], outcome_t[idx_t]


def _classified_jump(
    ds: PanelDataset,
    s: int,
    t: int,
    spec: "FitSpec",
    units: np.ndarray,
    running: np.ndarray,
    outcome: np.ndarray,
) -> CrossPeriodJump:
    h = spec.h_for(t)
    kernel = spec.kernel_for(t)
    fits = {}
    for side in (ABOVE, BELOW):
        mask = running >= ds.cutoff if side == ABOVE else running < ds.cutoff
        sl = SideSlice(t, side, units[mask], running[mask],
                       np.zeros(int(mask.sum()), dtype=np.int64), outcome[mask])
        fits[side] = fit_side(sl, ds.cutoff, spec.p, kernel, h)
    return CrossPeriodJump(
        running_period=s,
        outcome_period=t,
        value=fits[ABOVE].intercept() - fits[BELOW].intercept(),
        fit_above=fits[ABOVE],
        fit_below=fits[BELOW],
    )


def _cross_period_fits(ds: PanelDataset, s: int, t: int, spec: "FitSpec") -> CrossPeriodJump:
    units, running, outcome = _matched(ds, s, t)
    return _classified_jump(ds, s, t, spec, units, running, outcome)


def cross_period_discontinuity(
    ds: PanelDataset, running_period: int, outcome_period: int, spec: "FitSpec"
) -> float:
    """Jump of period-t outcomes at the cutoff of period-s running values."""
    _require_panel(ds, "cross-period discontinuity")
    return _cross_period_fits(ds, running_period, outcome_period, spec).value


def _jump_difference_variance(a: CrossPeriodJump, b: CrossPeriodJump) -> float:
    """Variance of (jump_a - jump_b) for two fits of the same period's
    outcomes under different classifications; all four matched-unit
    covariance blocks enter because units may change sides."""
    var = 0.0
    for jump in (a, b):
        for fit in (jump.fit_above, jump.fit_below):
            var += _sandwich_variance(fit, fit.residual_values**2)

    def cov(fit_1: SideFit, fit_2: SideFit) -> float:
        _, i1, i2 = np.intersect1d(fit_1.unit_ids, fit_2.unit_ids, return_indices=True)
        if len(i1) == 0:
            return 0.0
        products = fit_1.residual_values[i1] * fit_2.residual_values[i2]
        return _sandwich_cross(fit_1, fit_2, i1, i2, products)

    cross = (
        cov(a.fit_above, b.fit_above)
        + cov(a.fit_below, b.fit_below)
        - cov(a.fit_above, b.fit_below)
        - cov(a.fit_below, b.fit_above)
    )
    return var - 2.0 * cross


def composition_effect(
    ds: PanelDataset, outcome_period: int, alt_running_period: int, spec: "FitSpec"
) -> CompositionEstimate:
    """Change in the outcome jump caused solely by re-classifying units with
    another period's running values.

    The outcome period must be one where all units share treatment status;
    in an RD period the observed outcome mixes potential outcomes and the
    effect is not interpretable.
    """
    _require_panel(ds, "composition effect")
    if outcome_period in ds.taxonomy.rd_periods:
        raise TaxonomyError(
            f"composition effect needs an all-treated or all-untreated outcome period; "
            f"{outcome_period} is an RD period"
        )
    # both jumps use the units observed in both periods, so the difference
    # isolates the re-classification and is structurally zero under PC even
    # in unbalanced panels
    t0, s = outcome_period, alt_running_period
    units, running_alt, outcome = _matched(ds, s, t0)
    units_base, running_base, _, _ = ds.period_arrays(t0)
    _, _, idx = np.intersect1d(units, units_base, return_indices=True)
    alt = _classified_jump(ds, s, t0, spec, units, running_alt, outcome)
    base = _classified_jump(ds, t0, t0, spec, units, running_base[idx], outcome)
    var = _jump_difference_variance(alt, base)
    return CompositionEstimate(
        outcome_period=outcome_period,
        alt_running_period=alt_running_period,
        point=alt.value - base.value,
        se=max(var, 0.0) ** 0.5,
        components=(alt, base),
    )


def switcher_ids(ds: PanelDataset, period_a: int, period_b: int) -> tuple:
    """Units whose side of the cutoff differs between the two periods."""
    units_a, running_a, _, _ = ds.period_arrays(period_a)
    units_b, running_b, _, _ = ds.period_arrays(period_b)
    common, idx_a, idx_b = np.intersect1d(units_a, units_b, return_indices=True)
    above_a = running_a[idx_a] >= ds.cutoff
    above_b = running_b[idx_b] >= ds.cutoff
    return tuple(common[above_a != above_b].tolist())


def switcher_summary(ds: PanelDataset, period_a: int, period_b: int) -> SwitcherSummary:
    """Count units crossing the cutoff between two periods, by direction."""
    _require_panel(ds, "switcher summary")
    units_a, running_a, _, _ = ds.period_arrays(period_a)
    units_b, running_b, _, _ = ds.period_arrays(period_b)
    common, idx_a, idx_b = np.intersect1d(units_a, units_b, return_indices=True)
    above_a = running_a[idx_a] >= ds.cutoff
    above_b = running_b[idx_b] >= ds.cutoff
    upward = int((~above_a & above_b).sum())
    downward = int((above_a & ~above_b).sum())
    ids = tuple(common[above_a != above_b].tolist())
    return SwitcherSummary(
        total_units=len(common),
        switchers=upward + downward,
        upward=upward,
        downward=downward,
        switcher_ids=ids,
    )


def _global_switchers(ds: PanelDataset) -> set:
    """Units whose side of the cutoff is not constant across their observed periods."""
    side_by_unit: dict[object, bool] = {}
    out: set = set()
    for t in ds.periods:
        units, running, _, _ = ds.period_arrays(t)
        above = running >= ds.cutoff
        for u, a in zip(units.tolist(), above.tolist()):
            prev = side_by_unit.get(u)
            if prev is None:
                side_by_unit[u] = a
            elif prev != a:
                out.add(u)
    return out


def density_export(
    ds: PanelDataset, period: int, bin_width: float, omit_switchers: bool = False
) -> list[DensityBin]:
    """Histogram of the running variable with bins aligned so the cutoff is
    a bin edge; optionally also counts after excluding treatment switchers.

    With ``omit_switchers`` disabled the exclusion column simply repeats the
    full counts. An unknown period yields an empty table.
    """
    if not bin_width > 0:
        raise BandwidthError(f"bin width must be positive, got {bin_width}")
    if omit_switchers:
        _require_panel(ds, "switcher omission")
    if not ds.has_period(period):
        return []
    units, running, _, _ = ds.period_arrays(period)
    if len(running) == 0:
        return []
    c = ds.cutoff
    k_min = int(np.floor((running.min() - c) / bin_width))
    k_max = int(np.ceil((running.max() - c) / bin_width))
    if k_max == k_min:
        k_max += 1
    edges = c + bin_width * np.arange(k_min, k_max + 1)
    counts, _ = np.histogram(running, bins=edges)
    if omit_switchers:
        keep = ~np.isin(units, list(_global_switchers(ds)))
        kept, _ = np.histogram(running[keep], bins=edges)
    else:
        kept = counts
    return [
        DensityBin(float(edges[i]), float(edges[i + 1]), int(counts[i]), int(kept[i]))
        for i in range(len(counts))
    ]
