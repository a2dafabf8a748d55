"""Per-period discontinuity estimators: conventional, bias estimate, bias-corrected."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

from .data import ABOVE, BELOW, PanelDataset, side_slice
from .exceptions import FitError, PolynomialOrderError
from .local_fit import SideFit, fit_side

if TYPE_CHECKING:  # pragma: no cover
    from .estimators import FitSpec

OUTCOME = "outcome"
TREATMENT = "treatment"


@dataclass(frozen=True)
class PeriodDiscontinuity:
    """Conventional and bias-corrected jump for one period.

    ``bias_corrected == conventional - bias`` holds exactly. The four
    underlying fits (main order p at h, pilot order q at b, each side) are
    kept as the building blocks for every variance formula.
    """

    period: int
    conventional: float
    bias: float
    bias_corrected: float
    target_variable: str
    fit_above: SideFit
    fit_below: SideFit
    pilot_above: SideFit
    pilot_below: SideFit

    @property
    def fits(self) -> tuple[SideFit, SideFit, SideFit, SideFit]:
        return (self.fit_above, self.fit_below, self.pilot_above, self.pilot_below)

    def side_bias(self, side: str) -> float:
        """This side's contribution to the bias estimate."""
        main = self.fit_above if side == ABOVE else self.fit_below
        pilot = self.pilot_above if side == ABOVE else self.pilot_below
        h = main.bandwidth
        return 0.5 * h * h * pilot.second_derivative() * main.bias_factor()


def _tagged_fit(ds, period, side, p, kernel, h, response):
    try:
        return fit_side(side_slice(ds, period, side), ds.cutoff, p, kernel, h, response)
    except FitError as exc:
        raise type(exc)(f"period {period}, side {side}: {exc}") from exc


def _response_name(target: str) -> str:
    if target not in (OUTCOME, TREATMENT):
        raise ValueError(f"target must be {OUTCOME!r} or {TREATMENT!r}, got {target!r}")
    return "outcome" if target == OUTCOME else "treated"


def discontinuity(ds: PanelDataset, period: int, spec: "FitSpec", target: str = OUTCOME) -> float:
    """Jump of the fitted conditional mean (or treatment probability) at the cutoff."""
    resp = _response_name(target)
    h = spec.h_for(period)
    k = spec.kernel_for(period)
    above = _tagged_fit(ds, period, ABOVE, spec.p, k, h, resp)
    below = _tagged_fit(ds, period, BELOW, spec.p, k, h, resp)
    return above.intercept() - below.intercept()


def bias_estimate(ds: PanelDataset, period: int, spec: "FitSpec", target: str = OUTCOME) -> float:
    """Plug-in estimate of the first-order smoothing bias of the jump."""
    return bc_discontinuity(ds, period, spec, target).bias


def bc_discontinuity(
    ds: PanelDataset, period: int, spec: "FitSpec", target: str = OUTCOME
) -> PeriodDiscontinuity:
    """Conventional jump, estimated bias and bias-corrected jump for one period.

    The bias combines curvature estimates from pilot fits of order q at
    bandwidth b with weighted-moment factors of the main order-p fits; the
    pilot reuses the main fit's kernel.
    """
    if spec.q < 2:
        raise PolynomialOrderError(f"bias correction requires q >= 2, got {spec.q}")
    resp = _response_name(target)
    h, b = spec.h_for(period), spec.b_for(period)
    k = spec.kernel_for(period)
    above_slice = side_slice(ds, period, ABOVE)
    below_slice = side_slice(ds, period, BELOW)

    def tagged(sl, p_ord, bw):
        try:
            return fit_side(sl, ds.cutoff, p_ord, k, bw, resp)
        except FitError as exc:
            raise type(exc)(f"period {period}, side {sl.side}: {exc}") from exc

    fit_above = tagged(above_slice, spec.p, h)
    fit_below = tagged(below_slice, spec.p, h)
    pilot_above = tagged(above_slice, spec.q, b)
    pilot_below = tagged(below_slice, spec.q, b)

    conventional = fit_above.intercept() - fit_below.intercept()
    bias_above = 0.5 * h * h * pilot_above.second_derivative() * fit_above.bias_factor()
    bias_below = 0.5 * h * h * pilot_below.second_derivative() * fit_below.bias_factor()
    bias = bias_above - bias_below
    return PeriodDiscontinuity(
        period=period,
        conventional=conventional,
        bias=bias,
        bias_corrected=conventional - bias,
        target_variable=target,
        fit_above=fit_above,
        fit_below=fit_below,
        pilot_above=pilot_above,
        pilot_below=pilot_below,
    )


def analyze_periods(
    ds: PanelDataset,
    spec: "FitSpec",
    periods: Iterable[int],
    target: str = OUTCOME,
) -> dict[int, PeriodDiscontinuity]:
    """Fit every requested period once; shared by estimators and diagnostics."""
    return {t: bc_discontinuity(ds, t, spec, target) for t in sorted(set(periods))}


@dataclass(frozen=True)
class EventStudyRow:
    period: int
    conventional: float | None
    bias_corrected: float | None
    se: float | None
    se_bc: float | None
    ci_lower: float | None
    ci_upper: float | None
    bc_ci_lower: float | None
    bc_ci_upper: float | None
    status: str = "ok"


def event_study(ds: PanelDataset, spec: "FitSpec") -> list[EventStudyRow]:
    """Per-period jumps with standard errors and confidence intervals.

    Periods whose fits fail are flagged with the error category rather than
    silently dropped.
    """
    from scipy.stats import norm

    from .covariance import DiscontinuityCovariance

    z = float(norm.ppf(1 - spec.alpha / 2))
    rows = []
    for t in ds.periods:
        try:
            disc = bc_discontinuity(ds, t, spec)
            engine = DiscontinuityCovariance({t: disc})
            se = engine.period_variance(t, "conventional") ** 0.5
            se_bc = engine.period_variance(t, "bias_corrected") ** 0.5
        except FitError as exc:
            rows.append(
                EventStudyRow(t, None, None, None, None, None, None, None, None,
                              status=f"error:{exc.category}")
            )
            continue
        rows.append(
            EventStudyRow(
                period=t,
                conventional=disc.conventional,
                bias_corrected=disc.bias_corrected,
                se=se,
                se_bc=se_bc,
                ci_lower=disc.conventional - z * se,
                ci_upper=disc.conventional + z * se,
                bc_ci_lower=disc.bias_corrected - z * se_bc,
                bc_ci_upper=disc.bias_corrected + z * se_bc,
            )
        )
    return rows
