"""Aggregation of per-period jumps into treatment-effect estimates.

Covers constant and linear-in-time discontinuity-trend models, fuzzy
designs, z tests and confidence intervals, and TOST equivalence testing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from scipy.stats import norm

from .covariance import (
    BIAS_CORRECTED,
    CONVENTIONAL,
    DiscontinuityCovariance,
    SamplingScheme,
    as_scheme,
)
from .data import ABOVE, BELOW, PanelDataset
from .exceptions import (
    BandwidthError,
    ConfigError,
    EstimationError,
    NegativeVarianceError,
    TaxonomyError,
    WeakDiscontinuityError,
)
from .kernels import KernelSpec
from .period_effects import OUTCOME, TREATMENT, PeriodDiscontinuity, analyze_periods

ATT = "ATT"
ATU = "ATU"

#: Minimum |treatment-probability jump| accepted in a fuzzy ratio.
WEAK_JUMP_THRESHOLD = 0.05


@dataclass(frozen=True)
class FitSpec:
    """Everything an estimation run needs besides the data.

    ``weights`` is either an explicit period -> weight mapping over the
    comparison set, or one of the shorthand rules "uniform", "nearest"
    (all weight on the comparison period closest to the target) and
    "minvar" (inverse estimated per-period jump variances).
    """

    h: float
    b: float | None = None
    p: int = 1
    q: int = 2
    kernel: KernelSpec = KernelSpec("triangular")
    weights: Mapping[int, float] | str = "uniform"
    trend: str = "constant"
    estimand: str = ATT
    design: str = "sharp"
    scheme: SamplingScheme | str = "CS"
    alpha: float = 0.05
    h_by_period: Mapping[int, float] | None = None
    kernel_by_period: Mapping[int, KernelSpec] | None = None

    def __post_init__(self) -> None:
        if not self.h > 0:
            raise BandwidthError(f"bandwidth h must be positive, got {self.h}")
        if self.b is None:
            object.__setattr__(self, "b", 2.0 * self.h)
        if not self.b > 0:
            raise BandwidthError(f"pilot bandwidth b must be positive, got {self.b}")
        if self.p < 1:
            raise ConfigError(f"polynomial order p must be >= 1, got {self.p}")
        if self.q < 2:
            raise ConfigError(f"pilot polynomial order q must be >= 2, got {self.q}")
        if isinstance(self.kernel, str):
            object.__setattr__(self, "kernel", KernelSpec(self.kernel))
        if self.trend not in ("constant", "linear"):
            raise ConfigError(f"trend must be 'constant' or 'linear', got {self.trend!r}")
        if self.estimand not in (ATT, ATU):
            raise ConfigError(f"estimand must be 'ATT' or 'ATU', got {self.estimand!r}")
        if self.design not in ("sharp", "fuzzy"):
            raise ConfigError(f"design must be 'sharp' or 'fuzzy', got {self.design!r}")
        object.__setattr__(self, "scheme", as_scheme(self.scheme))
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if isinstance(self.weights, str):
            if self.weights not in ("uniform", "nearest", "minvar"):
                raise ConfigError(f"unknown weight rule {self.weights!r}")
        else:
            w = {int(t): float(v) for t, v in self.weights.items()}
            if any(v < 0 for v in w.values()):
                raise ConfigError("explicit weights must be nonnegative")
            object.__setattr__(self, "weights", w)

    def h_for(self, period: int) -> float:
        if self.h_by_period and period in self.h_by_period:
            return float(self.h_by_period[period])
        return self.h

    def b_for(self, period: int) -> float:
        # per-period override scales the pilot by the same b/h ratio
        if self.h_by_period and period in self.h_by_period:
            return float(self.h_by_period[period]) * (self.b / self.h)
        return self.b

    def kernel_for(self, period: int) -> KernelSpec:
        if self.kernel_by_period and period in self.kernel_by_period:
            return self.kernel_by_period[period]
        return self.kernel


@dataclass(frozen=True)
class EffectEstimate:
    """Aggregated treatment-effect estimate with inference for both the
    conventional and the bias-corrected estimator."""

    estimand: str
    target_period: int
    point: float
    bias_corrected_point: float
    se: float
    se_bc: float
    ci_lower: float
    ci_upper: float
    bc_ci_lower: float
    bc_ci_upper: float
    z_stat: float
    bc_z_stat: float
    trend: str
    scheme: str
    alpha: float
    slope: float | None = None
    bc_slope: float | None = None
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "target_period": self.target_period,
            "point": self.point,
            "bias_corrected_point": self.bias_corrected_point,
            "se": self.se,
            "se_bc": self.se_bc,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "bc_ci_lower": self.bc_ci_lower,
            "bc_ci_upper": self.bc_ci_upper,
            "z_stat": self.z_stat,
            "bc_z_stat": self.bc_z_stat,
            "trend": self.trend,
            "scheme": self.scheme,
            "alpha": self.alpha,
            "slope": self.slope,
            "bc_slope": self.bc_slope,
            "notes": list(self.notes),
        }


def comparison_periods(ds: PanelDataset, estimand: str) -> list[int]:
    """Pure periods used to learn the bias trend: T0 for ATT, T1 for ATU."""
    tax = ds.taxonomy
    pool = tax.t0_periods if estimand == ATT else tax.t1_periods
    if not pool:
        which = "t0" if estimand == ATT else "t1"
        raise EstimationError(
            f"estimand {estimand} requires non-empty {which} periods in the taxonomy"
        )
    return sorted(pool)


def resolve_weights(
    spec: FitSpec,
    comparison: list[int],
    target: int,
    engine: DiscontinuityCovariance | None = None,
) -> dict[int, float]:
    """Materialize the weight rule over the comparison set (sums to one)."""
    if isinstance(spec.weights, Mapping):
        w = dict(spec.weights)
        unknown = [t for t in w if t not in comparison]
        if unknown:
            raise EstimationError(f"weight periods {unknown} not in comparison set {comparison}")
        total = sum(w.values())
        if not total > 0:
            raise EstimationError("explicit weights must have a positive sum")
        if abs(total - 1.0) > 1e-8:
            raise EstimationError(f"explicit weights must sum to 1, got {total!r}")
        return w
    if spec.weights == "uniform":
        return {t: 1.0 / len(comparison) for t in comparison}
    if spec.weights == "nearest":
        nearest = min(comparison, key=lambda t: (abs(t - target), -t))
        return {t: (1.0 if t == nearest else 0.0) for t in comparison}
    # minvar: inverse estimated per-period jump variances
    if engine is None:
        raise EstimationError("variance-minimizing weights need fitted discontinuities")
    inv = {t: 1.0 / engine.period_variance(t, CONVENTIONAL) for t in comparison}
    total = sum(inv.values())
    return {t: v / total for t, v in inv.items()}


def trend_coefficients(comparison: list[int], target: int, trend: str,
                       weights: Mapping[int, float] | None = None) -> dict[int, float]:
    """Coefficients a_t with bias-at-target = sum_t a_t D_t.

    Constant trend: the weights themselves. Linear trend: ordinary
    least-squares projection of the comparison jumps onto a line, evaluated
    at the target period (for two periods this is the exact line through
    both points).
    """
    if trend == "constant":
        assert weights is not None
        return dict(weights)
    ts = np.asarray(comparison, dtype=float)
    if len(ts) < 2:
        raise EstimationError("linear trend requires at least 2 comparison periods")
    tbar = ts.mean()
    stt = float(((ts - tbar) ** 2).sum())
    coeffs = 1.0 / len(ts) + (target - tbar) * (ts - tbar) / stt
    return {int(t): float(a) for t, a in zip(comparison, coeffs)}


def slope_coefficients(comparison: list[int]) -> dict[int, float]:
    """OLS slope weights: slope = sum_t c_t D_t."""
    ts = np.asarray(comparison, dtype=float)
    tbar = ts.mean()
    stt = float(((ts - tbar) ** 2).sum())
    return {int(t): float((t - tbar) / stt) for t in comparison}


def combine_discontinuities(
    d_by_period: Mapping[int, float], coeffs: Mapping[int, float], target: int
) -> float:
    """Target jump minus the coefficient-weighted comparison jumps."""
    return d_by_period[target] - sum(a * d_by_period[t] for t, a in coeffs.items())


def _inference(point, bc_point, var, var_bc, alpha):
    z_crit = float(norm.ppf(1 - alpha / 2))
    se = var**0.5
    se_bc = var_bc**0.5
    return dict(
        se=se,
        se_bc=se_bc,
        ci_lower=point - z_crit * se,
        ci_upper=point + z_crit * se,
        bc_ci_lower=bc_point - z_crit * se_bc,
        bc_ci_upper=bc_point + z_crit * se_bc,
        z_stat=point / se,
        bc_z_stat=bc_point / se_bc,
    )


def _variance_coeffs(coeffs: Mapping[int, float], target: int) -> dict[int, float]:
    out = {target: 1.0}
    out.update({t: -a for t, a in coeffs.items()})
    return out


def _check_variance(value: float, estimator: str, scheme: SamplingScheme) -> float:
    if value <= 0:
        raise NegativeVarianceError(
            f"assembled {estimator} variance under {scheme.kind} is {value!r}; "
            "check the declared sampling scheme"
        )
    return value


def estimate_constant(ds: PanelDataset, spec: FitSpec) -> EffectEstimate:
    """ATT/ATU estimate under a constant discontinuity trend (sharp design)."""
    if spec.design != "sharp":
        raise EstimationError("estimate_constant requires a sharp design; use estimate_fuzzy")
    comparison = comparison_periods(ds, spec.estimand)
    target = ds.taxonomy.target
    discs = analyze_periods(ds, spec, [target, *comparison])
    engine = DiscontinuityCovariance(discs)
    weights = resolve_weights(spec, comparison, target, engine)
    return _estimate_from_components(discs, engine, weights, target, spec)


def estimate_linear(ds: PanelDataset, spec: FitSpec) -> EffectEstimate:
    """ATT/ATU estimate extrapolating a linear-in-time discontinuity trend."""
    comparison = comparison_periods(ds, spec.estimand)
    if len(comparison) < 2:
        raise EstimationError(
            f"linear trend requires at least 2 comparison periods, have {comparison}"
        )
    target = ds.taxonomy.target
    spec = replace(spec, trend="linear")
    discs = analyze_periods(ds, spec, [target, *comparison])
    engine = DiscontinuityCovariance(discs)
    coeffs = trend_coefficients(comparison, target, "linear")
    slope_c = slope_coefficients(comparison)

    d_conv = {t: d.conventional for t, d in discs.items()}
    d_bc = {t: d.bias_corrected for t, d in discs.items()}
    point = combine_discontinuities(d_conv, coeffs, target)
    bc_point = combine_discontinuities(d_bc, coeffs, target)
    slope = sum(c * d_conv[t] for t, c in slope_c.items())
    bc_slope = sum(c * d_bc[t] for t, c in slope_c.items())

    vc = _variance_coeffs(coeffs, target)
    var = _check_variance(
        engine.quadratic_form(vc, spec.scheme, CONVENTIONAL), CONVENTIONAL, spec.scheme
    )
    var_bc = _check_variance(
        engine.quadratic_form(vc, spec.scheme, BIAS_CORRECTED), BIAS_CORRECTED, spec.scheme
    )
    stats = _inference(point, bc_point, var, var_bc, spec.alpha)
    return EffectEstimate(
        estimand=spec.estimand,
        target_period=target,
        point=point,
        bias_corrected_point=bc_point,
        trend="linear",
        scheme=spec.scheme.kind,
        alpha=spec.alpha,
        slope=slope,
        bc_slope=bc_slope,
        **stats,
    )


def _estimate_from_components(discs, engine, weights, target, spec):
    d_conv = {t: d.conventional for t, d in discs.items()}
    d_bc = {t: d.bias_corrected for t, d in discs.items()}
    point = combine_discontinuities(d_conv, weights, target)
    bc_point = combine_discontinuities(d_bc, weights, target)
    vc = _variance_coeffs(weights, target)
    var = _check_variance(
        engine.quadratic_form(vc, spec.scheme, CONVENTIONAL), CONVENTIONAL, spec.scheme
    )
    var_bc = _check_variance(
        engine.quadratic_form(vc, spec.scheme, BIAS_CORRECTED), BIAS_CORRECTED, spec.scheme
    )
    stats = _inference(point, bc_point, var, var_bc, spec.alpha)
    return EffectEstimate(
        estimand=spec.estimand,
        target_period=target,
        point=point,
        bias_corrected_point=bc_point,
        trend="constant",
        scheme=spec.scheme.kind,
        alpha=spec.alpha,
        **stats,
    )


def fuzzy_point(d_y: float, d_w: float, g0: float, g1: float, p_limit: float) -> float:
    """Fuzzy ratio estimand: outcome jump net of extrapolated bias, scaled
    by the treatment-probability jump. ``p_limit`` is the below-cutoff limit
    for the ATT and the above-cutoff limit for the ATU."""
    return d_y / d_w - (g0 * (1.0 - p_limit) + g1 * p_limit) / d_w


def estimate_fuzzy(ds: PanelDataset, spec: FitSpec) -> EffectEstimate:
    """ATT/ATU under a fuzzy design; needs both all-untreated and
    all-treated periods.

    The standard error is a delta-method approximation that treats the
    outcome-jump block with the declared scheme covariance, uses the HC0
    variances of the treatment-probability intercepts, and sets the
    outcome/treatment covariance to zero; it is labeled approximate in the
    output notes.
    """
    tax = ds.taxonomy
    if not tax.t0_periods or not tax.t1_periods:
        raise EstimationError(
            "fuzzy estimation requires both t0 (all-untreated) and t1 (all-treated) periods"
        )
    target = tax.target
    comp0 = sorted(tax.t0_periods)
    comp1 = sorted(tax.t1_periods)
    notes = ["fuzzy SE is a delta-method approximation (outcome/treatment covariance set to zero)"]

    discs = analyze_periods(ds, spec, [target, *comp0, *comp1])
    engine = DiscontinuityCovariance(discs)
    w_disc = analyze_periods(ds, spec, [target], target=TREATMENT)[target]

    p_above = w_disc.fit_above.intercept()
    p_below = w_disc.fit_below.intercept()
    p_above_bc = p_above - w_disc.side_bias(ABOVE)
    p_below_bc = p_below - w_disc.side_bias(BELOW)
    for label, value in (("above", p_above), ("below", p_below)):
        if not 0.0 <= value <= 1.0:
            notes.append(f"fitted treatment probability {label} the cutoff is {value:.4f}, outside [0, 1]")

    d_w = w_disc.conventional
    d_w_bc = w_disc.bias_corrected
    if abs(d_w) < WEAK_JUMP_THRESHOLD:
        raise WeakDiscontinuityError(
            f"treatment-probability jump {d_w:.4f} is below the {WEAK_JUMP_THRESHOLD} threshold"
        )

    if spec.trend == "constant":
        coeffs0 = trend_coefficients(comp0, target, "constant",
                                     resolve_weights(spec, comp0, target, engine))
        coeffs1 = trend_coefficients(comp1, target, "constant",
                                     resolve_weights(spec, comp1, target, engine))
    else:
        coeffs0 = trend_coefficients(comp0, target, "linear")
        coeffs1 = trend_coefficients(comp1, target, "linear")

    def assemble(jumps: Mapping[int, float], dw: float, p_lim: float, estimator: str):
        g0 = sum(a * jumps[t] for t, a in coeffs0.items())
        g1 = sum(a * jumps[t] for t, a in coeffs1.items())
        point = fuzzy_point(jumps[target], dw, g0, g1, p_lim)
        # delta-method gradient w.r.t. the outcome jumps
        grad = {target: 1.0 / dw}
        for t, a in coeffs0.items():
            grad[t] = -a * (1.0 - p_lim) / dw
        for t, a in coeffs1.items():
            grad[t] = grad.get(t, 0.0) - a * p_lim / dw
        var_y = engine.quadratic_form(grad, spec.scheme, estimator)
        numer = jumps[target] - g0 * (1.0 - p_lim) - g1 * p_lim
        d_plim = (g0 - g1) / dw + numer / dw**2
        d_other = -numer / dw**2
        return point, var_y, g0, g1, d_plim, d_other

    w_engine = DiscontinuityCovariance({target: w_disc})
    var_p = {
        est: {side: w_engine.side_variance(target, side, est) for side in (ABOVE, BELOW)}
        for est in (CONVENTIONAL, BIAS_CORRECTED)
    }

    results = {}
    for estimator, jumps, dw, pa, pb in (
        (CONVENTIONAL, {t: d.conventional for t, d in discs.items()}, d_w, p_above, p_below),
        (BIAS_CORRECTED, {t: d.bias_corrected for t, d in discs.items()}, d_w_bc, p_above_bc, p_below_bc),
    ):
        p_lim = pb if spec.estimand == ATT else pa
        point, var_y, g0, g1, d_plim, d_other = assemble(jumps, dw, p_lim, estimator)
        if spec.estimand == ATT:
            var = var_y + d_plim**2 * var_p[estimator][BELOW] + d_other**2 * var_p[estimator][ABOVE]
        else:
            var = var_y + d_plim**2 * var_p[estimator][ABOVE] + d_other**2 * var_p[estimator][BELOW]
        results[estimator] = (point, var)

    point, var = results[CONVENTIONAL]
    bc_point, var_bc = results[BIAS_CORRECTED]
    var = _check_variance(var, CONVENTIONAL, spec.scheme)
    var_bc = _check_variance(var_bc, BIAS_CORRECTED, spec.scheme)
    stats = _inference(point, bc_point, var, var_bc, spec.alpha)
    return EffectEstimate(
        estimand=spec.estimand,
        target_period=target,
        point=point,
        bias_corrected_point=bc_point,
        trend=spec.trend,
        scheme=spec.scheme.kind,
        alpha=spec.alpha,
        notes=tuple(notes),
        **stats,
    )


def estimate(ds: PanelDataset, spec: FitSpec) -> EffectEstimate:
    """Dispatch on design and trend model."""
    if spec.design == "fuzzy":
        return estimate_fuzzy(ds, spec)
    if spec.trend == "linear":
        return estimate_linear(ds, spec)
    return estimate_constant(ds, spec)


@dataclass(frozen=True)
class TostResult:
    reject_equivalence_null: bool
    t_lower: float
    t_upper: float
    minimal_delta: float
    delta: float
    alpha: float


def tost_equivalence(d1: float, d2: float, se_diff: float, delta: float, alpha: float = 0.05) -> TostResult:
    """Two one-sided tests of |d2 - d1| > delta against equivalence.

    Equivalence is concluded when both one-sided statistics clear the
    one-sided critical value; the decision is evaluated through
    ``minimal_delta <= delta`` (algebraically identical, and exact at the
    boundary), where ``minimal_delta = |d2 - d1| + z_{1-alpha} * se`` is the
    smallest margin at which the null is rejected.
    """
    if not se_diff > 0:
        raise EstimationError(f"se_diff must be positive, got {se_diff}")
    if delta < 0:
        raise EstimationError(f"equivalence margin must be nonnegative, got {delta}")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    diff = d2 - d1
    z = float(norm.ppf(1 - alpha))
    minimal_delta = abs(diff) + z * se_diff
    return TostResult(
        reject_equivalence_null=bool(minimal_delta <= delta),
        t_lower=(diff + delta) / se_diff,
        t_upper=(diff - delta) / se_diff,
        minimal_delta=minimal_delta,
        delta=delta,
        alpha=alpha,
    )


@dataclass(frozen=True)
class DifferenceTest:
    t_stat: float
    p_value: float


def difference_test(d1: float, d2: float, se_diff: float) -> DifferenceTest:
    """Two-sided z test of equal discontinuities."""
    if not se_diff > 0:
        raise EstimationError(f"se_diff must be positive, got {se_diff}")
    t = (d2 - d1) / se_diff
    return DifferenceTest(t_stat=t, p_value=float(2.0 * norm.sf(abs(t))))


def default_equivalence_margin(ds: PanelDataset, periods: list[int], factor: float = 0.36) -> float:
    """Margin proportional to the pooled outcome standard deviation."""
    values = np.concatenate([ds.period_arrays(t)[3] for t in periods])
    return factor * float(values.std(ddof=1))
