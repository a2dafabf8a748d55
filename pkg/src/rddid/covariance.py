"""Variances and cross-period covariances of discontinuity estimators.

Implements heteroskedasticity-robust (HC0) sandwich variances for the
intercept estimators, matched-unit cross-period covariances under the three
sampling schemes, and the bias-corrected analogues in which the BC intercept
is treated as a linear functional of the outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import ABOVE, BELOW, SAMPLING_KINDS
from .exceptions import (
    EstimationError,
    MissingResidualError,
    NegativeVarianceError,
    SchemeError,
)
from .local_fit import SideFit
from .period_effects import PeriodDiscontinuity

CONVENTIONAL = "conventional"
BIAS_CORRECTED = "bias_corrected"
_ESTIMATORS = (CONVENTIONAL, BIAS_CORRECTED)


@dataclass(frozen=True)
class SamplingScheme:
    """Declared sampling type; fixes which cross-period covariances exist.

    CS: repeated cross-sections, all cross-period covariances are zero.
    PC: panel with constant running variable; covariances between opposite
    sides of the cutoff are zero. PV: panel with time-varying running
    variable; all four covariance blocks may be nonzero.
    """

    kind: str

    def __post_init__(self) -> None:
        if self.kind not in SAMPLING_KINDS:
            raise SchemeError(f"sampling scheme must be one of {SAMPLING_KINDS}, got {self.kind!r}")


def as_scheme(scheme: SamplingScheme | str) -> SamplingScheme:
    return scheme if isinstance(scheme, SamplingScheme) else SamplingScheme(scheme)


@dataclass(frozen=True)
class ResidualCovariance:
    """HC0 residual second moments keyed by unit.

    ``within_period[t][unit]`` holds squared residuals; ``cross_period[(s, t)]``
    holds matched residual products, present only for units positively
    weighted in both periods (and only under panel schemes).
    """

    scheme: SamplingScheme
    within_period: Mapping[int, Mapping[object, float]]
    cross_period: Mapping[tuple[int, int], Mapping[object, float]]

    @classmethod
    def from_discontinuities(
        cls,
        discs: Mapping[int, PeriodDiscontinuity],
        scheme: SamplingScheme | str,
    ) -> "ResidualCovariance":
        scheme = as_scheme(scheme)
        within: dict[int, dict[object, float]] = {}
        resid_maps: dict[int, dict[object, float]] = {}
        for t, disc in discs.items():
            resid = {}
            for fit in (disc.fit_above, disc.fit_below):
                resid.update(zip(fit.unit_ids.tolist(), fit.residual_values.tolist()))
            resid_maps[t] = resid
            within[t] = {u: e * e for u, e in resid.items()}
        cross: dict[tuple[int, int], dict[object, float]] = {}
        if scheme.kind != "CS":
            periods = sorted(discs)
            for i, s in enumerate(periods):
                for t in periods[i + 1:]:
                    shared = resid_maps[s].keys() & resid_maps[t].keys()
                    pair = {u: resid_maps[s][u] * resid_maps[t][u] for u in shared}
                    cross[(s, t)] = pair
                    cross[(t, s)] = pair
        return cls(scheme=scheme, within_period=within, cross_period=cross)


def _sandwich_variance(fit: SideFit, eps2: np.ndarray) -> float:
    """(1/n) e0' Gamma^-1 Psi Gamma^-1 e0 with Psi the HC0 middle matrix."""
    psi = (fit.design * (fit.kernel_weights**2 * eps2)[:, None]).T @ fit.design / fit.n_slice
    return float(fit.gamma_inv[0] @ psi @ fit.gamma_inv[:, 0]) / fit.n_slice


def _sandwich_cross(
    fit_s: SideFit,
    fit_t: SideFit,
    idx_s: np.ndarray,
    idx_t: np.ndarray,
    products: np.ndarray,
) -> float:
    """e0' G_s^-1 M G_t^-1 e0 with M built from matched residual products."""
    if len(idx_s) == 0:
        return 0.0
    left = fit_s.design[idx_s] * (fit_s.kernel_weights[idx_s] * products)[:, None]
    right = fit_t.design[idx_t] * fit_t.kernel_weights[idx_t][:, None]
    m = left.T @ right
    row_s = fit_s.gamma_inv[0] / fit_s.n_slice
    row_t = fit_t.gamma_inv[0] / fit_t.n_slice
    return float(row_s @ m @ row_t)


def intercept_variance(fit: SideFit, rescov: ResidualCovariance) -> float:
    """HC0 sandwich variance of the intercept of one side fit."""
    table = rescov.within_period.get(fit.period)
    if table is None:
        raise MissingResidualError(f"no residuals recorded for period {fit.period}")
    try:
        eps2 = np.array([table[u] for u in fit.unit_ids.tolist()], dtype=float)
    except KeyError as exc:
        raise MissingResidualError(
            f"missing residual for unit {exc.args[0]!r} in period {fit.period}"
        ) from None
    return _sandwich_variance(fit, eps2)


def cross_period_intercept_covariance(
    fit_s: SideFit, fit_t: SideFit, rescov: ResidualCovariance
) -> float:
    """Covariance of two intercept estimators across periods.

    Uses matched-unit residual products; units absent from either period
    contribute zero. Raises SchemeError under CS, where cross-period
    covariances are defined to be zero.
    """
    if rescov.scheme.kind == "CS":
        raise SchemeError("cross-period covariances are identically zero under CS sampling")
    common, idx_s, idx_t = np.intersect1d(fit_s.unit_ids, fit_t.unit_ids, return_indices=True)
    if len(common) == 0:
        return 0.0
    pair = rescov.cross_period.get((fit_s.period, fit_t.period), {})
    products = np.array([pair.get(u, 0.0) for u in common.tolist()], dtype=float)
    return _sandwich_cross(fit_s, fit_t, idx_s, idx_t, products)


class DiscontinuityCovariance:
    """Caches residuals and BC outcome-weight vectors over a set of periods
    and assembles every variance/covariance the aggregation formulas need."""

    def __init__(self, discs: Mapping[int, PeriodDiscontinuity]):
        self._discs = dict(discs)
        self._bc: dict[tuple[int, str], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def disc(self, period: int) -> PeriodDiscontinuity:
        try:
            return self._discs[period]
        except KeyError:
            raise EstimationError(f"no discontinuity computed for period {period}") from None

    def _fit(self, period: int, side: str) -> SideFit:
        d = self.disc(period)
        return d.fit_above if side == ABOVE else d.fit_below

    def _bc_side(self, period: int, side: str):
        """Unit ids, outcome weights and residuals of the BC intercept.

        The BC intercept is linear in the outcomes: the main fit's intercept
        weights minus (h^2/b^2) x bias factor x the pilot fit's curvature
        weights, scattered over the union of the two supports. Residuals come
        from the main fit's polynomial, extended over the pilot support.
        """
        key = (period, side)
        cached = self._bc.get(key)
        if cached is not None:
            return cached
        d = self.disc(period)
        main = d.fit_above if side == ABOVE else d.fit_below
        pilot = d.pilot_above if side == ABOVE else d.pilot_below
        h, b = main.bandwidth, pilot.bandwidth

        l_main = main.gamma_inv[0] @ (main.design.T * main.kernel_weights) / main.n_slice
        rho = pilot.gamma_inv[2] @ (pilot.design.T * pilot.kernel_weights) / pilot.n_slice
        scale = (h * h) / (b * b) * main.bias_factor()

        ids = np.concatenate([main.unit_ids, pilot.unit_ids])
        contrib = np.concatenate([l_main, -scale * rho])
        running = np.concatenate([main.running, pilot.running])
        resp = np.concatenate([main.response, pilot.response])
        uniq, inverse = np.unique(ids, return_inverse=True)
        weights = np.zeros(len(uniq))
        np.add.at(weights, inverse, contrib)
        run_u = np.empty(len(uniq))
        run_u[inverse] = running
        resp_u = np.empty(len(uniq))
        resp_u[inverse] = resp
        eps = main.residuals_at(run_u, resp_u)
        out = (uniq, weights, eps)
        self._bc[key] = out
        return out

    def side_variance(self, period: int, side: str, estimator: str = CONVENTIONAL) -> float:
        """Variance of one side's (possibly bias-corrected) intercept."""
        _check_estimator(estimator)
        if estimator == CONVENTIONAL:
            fit = self._fit(period, side)
            return _sandwich_variance(fit, fit.residual_values**2)
        _, weights, eps = self._bc_side(period, side)
        return float(np.sum((weights * eps) ** 2))

    def period_variance(self, period: int, estimator: str = CONVENTIONAL) -> float:
        """Variance of the period's jump: the two sides' variances summed."""
        return self.side_variance(period, ABOVE, estimator) + self.side_variance(
            period, BELOW, estimator
        )

    def block_cov(self, s: int, t: int, side_s: str, side_t: str, estimator: str) -> float:
        """Covariance of two one-sided intercept estimators across periods."""
        _check_estimator(estimator)
        if estimator == CONVENTIONAL:
            fs, ft = self._fit(s, side_s), self._fit(t, side_t)
            common, idx_s, idx_t = np.intersect1d(fs.unit_ids, ft.unit_ids, return_indices=True)
            if len(common) == 0:
                return 0.0
            products = fs.residual_values[idx_s] * ft.residual_values[idx_t]
            return _sandwich_cross(fs, ft, idx_s, idx_t, products)
        ids_s, w_s, e_s = self._bc_side(s, side_s)
        ids_t, w_t, e_t = self._bc_side(t, side_t)
        _, idx_s, idx_t = np.intersect1d(ids_s, ids_t, return_indices=True)
        if len(idx_s) == 0:
            return 0.0
        return float(np.sum(w_s[idx_s] * e_s[idx_s] * w_t[idx_t] * e_t[idx_t]))

    def discontinuity_cov(
        self, s: int, t: int, scheme: SamplingScheme | str, estimator: str = CONVENTIONAL
    ) -> float:
        """Scheme-resolved covariance of two periods' jump estimators."""
        kind = as_scheme(scheme).kind
        if kind == "CS" or s == t:
            return 0.0
        same = self.block_cov(s, t, ABOVE, ABOVE, estimator) + self.block_cov(
            s, t, BELOW, BELOW, estimator
        )
        if kind == "PC":
            return same
        crossed = self.block_cov(s, t, ABOVE, BELOW, estimator) + self.block_cov(
            s, t, BELOW, ABOVE, estimator
        )
        return same - crossed

    def quadratic_form(
        self,
        coeffs: Mapping[int, float],
        scheme: SamplingScheme | str,
        estimator: str = CONVENTIONAL,
    ) -> float:
        """Variance of the linear combination sum_t c_t D_t under a scheme."""
        periods = sorted(coeffs)
        total = 0.0
        for i, t in enumerate(periods):
            c_t = coeffs[t]
            total += c_t * c_t * self.period_variance(t, estimator)
            for s in periods[i + 1:]:
                total += 2.0 * c_t * coeffs[s] * self.discontinuity_cov(t, s, scheme, estimator)
        return total


def _check_estimator(estimator: str) -> None:
    if estimator not in _ESTIMATORS:
        raise EstimationError(f"estimator must be one of {_ESTIMATORS}, got {estimator!r}")


def aggregate_variance(
    disc_by_period: Mapping[int, PeriodDiscontinuity],
    weights: Mapping[int, float],
    target_period: int,
    scheme: SamplingScheme | str,
    estimator: str = CONVENTIONAL,
) -> float:
    """Variance of the target jump minus the weighted comparison jumps.

    Cross-period covariance terms enter according to the declared sampling
    scheme. A nonpositive assembled total raises NegativeVarianceError:
    silent clamping would hide a misdeclared scheme or degenerate data.
    """
    scheme = as_scheme(scheme)
    _check_estimator(estimator)
    if target_period in weights:
        raise EstimationError("target period cannot carry a comparison weight")
    if target_period not in disc_by_period:
        raise EstimationError(f"no discontinuity for target period {target_period}")
    w = {int(t): float(v) for t, v in weights.items()}
    if not w:
        raise EstimationError("comparison weights are empty")
    if any(v < 0 for v in w.values()):
        raise EstimationError("comparison weights must be nonnegative")
    if abs(sum(w.values()) - 1.0) > 1e-8:
        raise EstimationError(f"comparison weights must sum to 1, got {sum(w.values())!r}")
    missing = [t for t in w if t not in disc_by_period]
    if missing:
        raise EstimationError(f"no discontinuity for comparison period(s) {missing}")

    engine = DiscontinuityCovariance(disc_by_period)
    coeffs = {target_period: 1.0}
    coeffs.update({t: -v for t, v in w.items()})
    total = engine.quadratic_form(coeffs, scheme, estimator)
    if total <= 0:
        raise NegativeVarianceError(
            f"assembled {estimator} variance under {scheme.kind} is {total!r}; "
            "check the declared sampling scheme"
        )
    return total
