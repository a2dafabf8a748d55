"""One-sided kernel-weighted local polynomial regression.

Fits are solved through the scaled normal equations: regressors are powers
of (r - cutoff)/h, which keeps the Gram matrix well conditioned across
bandwidth scales. The Gram matrix and its inverse are materialized because
every downstream variance formula sandwiches them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .data import SideSlice
from .exceptions import (
    InsufficientSupportError,
    PolynomialOrderError,
    SingularDesignError,
)
from .kernels import KernelSpec, scaled_weight

#: Condition-number threshold beyond which the variance sandwich is
#: numerically meaningless.
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class SideFit:
    """A one-sided weighted local polynomial fit.

    ``beta_scaled`` holds coefficients on the scaled regressors
    ((r - cutoff)/h)^j, j = 0..order; the intercept entry is the fitted
    conditional mean at the cutoff. Residuals and weights are kept only for
    observations with positive kernel weight.
    """

    side: str
    period: int
    order: int
    bandwidth: float
    cutoff: float
    beta_scaled: np.ndarray
    gamma: np.ndarray
    gamma_inv: np.ndarray
    n_slice: int
    effective_n: int
    unit_ids: np.ndarray
    running: np.ndarray       # raw running values of positively weighted points
    offsets: np.ndarray       # (r - cutoff)/h for positively weighted points
    design: np.ndarray        # vandermonde of offsets, effective_n x (order+1)
    kernel_weights: np.ndarray
    response: np.ndarray
    residual_values: np.ndarray

    @cached_property
    def residuals(self) -> dict:
        return dict(zip(self.unit_ids.tolist(), self.residual_values.tolist()))

    @cached_property
    def weights(self) -> dict:
        return dict(zip(self.unit_ids.tolist(), self.kernel_weights.tolist()))

    def intercept(self) -> float:
        return float(self.beta_scaled[0])

    def second_derivative(self) -> float:
        """Curvature of the fitted mean at the cutoff (requires order >= 2)."""
        if self.order < 2:
            raise PolynomialOrderError(
                f"second derivative requires order >= 2, fit has order {self.order}"
            )
        return 2.0 * float(self.beta_scaled[2]) / self.bandwidth**2

    def bias_factor(self) -> float:
        """Intercept entry of Gamma^{-1} theta, with theta the weighted
        moment of the squared scaled regressor; multiplies the curvature in
        the first-order bias of the intercept."""
        theta = self.design.T @ (self.kernel_weights * self.offsets**2) / self.n_slice
        return float(self.gamma_inv[0] @ theta)

    def residuals_at(self, running: np.ndarray, response: np.ndarray) -> np.ndarray:
        """Residuals of this fit's polynomial at arbitrary points.

        Extends the residual definition beyond the fit's own bandwidth,
        which the bias-corrected variance needs on the pilot support.
        """
        u = (np.asarray(running, dtype=float) - self.cutoff) / self.bandwidth
        fitted = np.vander(u, self.order + 1, increasing=True) @ self.beta_scaled
        return np.asarray(response, dtype=float) - fitted


def intercept(fit: SideFit) -> float:
    """Fitted conditional mean at the cutoff."""
    return fit.intercept()


def second_derivative(fit_q: SideFit) -> float:
    """Estimated second derivative of the conditional mean at the cutoff."""
    return fit_q.second_derivative()


def fit_side(
    obs: SideSlice,
    cutoff: float,
    p: int,
    kernel: KernelSpec | str,
    h: float,
    response: str = "outcome",
) -> SideFit:
    """Weighted least squares polynomial fit of one side of the cutoff.

    Solves the kernel-weighted problem in scaled regressors (r - cutoff)/h
    via a Cholesky factorization of the Gram matrix. ``response`` selects
    the dependent variable: "outcome" or "treated" (for treatment
    probability fits in fuzzy designs).

    Raises InsufficientSupportError with fewer than p + 1 positively
    weighted observations, SingularDesignError when the Gram matrix
    condition number exceeds 1e12.
    """
    if p < 0:
        raise PolynomialOrderError(f"polynomial order must be >= 0, got {p}")
    y_all = obs.outcome if response == "outcome" else obs.treated.astype(float)
    w_all = scaled_weight(obs.running, cutoff, h, kernel)
    pos = w_all > 0
    m = int(pos.sum())
    if m < p + 1:
        raise InsufficientSupportError(
            f"period {obs.period}, side {obs.side}: {m} positively weighted "
            f"observations, need at least {p + 1} for order {p}"
        )
    n_slice = len(obs)
    u = (obs.running[pos] - cutoff) / h
    w = w_all[pos]
    y = np.asarray(y_all[pos], dtype=float)

    design = np.vander(u, p + 1, increasing=True)
    gamma = (design * w[:, None]).T @ design / n_slice
    if np.linalg.cond(gamma) > MAX_CONDITION:
        raise SingularDesignError(
            f"period {obs.period}, side {obs.side}: weighted design is "
            f"numerically singular (condition number > {MAX_CONDITION:g})"
        )
    try:
        chol = scipy.linalg.cho_factor(gamma, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SingularDesignError(
            f"period {obs.period}, side {obs.side}: Gram matrix not positive definite"
        ) from exc
    gamma_inv = scipy.linalg.cho_solve(chol, np.eye(p + 1))
    if np.all(y == y[0]):
        # constant response: the weighted fit is exactly that constant, with
        # zero residuals; keeps sharp treatment-probability jumps exact
        beta = np.zeros(p + 1)
        beta[0] = y[0]
        residuals = np.zeros(m)
    else:
        beta = scipy.linalg.cho_solve(chol, design.T @ (w * y) / n_slice)
        residuals = y - design @ beta

    return SideFit(
        side=obs.side,
        period=obs.period,
        order=p,
        bandwidth=float(h),
        cutoff=float(cutoff),
        beta_scaled=beta,
        gamma=gamma,
        gamma_inv=gamma_inv,
        n_slice=n_slice,
        effective_n=m,
        unit_ids=obs.units[pos],
        running=obs.running[pos],
        offsets=u,
        design=design,
        kernel_weights=w,
        response=y,
        residual_values=residuals,
    )
