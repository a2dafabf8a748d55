"""Exception hierarchy.

Every error carries a ``category`` used by the CLI to pick an exit code, so
failures surface with a stable diagnostic class instead of a bare traceback.
"""

from __future__ import annotations


class RddidError(Exception):
    """Base class for all package errors."""

    category = "error"


class ConfigError(RddidError):
    """Invalid or unknown configuration (bad key, bad value, missing seed)."""

    category = "config"


class CsvParseError(RddidError):
    """Malformed input CSV; carries line-numbered diagnostics."""

    category = "parse"

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class DataError(RddidError):
    """Structurally invalid observation data (non-finite, non-binary treated)."""

    category = "data"


class UnknownPeriodError(DataError):
    """Requested period is not present in the dataset."""


class TaxonomyError(DataError):
    """Operation incompatible with the dataset's period taxonomy."""


class FitError(RddidError):
    """Base class for local-fit failures."""

    category = "fit"


class InsufficientSupportError(FitError):
    """Fewer positively-weighted observations than coefficients."""


class SingularDesignError(FitError):
    """Weighted design matrix numerically singular (condition number > 1e12)."""


class PolynomialOrderError(FitError):
    """Polynomial order too low for the requested quantity."""


class BandwidthError(ConfigError):
    """Nonpositive bandwidth or bin width."""


class MissingResidualError(RddidError):
    """Residual needed by a variance formula is unavailable."""

    category = "variance"


class NegativeVarianceError(RddidError):
    """Assembled variance is not positive.

    Usually signals a misdeclared sampling scheme or degenerate
    (noise-free) data; never silently clamped.
    """

    category = "variance"


class SchemeError(RddidError):
    """Operation invalid under the declared sampling scheme."""

    category = "scheme"


class EstimationError(RddidError):
    """Estimand not computable from the given data/spec combination."""

    category = "estimation"


class WeakDiscontinuityError(EstimationError):
    """Treatment-probability jump too close to zero for a fuzzy ratio."""


#: Exit codes used by the CLI, keyed by error category.
EXIT_CODES = {
    "config": 2,
    "parse": 3,
    "data": 4,
    "fit": 5,
    "variance": 6,
    "scheme": 7,
    "estimation": 8,
    "error": 1,
}
