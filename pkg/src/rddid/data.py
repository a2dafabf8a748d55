"""Panel dataset representation, period taxonomy, and validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .exceptions import DataError, UnknownPeriodError

SAMPLING_KINDS = ("CS", "PC", "PV")
ABOVE = "above"
BELOW = "below"


@dataclass(frozen=True)
class Observation:
    """One unit-period record: running value, treatment indicator, outcome."""

    unit_id: object
    period: int
    running: float
    treated: int
    outcome: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.running) and math.isfinite(self.outcome)):
            raise DataError(
                f"non-finite running/outcome for unit {self.unit_id!r}, period {self.period}"
            )
        if self.treated not in (0, 1):
            raise DataError(
                f"treated must be 0 or 1, got {self.treated!r} "
                f"(unit {self.unit_id!r}, period {self.period})"
            )


@dataclass(frozen=True)
class PeriodTaxonomy:
    """Classification of periods: all-untreated, all-treated, RD-assigned, target."""

    t0_periods: frozenset[int]
    t1_periods: frozenset[int]
    rd_periods: frozenset[int]
    target: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "t0_periods", frozenset(self.t0_periods))
        object.__setattr__(self, "t1_periods", frozenset(self.t1_periods))
        object.__setattr__(self, "rd_periods", frozenset(self.rd_periods))
        sets = (self.t0_periods, self.t1_periods, self.rd_periods)
        total = sum(len(s) for s in sets)
        if len(frozenset().union(*sets)) != total:
            raise DataError("taxonomy sets t0/t1/rd must be pairwise disjoint")
        if self.target not in self.rd_periods:
            raise DataError(f"target period {self.target} must belong to rd_periods")

    @property
    def all_periods(self) -> frozenset[int]:
        return self.t0_periods | self.t1_periods | self.rd_periods


@dataclass(frozen=True)
class SideSlice:
    """Observations of one period on one side of the cutoff."""

    period: int
    side: str
    units: np.ndarray
    running: np.ndarray
    treated: np.ndarray
    outcome: np.ndarray

    def __len__(self) -> int:
        return len(self.units)


@dataclass(frozen=True)
class Violation:
    """One validation finding, with unit/period coordinates when applicable."""

    code: str
    message: str
    period: int | None = None
    unit_id: object = None


class PanelDataset:
    """Immutable long-format panel with a cutoff, taxonomy and sampling kind.

    Observations are stored columnar per period; arrays are read-only so
    datasets can be shared freely across threads.
    """

    __slots__ = ("cutoff", "taxonomy", "sampling", "_blocks")

    def __init__(
        self,
        cutoff: float,
        taxonomy: PeriodTaxonomy,
        sampling: str,
        blocks: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
    ):
        if sampling not in SAMPLING_KINDS:
            raise DataError(f"sampling must be one of {SAMPLING_KINDS}, got {sampling!r}")
        object.__setattr__(self, "cutoff", float(cutoff))
        object.__setattr__(self, "taxonomy", taxonomy)
        object.__setattr__(self, "sampling", sampling)
        object.__setattr__(self, "_blocks", dict(blocks))
        for arrays in self._blocks.values():
            for a in arrays:
                a.setflags(write=False)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("PanelDataset is immutable")

    @classmethod
    def from_arrays(
        cls,
        units,
        periods,
        running,
        treated,
        outcome,
        *,
        cutoff: float,
        taxonomy: PeriodTaxonomy,
        sampling: str,
    ) -> "PanelDataset":
        units = np.asarray(units)
        periods = np.asarray(periods, dtype=np.int64)
        running = np.asarray(running, dtype=float)
        treated = np.asarray(treated, dtype=np.int64)
        outcome = np.asarray(outcome, dtype=float)
        n = len(units)
        if not (len(periods) == len(running) == len(treated) == len(outcome) == n):
            raise DataError("column arrays must have equal length")
        if n and not (np.isfinite(running).all() and np.isfinite(outcome).all()):
            raise DataError("running and outcome must be finite")
        if n and not np.isin(treated, (0, 1)).all():
            raise DataError("treated must be 0 or 1")
        blocks = {}
        for t in np.unique(periods):
            m = periods == t
            blocks[int(t)] = (
                units[m].copy(),
                running[m].copy(),
                treated[m].copy(),
                outcome[m].copy(),
            )
        return cls(cutoff, taxonomy, sampling, blocks)

    @classmethod
    def from_observations(
        cls,
        observations: Iterable[Observation],
        *,
        cutoff: float,
        taxonomy: PeriodTaxonomy,
        sampling: str,
    ) -> "PanelDataset":
        obs = list(observations)
        return cls.from_arrays(
            np.array([o.unit_id for o in obs], dtype=object),
            [o.period for o in obs],
            [o.running for o in obs],
            [o.treated for o in obs],
            [o.outcome for o in obs],
            cutoff=cutoff,
            taxonomy=taxonomy,
            sampling=sampling,
        )

    @property
    def periods(self) -> tuple[int, ...]:
        return tuple(sorted(self._blocks))

    @property
    def n_obs(self) -> int:
        return sum(len(b[0]) for b in self._blocks.values())

    def has_period(self, period: int) -> bool:
        return period in self._blocks

    def period_arrays(self, period: int):
        """Return (units, running, treated, outcome) for one period."""
        try:
            return self._blocks[period]
        except KeyError:
            raise UnknownPeriodError(f"period {period} not present in dataset") from None

    def observations(self) -> Iterator[Observation]:
        for t in self.periods:
            units, running, treated, outcome = self._blocks[t]
            for i in range(len(units)):
                yield Observation(units[i], t, float(running[i]), int(treated[i]), float(outcome[i]))


def side_slice(ds: PanelDataset, period: int, side: str) -> SideSlice:
    """Observations of ``period`` on one side of the cutoff.

    Ties at exactly the cutoff go to the ``above`` side. An empty side is
    returned as an empty slice, not an error; downstream fits will fail.
    """
    if side not in (ABOVE, BELOW):
        raise DataError(f"side must be {ABOVE!r} or {BELOW!r}, got {side!r}")
    units, running, treated, outcome = ds.period_arrays(period)
    mask = running >= ds.cutoff if side == ABOVE else running < ds.cutoff
    return SideSlice(period, side, units[mask], running[mask], treated[mask], outcome[mask])


def validate(ds: PanelDataset, design: str = "sharp") -> list[Violation]:
    """Check dataset invariants against the taxonomy; pure, idempotent.

    Reports, per violating unit: treated units in all-untreated periods,
    untreated units in all-treated periods, treatment inconsistent with the
    side of the cutoff in RD periods when the design is declared sharp,
    running-variable variation under PC sampling, duplicate (unit, period)
    pairs, and taxonomy periods absent from the data.
    """
    out: list[Violation] = []
    for t in sorted(ds.taxonomy.all_periods):
        if not ds.has_period(t):
            out.append(Violation("missing-period", f"taxonomy period {t} has no observations", period=t))

    for t in ds.periods:
        units, running, treated, _ = ds.period_arrays(t)
        uniq, counts = np.unique(units, return_counts=True)
        for u in uniq[counts > 1]:
            out.append(
                Violation("duplicate-observation", f"unit {u!r} appears more than once in period {t}", t, u)
            )
        if t in ds.taxonomy.t0_periods:
            for u in units[treated == 1]:
                out.append(Violation("treated-in-t0", f"treated unit {u!r} in all-untreated period {t}", t, u))
        elif t in ds.taxonomy.t1_periods:
            for u in units[treated == 0]:
                out.append(Violation("untreated-in-t1", f"untreated unit {u!r} in all-treated period {t}", t, u))
        elif t in ds.taxonomy.rd_periods and design == "sharp":
            expect = (running >= ds.cutoff).astype(np.int64)
            for u in units[treated != expect]:
                out.append(
                    Violation(
                        "sharp-inconsistent",
                        f"unit {u!r} treatment inconsistent with side of cutoff in RD period {t}",
                        t,
                        u,
                    )
                )

    if ds.sampling == "PC":
        seen: dict[object, float] = {}
        flagged: set[object] = set()
        for t in ds.periods:
            units, running, _, _ = ds.period_arrays(t)
            for u, r in zip(units.tolist(), running.tolist()):
                if u in seen and seen[u] != r and u not in flagged:
                    flagged.add(u)
                    out.append(
                        Violation("pc-running-varies", f"running variable of unit {u!r} varies under PC sampling", t, u)
                    )
                seen.setdefault(u, r)
    return out


def matched_units(ds: PanelDataset, period_a: int, period_b: int):
    """Units observed in both periods, with positional indices into each.

    Returns (units, idx_a, idx_b); assumes unique units within a period.
    """
    units_a = ds.period_arrays(period_a)[0]
    units_b = ds.period_arrays(period_b)[0]
    return np.intersect1d(units_a, units_b, return_indices=True)
