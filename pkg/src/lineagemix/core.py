"""Domain types shared by every estimator, plus the binomial likelihood.

The log-likelihood used throughout omits the binomial coefficient
``log choose(D, c)``.  It does not depend on any parameter, so maximizers,
posterior draws and WAIC differences between models fit to the same panel are
unchanged; absolute WAIC values are shifted by a data-only constant.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from . import kernels

CLAMP_EPS = 1e-9
PROPORTION_TOL = 1e-9


class LineageMixError(ValueError):
    """Base error; ``details`` carries structured context for callers."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class ShapeError(LineageMixError):
    pass


class ConstraintError(LineageMixError):
    pass


class ConstraintKind(str, Enum):
    SUM_LE_ONE = "SumLEOne"
    SUM_EQ_ONE = "SumEqOne"


def _as_dates(dates):
    out = []
    for d in dates:
        if isinstance(d, _dt.datetime):
            d = d.date()
        elif isinstance(d, str):
            d = _dt.date.fromisoformat(d)
        out.append(d)
    return tuple(out)


def _check_increasing(dates):
    for a, b in zip(dates, dates[1:]):
        if not a < b:
            raise LineageMixError(f"dates must be strictly increasing: {a} then {b}", first=a, second=b)


@dataclass(frozen=True)
class MutationPanel:
    """Aligned count and depth matrices (mutations x dates).

    Counts and depths are stored as read-only int64 arrays.  Construction
    validates ``counts <= depths``, ``depths >= 1``, unique labels and strictly
    increasing dates.
    """

    mutations: tuple
    dates: tuple
    counts: np.ndarray
    depths: np.ndarray
    site: str | None = None

    def __post_init__(self):
        mutations = tuple(str(m) for m in self.mutations)
        dates = _as_dates(self.dates)
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        depths = np.array(self.depths, dtype=np.int64, copy=True)
        if counts.ndim != 2 or counts.shape != depths.shape:
            raise ShapeError("counts and depths must be matching 2-D matrices",
                             counts=counts.shape, depths=depths.shape)
        if counts.shape != (len(mutations), len(dates)):
            raise ShapeError("matrix shape does not match labels",
                             shape=counts.shape, n_mutations=len(mutations), n_dates=len(dates))
        if len(set(mutations)) != len(mutations):
            dupes = sorted({m for m in mutations if mutations.count(m) > 1})
            raise LineageMixError(f"duplicate mutation labels: {dupes}", duplicates=dupes)
        _check_increasing(dates)
        if (depths < 1).any():
            raise ConstraintError("depths must be >= 1", n_bad=int((depths < 1).sum()))
        if (counts < 0).any():
            raise ConstraintError("counts must be >= 0")
        bad = np.argwhere(counts > depths)
        if bad.size:
            i, t = bad[0]
            raise ConstraintError(
                f"count exceeds depth for {mutations[i]} on {dates[t]}",
                mutation=mutations[i], date=dates[t],
            )
        counts.setflags(write=False)
        depths.setflags(write=False)
        object.__setattr__(self, "mutations", mutations)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "depths", depths)

    @property
    def shape(self):
        return self.counts.shape

    @property
    def n_mutations(self):
        return self.counts.shape[0]

    @property
    def n_dates(self):
        return self.counts.shape[1]

    def subset(self, mutations=None, date_index=None):
        rows = list(range(self.n_mutations))
        if mutations is not None:
            lookup = {m: i for i, m in enumerate(self.mutations)}
            rows = [lookup[m] for m in mutations]
        cols = list(range(self.n_dates)) if date_index is None else list(date_index)
        return MutationPanel(
            mutations=[self.mutations[i] for i in rows],
            dates=[self.dates[t] for t in cols],
            counts=self.counts[np.ix_(rows, cols)],
            depths=self.depths[np.ix_(rows, cols)],
            site=self.site,
        )


@dataclass(frozen=True)
class LineageDefinitionSet:
    """Binary mutation x lineage membership matrix with labels."""

    names: tuple
    membership: np.ndarray
    mutation_universe: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        universe = tuple(str(m) for m in self.mutation_universe)
        Z = np.asarray(self.membership)
        if Z.ndim != 2 or Z.shape != (len(universe), len(names)):
            raise ShapeError("membership must be N x J", shape=Z.shape,
                             n_mutations=len(universe), n_lineages=len(names))
        if not np.isin(Z, (0, 1)).all():
            raise ConstraintError("membership entries must be exactly 0 or 1")
        empty = [names[j] for j in np.flatnonzero(Z.sum(axis=0) == 0)]
        if empty:
            raise ConstraintError(f"lineages without mutations: {empty}", lineages=empty)
        if len(set(universe)) != len(universe):
            raise LineageMixError("duplicate mutation labels in universe")
        Z = Z.astype(np.int8, copy=True)
        Z.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "membership", Z)
        object.__setattr__(self, "mutation_universe", universe)

    @classmethod
    def from_sets(cls, definitions, universe=None):
        """Build from ``{name: iterable of mutation labels}`` (insertion order kept)."""
        names = list(definitions)
        if universe is None:
            universe = sorted(set().union(*(set(v) for v in definitions.values())))
        lookup = {m: i for i, m in enumerate(universe)}
        Z = np.zeros((len(universe), len(names)), dtype=np.int8)
        for j, n in enumerate(names):
            for m in definitions[n]:
                if m in lookup:
                    Z[lookup[m], j] = 1
        return cls(names=names, membership=Z, mutation_universe=universe)

    @classmethod
    def from_matrix(cls, mutations, names, Z, drop_empty=False):
        Z = np.asarray(Z)
        if drop_empty:
            keep = np.flatnonzero(Z.sum(axis=0) > 0)
            names = [names[j] for j in keep]
            Z = Z[:, keep]
        return cls(names=names, membership=Z, mutation_universe=mutations)

    @property
    def n_lineages(self):
        return len(self.names)

    def as_sets(self):
        return {
            n: frozenset(self.mutation_universe[i] for i in np.flatnonzero(self.membership[:, j]))
            for j, n in enumerate(self.names)
        }

    def vocabulary(self):
        return frozenset(self.mutation_universe)

    def restrict(self, mutations):
        """Rows reindexed to ``mutations``; labels absent here become all-zero rows."""
        lookup = {m: i for i, m in enumerate(self.mutation_universe)}
        Z = np.zeros((len(mutations), self.n_lineages), dtype=np.int8)
        for k, m in enumerate(mutations):
            if m in lookup:
                Z[k] = self.membership[lookup[m]]
        return Z

    def reorder(self, order):
        order = list(order)
        return LineageDefinitionSet(
            names=[self.names[j] for j in order],
            membership=self.membership[:, order],
            mutation_universe=self.mutation_universe,
        )


@dataclass(frozen=True)
class AbundanceSeries:
    """Lineage proportions over time (J x T) with a column-sum constraint."""

    values: np.ndarray
    constraint_kind: ConstraintKind
    dates: tuple
    names: tuple = ()

    def __post_init__(self):
        G = np.array(self.values, dtype=float, copy=True)
        dates = _as_dates(self.dates)
        kind = ConstraintKind(self.constraint_kind)
        if G.ndim != 2 or G.shape[1] != len(dates):
            raise ShapeError("values must be J x T", shape=G.shape, n_dates=len(dates))
        names = tuple(str(n) for n in self.names) or tuple(str(j + 1) for j in range(G.shape[0]))
        if len(names) != G.shape[0]:
            raise ShapeError("one name per lineage row required")
        if not np.isfinite(G).all():
            raise ConstraintError("abundance values must be finite")
        if (G < -PROPORTION_TOL).any() or (G > 1 + PROPORTION_TOL).any():
            raise ConstraintError("abundance values must lie in [0, 1]")
        sums = G.sum(axis=0)
        if kind is ConstraintKind.SUM_LE_ONE:
            bad = np.flatnonzero(sums > 1 + PROPORTION_TOL)
        else:
            bad = np.flatnonzero(np.abs(sums - 1) > PROPORTION_TOL)
        if bad.size:
            t = int(bad[0])
            raise ConstraintError(
                f"column {t} ({dates[t]}) sums to {sums[t]!r}, violating {kind.value}",
                column=t, total=float(sums[t]), kind=kind.value,
            )
        G.setflags(write=False)
        object.__setattr__(self, "values", G)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "constraint_kind", kind)
        object.__setattr__(self, "names", names)


@dataclass
class PosteriorDraws:
    """Stored MCMC samples pooled over retained chains.

    Shapes: ``z_draws`` S x N x R, ``g_draws`` S x R x T, ``phi_draws``
    S x R x M (or None), ``indicator_draws`` S x R or S x R x M,
    ``loglik_cells`` S x (N*T) in row-major (mutation, date) order.
    """

    z_draws: np.ndarray
    g_draws: np.ndarray
    loglik_cells: np.ndarray
    chain_ids: np.ndarray
    indicator_draws: np.ndarray | None = None
    phi_draws: np.ndarray | None = None
    constraint_kind: ConstraintKind = ConstraintKind.SUM_LE_ONE
    alpha_draws: np.ndarray | None = None

    @property
    def n_draws(self):
        return self.g_draws.shape[0]

    def check(self, tol=PROPORTION_TOL):
        """Raise if any stored draw breaks binary Z, the sum constraint or finiteness."""
        if not np.isin(self.z_draws, (0, 1)).all():
            raise ConstraintError("non-binary Z draw")
        if (self.g_draws < -tol).any():
            raise ConstraintError("negative abundance draw")
        sums = self.g_draws.sum(axis=1)
        if self.constraint_kind is ConstraintKind.SUM_EQ_ONE:
            n_bad = int((np.abs(sums - 1) > tol).sum())
        else:
            n_bad = int((sums > 1 + tol).sum())
        if n_bad:
            raise ConstraintError(f"{n_bad} draw columns violate {self.constraint_kind.value}", n_bad=n_bad)
        if not np.isfinite(self.loglik_cells).all():
            raise ConstraintError("non-finite per-cell log-likelihood")


@dataclass
class FitReport:
    model_kind: str
    point_definitions: LineageDefinitionSet | None
    point_abundance: AbundanceSeries
    waic: Any = None
    rank_scores: Any = None
    config_echo: dict = field(default_factory=dict)
    z_point: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def frequency_matrix(panel: MutationPanel) -> np.ndarray:
    """Per-cell mutation frequency ``counts / depths``."""
    return panel.counts / panel.depths


def binomial_loglik(panel: MutationPanel, probs, clamp_eps: float = CLAMP_EPS) -> float:
    """Binomial log-likelihood of the panel at success probabilities ``probs``.

    Probabilities are clamped to ``[clamp_eps, 1 - clamp_eps]`` and the
    binomial coefficient is omitted.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape != panel.shape:
        raise ShapeError("probability matrix shape mismatch", expected=panel.shape, got=probs.shape)
    if not 0 < clamp_eps < 0.5:
        raise LineageMixError("clamp_eps must lie in (0, 0.5)", clamp_eps=clamp_eps)
    C = panel.counts.astype(float)
    D = panel.depths.astype(float)
    return float(kernels.active().cell_loglik(C, D, probs, clamp_eps).sum())


def as_float_data(panel: MutationPanel):
    """Counts and depths as contiguous float64 arrays for the kernels."""
    return (np.ascontiguousarray(panel.counts, dtype=float),
            np.ascontiguousarray(panel.depths, dtype=float))
