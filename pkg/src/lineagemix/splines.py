"""B-spline bases over sampling dates and the fluffmax transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LineageMixError, _as_dates


@dataclass(frozen=True)
class SplineBasis:
    times: np.ndarray  # T dates mapped affinely onto [0, 1]
    degree: int
    M: int
    matrix: np.ndarray  # T x M, entry b_m(t)
    knots: np.ndarray

    @property
    def T(self):
        return self.matrix.shape[0]


def clamped_uniform_knots(M, degree):
    if M < degree + 1:
        raise LineageMixError(f"need M >= degree + 1 (M={M}, degree={degree})")
    n_interior = M - degree - 1
    interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def bspline_matrix(times, knots, degree):
    """Evaluate all B-splines on ``knots`` at ``times`` by the Cox-de Boor recursion.

    The right end of the knot span belongs to the last non-degenerate interval,
    so rows sum to one on the closed interval.
    """
    x = np.asarray(times, dtype=float)
    k = np.asarray(knots, dtype=float)
    n_int = len(k) - 1
    B = np.zeros((len(x), n_int))
    for i in range(n_int):
        if k[i] < k[i + 1]:
            B[:, i] = (k[i] <= x) & (x < k[i + 1])
    last = max(i for i in range(n_int) if k[i] < k[i + 1])
    B[x == k[-1], last] = 1.0
    for p in range(1, degree + 1):
        nb = n_int - p
        Bn = np.zeros((len(x), nb))
        for i in range(nb):
            left = k[i + p] - k[i]
            right = k[i + p + 1] - k[i + 1]
            if left > 0:
                Bn[:, i] += (x - k[i]) / left * B[:, i]
            if right > 0:
                Bn[:, i] += (k[i + p + 1] - x) / right * B[:, i + 1]
        B = Bn
    return B


def dates_to_unit(dates):
    dates = _as_dates(dates)
    days = np.array([(d - dates[0]).days for d in dates], dtype=float)
    span = days[-1] - days[0] if len(days) > 1 else 0.0
    return days / span if span > 0 else np.zeros_like(days)


def build_basis(dates, M: int = 10, degree: int = 3) -> SplineBasis:
    """Clamped B-spline basis with uniform interior knots over the date range."""
    dates = _as_dates(dates)
    T = len(dates)
    if len(set(dates)) != T:
        raise LineageMixError("duplicate dates in spline basis")
    if any(not a < b for a, b in zip(dates, dates[1:])):
        raise LineageMixError("dates must be strictly increasing")
    if T < M:
        raise LineageMixError(f"need at least M={M} dates, got {T}", T=T, M=M)
    times = dates_to_unit(dates)
    knots = clamped_uniform_knots(M, degree)
    return SplineBasis(times=times, degree=degree, M=M, matrix=bspline_matrix(times, knots, degree), knots=knots)


def basis_from_times(times, M: int = 10, degree: int = 3) -> SplineBasis:
    times = np.asarray(times, dtype=float)
    knots = clamped_uniform_knots(M, degree)
    return SplineBasis(times=times, degree=degree, M=M, matrix=bspline_matrix(times, knots, degree), knots=knots)


def fluffmax(a):
    """Return ``a`` when it sums to at most one, otherwise ``a / sum(a)``."""
    a = np.asarray(a, dtype=float)
    if (a < 0).any():
        raise LineageMixError("fluffmax input must be non-negative")
    s = a.sum()
    return a / s if s > 1.0 else a.copy()


def fluffmax_columns(Gstar):
    """Column-wise fluffmax of an R x T matrix."""
    s = Gstar.sum(axis=0)
    return Gstar / np.where(s > 1.0, s, 1.0)
