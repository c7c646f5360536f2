"""Per-sample constrained binomial GLM for lineage proportions.

Each sample is fitted on its own: given binary definitions ``Z`` (N x J), find
``rho`` maximizing ``sum_i c_i log(Z_i rho) + (D_i - c_i) log(1 - Z_i rho)`` over
``{rho >= 0, sum(rho) <= 1}`` (or ``= 1``).  The objective is concave, so
projected gradient ascent with Barzilai-Borwein steps and Armijo backtracking
reaches the optimum; a few Newton steps on the active face then polish it to
tight KKT residuals.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    CLAMP_EPS,
    AbundanceSeries,
    ConstraintKind,
    LineageDefinitionSet,
    LineageMixError,
    MutationPanel,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProvocOptions:
    constraint: ConstraintKind = ConstraintKind.SUM_LE_ONE
    multistarts: int = 5
    seed: int = 0
    max_iter: int = 10_000
    rel_tol: float = 1e-10
    clamp_eps: float = CLAMP_EPS
    newton_polish: bool = True

    def __post_init__(self):
        object.__setattr__(self, "constraint", ConstraintKind(self.constraint))
        if self.multistarts < 1 or self.max_iter < 1:
            raise LineageMixError("multistarts and max_iter must be >= 1")

    def as_dict(self):
        d = asdict(self)
        d["constraint"] = self.constraint.value
        return d


@dataclass
class ProvocFit:
    rho: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    kkt_residual: float = float("nan")
    start_logliks: list = field(default_factory=list)


# -- projections -----------------------------------------------------------------


def project_simplex(v):
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    cond = u - css / k > 0
    r = k[cond][-1]
    theta = css[cond][-1] / r
    return np.maximum(v - theta, 0.0)


def project_capped(v):
    """Euclidean projection onto ``{x >= 0, sum(x) <= 1}``.

    Clipping at zero is already the answer when it leaves the sum at most one;
    otherwise the sum constraint is active and the simplex projection applies.
    """
    x = np.maximum(np.asarray(v, dtype=float), 0.0)
    return x if x.sum() <= 1.0 else project_simplex(v)


def _projector(kind):
    return project_simplex if ConstraintKind(kind) is ConstraintKind.SUM_EQ_ONE else project_capped


# -- objective ---------------------------------------------------------------------


def objective(rho, Z, c, D, eps=CLAMP_EPS):
    p = np.clip(Z @ rho, eps, 1.0 - eps)
    return float(np.sum(c * np.log(p) + (D - c) * np.log1p(-p)))


def gradient(rho, Z, c, D, eps=CLAMP_EPS):
    """Gradient of :func:`objective`.

    Cells at the clamp use the derivative of the unclamped likelihood at the
    clamped probability rather than zero.  With ``c = 0`` at ``p = 0`` that is
    the correct one-sided slope ``-D``; zeroing it would turn every empty
    lineage into a false stationary point.
    """
    p = np.clip(Z @ rho, eps, 1.0 - eps)
    return Z.T @ (c / p - (D - c) / (1.0 - p))


def hessian(rho, Z, c, D, eps=CLAMP_EPS):
    p = np.clip(Z @ rho, eps, 1.0 - eps)
    return -(Z.T * (c / p**2 + (D - c) / (1.0 - p) ** 2)) @ Z


def kkt_residual(rho, grad, kind=ConstraintKind.SUM_LE_ONE):
    """Norm of the projected-gradient map ``P(rho + g) - rho``; zero exactly at a KKT point.

    :func:`fit_sample` passes the gradient of the per-read objective (divided
    by total depth) so the residual does not grow with sequencing depth.
    """
    return float(np.linalg.norm(_projector(kind)(rho + grad) - rho))


# -- solver ------------------------------------------------------------------------


def _ascend(rho, Z, c, D, opts, proj):
    eps = opts.clamp_eps
    eq = opts.constraint is ConstraintKind.SUM_EQ_ONE

    def grad(x):
        g = gradient(x, Z, c, D, eps)
        # the simplex projection ignores shifts along (1, ..., 1)
        return g - g.mean() if eq else g

    f = objective(rho, Z, c, D, eps)
    g = grad(rho)
    step = 1.0 / max(np.abs(g).max(), 1.0)
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        t = step
        while True:
            new = proj(rho + t * g)
            f_new = objective(new, Z, c, D, eps)
            if f_new >= f + 1e-4 * g @ (new - rho) or t < 1e-20:
                break
            t *= 0.5
        g_new = grad(new)
        s, y = new - rho, g_new - g
        sy = s @ y
        step = (s @ s) / -sy if sy < 0 else min(t * 2.0, 1e6)
        done = abs(f_new - f) <= opts.rel_tol * max(1.0, abs(f)) or not np.any(s)
        if f_new >= f:
            rho, f, g = new, f_new, g_new
        if done:
            converged = True
            break
    return rho, f, it, converged


def _polish(rho, Z, c, D, opts, proj, n_steps=20):
    """Newton steps restricted to the current face of the feasible set."""
    eps = opts.clamp_eps
    eq = opts.constraint is ConstraintKind.SUM_EQ_ONE
    f = objective(rho, Z, c, D, eps)
    for _ in range(n_steps):
        free = rho > 1e-14
        if not free.any():
            break
        on_sum = eq or rho.sum() >= 1.0 - 1e-12
        g = gradient(rho, Z, c, D, eps)[free]
        H = hessian(rho, Z, c, D, eps)[np.ix_(free, free)]
        k = int(free.sum())
        try:
            if on_sum:
                # KKT system with the sum held fixed
                A = np.zeros((k + 1, k + 1))
                A[:k, :k] = H
                A[:k, k] = A[k, :k] = 1.0
                sol = np.linalg.solve(A, np.append(-g, 0.0))
                d = sol[:k]
            else:
                d = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        full = np.zeros_like(rho)
        full[free] = d
        t = 1.0
        while t > 1e-8:
            cand = proj(rho + t * full)
            fc = objective(cand, Z, c, D, eps)
            # near the optimum the gain falls below float resolution of f
            if fc >= f - 1e-13 * max(1.0, abs(f)):
                break
            t *= 0.5
        else:
            break
        moved = np.abs(cand - rho).max()
        rho, f = cand, fc
        if moved < 1e-15:
            break
    return rho, f


def _as_membership(defs):
    Z = defs.membership if isinstance(defs, LineageDefinitionSet) else np.asarray(defs)
    if not np.isin(Z, (0, 1)).all():
        raise LineageMixError("lineage definitions must be binary")
    return np.asarray(Z, dtype=float)


def fit_sample(counts, depths, defs, opts: ProvocOptions | None = None, rng=None) -> ProvocFit:
    """Maximum-likelihood lineage proportions for one sample.

    ``defs`` is a :class:`LineageDefinitionSet` (rows in ``counts`` order) or a
    binary N x J array.  Starts are drawn uniformly on the feasible set and
    the best of ``opts.multistarts`` local solutions is returned.
    """
    opts = opts or ProvocOptions()
    Z = _as_membership(defs)
    c = np.asarray(counts, dtype=float)
    D = np.asarray(depths, dtype=float)
    if c.shape != D.shape or c.ndim != 1 or Z.shape[0] != c.size:
        raise LineageMixError("counts, depths and definitions disagree in length",
                              counts=c.shape, depths=D.shape, defs=Z.shape)
    if not (D > 0).any():
        raise LineageMixError("all depths are zero")
    if (c < 0).any() or (c > D).any():
        raise LineageMixError("counts must lie in [0, depth]")
    N, J = Z.shape
    if N < J:
        log.warning("fewer mutations (%d) than lineages (%d); proportions are not identifiable", N, J)
    rng = rng if rng is not None else np.random.default_rng(opts.seed)
    proj = _projector(opts.constraint)
    c_all, D_all, Z_all = c, D, Z
    if opts.constraint is ConstraintKind.SUM_EQ_ONE:
        # a mutation in every lineage has p = sum(rho) = 1 for all feasible rho: a
        # constant term whose clamped gradient would only add round-off
        informative = ~Z.all(axis=1)
        if not informative.any():
            rho = np.full(J, 1.0 / J)
            return ProvocFit(rho=rho, loglik=objective(rho, Z, c, D, opts.clamp_eps), converged=True,
                             iterations=0, kkt_residual=0.0)
        c, D, Z = c[informative], D[informative], Z[informative]
    best = None
    start_ll, starts = [], []
    total_it = 0
    all_conv = True
    for _ in range(opts.multistarts):
        x0 = rng.dirichlet(np.ones(J + 1))
        rho0 = x0[:J] if opts.constraint is ConstraintKind.SUM_LE_ONE else x0[:J] / x0[:J].sum()
        rho, f, it, conv = _ascend(rho0, Z, c, D, opts, proj)
        if opts.newton_polish:
            rho, f = _polish(rho, Z, c, D, opts, proj)
        total_it += it
        all_conv &= conv
        start_ll.append(f)
        starts.append(rho)
        if best is None or f > best[1]:
            best = (rho, f)
    rho, f = best
    kkt = kkt_residual(rho, gradient(rho, Z, c, D, opts.clamp_eps) / D.sum(), opts.constraint)
    if Z is not Z_all:
        f = objective(rho, Z_all, c_all, D_all, opts.clamp_eps)
        start_ll = [objective(r, Z_all, c_all, D_all, opts.clamp_eps) for r in starts]
    return ProvocFit(rho=rho, loglik=f, converged=bool(all_conv), iterations=total_it,
                     kkt_residual=kkt, start_logliks=start_ll)


def fit_series(panel: MutationPanel, defs: LineageDefinitionSet, opts: ProvocOptions | None = None):
    """Fit every date of ``panel`` independently.

    Panel mutations that belong to no lineage carry no information about the
    proportions and are dropped with a warning.  Returns ``(AbundanceSeries,
    fits)``.
    """
    opts = opts or ProvocOptions()
    Z_all = defs.restrict(panel.mutations)
    member = Z_all.any(axis=1)
    keep = [m for m, k in zip(panel.mutations, member) if k]
    dropped = [m for m, k in zip(panel.mutations, member) if not k]
    if dropped:
        log.warning("dropping %d panel mutations outside every lineage: %s", len(dropped), dropped[:10])
    if not keep:
        raise LineageMixError("no panel mutation belongs to any lineage")
    sub = panel.subset(mutations=keep)
    Z = Z_all[member]
    fits = []
    for t, date in enumerate(sub.dates):
        rng = np.random.default_rng([opts.seed, t])
        try:
            fits.append(fit_sample(sub.counts[:, t], sub.depths[:, t], Z, opts, rng=rng))
        except LineageMixError as e:
            raise LineageMixError(f"{date.isoformat()}: {e}", date=date.isoformat(), **e.details) from e
    values = np.column_stack([f.rho for f in fits])
    if opts.constraint is ConstraintKind.SUM_EQ_ONE:
        values = values / values.sum(axis=0, keepdims=True)
    series = AbundanceSeries(values=np.clip(values, 0.0, 1.0), constraint_kind=opts.constraint,
                             dates=sub.dates, names=list(defs.names))
    return series, fits


def write_fits(path, dates, fits):
    """Plain-text per-sample diagnostics, one tab-separated line per date."""
    with open(path, "w") as fh:
        fh.write("date\tloglik\tconverged\titerations\tkkt_residual\n")
        for d, f in zip(dates, fits):
            fh.write(f"{d.isoformat()}\t{f.loglik!r}\t{int(f.converged)}\t{f.iterations}\t{f.kkt_residual:.3e}\n")
