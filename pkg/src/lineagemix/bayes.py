"""Bayesian binomial factorization models.

Three samplers share the likelihood ``C[i,t] ~ Binomial(D[i,t], (Z G)[i,t])``
with binary ``Z`` (Bernoulli(1/2) prior per entry) and differ in how the
abundance matrix ``G`` is parameterised:

``bnmf``
    ``G[:, t] = Gstar[:, t] * Gind`` with ``Gstar[:, t] ~ Dirichlet(1)`` and a
    per-lineage on/off switch ``Gind[j] ~ Bernoulli(1/2)``.
``tbnmf_le1``
    ``Gstar = (B phi^T)^T`` with ``phi = phistar * phind``, ``phistar ~ U(0,1)``
    and a per-lineage switch; every column of ``G`` is ``fluffmax(Gstar[:, t])``
    so abundances sum to one or less.
``tbnmf_eq1``
    ``alpha = max((B phi^T)^T, alpha_min)`` with ``phistar ~ Exponential(1)``
    and a per-coefficient switch; ``G[:, t] ~ Dirichlet(alpha[:, t])`` so
    abundances sum to exactly one.

Each iteration updates, in order: all ``Z`` entries (exact Gibbs, one
lineage column at a time, then a Metropolis swap of each pair of entries
within a row), the continuous abundance parameters (random-walk
Metropolis on logit / log / additive-logistic scales), then the switches
(exact Gibbs).  Step sizes adapt during burn-in only.

Chains are label-aligned to the chain with the highest mean log-likelihood;
chains whose mean log-likelihood falls clearly below it (a different mode) are
left out of the pooled draws, point estimates and WAIC.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit, logsumexp

from . import kernels
from ._accel import backend_name
from .core import (
    CLAMP_EPS,
    AbundanceSeries,
    ConstraintKind,
    FitReport,
    LineageDefinitionSet,
    LineageMixError,
    MutationPanel,
    PosteriorDraws,
    as_float_data,
)
from .lineage_defs import jaccard_columns
from .mcmc import SamplerConfig, StepAdapter, progress_line, select_rank, split_rhat, waic, waic_diff_se, waic_pointwise
from .splines import SplineBasis, fluffmax_columns

log = logging.getLogger(__name__)

ALPHA_MIN = 1e-3
MODEL_KINDS = ("bnmf", "tbnmf_le1", "tbnmf_eq1")


@dataclass
class Hooks:
    """Test and diagnostic overrides; defaults give the full model."""

    fixed_z: np.ndarray | None = None
    likelihood: bool = True
    fixed_indicators: np.ndarray | None = None
    # tbnmf_eq1 only: hold the Dirichlet concentration fixed (phi updates off)
    fixed_alpha: np.ndarray | None = None
    init_phistar: np.ndarray | None = None


def _block_target(dim, scalar_target):
    if dim <= 1:
        return scalar_target
    if dim == 2:
        return 0.35
    if dim <= 4:
        return 0.3
    return 0.234


def _softmax_alr(A):
    full = np.vstack([A, np.zeros((1, A.shape[1]))])
    return np.exp(full - logsumexp(full, axis=0))


def _log_softmax_alr(A):
    full = np.vstack([A, np.zeros((1, A.shape[1]))])
    return full - logsumexp(full, axis=0)


def _alr_from_simplex(G):
    G = np.maximum(G, 1e-300)
    return np.log(G[:-1]) - np.log(G[-1])


class _Chain:
    kind = ""
    constraint = ConstraintKind.SUM_LE_ONE

    def __init__(self, panel, R, cfg, hooks, chain_id, basis=None, alpha_min=ALPHA_MIN):
        self.C, self.D = as_float_data(panel)
        if not hooks.likelihood:
            self.C = np.zeros_like(self.C)
            self.D = np.zeros_like(self.D)
        self.C_full, self.D_full = self.C, self.D
        self.N, self.T = self.C.shape
        self.R = R
        self.cfg = cfg
        self.hooks = hooks
        self.chain_id = chain_id
        self.basis = basis
        self.alpha_min = alpha_min
        self.eps = CLAMP_EPS
        self.kern = kernels.active()
        self.rng = np.random.default_rng([cfg.seed, chain_id])
        self.adapters = []
        # switches stay on while the likelihood is tempered; an off lineage drifts
        # under its prior and is almost never switched back on
        self.switches_live = True
        self.beta = 1.0
        if hooks.fixed_z is not None:
            self.Z = np.ascontiguousarray(hooks.fixed_z, dtype=np.int8).copy()
        else:
            self.Z = (self.rng.random((self.N, R)) < 0.5).astype(np.int8)

    # subclasses provide G(), sweep_params() and snapshot()

    def set_temperature(self, beta):
        """Scale the likelihood by ``beta``; exact because it is linear in (C, D)."""
        self.C = self.C_full * beta
        self.D = self.D_full * beta
        self.beta = beta
        self.switches_live = beta >= 1.0
        if not self.switches_live and self.hooks.fixed_indicators is None:
            self.ind[:] = 1

    def sweep(self):
        if self.hooks.fixed_z is None:
            U = self.rng.random((self.N, self.R))
            G = self.G()
            self.kern.z_gibbs(self.C, self.D, self.Z, G, self.eps, 0.0, U)
            if self.R > 1:
                # entry flips cannot carry a row from (1, 0) to (0, 1) without passing
                # a much worse state; the swap moves it in one step
                logU = np.log(self.rng.random((self.N, self.R * (self.R - 1) // 2)))
                self.kern.z_swap(self.C, self.D, self.Z, G, self.eps, logU)
        self.sweep_params()

    def cell_ll(self):
        return self.kern.cell_loglik(self.C, self.D, self.Z @ self.G(), self.eps)

    def total_ll(self, G):
        return float(self.kern.cell_loglik(self.C, self.D, self.Z @ G, self.eps).sum())

    def freeze(self):
        for a in self.adapters:
            a.freeze()

    def acceptance(self):
        rates = [float(np.mean(a.acceptance)) for a in self.adapters if a.acceptance.size]
        return float(np.mean(rates)) if rates else 1.0

    def _flip_switch(self, ind, j, make_G):
        """Gibbs update of one 0/1 switch from the full-data log-likelihood."""
        ind[j] = 0
        l0 = self.total_ll(make_G(ind))
        ind[j] = 1
        l1 = self.total_ll(make_G(ind))
        ind[j] = 1 if self.rng.random() < expit(l1 - l0) else 0


class _BnmfChain(_Chain):
    kind = "bnmf"

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        R, T = self.R, self.T
        self.A = _alr_from_simplex(self.rng.dirichlet(np.ones(R), size=T).T)
        self.A = np.ascontiguousarray(self.A)
        if self.hooks.fixed_indicators is not None:
            self.ind = np.asarray(self.hooks.fixed_indicators, dtype=np.int8).copy()
        else:
            self.ind = (self.rng.random(R) < 0.5).astype(np.int8)
        self.g_adapt = StepAdapter(np.full(T, 0.3), _block_target(R - 1, self.cfg.target_accept),
                                   self.cfg.adapt_interval, self.cfg.adapt_delta0)
        self.adapters = [self.g_adapt] if R > 1 else []
        self.alpha = np.ones((R, T))

    def Gstar(self):
        return _softmax_alr(self.A)

    def G(self):
        return self.Gstar() * self.ind[:, None]

    def sweep_params(self):
        R, T = self.R, self.T
        if R > 1:
            noise = self.rng.standard_normal((R - 1, T))
            logU = np.log(self.rng.random(T))
            acc = self.kern.simplex_mh(self.C, self.D, self.Z, self.A, self.ind.astype(float), self.alpha,
                                       self.g_adapt.steps, self.eps, noise, logU, self.hooks.likelihood)
            self.g_adapt.record(acc)
        if self.hooks.fixed_indicators is None and self.switches_live:
            Gs = self.Gstar()
            for j in range(R):
                self._flip_switch(self.ind, j, lambda ind: Gs * ind[:, None])

    def snapshot(self):
        return {"ind": self.ind.copy()}


class _Le1Chain(_Chain):
    kind = "tbnmf_le1"

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        R, M = self.R, self.basis.M
        self.B = np.ascontiguousarray(self.basis.matrix)
        self.tlo, self.thi = kernels.support_bounds(self.B)
        if self.hooks.init_phistar is not None:
            phi0 = np.clip(np.asarray(self.hooks.init_phistar, dtype=float), 1e-12, 1 - 1e-12)
        else:
            phi0 = self.rng.random((R, M))
        self.L = np.log(phi0) - np.log1p(-phi0)
        if self.hooks.fixed_indicators is not None:
            self.ind = np.asarray(self.hooks.fixed_indicators, dtype=np.int8).copy()
        else:
            self.ind = (self.rng.random(R) < 0.5).astype(np.int8)
        self.phi_adapt = StepAdapter(np.full((R, M), 0.5), self.cfg.target_accept,
                                     self.cfg.adapt_interval, self.cfg.adapt_delta0)
        self.adapters = [self.phi_adapt]

    def phistar(self):
        return expit(self.L)

    def _G_from(self, ind):
        return fluffmax_columns((self.B @ (self.phistar() * ind[:, None]).T).T)

    def G(self):
        return self._G_from(self.ind)

    def sweep_params(self):
        R, M = self.L.shape
        noise = self.rng.standard_normal((R, M))
        logU = np.log(self.rng.random((R, M)))
        acc = self.kern.phi_unit(self.C, self.D, self.Z, self.L, self.ind, self.B, self.tlo, self.thi,
                                 self.phi_adapt.steps, self.eps, noise, logU, self.hooks.likelihood)
        self.phi_adapt.record(acc)
        if self.hooks.fixed_indicators is None and self.switches_live:
            for j in range(R):
                self._flip_switch(self.ind, j, self._G_from)

    def snapshot(self):
        return {"ind": self.ind.copy(), "phi": self.phistar()}


class _Eq1Chain(_Chain):
    kind = "tbnmf_eq1"
    constraint = ConstraintKind.SUM_EQ_ONE

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        R, T, M = self.R, self.T, self.basis.M
        self.B = np.ascontiguousarray(self.basis.matrix)
        self.tlo, self.thi = kernels.support_bounds(self.B)
        if self.hooks.init_phistar is not None:
            phi0 = np.maximum(np.asarray(self.hooks.init_phistar, dtype=float), 1e-12)
        else:
            phi0 = self.rng.exponential(1.0, size=(R, M))
        self.logphi = np.log(phi0)
        if self.hooks.fixed_indicators is not None:
            self.ind = np.asarray(self.hooks.fixed_indicators, dtype=np.int8).copy()
        else:
            self.ind = (self.rng.random((R, M)) < 0.5).astype(np.int8)
        # Dirichlet(alpha) draws with small alpha sit at ~1e-200 corners the walk
        # cannot leave; start from Dirichlet(1), the fully tempered prior
        self.A = np.ascontiguousarray(_alr_from_simplex(self.rng.dirichlet(np.ones(R), size=T).T))
        self.g_adapt = StepAdapter(np.full(T, 0.3), _block_target(R - 1, self.cfg.target_accept),
                                   self.cfg.adapt_interval, self.cfg.adapt_delta0)
        self.phi_adapt = StepAdapter(np.full((R, M), 0.5), self.cfg.target_accept,
                                     self.cfg.adapt_interval, self.cfg.adapt_delta0)
        self.adapters = ([self.g_adapt] if R > 1 else []) + (
            [self.phi_adapt] if self.hooks.fixed_alpha is None else [])

    def alpha(self):
        if self.hooks.fixed_alpha is not None:
            return np.asarray(self.hooks.fixed_alpha, dtype=float)
        return np.maximum(self.B @ (np.exp(self.logphi) * self.ind).T, self.alpha_min).T

    def G(self):
        return _softmax_alr(self.A)

    def sweep_params(self):
        R, T = self.R, self.T
        alpha = self.alpha()
        if self.beta < 1.0:
            # tempered phase: the Dirichlet prior on G is tempered as well and phi waits
            alpha = 1.0 + self.beta * (alpha - 1.0)
        if R > 1:
            noise = self.rng.standard_normal((R - 1, T))
            logU = np.log(self.rng.random(T))
            acc = self.kern.simplex_mh(self.C, self.D, self.Z, self.A, np.ones(R), np.ascontiguousarray(alpha),
                                       self.g_adapt.steps, self.eps, noise, logU, self.hooks.likelihood)
            self.g_adapt.record(acc)
        if self.hooks.fixed_alpha is not None or self.beta < 1.0:
            return
        logG = np.ascontiguousarray(_log_softmax_alr(self.A))
        M = self.basis.M
        noise = self.rng.standard_normal((R, M))
        logU = np.log(self.rng.random((R, M)))
        acc = self.kern.phi_pos(logG, self.logphi, self.ind, self.B, self.tlo, self.thi, self.alpha_min,
                                self.phi_adapt.steps, noise, logU)
        self.phi_adapt.record(acc)
        if self.hooks.fixed_indicators is None:
            U = self.rng.random((R, M))
            self.kern.phind_dir(logG, self.logphi, self.ind, self.B, self.tlo, self.thi, self.alpha_min, 0.0, U)

    def snapshot(self):
        return {"ind": self.ind.copy(), "phi": np.exp(self.logphi), "alpha": self.alpha()}


_CHAINS = {"bnmf": _BnmfChain, "tbnmf_le1": _Le1Chain, "tbnmf_eq1": _Eq1Chain}


def _run_chain(kind, panel, R, cfg, hooks, chain_id, basis, alpha_min):
    ch = _CHAINS[kind](panel, R, cfg, hooks, chain_id, basis=basis, alpha_min=alpha_min)
    keep = range(cfg.n_burnin, cfg.n_iter, cfg.thin)
    S = len(keep)
    N, T = ch.N, ch.T
    out = {
        "z": np.empty((S, N, R), dtype=np.int8),
        "g": np.empty((S, R, T)),
        "ll": np.empty((S, N * T)),
    }
    extra = {}
    s = 0
    t0 = time.perf_counter()
    n_anneal = int(cfg.anneal_frac * cfg.n_burnin) if hooks.likelihood else 0
    for it in range(cfg.n_iter):
        if it < n_anneal:
            ch.set_temperature(cfg.anneal_start ** (1.0 - it / n_anneal))
        elif it == n_anneal:
            ch.set_temperature(1.0)
        if it == cfg.n_burnin:
            ch.freeze()
        ch.sweep()
        if it >= cfg.n_burnin and (it - cfg.n_burnin) % cfg.thin == 0:
            cell = ch.cell_ll()
            out["z"][s] = ch.Z
            out["g"][s] = ch.G()
            out["ll"][s] = cell.ravel()
            for k, v in ch.snapshot().items():
                extra.setdefault(k, np.empty((S, *np.shape(v)), dtype=np.asarray(v).dtype))[s] = v
            s += 1
        if cfg.progress and (it + 1) % cfg.progress_every == 0:
            progress_line(kind, chain_id, it + 1, ch.acceptance())
    out.update(extra)
    out["acceptance"] = ch.acceptance()
    out["seconds"] = time.perf_counter() - t0
    return out


def _chain_modes(chain):
    return (chain["z"].mean(axis=0) >= 0.5).astype(np.int8), chain["g"].mean(axis=0)


def match_lineages(Z_ref, G_ref, Z_other, G_other):
    """Permutation of ``other``'s lineages best matching ``ref`` (Jaccard of Z minus mean |dG|)."""
    score = jaccard_columns(Z_ref, Z_other) - np.abs(G_ref[:, None, :] - G_other[None, :, :]).mean(axis=2)
    rows, cols = linear_sum_assignment(-score)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm


def _permute_chain(chain, perm):
    out = dict(chain)
    out["z"] = chain["z"][:, :, perm]
    out["g"] = chain["g"][:, perm, :]
    for k in ("ind", "phi", "alpha"):
        if k in chain:
            out[k] = chain[k][:, perm]
    return out


def _merge_chains(chains, retain_sd=3.0):
    means = np.array([c["ll"].sum(axis=1).mean() for c in chains])
    sds = np.array([c["ll"].sum(axis=1).std() for c in chains])
    best = int(np.argmax(means))
    Zb, Gb = _chain_modes(chains[best])
    tol = max(retain_sd * sds[best], 1.0)
    retained, aligned = [], []
    for c, ch in enumerate(chains):
        if means[c] < means[best] - tol:
            continue
        if c != best:
            Zc, Gc = _chain_modes(ch)
            ch = _permute_chain(ch, match_lineages(Zb, Gb, Zc, Gc))
        retained.append(c)
        aligned.append(ch)
    return aligned, retained, means, best


def fit(kind, panel: MutationPanel, R: int, cfg: SamplerConfig | None = None, basis: SplineBasis | None = None,
        hooks: Hooks | None = None, alpha_min: float = ALPHA_MIN):
    """Run ``cfg.n_chains`` chains of model ``kind`` and summarise them.

    Returns ``(PosteriorDraws, FitReport)``.
    """
    if kind not in MODEL_KINDS:
        raise LineageMixError(f"unknown model kind {kind!r}", kind=kind)
    cfg = cfg or SamplerConfig()
    hooks = hooks or Hooks()
    N, T = panel.shape
    if R < 1:
        raise LineageMixError("R must be >= 1", R=R)
    if R > N:
        raise LineageMixError(f"R={R} exceeds the number of mutations N={N}", R=R, N=N)
    if kind != "bnmf":
        if basis is None:
            raise LineageMixError(f"{kind} needs a spline basis")
        if basis.matrix.shape[0] != T:
            raise LineageMixError("basis rows must match the panel dates", basis_T=basis.matrix.shape[0], T=T)
    if hooks.fixed_z is not None and np.shape(hooks.fixed_z) != (N, R):
        raise LineageMixError("fixed_z must be N x R")

    t0 = time.perf_counter()
    args = [(kind, panel, R, cfg, hooks, c, basis, alpha_min) for c in range(cfg.n_chains)]
    if cfg.n_jobs > 1 and cfg.n_chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            chains = list(pool.map(lambda a: _run_chain(*a), args))
    else:
        chains = [_run_chain(*a) for a in args]

    for c, ch in enumerate(chains):
        if not np.isfinite(ch["ll"]).all():
            raise LineageMixError(f"non-finite likelihood in chain {c}", chain=c)

    aligned, retained, means, best = _merge_chains(chains)
    constraint = _CHAINS[kind].constraint
    draws = PosteriorDraws(
        z_draws=np.concatenate([c["z"] for c in aligned]),
        g_draws=np.concatenate([c["g"] for c in aligned]),
        loglik_cells=np.concatenate([c["ll"] for c in aligned]),
        chain_ids=np.concatenate([np.full(len(c["g"]), cid) for c, cid in zip(aligned, retained)]),
        indicator_draws=np.concatenate([c["ind"] for c in aligned]),
        phi_draws=np.concatenate([c["phi"] for c in aligned]) if "phi" in aligned[0] else None,
        constraint_kind=constraint,
    )
    if "alpha" in aligned[0]:
        draws.alpha_draws = np.concatenate([c["alpha"] for c in aligned])

    z_mode = (draws.z_draws.mean(axis=0) >= 0.5).astype(np.int8)
    g_mean = draws.g_draws.mean(axis=0)
    if constraint is ConstraintKind.SUM_EQ_ONE:
        g_mean = g_mean / g_mean.sum(axis=0, keepdims=True)
    else:
        g_mean = fluffmax_columns(np.clip(g_mean, 0.0, 1.0))
    names = [str(j + 1) for j in range(R)]
    empty = [names[j] for j in np.flatnonzero(z_mode.sum(axis=0) == 0)]
    if empty:
        log.warning("lineages %s have no mutations in the posterior mode", empty)
    defs = None
    if len(empty) < R:
        defs = LineageDefinitionSet.from_matrix(panel.mutations, names, z_mode, drop_empty=True)
    abundance = AbundanceSeries(values=np.clip(g_mean, 0.0, 1.0), constraint_kind=constraint,
                                dates=panel.dates, names=names)
    w = waic(draws.loglik_cells) if draws.n_draws >= 2 else None
    rhat = np.nan
    if len(aligned) > 1:
        r = split_rhat(np.stack([c["g"] for c in aligned]))
        rhat = float(np.nanmax(r)) if np.isfinite(r).any() else np.nan
    diagnostics = {
        "backend": backend_name(),
        "chain_mean_loglik": means.tolist(),
        "best_chain": best,
        "retained_chains": retained,
        "acceptance": [c["acceptance"] for c in chains],
        "max_split_rhat_G": rhat,
        "indicator_off_prob": (1.0 - draws.indicator_draws.reshape(draws.n_draws, R, -1).mean(axis=(0, 2))).tolist(),
        "seconds": time.perf_counter() - t0,
    }
    config_echo = {"model": kind, "R": R, "alpha_min": alpha_min, **cfg.as_dict()}
    if basis is not None:
        config_echo.update(basis_M=basis.M, basis_degree=basis.degree)
    report = FitReport(model_kind=kind, point_definitions=defs, point_abundance=abundance, waic=w,
                       config_echo=config_echo, z_point=z_mode, diagnostics=diagnostics)
    return draws, report


def bnmf_fit(panel, R, cfg=None, hooks=None):
    return fit("bnmf", panel, R, cfg, hooks=hooks)


def tbnmf_le1_fit(panel, R, basis, cfg=None, hooks=None):
    return fit("tbnmf_le1", panel, R, cfg, basis=basis, hooks=hooks)


def tbnmf_eq1_fit(panel, R, basis, cfg=None, hooks=None, alpha_min=ALPHA_MIN):
    return fit("tbnmf_eq1", panel, R, cfg, basis=basis, hooks=hooks, alpha_min=alpha_min)


def recompute_loglik(panel, draws, s):
    """Total log-likelihood of stored draw ``s`` recomputed from its Z and G."""
    C, D = as_float_data(panel)
    P = draws.z_draws[s].astype(float) @ draws.g_draws[s]
    return float(kernels.active().cell_loglik(C, D, P, CLAMP_EPS).sum())


def dirichlet_mh_draws(alpha, n_draws, seed=0, step=None):
    """Draws from Dirichlet(alpha) produced by the simplex random-walk kernel alone.

    Used to check the additive-logistic move and its Jacobian against analytic
    Dirichlet moments.
    """
    alpha = np.asarray(alpha, dtype=float).reshape(-1, 1)
    R = alpha.shape[0]
    kern = kernels.active()
    rng = np.random.default_rng(seed)
    A = np.zeros((R - 1, 1))
    dummy = np.zeros((1, 1))
    Z = np.zeros((1, R), dtype=np.int8)
    adapter = StepAdapter(np.array([step or 1.0]), _block_target(R - 1, 0.44), 50)
    burn = max(2000, n_draws // 10)
    out = np.empty((n_draws, R))
    for it in range(burn + n_draws):
        if it == burn:
            adapter.freeze()
        noise = rng.standard_normal((R - 1, 1))
        logU = np.log(rng.random(1))
        acc = kern.simplex_mh(dummy, dummy, Z, A, np.ones(R), alpha, adapter.steps, CLAMP_EPS, noise, logU, False)
        adapter.record(acc)
        if it >= burn:
            out[it - burn] = _softmax_alr(A)[:, 0]
    return out


def posterior_switch_off(draws: PosteriorDraws):
    """Posterior probability that each lineage's switch is off (all coefficients for eq1)."""
    ind = draws.indicator_draws
    if ind.ndim == 3:
        return 1.0 - ind.any(axis=2).mean(axis=0)
    return 1.0 - ind.mean(axis=0)


def waic_scan(panel, ranks, kind="bnmf", cfg=None, basis=None, tie_se=2.0, alpha_min=ALPHA_MIN, on_fit=None):
    """Fit ``kind`` at every rank and apply :func:`select_rank` to the WAICs.

    Returns ``(rows, selected)``; each row holds rank, waic, lppd, p_waic and the
    standard error of the WAIC change to the next rank.  ``on_fit(rank, draws,
    report)`` is called after each fit.
    """
    ranks = sorted(set(int(r) for r in ranks))
    if not ranks:
        raise LineageMixError("waic_scan needs at least one rank")
    results, points = [], []
    for r in ranks:
        draws, rep = fit(kind, panel, r, cfg, basis=basis, alpha_min=alpha_min)
        if rep.waic is None:
            raise LineageMixError("waic_scan needs at least two stored draws per fit")
        results.append(rep.waic)
        points.append(waic_pointwise(draws.loglik_cells))
        if on_fit is not None:
            on_fit(r, draws, rep)
    se = [waic_diff_se(points[k], points[k + 1]) for k in range(len(ranks) - 1)]
    selected = select_rank(ranks, [w.waic for w in results], se, tie_se)
    rows = [{"rank": r, "waic": w.waic, "lppd": w.lppd, "p_waic": w.p_waic,
             "se_diff_next": se[k] if k < len(se) else float("nan")}
            for k, (r, w) in enumerate(zip(ranks, results))]
    return rows, selected


_DRAW_BLOCKS = ("z_draws", "g_draws", "loglik_cells", "chain_ids", "indicator_draws", "phi_draws", "alpha_draws")


def write_draws(out_dir, draws: PosteriorDraws):
    """One CSV per parameter block (a row per draw, entries flattened row-major)
    plus ``manifest.txt`` recording each block's file, shape and dtype."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"constraint_kind={draws.constraint_kind.value}", f"n_draws={draws.n_draws}"]
    for name in _DRAW_BLOCKS:
        arr = getattr(draws, name)
        if arr is None:
            continue
        arr = np.asarray(arr)
        flat = arr.reshape(arr.shape[0], -1)
        fmt = "%d" if np.issubdtype(arr.dtype, np.integer) else "%.17g"
        np.savetxt(out / f"{name}.csv", flat, fmt=fmt, delimiter=",")
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"{name}={name}.csv;shape={shape};dtype={arr.dtype.name}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_draws(out_dir) -> PosteriorDraws:
    from pathlib import Path

    from .ingest import read_keyvalue

    d = Path(out_dir)
    meta = read_keyvalue(d / "manifest.txt")
    kw = {}
    for name in _DRAW_BLOCKS:
        if name not in meta:
            continue
        parts = dict(p.split("=", 1) for p in ("file=" + meta[name]).split(";"))
        shape = tuple(int(s) for s in parts["shape"].split("x"))
        arr = np.loadtxt(d / parts["file"], delimiter=",", dtype=parts["dtype"], ndmin=2)
        kw[name] = arr.reshape(shape)
    return PosteriorDraws(constraint_kind=ConstraintKind(meta["constraint_kind"]), **kw)
