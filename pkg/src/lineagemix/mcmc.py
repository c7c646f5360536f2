"""Metropolis-within-Gibbs building blocks and WAIC.

The model samplers in :mod:`lineagemix.bayes` call the vectorized kernels in
:mod:`lineagemix.kernels` for their sweeps; the scalar ``flip_update`` and
``rw_update`` here define the same moves one variable at a time and are what
the calibration tests exercise.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .core import LineageMixError

SUPPORTS = ("unit_interval", "positive", "simplex_block")


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    n_iter: int = 20000
    n_burnin: int = 10000
    thin: int = 10
    seed: int = 0
    adapt_interval: int = 50
    target_accept: float = 0.44
    # multiplier for the first adaptation round; later rounds use delta0 / sqrt(round)
    adapt_delta0: float = 0.5
    # tempered start: the likelihood is raised to a power rising geometrically
    # from anneal_start to 1 over the first anneal_frac of burn-in
    anneal_frac: float = 0.6
    anneal_start: float = 1e-6
    n_jobs: int = 1
    progress: bool = False
    progress_every: int = 1000

    def __post_init__(self):
        if not self.n_iter > self.n_burnin >= 0:
            raise LineageMixError("need n_iter > n_burnin >= 0", n_iter=self.n_iter, n_burnin=self.n_burnin)
        if self.thin < 1 or self.n_chains < 1 or self.adapt_interval < 1:
            raise LineageMixError("thin, n_chains and adapt_interval must be >= 1")
        if not 0 <= self.anneal_frac <= 1 or not 0 < self.anneal_start <= 1:
            raise LineageMixError("anneal_frac must lie in [0, 1] and anneal_start in (0, 1]")
        if not 0 < self.target_accept < 1:
            raise LineageMixError("target_accept must lie in (0, 1)")

    @property
    def n_kept(self):
        return len(range(self.n_burnin, self.n_iter, self.thin))

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class WaicResult:
    waic: float
    lppd: float
    p_waic: float
    per_cell_pwaic_max: float


def flip_update(current, loglik_at_0, loglik_at_1, prior_p1, rng):
    """Exact full-conditional draw of a binary variable.

    ``P(1) = sigmoid(loglik_at_1 - loglik_at_0 + logit(prior_p1))``.  The
    current value does not influence the draw.
    """
    del current
    return int(rng.random() < flip_probability(loglik_at_0, loglik_at_1, prior_p1))


def flip_probability(loglik_at_0, loglik_at_1, prior_p1):
    logit_prior = math.log(prior_p1) - math.log1p(-prior_p1)
    return float(expit(loglik_at_1 - loglik_at_0 + logit_prior))


def _to_free(x, support):
    if support == "unit_interval":
        return math.log(x) - math.log1p(-x)
    if support == "positive":
        return math.log(x)
    x = np.asarray(x, dtype=float)
    return np.log(x[:-1]) - np.log(x[-1])


def _from_free(y, support):
    if support == "unit_interval":
        return float(expit(y))
    if support == "positive":
        return math.exp(y)
    full = np.append(y, 0.0)
    return np.exp(full - logsumexp(full))


def _log_jacobian(x, support):
    if support == "unit_interval":
        return math.log(x) + math.log1p(-x)
    if support == "positive":
        return math.log(x)
    return float(np.log(x).sum())


def rw_update(current, support, logpost, step, rng):
    """One random-walk Metropolis move on a transformed scale.

    ``unit_interval`` walks on the logit scale, ``positive`` on the log scale
    and ``simplex_block`` on additive-logistic coordinates (last component as
    reference).  The acceptance ratio carries the Jacobian of the inverse map,
    so the chain targets ``logpost`` with respect to Lebesgue measure on the
    original support.  Returns ``(value, accepted)``.
    """
    if support not in SUPPORTS:
        raise LineageMixError(f"unknown support {support!r}")
    lp_cur = logpost(current)
    if not np.isfinite(lp_cur):
        raise LineageMixError("log posterior is not finite at the current state", value=current)
    y = _to_free(current, support)
    y_new = y + step * (rng.standard_normal(np.shape(y)) if support == "simplex_block" else rng.standard_normal())
    proposal = _from_free(y_new, support)
    try:
        log_j_new = _log_jacobian(proposal, support)
    except ValueError:
        return current, False
    if not np.isfinite(log_j_new):
        return current, False
    lp_new = logpost(proposal)
    log_ratio = lp_new + log_j_new - lp_cur - _log_jacobian(current, support)
    if np.isfinite(log_ratio) and math.log(rng.random()) < log_ratio:
        return proposal, True
    return current, False


def adapt_step(history, step, target, round_index=1, delta0=0.5, frozen=False):
    """Multiplicative step-size adaptation.

    ``history`` is a window of 0/1 acceptance indicators (axis 0 = time, so
    vectors of steps adapt element-wise).  The step grows by ``exp(delta)``
    when the window acceptance exceeds ``target`` and shrinks by
    ``exp(-delta)`` otherwise, with ``delta = delta0 / sqrt(round_index)``.
    ``frozen=True`` (post burn-in) returns the step unchanged.
    """
    if frozen:
        return step
    rate = np.mean(np.asarray(history, dtype=float), axis=0)
    delta = delta0 / math.sqrt(max(round_index, 1))
    out = np.asarray(step, dtype=float) * np.exp(np.where(rate > target, delta, -delta))
    return float(out) if np.ndim(out) == 0 else out


class StepAdapter:
    """Accumulates acceptance indicators for an array of step sizes."""

    def __init__(self, steps, target, interval, delta0=0.5):
        self.steps = np.array(steps, dtype=float)
        self.target = target
        self.interval = interval
        self.delta0 = delta0
        self._window = []
        self.round = 0
        self.frozen = False
        self.n_acc = np.zeros_like(self.steps)
        self.n_prop = 0

    def record(self, accepted):
        accepted = np.asarray(accepted, dtype=float)
        self.n_acc += accepted
        self.n_prop += 1
        if self.frozen:
            return
        self._window.append(accepted)
        if len(self._window) >= self.interval:
            self.round += 1
            self.steps = adapt_step(np.array(self._window), self.steps, self.target, self.round, self.delta0)
            self._window = []

    def freeze(self):
        self.frozen = True
        self._window = []
        self.n_acc[:] = 0
        self.n_prop = 0

    @property
    def acceptance(self):
        return self.n_acc / max(self.n_prop, 1)


def waic(loglik_cells) -> WaicResult:
    """WAIC from an S x K matrix of per-draw, per-cell log-likelihoods.

    ``lppd = sum_k log mean_s exp(ll[s, k])`` (max-shifted), ``p_waic = sum_k
    var_s(ll[s, k])`` with the S - 1 denominator, ``waic = -2 (lppd - p_waic)``.
    """
    ll = np.asarray(loglik_cells, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise LineageMixError("waic needs an S x K matrix with S >= 2", shape=ll.shape)
    bad = np.flatnonzero(~np.isfinite(ll).all(axis=0))
    if bad.size:
        raise LineageMixError(f"non-finite log-likelihood in cell {int(bad[0])}", cell=int(bad[0]))
    S = ll.shape[0]
    mx = ll.max(axis=0)
    lpd = mx + np.log(np.exp(ll - mx).sum(axis=0)) - math.log(S)
    pw = ll.var(axis=0, ddof=1)
    lppd = float(lpd.sum())
    p_waic = float(pw.sum())
    return WaicResult(waic=-2.0 * (lppd - p_waic), lppd=lppd, p_waic=p_waic,
                      per_cell_pwaic_max=float(pw.max()))


def waic_pointwise(loglik_cells):
    """Per-cell WAIC contributions ``-2 (lpd_k - var_k)``; they sum to ``waic``."""
    ll = np.asarray(loglik_cells, dtype=float)
    mx = ll.max(axis=0)
    lpd = mx + np.log(np.exp(ll - mx).sum(axis=0)) - math.log(ll.shape[0])
    return -2.0 * (lpd - ll.var(axis=0, ddof=1))


def waic_diff_se(pointwise_a, pointwise_b):
    """Standard error of ``WAIC(b) - WAIC(a)`` from paired per-cell contributions."""
    d = np.asarray(pointwise_b, dtype=float) - np.asarray(pointwise_a, dtype=float)
    return float(math.sqrt(d.size * d.var(ddof=1))) if d.size > 1 else 0.0


def select_rank(ranks, waics, diff_se=None, tie_se=2.0):
    """Pick the smallest rank whose WAIC is not beaten by the next rank.

    Rank ``r`` is chosen when ``WAIC(r) <= WAIC(r')`` for every earlier ``r'``
    and ``WAIC(r+1)`` is not lower by more than ``tie_se`` standard errors of the
    paired difference (``diff_se[k]`` for ranks ``k, k+1``); such near-equal
    pairs are ties and go to the smaller rank.  ``tie_se=0`` gives the strict
    comparison.  Without any such rank the overall minimizer is returned.
    """
    ranks = list(ranks)
    w = np.asarray(waics, dtype=float)
    if len(ranks) != len(w) or not len(w):
        raise LineageMixError("ranks and waics must be nonempty and aligned")
    se = np.zeros(max(len(w) - 1, 0)) if diff_se is None else np.asarray(diff_se, dtype=float)
    for k in range(len(w) - 1):
        if k and w[k] > w[:k].min():
            continue
        if w[k + 1] - w[k] > -tie_se * se[k]:
            return ranks[k]
    return ranks[int(np.argmin(w))]


def split_rhat(x):
    """Split-R-hat for an array of shape (chains, draws, ...); NaN when undefined."""
    x = np.asarray(x, dtype=float)
    n = x.shape[1] // 2
    if n < 2:
        return np.full(x.shape[2:], np.nan)
    halves = np.concatenate([x[:, :n], x[:, n : 2 * n]], axis=0)
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_hat = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_hat / W)
    r = np.where(W > 0, r, np.where(B > 0, np.inf, 1.0))
    return r


def progress_line(model, chain, it, acceptance, stream=None):
    """Write a ``chain iter acceptance`` progress line to standard error."""
    (stream or sys.stderr).write(f"{model} chain={chain} iter={it} acceptance={acceptance:.3f}\n")
