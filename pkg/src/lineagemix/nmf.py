"""Classic NMF of the frequency matrix with consensus-based rank diagnostics.

The factorization ignores read depth on purpose: it works on frequencies only,
unlike the binomial models.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.cluster.hierarchy import average, cophenet
from scipy.spatial.distance import pdist, squareform

from .core import LineageMixError

_TINY = 1e-300


@dataclass(frozen=True)
class NmfResult:
    Z: np.ndarray
    G: np.ndarray
    residual_sse: float
    n_iter: int
    seed: int
    objective_trace: np.ndarray | None = None


@dataclass(frozen=True)
class RankScore:
    rank: int
    cophenetic: float
    dispersion: float
    evar: float
    rss: float
    silhouette_basis: float
    silhouette_coef: float
    n_runs: int


RANK_SCORE_FIELDS = ("rank", "cophenetic", "dispersion", "evar", "rss", "silhouette_basis", "silhouette_coef", "n_runs")


def _check_Y(Y):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise LineageMixError("Y must be a matrix", shape=Y.shape)
    if (Y < 0).any():
        i, t = np.argwhere(Y < 0)[0]
        raise LineageMixError(f"Y has a negative entry at ({i}, {t})", row=int(i), col=int(t))
    if not np.isfinite(Y).all():
        raise LineageMixError("Y must be finite")
    return Y


def fit_nmf(Y, rank, seed=0, max_iter=2000, tol=1e-8, check_monotone=False, keep_trace=False) -> NmfResult:
    """Lee-Seung multiplicative updates for ``||Y - Z G||_F^2``.

    Entries start i.i.d. uniform on ``(0, max(Y))``.  Iteration stops once the
    relative objective change drops below ``tol`` or at ``max_iter``.  With
    ``check_monotone`` an increase beyond round-off raises.
    """
    Y = _check_Y(Y)
    N, T = Y.shape
    if not 1 <= rank <= min(N, T):
        raise LineageMixError(f"rank must lie in [1, {min(N, T)}]", rank=rank)
    rng = np.random.default_rng(seed)
    top = Y.max() if Y.max() > 0 else 1.0
    Z = rng.uniform(0.0, top, size=(N, rank))
    G = rng.uniform(0.0, top, size=(rank, T))
    obj = float(np.sum((Y - Z @ G) ** 2))
    trace = [obj]
    it = 0
    for it in range(1, max_iter + 1):
        G *= (Z.T @ Y) / np.maximum(Z.T @ Z @ G, _TINY)
        Z *= (Y @ G.T) / np.maximum(Z @ (G @ G.T), _TINY)
        new = float(np.sum((Y - Z @ G) ** 2))
        if check_monotone and new > obj + 1e-12 * max(1.0, obj):
            raise LineageMixError(f"objective increased at iteration {it}", before=obj, after=new)
        rel = abs(obj - new) / max(obj, _TINY)
        obj = new
        if keep_trace:
            trace.append(obj)
        if rel < tol or obj == 0.0:
            break
    return NmfResult(Z=Z, G=G, residual_sse=obj, n_iter=it, seed=seed,
                     objective_trace=np.array(trace) if keep_trace else None)


def quantile_linear(values, q):
    """Quantile by linear interpolation between order statistics.

    With sorted values ``x_0 <= ... <= x_{n-1}`` and ``h = (n - 1) q`` the result
    is ``x_floor(h) + (h - floor(h)) (x_floor(h)+1 - x_floor(h))``.
    """
    return float(np.quantile(np.asarray(values, dtype=float).ravel(), q, method="linear"))


def percentile_rescale(result: NmfResult, q: float = 0.99) -> NmfResult:
    """Divide ``Z`` by its ``q`` quantile and multiply ``G`` by the same factor."""
    if not 0 < q <= 1:
        raise LineageMixError("q must lie in (0, 1]", q=q)
    s = quantile_linear(result.Z, q)
    if not np.any(result.Z) or s <= 0:
        raise LineageMixError("cannot rescale: quantile of Z is zero")
    return replace(result, Z=result.Z / s, G=result.G * s)


# -- rank diagnostics -----------------------------------------------------------------


def consensus_matrix(labels):
    """Fraction of runs in which each pair of items shares a cluster."""
    L = np.asarray(labels)
    return (L[:, :, None] == L[:, None, :]).mean(axis=0)


def cophenetic_correlation(C):
    """Correlation of consensus dissimilarities with their average-linkage cophenetic distances.

    A consensus matrix with no spread (every dissimilarity equal) has a
    dendrogram that reproduces it exactly, so the score is defined as 1.
    """
    D = 1.0 - np.asarray(C, dtype=float)
    np.fill_diagonal(D, 0.0)
    d = squareform(D, checks=False)
    if d.size < 2 or np.ptp(d) == 0:
        return 1.0
    coph = cophenet(average(d))
    if np.ptp(coph) == 0:
        return 1.0
    return float(np.corrcoef(d, coph)[0, 1])


def dispersion(C):
    C = np.asarray(C, dtype=float)
    return float(np.sum(4.0 * (C - 0.5) ** 2) / C.size)


def silhouette(X, labels):
    """Mean silhouette of the rows of ``X`` (Euclidean) under ``labels``.

    Items in singleton clusters score 0; a single cluster overall gives 0.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    n = len(labels)
    if len(uniq) < 2 or n < 2:
        return 0.0
    dist = squareform(pdist(X))
    s = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = dist[i, own].sum() / (own.sum() - 1)
        b = min(dist[i, labels == k].mean() for k in uniq if k != labels[i])
        s[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(s.mean())


def rank_scan(Y, ranks, runs_per_rank=30, seed=0, max_iter=2000, tol=1e-8):
    """Rank diagnostics from ``runs_per_rank`` seeded NMF runs per rank.

    Run ``k`` at rank ``r`` uses seed ``(seed, r, k)``.  Mutations are clustered
    by the argmax of their ``Z`` row and dates by the argmax of their ``G``
    column; the consensus matrix is built from the mutation clusters.  RSS,
    evar and the silhouettes come from the best-RSS run.
    """
    Y = _check_Y(Y)
    ranks = list(ranks)
    bad = [r for r in ranks if not 1 <= r <= min(Y.shape)]
    if bad:
        raise LineageMixError(f"ranks {bad} outside [1, {min(Y.shape)}]", ranks=bad)
    if runs_per_rank < 2:
        raise LineageMixError("runs_per_rank must be >= 2 for consensus scores")
    total = float(np.sum(Y**2))
    scores = []
    for r in ranks:
        runs = [fit_nmf(Y, r, seed=int(np.random.SeedSequence([seed, r, k]).generate_state(1)[0]),
                        max_iter=max_iter, tol=tol) for k in range(runs_per_rank)]
        labels = np.array([run.Z.argmax(axis=1) for run in runs])
        C = consensus_matrix(labels)
        best = min(runs, key=lambda run: run.residual_sse)
        scores.append(RankScore(
            rank=r,
            cophenetic=cophenetic_correlation(C),
            dispersion=dispersion(C),
            evar=1.0 - best.residual_sse / total if total > 0 else 1.0,
            rss=best.residual_sse,
            silhouette_basis=silhouette(best.Z, best.Z.argmax(axis=1)),
            silhouette_coef=silhouette(best.G.T, best.G.argmax(axis=0)),
            n_runs=runs_per_rank,
        ))
    return scores


def write_rank_scores(path, scores):
    with open(path, "w") as fh:
        fh.write(",".join(RANK_SCORE_FIELDS) + "\n")
        for s in scores:
            vals = (getattr(s, f) for f in RANK_SCORE_FIELDS)
            fh.write(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in vals) + "\n")


def read_rank_scores(path):
    out = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            vals = line.strip().split(",")
            rec = dict(zip(header, vals))
            out.append(RankScore(**{k: (int(v) if k in ("rank", "n_runs") else float(v)) for k, v in rec.items()}))
    return out
