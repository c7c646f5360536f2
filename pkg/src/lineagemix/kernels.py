"""Hot inner loops of the samplers, in a numba and a vectorized numpy flavour.

Every kernel takes its random variates as arguments (drawn by the caller from a
``numpy.random.Generator``), so both backends walk the same chain for a given
seed up to floating-point summation order.  ``active()`` returns the namespace
selected by the ``LINEAGEMIX_DISABLE_NUMBA`` flag.

Array conventions: counts ``C`` and depths ``D`` are float64 N x T, ``Z`` is an
N x R int8 membership matrix, abundance-like matrices are R x T.
"""

import math
from types import SimpleNamespace

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from ._accel import njit, use_numba

# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _cell_loglik_np(C, D, P, eps):
    p = np.clip(P, eps, 1.0 - eps)
    return C * np.log(p) + (D - C) * np.log1p(-p)


def _z_gibbs_np(C, D, Z, G, eps, logit_prior, U):
    P = Z @ G
    for r in range(Z.shape[1]):
        base = P - Z[:, r : r + 1] * G[r]
        ll0 = _cell_loglik_np(C, D, base, eps).sum(axis=1)
        ll1 = _cell_loglik_np(C, D, base + G[r], eps).sum(axis=1)
        znew = U[:, r] < expit(ll1 - ll0 + logit_prior)
        Z[:, r] = znew
        P = base + znew[:, None] * G[r]
    return P


def _z_swap_np(C, D, Z, G, eps, logU):
    """Metropolis swap of Z[i, j] and Z[i, k] for every row and column pair j < k.

    The proposal is symmetric and the Bernoulli(0.5) prior is flat, so the
    acceptance ratio is the likelihood ratio alone.  ``logU`` is N x R(R-1)/2
    in ``itertools.combinations`` order.  Returns accept flags of that shape.
    """
    R = Z.shape[1]
    P = Z @ G
    cur = _cell_loglik_np(C, D, P, eps).sum(axis=1)
    acc = np.zeros(logU.shape, dtype=np.bool_)
    q = 0
    for j in range(R):
        for k in range(j + 1, R):
            d = (Z[:, j].astype(float) - Z[:, k])[:, None]
            live = d[:, 0] != 0
            Pn = P - d * G[j] + d * G[k]
            new = _cell_loglik_np(C, D, Pn, eps).sum(axis=1)
            ok = live & (logU[:, q] < new - cur)
            zj = Z[:, j].copy()
            Z[ok, j] = Z[ok, k]
            Z[ok, k] = zj[ok]
            P[ok] = Pn[ok]
            cur[ok] = new[ok]
            acc[:, q] = ok
            q += 1
    return acc


def _simplex_target_np(C, D, Z, A, scale, alpha, eps, use_lik):
    full = np.vstack([A, np.zeros((1, A.shape[1]))])
    logg = full - logsumexp(full, axis=0)
    out = (alpha * logg).sum(axis=0)
    if use_lik:
        P = Z @ (scale[:, None] * np.exp(logg))
        out = out + _cell_loglik_np(C, D, P, eps).sum(axis=0)
    return out


def _simplex_mh_np(C, D, Z, A, scale, alpha, steps, eps, noise, logU, use_lik):
    cur = _simplex_target_np(C, D, Z, A, scale, alpha, eps, use_lik)
    prop = A + steps[None, :] * noise
    new = _simplex_target_np(C, D, Z, prop, scale, alpha, eps, use_lik)
    acc = logU < new - cur
    A[:, acc] = prop[:, acc]
    return acc


def _fluffmax_cols_np(Gstar):
    s = Gstar.sum(axis=0)
    return Gstar / np.where(s > 1.0, s, 1.0)


def _phi_unit_np(C, D, Z, L, phind, B, tlo, thi, steps, eps, noise, logU, use_lik):
    """Logit-scale random walk on each phi*_{jm} of the sum-to-one-or-less model.

    ``L`` holds logit(phi*) and is updated in place.  Returns accept flags R x M.
    """
    R, M = L.shape
    phi = expit(L)
    acc = np.zeros((R, M), dtype=np.bool_)
    for j in range(R):
        for m in range(M):
            lp = L[j, m] + steps[j, m] * noise[j, m]
            pp = expit(lp)
            # Uniform(0,1) prior; logit Jacobian log phi + log(1 - phi)
            delta = (np.log(pp) + np.log1p(-pp)) - (np.log(phi[j, m]) + np.log1p(-phi[j, m]))
            if use_lik and phind[j]:
                sl = slice(tlo[m], thi[m])
                Bs = B[sl]
                gcur = Bs @ (phi * phind[:, None]).T  # t x R
                old = phi[j, m]
                phi[j, m] = pp
                gnew = Bs @ (phi * phind[:, None]).T
                phi[j, m] = old
                Pc = Z @ _fluffmax_cols_np(gcur.T)
                Pn = Z @ _fluffmax_cols_np(gnew.T)
                delta += (
                    _cell_loglik_np(C[:, sl], D[:, sl], Pn, eps).sum()
                    - _cell_loglik_np(C[:, sl], D[:, sl], Pc, eps).sum()
                )
            if logU[j, m] < delta:
                L[j, m] = lp
                phi[j, m] = pp
                acc[j, m] = True
    return acc


def _dir_col_np(logg, alpha):
    return gammaln(alpha.sum(axis=0)) - gammaln(alpha).sum(axis=0) + ((alpha - 1.0) * logg).sum(axis=0)


def _alpha_np(B, phistar, phind, alpha_min):
    return np.maximum(B @ (phistar * phind).T, alpha_min).T


def _phi_pos_np(logG, logphi, phind, B, tlo, thi, alpha_min, steps, noise, logU):
    """Log-scale random walk on phi*_{jm} of the sum-to-one model (Exponential(1) prior).

    Only the Dirichlet density of the current abundance columns depends on phi.
    """
    R, M = logphi.shape
    acc = np.zeros((R, M), dtype=np.bool_)
    for j in range(R):
        for m in range(M):
            lp = logphi[j, m] + steps[j, m] * noise[j, m]
            delta = (-math.exp(lp) + lp) - (-math.exp(logphi[j, m]) + logphi[j, m])
            if phind[j, m]:
                sl = slice(tlo[m], thi[m])
                phi = np.exp(logphi)
                a_cur = _alpha_np(B[sl], phi, phind, alpha_min)
                phi[j, m] = math.exp(lp)
                a_new = _alpha_np(B[sl], phi, phind, alpha_min)
                delta += (_dir_col_np(logG[:, sl], a_new) - _dir_col_np(logG[:, sl], a_cur)).sum()
            if logU[j, m] < delta:
                logphi[j, m] = lp
                acc[j, m] = True
    return acc


def _phind_dir_np(logG, logphi, phind, B, tlo, thi, alpha_min, logit_prior, U):
    R, M = phind.shape
    phi = np.exp(logphi)
    for j in range(R):
        for m in range(M):
            sl = slice(tlo[m], thi[m])
            ind = phind.copy()
            ind[j, m] = 0
            l0 = _dir_col_np(logG[:, sl], _alpha_np(B[sl], phi, ind, alpha_min)).sum()
            ind[j, m] = 1
            l1 = _dir_col_np(logG[:, sl], _alpha_np(B[sl], phi, ind, alpha_min)).sum()
            phind[j, m] = 1 if U[j, m] < expit(l1 - l0 + logit_prior) else 0


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _cell_ll1(c, d, p, eps):
    if p < eps:
        p = eps
    elif p > 1.0 - eps:
        p = 1.0 - eps
    return c * math.log(p) + (d - c) * math.log1p(-p)


@njit(cache=True, nogil=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def _cell_loglik_nb(C, D, P, eps):
    N, T = C.shape
    out = np.empty((N, T))
    for i in range(N):
        for t in range(T):
            out[i, t] = _cell_ll1(C[i, t], D[i, t], P[i, t], eps)
    return out


@njit(cache=True, nogil=True)
def _z_gibbs_nb(C, D, Z, G, eps, logit_prior, U):
    N, T = C.shape
    R = Z.shape[1]
    P = np.zeros((N, T))
    for i in range(N):
        for r in range(R):
            if Z[i, r]:
                for t in range(T):
                    P[i, t] += G[r, t]
    for r in range(R):
        for i in range(N):
            ll0 = 0.0
            ll1 = 0.0
            for t in range(T):
                b = P[i, t] - Z[i, r] * G[r, t]
                ll0 += _cell_ll1(C[i, t], D[i, t], b, eps)
                ll1 += _cell_ll1(C[i, t], D[i, t], b + G[r, t], eps)
            znew = 1 if U[i, r] < _sigmoid(ll1 - ll0 + logit_prior) else 0
            if znew != Z[i, r]:
                sgn = 1.0 if znew == 1 else -1.0
                for t in range(T):
                    P[i, t] += sgn * G[r, t]
                Z[i, r] = znew
    return P


@njit(cache=True, nogil=True)
def _z_swap_nb(C, D, Z, G, eps, logU):
    N, T = C.shape
    R = Z.shape[1]
    acc = np.zeros(logU.shape, dtype=np.bool_)
    P = np.zeros(T)
    for i in range(N):
        for t in range(T):
            P[t] = 0.0
            for r in range(R):
                if Z[i, r]:
                    P[t] += G[r, t]
        q = 0
        for j in range(R):
            for k in range(j + 1, R):
                if Z[i, j] != Z[i, k]:
                    d = float(Z[i, j]) - float(Z[i, k])
                    delta = 0.0
                    for t in range(T):
                        pn = P[t] - d * G[j, t] + d * G[k, t]
                        delta += _cell_ll1(C[i, t], D[i, t], pn, eps) - _cell_ll1(C[i, t], D[i, t], P[t], eps)
                    if logU[i, q] < delta:
                        for t in range(T):
                            P[t] = P[t] - d * G[j, t] + d * G[k, t]
                        zj = Z[i, j]
                        Z[i, j] = Z[i, k]
                        Z[i, k] = zj
                        acc[i, q] = True
                q += 1
    return acc


@njit(cache=True, nogil=True)
def _simplex_col_target_nb(C, D, Z, a, scale, alpha_col, eps, use_lik, t, logg, g):
    R = a.shape[0] + 1
    mx = 0.0
    for j in range(R - 1):
        if a[j] > mx:
            mx = a[j]
    s = math.exp(-mx)
    for j in range(R - 1):
        s += math.exp(a[j] - mx)
    lse = mx + math.log(s)
    out = 0.0
    for j in range(R):
        v = a[j] if j < R - 1 else 0.0
        logg[j] = v - lse
        g[j] = math.exp(logg[j]) * scale[j]
        out += alpha_col[j] * logg[j]
    if use_lik:
        N = C.shape[0]
        for i in range(N):
            p = 0.0
            for j in range(R):
                if Z[i, j]:
                    p += g[j]
            out += _cell_ll1(C[i, t], D[i, t], p, eps)
    return out


@njit(cache=True, nogil=True)
def _simplex_mh_nb(C, D, Z, A, scale, alpha, steps, eps, noise, logU, use_lik):
    Rm1, T = A.shape
    R = Rm1 + 1
    acc = np.zeros(T, dtype=np.bool_)
    logg = np.empty(R)
    g = np.empty(R)
    prop = np.empty(Rm1)
    for t in range(T):
        cur = _simplex_col_target_nb(C, D, Z, A[:, t], scale, alpha[:, t], eps, use_lik, t, logg, g)
        for j in range(Rm1):
            prop[j] = A[j, t] + steps[t] * noise[j, t]
        new = _simplex_col_target_nb(C, D, Z, prop, scale, alpha[:, t], eps, use_lik, t, logg, g)
        if logU[t] < new - cur:
            for j in range(Rm1):
                A[j, t] = prop[j]
            acc[t] = True
    return acc


@njit(cache=True, nogil=True)
def _le1_col_ll_nb(C, D, Z, B, phi, phind, t, eps, gcol):
    R = phi.shape[0]
    M = phi.shape[1]
    s = 0.0
    for j in range(R):
        v = 0.0
        if phind[j]:
            for m in range(M):
                v += B[t, m] * phi[j, m]
        gcol[j] = v
        s += v
    if s > 1.0:
        for j in range(R):
            gcol[j] /= s
    out = 0.0
    for i in range(C.shape[0]):
        p = 0.0
        for j in range(R):
            if Z[i, j]:
                p += gcol[j]
        out += _cell_ll1(C[i, t], D[i, t], p, eps)
    return out


@njit(cache=True, nogil=True)
def _phi_unit_nb(C, D, Z, L, phind, B, tlo, thi, steps, eps, noise, logU, use_lik):
    R, M = L.shape
    phi = np.empty((R, M))
    for j in range(R):
        for m in range(M):
            phi[j, m] = _sigmoid(L[j, m])
    acc = np.zeros((R, M), dtype=np.bool_)
    gcol = np.empty(R)
    for j in range(R):
        for m in range(M):
            lp = L[j, m] + steps[j, m] * noise[j, m]
            pp = _sigmoid(lp)
            old = phi[j, m]
            delta = (math.log(pp) + math.log1p(-pp)) - (math.log(old) + math.log1p(-old))
            if use_lik and phind[j]:
                llc = 0.0
                for t in range(tlo[m], thi[m]):
                    llc += _le1_col_ll_nb(C, D, Z, B, phi, phind, t, eps, gcol)
                phi[j, m] = pp
                lln = 0.0
                for t in range(tlo[m], thi[m]):
                    lln += _le1_col_ll_nb(C, D, Z, B, phi, phind, t, eps, gcol)
                phi[j, m] = old
                delta += lln - llc
            if logU[j, m] < delta:
                L[j, m] = lp
                phi[j, m] = pp
                acc[j, m] = True
    return acc


@njit(cache=True, nogil=True)
def _alpha_jt_nb(B, phi, phind, j, t, alpha_min):
    v = 0.0
    for m in range(phi.shape[1]):
        if phind[j, m]:
            v += B[t, m] * phi[j, m]
    return v if v > alpha_min else alpha_min


@njit(cache=True, nogil=True)
def _dir_jdiff_nb(logG, B, phi, phind, j, t, alpha_min, a_new):
    """Dirichlet log-density change at column t when alpha_{jt} becomes a_new."""
    R = phi.shape[0]
    s = 0.0
    a_cur = 0.0
    for k in range(R):
        a = _alpha_jt_nb(B, phi, phind, k, t, alpha_min)
        s += a
        if k == j:
            a_cur = a
    s_new = s - a_cur + a_new
    return (
        math.lgamma(s_new) - math.lgamma(s)
        - (math.lgamma(a_new) - math.lgamma(a_cur))
        + (a_new - a_cur) * logG[j, t]
    )


@njit(cache=True, nogil=True)
def _phi_pos_nb(logG, logphi, phind, B, tlo, thi, alpha_min, steps, noise, logU):
    R, M = logphi.shape
    phi = np.exp(logphi)
    acc = np.zeros((R, M), dtype=np.bool_)
    for j in range(R):
        for m in range(M):
            lp = logphi[j, m] + steps[j, m] * noise[j, m]
            pnew = math.exp(lp)
            delta = (-pnew + lp) - (-phi[j, m] + logphi[j, m])
            if phind[j, m]:
                old = phi[j, m]
                for t in range(tlo[m], thi[m]):
                    phi[j, m] = pnew
                    a_new = _alpha_jt_nb(B, phi, phind, j, t, alpha_min)
                    phi[j, m] = old
                    delta += _dir_jdiff_nb(logG, B, phi, phind, j, t, alpha_min, a_new)
            if logU[j, m] < delta:
                logphi[j, m] = lp
                phi[j, m] = pnew
                acc[j, m] = True
    return acc


@njit(cache=True, nogil=True)
def _phind_dir_nb(logG, logphi, phind, B, tlo, thi, alpha_min, logit_prior, U):
    R, M = phind.shape
    phi = np.exp(logphi)
    for j in range(R):
        for m in range(M):
            ll = 0.0
            for t in range(tlo[m], thi[m]):
                phind[j, m] = 1
                a1 = _alpha_jt_nb(B, phi, phind, j, t, alpha_min)
                phind[j, m] = 0
                ll += _dir_jdiff_nb(logG, B, phi, phind, j, t, alpha_min, a1)
            phind[j, m] = 1 if U[j, m] < _sigmoid(ll + logit_prior) else 0


# ---------------------------------------------------------------------------

NUMPY = SimpleNamespace(
    name="numpy",
    cell_loglik=_cell_loglik_np,
    z_gibbs=_z_gibbs_np,
    z_swap=_z_swap_np,
    simplex_mh=_simplex_mh_np,
    phi_unit=_phi_unit_np,
    phi_pos=_phi_pos_np,
    phind_dir=_phind_dir_np,
)

NUMBA = SimpleNamespace(
    name="numba",
    cell_loglik=_cell_loglik_nb,
    z_gibbs=_z_gibbs_nb,
    z_swap=_z_swap_nb,
    simplex_mh=_simplex_mh_nb,
    phi_unit=_phi_unit_nb,
    phi_pos=_phi_pos_nb,
    phind_dir=_phind_dir_nb,
)


def active():
    """Kernel namespace for the current backend setting."""
    return NUMBA if use_numba() else NUMPY


def support_bounds(B):
    """Half-open time ranges [lo, hi) where each basis column is nonzero."""
    M = B.shape[1]
    lo = np.zeros(M, dtype=np.int64)
    hi = np.zeros(M, dtype=np.int64)
    for m in range(M):
        nz = np.flatnonzero(B[:, m] > 0)
        if nz.size:
            lo[m], hi[m] = nz[0], nz[-1] + 1
    return lo, hi
