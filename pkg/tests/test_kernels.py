import numpy as np
import pytest

from lineagemix import kernels, synth
from lineagemix.core import CLAMP_EPS, as_float_data
from lineagemix.splines import build_basis


@pytest.fixture(scope="module", params=[0, 1])
def inputs(request):
    seed = request.param
    panel, Z, G = synth.generate(synth.ScenarioSpec(N=20, T=15, seed=seed))
    C, D = as_float_data(panel)
    N, T = C.shape
    R = Z.shape[1]
    B = np.ascontiguousarray(build_basis(panel.dates).matrix)
    M = B.shape[1]
    rng = np.random.default_rng(seed)
    logG = np.log(np.maximum(G, 1e-6))
    logG -= np.log(np.exp(logG).sum(axis=0))
    return dict(
        C=C, D=D, Z=Z.astype(np.int8), G=G, B=B, bounds=kernels.support_bounds(B),
        A=np.log(np.maximum(G[:-1], 1e-6)) - np.log(np.maximum(G[-1], 1e-6)),
        U=rng.random((N, R)), noise_g=rng.standard_normal((R - 1, T)), logU_g=np.log(rng.random(T)),
        L=rng.standard_normal((R, M)), noise_p=rng.standard_normal((R, M)),
        logU_p=np.log(rng.random((R, M))), logG=logG, logphi=np.log(rng.exponential(size=(R, M))),
        ind_pm=(rng.random((R, M)) < 0.7).astype(np.int8), U_pm=rng.random((R, M)),
    )


def _cell(k, x):
    return k.cell_loglik(x["C"], x["D"], x["Z"] @ x["G"], CLAMP_EPS)


def _z(k, x):
    Z = np.ascontiguousarray(1 - x["Z"])
    k.z_gibbs(x["C"], x["D"], Z, x["G"], CLAMP_EPS, 0.0, x["U"])
    return Z


def _swap(k, x):
    Z = np.ascontiguousarray(x["Z"][::-1])
    R = Z.shape[1]
    logU = np.log(np.random.default_rng(7).random((Z.shape[0], R * (R - 1) // 2)))
    acc = k.z_swap(x["C"], x["D"], Z, x["G"], CLAMP_EPS, logU)
    return np.concatenate([Z.ravel(), np.asarray(acc, dtype=float).ravel()])


def _simplex(k, x):
    A = x["A"].copy()
    R, T = x["G"].shape
    acc = k.simplex_mh(x["C"], x["D"], x["Z"], A, np.ones(R), np.full((R, T), 1.5), np.full(T, 0.3),
                       CLAMP_EPS, x["noise_g"], x["logU_g"], True)
    return np.concatenate([A.ravel(), np.asarray(acc, dtype=float).ravel()])


def _phi_unit(k, x):
    L = x["L"].copy()
    R, M = L.shape
    lo, hi = x["bounds"]
    acc = k.phi_unit(x["C"], x["D"], x["Z"], L, np.ones(R, dtype=np.int8), x["B"], lo, hi,
                     np.full((R, M), 0.5), CLAMP_EPS, x["noise_p"], x["logU_p"], True)
    return np.concatenate([L.ravel(), np.asarray(acc, dtype=float).ravel()])


def _phi_pos(k, x):
    lp = x["logphi"].copy()
    R, M = lp.shape
    lo, hi = x["bounds"]
    acc = k.phi_pos(x["logG"], lp, x["ind_pm"], x["B"], lo, hi, 1e-3, np.full((R, M), 0.5),
                    x["noise_p"], x["logU_p"])
    return np.concatenate([lp.ravel(), np.asarray(acc, dtype=float).ravel()])


def _phind(k, x):
    ind = x["ind_pm"].copy()
    lo, hi = x["bounds"]
    k.phind_dir(x["logG"], x["logphi"], ind, x["B"], lo, hi, 1e-3, 0.0, x["U_pm"])
    return ind


CASES = {"cell_loglik": _cell, "z_gibbs": _z, "z_swap": _swap, "simplex_mh": _simplex,
         "phi_unit": _phi_unit, "phi_pos": _phi_pos, "phind_dir": _phind}


@pytest.mark.parametrize("name", sorted(CASES))
def test_backends_agree(name, inputs):
    a = CASES[name](kernels.NUMPY, inputs)
    b = CASES[name](kernels.NUMBA, inputs)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-10)


def test_backend_flag_selects_kernels(backend):
    assert kernels.active() is (kernels.NUMPY if backend == "numpy" else kernels.NUMBA)


def test_support_bounds_cover_nonzero_rows():
    B = build_basis(synth.generate(synth.ScenarioSpec(N=5, T=20))[0].dates).matrix
    lo, hi = kernels.support_bounds(np.ascontiguousarray(B))
    for m in range(B.shape[1]):
        nz = np.flatnonzero(B[:, m] > 0)
        assert lo[m] <= nz.min() and nz.max() < hi[m]


@pytest.mark.parametrize("k", [kernels.NUMPY, kernels.NUMBA], ids=["numpy", "numba"])
def test_swap_restores_scrambled_rows(k):
    # rows of a two-lineage truth with their patterns reversed: every swap is uphill
    G = np.array([[0.9, 0.8, 0.1], [0.1, 0.2, 0.9]])
    Z = np.array([[1, 0], [0, 1], [1, 1], [0, 0]], dtype=np.int8)
    D = np.full((4, 3), 1000.0)
    C = np.round((Z @ G) * D)
    Zs = np.ascontiguousarray(Z[:, ::-1])
    acc = k.z_swap(C, D, Zs, G, CLAMP_EPS, np.full((4, 1), -1e-12))
    np.testing.assert_array_equal(Zs, Z)
    np.testing.assert_array_equal(acc[:, 0], [True, True, False, False])
