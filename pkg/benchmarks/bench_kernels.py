"""Time the sampler kernels under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeats 50] [--iters 400]

Each kernel is called with identical inputs and pre-drawn variates under both
backends; outputs are compared before timing.  The last block times a short
fit of each model end to end with the backend switched through LINEAGEMIX_DISABLE_NUMBA.
"""

import argparse
import os
import time

import numpy as np

from lineagemix import bayes, kernels, synth
from lineagemix.core import CLAMP_EPS, as_float_data
from lineagemix.mcmc import SamplerConfig
from lineagemix.splines import build_basis


def _best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(seed=0):
    panel, Z_true, G_true = synth.generate(synth.ScenarioSpec(seed=seed))
    C, D = as_float_data(panel)
    N, T = C.shape
    R = Z_true.shape[1]
    basis = build_basis(panel.dates)
    B = np.ascontiguousarray(basis.matrix)
    M = B.shape[1]
    tlo, thi = kernels.support_bounds(B)
    rng = np.random.default_rng(seed)
    Z = Z_true.astype(np.int8)
    A = np.log(np.maximum(G_true[:-1], 1e-6)) - np.log(np.maximum(G_true[-1], 1e-6))
    U = rng.random((N, R))
    logU_z = np.log(rng.random((N, R * (R - 1) // 2)))
    noise_g, logU_g = rng.standard_normal((R - 1, T)), np.log(rng.random(T))
    L = rng.standard_normal((R, M))
    noise_p, logU_p = rng.standard_normal((R, M)), np.log(rng.random((R, M)))
    logG = np.log(np.maximum(G_true, 1e-6))
    logG -= np.log(np.exp(logG).sum(axis=0))
    logphi = np.log(rng.exponential(size=(R, M)))

    # (name, call(kern) -> comparable output); mutable inputs are copied per call
    return [
        ("cell_loglik", lambda k: k.cell_loglik(C, D, Z @ G_true, CLAMP_EPS)),
        ("z_gibbs", lambda k: (lambda z: (k.z_gibbs(C, D, z, G_true, CLAMP_EPS, 0.0, U), z)[1])(Z.copy())),
        ("z_swap", lambda k: (lambda z: (k.z_swap(C, D, z, G_true, CLAMP_EPS, logU_z), z)[1])(Z[:, ::-1].copy())),
        ("simplex_mh", lambda k: (lambda a: (k.simplex_mh(C, D, Z, a, np.ones(R), np.ones((R, T)), np.full(T, 0.3),
                                                          CLAMP_EPS, noise_g, logU_g, True), a)[1])(A.copy())),
        ("phi_unit", lambda k: (lambda l: (k.phi_unit(C, D, Z, l, np.ones(R, dtype=np.int8), B, tlo, thi,
                                                      np.full((R, M), 0.5), CLAMP_EPS, noise_p, logU_p, True), l)[1])(L.copy())),
        ("phi_pos", lambda k: (lambda lp: (k.phi_pos(logG, lp, np.ones((R, M), dtype=np.int8), B, tlo, thi, 1e-3,
                                                     np.full((R, M), 0.5), noise_p, logU_p), lp)[1])(logphi.copy())),
    ]


def bench_kernels(repeats):
    print(f"{'kernel':<12} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  agree")
    for name, call in kernel_cases():
        a, b = call(kernels.NUMPY), call(kernels.NUMBA)  # also compiles numba
        agree = np.allclose(a, b, rtol=1e-9, atol=1e-9)
        t_np = _best_of(lambda: call(kernels.NUMPY), repeats)
        t_nb = _best_of(lambda: call(kernels.NUMBA), repeats)
        print(f"{name:<12} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} {t_np / t_nb:>8.1f}  {agree}")


def bench_fit(iters):
    panel, _, _ = synth.generate(synth.ScenarioSpec(seed=0))
    basis = build_basis(panel.dates)
    cfg = SamplerConfig(n_chains=1, n_iter=iters, n_burnin=iters // 2, thin=5)
    warm = SamplerConfig(n_chains=1, n_iter=20, n_burnin=10, thin=5)
    print(f"\nfits, 1 chain x {iters} iterations, default scenario")
    print(f"{'model':<10} {'numpy s':>9} {'numba s':>9} {'speedup':>8}")
    for kind in bayes.MODEL_KINDS:
        times = {}
        for flag, label in (("1", "numpy"), ("", "numba")):
            os.environ["LINEAGEMIX_DISABLE_NUMBA"] = flag
            bayes.fit(kind, panel, 3, warm, basis=basis)
            t0 = time.perf_counter()
            bayes.fit(kind, panel, 3, cfg, basis=basis)
            times[label] = time.perf_counter() - t0
        print(f"{kind:<10} {times['numpy']:>9.2f} {times['numba']:>9.2f} {times['numpy'] / times['numba']:>8.1f}")
    os.environ.pop("LINEAGEMIX_DISABLE_NUMBA", None)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--iters", type=int, default=400)
    args = ap.parse_args()
    bench_kernels(args.repeats)
    bench_fit(args.iters)


if __name__ == "__main__":
    main()
