"""Exit criteria, one test per criterion.

Each test records a single PASS/FAIL line that is repeated in the terminal
summary.  Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from _fixtures import block_fixture, grid_argmax, random_rows, run_pipeline, run_rw, separable_sample
from lineagemix import bayes, synth
from lineagemix.ingest import FilterConfig, build_panel, merge_same_day, preprocess, read_mutation_tsv, select_mutations
from lineagemix.mcmc import SamplerConfig, flip_probability, flip_update, select_rank, waic
from lineagemix.nmf import fit_nmf, percentile_rescale, rank_scan
from lineagemix.provoc import ProvocOptions, fit_sample, gradient, objective
from lineagemix.splines import build_basis

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

SEEDS = range(5)


def _recovery(kind, spec, cfg, basis=True):
    panel, Z, G = synth.generate(spec)
    t0 = time.perf_counter()
    draws, rep = bayes.fit(kind, panel, spec.R_true, cfg, basis=build_basis(panel.dates) if basis else None)
    seconds = time.perf_counter() - t0
    perm, mean_j, _ = synth.align_and_score(rep.z_point, Z)
    err = synth.abundance_error(rep.point_abundance.values, G, perm)
    return draws, mean_j, err, seconds


def test_criterion_1_bnmf_recovery(record_criterion):
    # the default sampler configuration, 4 chains x 20000 iterations
    cfg_for = lambda s: SamplerConfig(seed=s)
    results = [_recovery("bnmf", synth.ScenarioSpec(seed=s), cfg_for(s), basis=False) for s in SEEDS]
    good = sum(j >= 0.9 and e <= 0.10 for _, j, e, _ in results)
    slowest = max(r[3] for r in results)
    ok = good >= 4 and slowest <= 600
    detail = (f"{good}/5 seeds with Jaccard>=0.9 and max|dG|<=0.10 "
              f"(Jaccard {[round(r[1], 3) for r in results]}, err {[round(r[2], 4) for r in results]}); "
              f"slowest fit {slowest:.0f}s at 4x20000")
    record_criterion(1, ok, detail)
    assert ok, detail


def test_criterion_2_spline_model_recovery(record_criterion):
    cfg_for = lambda s: SamplerConfig(n_chains=4, n_iter=3000, n_burnin=1500, thin=5, seed=s)
    parts, ok = [], True
    for kind, residual in (("tbnmf_le1", 0.1), ("tbnmf_eq1", 0.0)):
        good = violations = 0
        for s in SEEDS:
            draws, j, e, _ = _recovery(kind, synth.ScenarioSpec(seed=s, residual_mass=residual), cfg_for(s))
            good += j >= 0.9 and e <= 0.10
            sums = draws.g_draws.sum(axis=1)
            violations += int((sums > 1 + 1e-9).sum())
            if kind == "tbnmf_eq1":
                violations += int((np.abs(sums - 1) > 1e-9).sum())
        ok &= good >= 4 and violations == 0
        parts.append(f"{kind} residual {residual}: {good}/5 recovered, {violations} constraint violations")
    detail = "; ".join(parts) + " (4x3000 iterations)"
    record_criterion(2, ok, detail)
    assert ok, detail


def test_criterion_3_provoc(record_criterion):
    rng = np.random.default_rng(2024)
    worst_oracle = 0.0
    for k in range(20):
        Z, c, D = separable_sample(rng)
        fit = fit_sample(c, D, Z, ProvocOptions(seed=k))
        oracle = np.array([grid_argmax(c[Z[:, j] == 1], D[Z[:, j] == 1]) for j in range(Z.shape[1])])
        worst_oracle = max(worst_oracle, float(np.abs(fit.rho - oracle).max()))
    worst_kkt = worst_fd = 0.0
    h = 1e-6
    for k in range(20):
        Z = (rng.random((12, 4)) < 0.5).astype(float)
        Z[:4] = np.eye(4)
        D = rng.integers(100, 3000, size=12).astype(float)
        c = rng.binomial(D.astype(int), np.clip(Z @ rng.dirichlet(np.ones(5))[:4], 0, 1)).astype(float)
        worst_kkt = max(worst_kkt, fit_sample(c, D, Z, ProvocOptions(seed=k)).kkt_residual)
        rho = rng.dirichlet(np.ones(5))[:4] * 0.9 + 0.02
        g = gradient(rho, Z, c, D)
        fd = np.array([(objective(rho + h * e, Z, c, D) - objective(rho - h * e, Z, c, D)) / (2 * h) for e in np.eye(4)])
        worst_fd = max(worst_fd, float(np.linalg.norm(fd - g) / np.linalg.norm(g)))
    ok = worst_oracle < 1e-4 and worst_kkt < 1e-4 and worst_fd < 1e-4
    detail = (f"max |rho - grid oracle| {worst_oracle:.2e} over 20 separable samples; "
              f"max KKT residual {worst_kkt:.2e}, max FD gradient rel. error {worst_fd:.2e} over 20 random points")
    record_criterion(3, ok, detail)
    assert ok, detail


def test_criterion_4_waic_rank_selection(record_criterion):
    picks, strict = [], []
    for s in SEEDS:
        panel, _, _ = synth.generate(synth.ScenarioSpec(seed=s))
        rows, selected = bayes.waic_scan(panel, [2, 3, 4, 5, 6],
                                         cfg=SamplerConfig(n_chains=2, n_iter=3000, n_burnin=1500, thin=5, seed=s))
        picks.append(selected)
        strict.append(select_rank([r["rank"] for r in rows], [r["waic"] for r in rows], tie_se=0.0))
    hits = picks.count(3)
    ok = hits >= 4
    detail = (f"selected {picks} over ranks 2..6, {hits}/5 at rank 3 "
              f"(without the 2-SE tie allowance: {strict}, {strict.count(3)}/5)")
    record_criterion(4, ok, detail)
    assert ok, detail


def test_criterion_5_classic_nmf(record_criterion):
    increases = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        Y = rng.random((rng.integers(3, 25), rng.integers(3, 25)))
        res = fit_nmf(Y, int(rng.integers(1, min(Y.shape) + 1)), seed=seed, max_iter=300, tol=0, keep_trace=True)
        increases += int((np.diff(res.objective_trace) > 1e-12).sum())
    rng = np.random.default_rng(0)
    rank1 = fit_nmf(np.outer(rng.uniform(0.1, 1, 15), rng.uniform(0.1, 1, 10)), 1, seed=1, tol=1e-14,
                    max_iter=5000).residual_sse
    res = fit_nmf(rng.random((20, 12)), 4, seed=2, max_iter=200)
    scaled = percentile_rescale(res)
    rescale_err = float(np.abs(scaled.Z @ scaled.G - res.Z @ res.G).max())
    scores = {s.rank: s.cophenetic for s in rank_scan(block_fixture(0), [3, 4], runs_per_rank=10)}
    ok = increases == 0 and rank1 < 1e-8 and rescale_err <= 1e-12 and scores[3] > scores[4]
    detail = (f"{increases} objective increases over 50 matrices; rank-1 residual {rank1:.1e}; "
              f"rescale reconstruction error {rescale_err:.1e}; cophenetic r3 {scores[3]:.4f} > r4 {scores[4]:.4f}")
    record_criterion(5, ok, detail)
    assert ok, detail


def test_criterion_6_mcmc_calibration(record_criterion):
    n = 100_000
    beta, _ = run_rw("unit_interval", lambda v: math.log(v) + math.log1p(-v), 0.5, n, 1.5, seed=1)
    expo, _ = run_rw("positive", lambda v: -v, 1.0, n, 1.2, seed=2)
    # autocorrelated draws: allow 0.01 for Beta(2,2) (sd 0.22) and 0.02 for Exp(1) (sd 1)
    beta_ok = abs(beta.mean() - 0.5) < 0.01
    exp_ok = abs(expo.mean() - 1.0) < 0.02
    flips_ok = True
    rng = np.random.default_rng(7)
    for delta, prior in [(0.0, 0.5), (math.log(3), 0.5), (-1.3, 0.3), (2.0, 0.1)]:
        p = flip_probability(0.0, delta, prior)
        m = 20_000
        hits = sum(flip_update(0, 0.0, delta, prior, rng) for _ in range(m))
        flips_ok &= abs(hits / m - p) < 3 * math.sqrt(p * (1 - p) / m)
    w = waic(np.log([[0.2], [0.4]]))
    var = (math.log(0.2) - math.log(0.4)) ** 2 / 2
    waic_err = abs(w.waic - (-2 * (math.log(0.3) - var)))
    ok = beta_ok and exp_ok and flips_ok and waic_err <= 1e-12
    detail = (f"Beta(2,2) mean {beta.mean():.4f}, Exp(1) mean {expo.mean():.4f}, "
              f"flip frequencies within 3 SE: {flips_ok}, WAIC hand example error {waic_err:.1e}")
    record_criterion(6, ok, detail)
    assert ok, detail


def test_criterion_7_preprocessing(record_criterion):
    nested = zero_cells = merge_ok = True
    for seed in range(30):
        rows = random_rows(seed)
        merged = merge_same_day(rows)
        sets = [select_mutations(merged, FilterConfig(dynamics_d=d)) for d in (10, 15, 20)]
        nested &= sets[2] <= sets[1] <= sets[0]
        merge_ok &= merge_same_day(rows[::-1]) == merged
        perm = np.random.default_rng(seed).permutation(len(rows))
        merge_ok &= merge_same_day([rows[i] for i in perm]) == merged
        muts = sorted({r.mutation for r in merged})
        panel = build_panel(merged, muts, FilterConfig())
        observed = {(r.mutation, r.date): r.coverage for r in merged}
        for i, m in enumerate(panel.mutations):
            for t, d in enumerate(panel.dates):
                if observed.get((m, d), 0) == 0:
                    zero_cells &= panel.counts[i, t] == 0 and panel.depths[i, t] == 1
    ok = nested and zero_cells and merge_ok
    detail = (f"d=20 within d=15 within d=10 on 30 random inputs: {nested}; zero-depth cells are (0,1): "
              f"{zero_cells}; same-day merge order-invariant: {merge_ok}")
    record_criterion(7, ok, detail)
    assert ok, detail


DATA_DIR = os.environ.get("LINEAGEMIX_DATA_DIR")


@pytest.mark.skipif(not DATA_DIR, reason="set LINEAGEMIX_DATA_DIR to a directory of Highland Creek mutation TSVs")
def test_criterion_7_highland_creek_panel_sizes(record_criterion):
    rows = [r for p in sorted(Path(DATA_DIR).glob("*.tsv")) for r in read_mutation_tsv(p)]
    sizes = [preprocess(rows, FilterConfig(dynamics_d=d)).n_mutations for d in (10, 15, 20)]
    ok = sizes == [88, 72, 57]
    record_criterion(7.1, ok, f"Highland Creek panel sizes for d=10/15/20: {sizes} (expected [88, 72, 57])")
    assert ok


def test_criterion_8_dirichlet_variance(record_criterion):
    base = np.array([1.0, 2.0, 3.0])
    T, kept = 10, 10_000
    panel, _, _ = synth.generate(synth.ScenarioSpec(N=4, T=T, seed=0))
    basis = build_basis(panel.dates)
    variances = []
    for scale in (1.0, 10.0):
        alpha = np.repeat(scale * base[:, None], T, axis=1)
        hooks = bayes.Hooks(likelihood=False, fixed_alpha=alpha)
        cfg = SamplerConfig(n_chains=1, n_iter=1000 + kept, n_burnin=1000, thin=1, seed=3)
        draws, _ = bayes.fit("tbnmf_eq1", panel, 3, cfg, basis=basis, hooks=hooks)
        g = draws.g_draws.transpose(0, 2, 1).reshape(-1, 3)
        variances.append(g.var(axis=0))
    n_draws = kept * T
    ok = bool((variances[1] < variances[0]).all())
    detail = (f"coordinate variances alpha={base.tolist()}: {np.round(variances[0], 5).tolist()}, "
              f"x10: {np.round(variances[1], 5).tolist()} over {n_draws} draws each")
    record_criterion(8, ok, detail)
    assert ok, detail


def test_criterion_9_pipeline_determinism(record_criterion, tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    codes_a, files_a = run_pipeline(a, monkeypatch)
    codes_b, files_b = run_pipeline(b, monkeypatch)
    differing = sorted(k for k in files_a.keys() | files_b.keys() if files_a.get(k) != files_b.get(k))
    ok = codes_a == codes_b == [0, 0, 0, 0] and not differing
    detail = (f"simulate -> fit-bnmf -> compare -> plot twice: exit codes {codes_a}/{codes_b}, "
              f"{len(files_a)} files, {len(differing)} differ (run.meta timestamps excluded)")
    record_criterion(9, ok, detail + (f": {differing[:5]}" if differing else ""))
    assert ok, detail
