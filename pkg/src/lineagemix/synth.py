"""Synthetic wastewater panels with known lineage definitions and abundances,
plus the permutation-aligned scoring used to judge recovery."""

from __future__ import annotations

import datetime as dt
import itertools
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit

from .core import LineageMixError, MutationPanel
from .lineage_defs import jaccard_columns

WAVE_SHAPES = ("logistic_crossover", "plateau", "constant")


@dataclass(frozen=True)
class ScenarioSpec:
    N: int = 60
    T: int = 40
    R_true: int = 3
    overlap: float = 0.3
    wave_shape: str = "logistic_crossover"
    depth_law: str = "fixed(2000)"
    residual_mass: float = 0.0
    seed: int = 0
    # width of each logistic transition on the unit time axis
    crossover_width: float = 0.05
    absent_lineages: tuple = ()
    start_date: str = "2022-01-03"
    spacing_days: int = 7

    def __post_init__(self):
        if self.R_true < 1 or self.N < 1 or self.T < 1:
            raise LineageMixError("N, T and R_true must be positive")
        if self.R_true > self.N:
            raise LineageMixError("R_true must not exceed N", R_true=self.R_true, N=self.N)
        if not 0 <= self.overlap <= 1:
            raise LineageMixError("overlap must lie in [0, 1]")
        if not 0 <= self.residual_mass < 1:
            raise LineageMixError("residual_mass must lie in [0, 1)")
        if self.wave_shape not in WAVE_SHAPES:
            raise LineageMixError(f"wave_shape must be one of {WAVE_SHAPES}")
        parse_depth_law(self.depth_law)
        if len(set(self.absent_lineages)) >= self.R_true:
            raise LineageMixError("at least one lineage must be present")

    def as_dict(self):
        d = asdict(self)
        d["absent_lineages"] = ",".join(str(j) for j in self.absent_lineages)
        return d


def parse_depth_law(text):
    m = re.fullmatch(r"\s*fixed\(\s*(\d+)\s*\)\s*", text)
    if m:
        return ("fixed", int(m.group(1)), int(m.group(1)))
    m = re.fullmatch(r"\s*uniform\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if not 1 <= lo <= hi:
            raise LineageMixError("uniform depth law needs 1 <= lo <= hi")
        return ("uniform", lo, hi)
    raise LineageMixError(f"depth_law must be fixed(D) or uniform(lo,hi), got {text!r}")


def read_spec(path) -> ScenarioSpec:
    """Parse a key=value scenario file; unknown keys are an error."""
    from .ingest import read_keyvalue

    raw = read_keyvalue(path)
    types = {f.name: f.type for f in fields(ScenarioSpec)}
    kw = {}
    for k, v in raw.items():
        if k not in types:
            raise LineageMixError(f"{path}: unknown scenario key {k!r}", key=k)
        default = getattr(ScenarioSpec, k)
        if k == "absent_lineages":
            kw[k] = tuple(int(x) for x in v.split(",") if x.strip())
        elif isinstance(default, bool):
            kw[k] = v.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            kw[k] = int(v)
        elif isinstance(default, float):
            kw[k] = float(v)
        else:
            kw[k] = v
    return ScenarioSpec(**kw)


def write_spec(spec: ScenarioSpec, path):
    with open(path, "w") as fh:
        for k, v in spec.as_dict().items():
            fh.write(f"{k}={v}\n")


def _membership(spec, rng):
    N, R = spec.N, spec.R_true
    home = np.arange(N) % R
    Z = np.zeros((N, R), dtype=np.int8)
    Z[np.arange(N), home] = 1
    for h in range(R - 1):
        own = np.flatnonzero(home == h)
        n_shared = int(round(spec.overlap * len(own)))
        if n_shared >= len(own):
            raise LineageMixError(
                f"overlap {spec.overlap} leaves lineage {h + 1} without private mutations",
                overlap=spec.overlap, lineage=h + 1,
            )
        Z[rng.choice(own, size=n_shared, replace=False), h + 1] = 1
    return Z[rng.permutation(N)]


def wave_matrix(spec) -> np.ndarray:
    """True abundance trajectories, R x T, columns summing to 1 - residual_mass."""
    R, T = spec.R_true, spec.T
    x = np.linspace(0.0, 1.0, T)
    if spec.wave_shape == "constant" or R == 1:
        G = np.full((R, T), 1.0 / R)
    elif spec.wave_shape == "logistic_crossover":
        mids = np.arange(1, R) / R
        s = expit((x[None, :] - mids[:, None]) / spec.crossover_width)
        upper = np.vstack([np.ones((1, T)), s])
        lower = np.vstack([s, np.zeros((1, T))])
        G = upper - lower
    else:
        seg = np.minimum((x * R).astype(int), R - 1)
        G = np.full((R, T), 0.3 / (R - 1))
        G[seg, np.arange(T)] = 0.7
    if spec.absent_lineages:
        G[list(spec.absent_lineages)] = 0.0
        G = G / G.sum(axis=0, keepdims=True)
    return G * (1.0 - spec.residual_mass)


def generate(spec: ScenarioSpec):
    """Simulate ``(panel, Z_true, G_true)``; counts are Binomial(D, Z_true G_true)."""
    rng = np.random.default_rng(spec.seed)
    Z = _membership(spec, rng)
    G = wave_matrix(spec)
    kind, lo, hi = parse_depth_law(spec.depth_law)
    D = np.full((spec.N, spec.T), lo, dtype=np.int64) if kind == "fixed" else rng.integers(lo, hi + 1, size=(spec.N, spec.T))
    P = np.clip(Z @ G, 0.0, 1.0)
    C = rng.binomial(D, P)
    start = dt.date.fromisoformat(spec.start_date)
    dates = [start + dt.timedelta(days=spec.spacing_days * t) for t in range(spec.T)]
    muts = [f"m{i + 1:03d}" for i in range(spec.N)]
    return MutationPanel(mutations=muts, dates=dates, counts=C, depths=D, site="synthetic"), Z, G


def _exhaustive_assignment(S):
    """Best one-to-one assignment by enumeration; returns est index per true column."""
    n_est, n_true = S.shape
    best, best_perm = -np.inf, None
    if n_est >= n_true:
        for perm in itertools.permutations(range(n_est), n_true):
            v = S[list(perm), range(n_true)].sum()
            if v > best + 1e-12:
                best, best_perm = v, perm
        return np.array(best_perm)
    out = np.full(n_true, -1)
    for cols in itertools.permutations(range(n_true), n_est):
        v = S[range(n_est), list(cols)].sum()
        if v > best + 1e-12:
            best, best_perm = v, cols
    out[list(best_perm)] = np.arange(n_est)
    return out


def _hungarian_assignment(S):
    rows, cols = linear_sum_assignment(-S)
    out = np.full(S.shape[1], -1)
    out[cols] = rows
    return out


def align_and_score(Z_est, Z_true, method="auto"):
    """Match estimated lineage columns to true ones maximizing total Jaccard.

    Returns ``(permutation, mean_jaccard, per_lineage_jaccard)`` where
    ``permutation[k]`` is the estimated column matched to true column ``k``
    (-1 when unmatched; its score counts as 0).
    """
    Z_est = np.asarray(Z_est)
    Z_true = np.asarray(Z_true)
    if Z_est.shape[0] != Z_true.shape[0]:
        raise LineageMixError("Z_est and Z_true need the same mutation rows",
                              est_rows=Z_est.shape[0], true_rows=Z_true.shape[0])
    S = jaccard_columns(Z_est, Z_true)
    if method == "auto":
        method = "exhaustive" if max(S.shape) <= 8 else "hungarian"
    perm = _exhaustive_assignment(S) if method == "exhaustive" else _hungarian_assignment(S)
    per = np.array([S[perm[k], k] if perm[k] >= 0 else 0.0 for k in range(S.shape[1])])
    return perm, float(per.mean()), per


def abundance_error(G_est, G_true, perm):
    """Max absolute error of matched abundance rows (unmatched true rows compare to 0)."""
    G_est = np.asarray(G_est)
    G_true = np.asarray(G_true)
    rows = np.stack([G_est[p] if p >= 0 else np.zeros(G_true.shape[1]) for p in perm])
    return float(np.abs(rows - G_true).max())


def write_truth(out_dir, panel, Z, G):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [str(j + 1) for j in range(Z.shape[1])]
    with open(out / "Z_true.csv", "w") as fh:
        fh.write(",".join(["mutation", *names]) + "\n")
        for m, row in zip(panel.mutations, Z):
            fh.write(",".join([m, *(str(int(v)) for v in row)]) + "\n")
    with open(out / "G_true.csv", "w") as fh:
        fh.write(",".join(["lineage", *(d.isoformat() for d in panel.dates)]) + "\n")
        for n, row in zip(names, G):
            fh.write(",".join([n, *(repr(float(v)) for v in row)]) + "\n")
