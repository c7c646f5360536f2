"""Mutation-table parsing, same-day merging, dynamics filtering and panel assembly."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import LineageMixError, MutationPanel

log = logging.getLogger(__name__)

TSV_COLUMNS = ("sample_id", "date", "mutation", "position", "count", "coverage")


@dataclass(frozen=True)
class RawMutationRow:
    date: dt.date
    mutation: str
    position: int
    count: int
    coverage: int
    sample_id: str = ""

    def __post_init__(self):
        if isinstance(self.date, str):
            object.__setattr__(self, "date", dt.date.fromisoformat(self.date))
        if self.count < 0 or self.coverage < 0:
            raise LineageMixError("count and coverage must be non-negative", mutation=self.mutation)
        if self.position < 1:
            raise LineageMixError("position must be >= 1", mutation=self.mutation, position=self.position)
        if self.coverage > 0 and self.count > self.coverage:
            raise LineageMixError(
                f"count {self.count} exceeds coverage {self.coverage} for {self.mutation} on {self.date}",
                mutation=self.mutation, date=self.date,
            )


@dataclass(frozen=True)
class FilterConfig:
    min_depth: int = 40
    dynamics_d: int = 10
    low_freq: float = 0.10
    high_freq: float = 0.90
    zero_depth_replacement: int = 1

    def __post_init__(self):
        if not 0 < self.low_freq < self.high_freq < 1:
            raise LineageMixError("need 0 < low_freq < high_freq < 1",
                                  low_freq=self.low_freq, high_freq=self.high_freq)
        if self.min_depth < 1 or self.dynamics_d < 1:
            raise LineageMixError("min_depth and dynamics_d must be >= 1")
        if self.zero_depth_replacement < 1:
            raise LineageMixError("zero_depth_replacement must be >= 1")


def read_mutation_tsv(path) -> list[RawMutationRow]:
    """Read a tab-separated mutation table with header
    ``sample_id date mutation position count coverage``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = [c for c in TSV_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise LineageMixError(f"{path}: missing columns {missing}", path=str(path), missing=missing)
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(RawMutationRow(
                    date=dt.date.fromisoformat(rec["date"].strip()),
                    mutation=rec["mutation"].strip(),
                    position=int(rec["position"]),
                    count=int(rec["count"]),
                    coverage=int(rec["coverage"]),
                    sample_id=rec["sample_id"].strip(),
                ))
            except (ValueError, TypeError) as exc:
                raise LineageMixError(f"{path}:{lineno}: {exc}", path=str(path), line=lineno) from exc
    return rows


def write_mutation_tsv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(TSV_COLUMNS)
        for r in rows:
            w.writerow([r.sample_id, r.date.isoformat(), r.mutation, r.position, r.count, r.coverage])


def merge_same_day(rows) -> list[RawMutationRow]:
    """Sum counts and coverages of rows sharing (date, mutation).

    Output is sorted by (date, mutation) so the result does not depend on input
    order; merged rows carry the sorted, '+'-joined sample ids.
    """
    acc = {}
    for r in rows:
        key = (r.date, r.mutation)
        if key in acc:
            c, d, pos, ids = acc[key]
            acc[key] = (c + r.count, d + r.coverage, min(pos, r.position), ids | {r.sample_id})
        else:
            acc[key] = (r.count, r.coverage, r.position, {r.sample_id})
    return [
        RawMutationRow(date=k[0], mutation=k[1], position=pos, count=c, coverage=d,
                       sample_id="+".join(sorted(ids)))
        for k, (c, d, pos, ids) in sorted(acc.items())
    ]


def select_mutations(rows, cfg: FilterConfig) -> set[str]:
    """Mutations with non-trivial dynamics.

    Only observations with coverage >= ``cfg.min_depth`` are considered.  A
    mutation is kept when its frequency is >= ``low_freq`` on at least
    ``dynamics_d`` such dates and < ``high_freq`` on at least ``dynamics_d``
    such dates; one date may count toward both conditions.
    """
    n_low = defaultdict(int)
    n_high = defaultdict(int)
    for r in rows:
        if r.coverage < cfg.min_depth:
            continue
        f = r.count / r.coverage
        if f >= cfg.low_freq:
            n_low[r.mutation] += 1
        if f < cfg.high_freq:
            n_high[r.mutation] += 1
    return {m for m in n_low if n_low[m] >= cfg.dynamics_d and n_high[m] >= cfg.dynamics_d}


def build_panel(rows, selected, cfg: FilterConfig, site=None) -> MutationPanel:
    """Complete mutations x dates panel over every date present in ``rows``.

    Cells never observed, or observed with zero coverage, become
    ``(0, cfg.zero_depth_replacement)``.  No depth screen is applied here.
    """
    selected = sorted(selected)
    if not selected:
        raise LineageMixError("no mutations selected")
    present = {r.mutation for r in rows}
    absent = [m for m in selected if m not in present]
    if absent:
        raise LineageMixError(f"selected mutations absent from rows: {absent}", absent=absent)
    dates = sorted({r.date for r in rows})
    mi = {m: i for i, m in enumerate(selected)}
    ti = {d: t for t, d in enumerate(dates)}
    counts = np.zeros((len(selected), len(dates)), dtype=np.int64)
    depths = np.zeros_like(counts)
    for r in rows:
        i = mi.get(r.mutation)
        if i is None:
            continue
        t = ti[r.date]
        counts[i, t] += r.count
        depths[i, t] += r.coverage
    zero = depths == 0
    counts[zero] = 0
    depths[zero] = cfg.zero_depth_replacement
    return MutationPanel(mutations=selected, dates=dates, counts=counts, depths=depths, site=site)


def preprocess(rows, cfg: FilterConfig, site=None) -> MutationPanel:
    merged = merge_same_day(rows)
    selected = select_mutations(merged, cfg)
    log.info("selected %d mutations (d=%d)", len(selected), cfg.dynamics_d)
    return build_panel(merged, selected, cfg, site=site)


# -- panel directory I/O -----------------------------------------------------


def _write_matrix_csv(path, row_labels, col_labels, M):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mutation", *col_labels])
        for lab, row in zip(row_labels, M):
            w.writerow([lab, *(int(v) for v in row)])


def _read_matrix_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        labels, rows = [], []
        for rec in reader:
            if not rec:
                continue
            labels.append(rec[0])
            rows.append([int(v) for v in rec[1:]])
    return labels, header[1:], np.array(rows, dtype=np.int64).reshape(len(labels), len(header) - 1)


def write_panel(panel: MutationPanel, out_dir, cfg: FilterConfig | None = None):
    """Write ``counts.csv``, ``depths.csv`` and ``panel.meta`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dates = [d.isoformat() for d in panel.dates]
    _write_matrix_csv(out / "counts.csv", panel.mutations, dates, panel.counts)
    _write_matrix_csv(out / "depths.csv", panel.mutations, dates, panel.depths)
    meta = {"n_mutations": panel.n_mutations, "n_dates": panel.n_dates, "site": panel.site or ""}
    if cfg is not None:
        meta.update(asdict(cfg))
    with open(out / "panel.meta", "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v}\n")


def read_panel(panel_dir) -> MutationPanel:
    d = Path(panel_dir)
    if not (d / "counts.csv").exists():
        raise LineageMixError(f"{d} does not contain counts.csv", path=str(d))
    muts, dates, counts = _read_matrix_csv(d / "counts.csv")
    muts2, dates2, depths = _read_matrix_csv(d / "depths.csv")
    if muts != muts2 or dates != dates2:
        raise LineageMixError("counts.csv and depths.csv labels differ", path=str(d))
    site = None
    meta = d / "panel.meta"
    if meta.exists():
        site = read_keyvalue(meta).get("site") or None
    return MutationPanel(mutations=muts, dates=dates, counts=counts, depths=depths, site=site)


def read_keyvalue(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise LineageMixError(f"{path}: expected key=value, got {line!r}", path=str(path))
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
