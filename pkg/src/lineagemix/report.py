"""Tables, similarity grids and SVG plots for comparing fitted lineages."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .core import AbundanceSeries, ConstraintKind, LineageDefinitionSet, LineageMixError, PROPORTION_TOL
from .lineage_defs import (
    ReferenceCatalog,
    UniversePolicy,
    align_to_reference,
    read_barcodes,
    read_constellations,
    similarity_matrix,
    write_similarity_csv,
)

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#ad494a",
)


# -- definition tables ---------------------------------------------------------------


def definition_table(defs: LineageDefinitionSet, reference=None, universe=None) -> str:
    """Binary mutation x lineage table as CSV text.

    Rows are mutation labels in lexicographic (code point) order.  With a
    ``reference`` mutation set the columns follow :func:`align_to_reference`.
    """
    if reference is not None:
        defs = defs.reorder(align_to_reference(defs, reference, universe))
    order = sorted(range(len(defs.mutation_universe)), key=lambda i: defs.mutation_universe[i])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mutation", *defs.names])
    for i in order:
        w.writerow([defs.mutation_universe[i], *(int(v) for v in defs.membership[i])])
    return buf.getvalue()


def write_definition_table(path, defs, reference=None, universe=None):
    Path(path).write_text(definition_table(defs, reference, universe))


def parse_definition_table(text: str, drop_empty=False) -> LineageDefinitionSet:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "mutation":
        raise LineageMixError("definition table must start with a 'mutation' header column")
    names = rows[0][1:]
    muts = [r[0] for r in rows[1:] if r]
    Z = np.array([[int(v) for v in r[1:]] for r in rows[1:] if r], dtype=np.int8).reshape(len(muts), len(names))
    return LineageDefinitionSet.from_matrix(muts, names, Z, drop_empty=drop_empty)


def read_definition_table(path, drop_empty=False) -> LineageDefinitionSet:
    return parse_definition_table(Path(path).read_text(), drop_empty=drop_empty)


def read_definitions(path, label_map=None, source_label=None):
    """Load any supported definition source, guessing the layout.

    ``.json`` files are constellations, CSVs whose first header cell is
    ``mutation`` are definition tables and any other CSV is a barcode table.
    """
    path = Path(path)
    label = source_label or path.stem
    if path.suffix.lower() == ".json":
        return read_constellations(path, mapping=label_map, source_label=label)
    with open(path, newline="") as fh:
        first = next(csv.reader(fh), [""])
    if first and first[0] == "mutation":
        defs = read_definition_table(path, drop_empty=True)
        return ReferenceCatalog(label, defs.as_sets())
    return read_barcodes(path, mapping=label_map, source_label=label)


# -- abundance tables ------------------------------------------------------------------


def write_abundance_csv(path, series: AbundanceSeries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lineage", *(d.isoformat() for d in series.dates)])
        for n, row in zip(series.names, series.values):
            w.writerow([n, *(repr(float(v)) for v in row)])


def read_abundance_csv(path, constraint_kind=None) -> AbundanceSeries:
    """Read a lineage x date table.  Without ``constraint_kind`` the tighter
    kind the values satisfy is used."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    dates = rows[0][1:]
    names = [r[0] for r in rows[1:]]
    G = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(names), len(dates))
    if constraint_kind is None:
        eq = np.all(np.abs(G.sum(axis=0) - 1.0) <= PROPORTION_TOL)
        constraint_kind = ConstraintKind.SUM_EQ_ONE if eq else ConstraintKind.SUM_LE_ONE
    return AbundanceSeries(values=G, constraint_kind=constraint_kind, dates=dates, names=names)


# -- comparison grid ---------------------------------------------------------------------


@dataclass
class ComparisonGrid:
    labels: list
    sources: list
    # (i, j) with i <= j -> matrix, or None when the pair shares no vocabulary
    matrices: dict

    def pair(self, i, j):
        """Similarity of source ``i`` (rows) against source ``j`` (columns)."""
        if i <= j:
            return self.matrices[(i, j)]
        M = self.matrices[(j, i)]
        return None if M is None else M.T


def _names(src):
    return list(src.as_sets())


def comparison_grid(sources, labels=None, policy=UniversePolicy.SHARED_VOCABULARY) -> ComparisonGrid:
    """Within-source similarity on the diagonal, between-source above it."""
    if len(sources) < 2:
        raise LineageMixError("comparison_grid needs at least two sources")
    labels = list(labels) if labels is not None else [
        getattr(s, "source_label", None) or f"source{k + 1}" for k, s in enumerate(sources)]
    mats = {}
    for i in range(len(sources)):
        for j in range(i, len(sources)):
            try:
                mats[(i, j)] = similarity_matrix(sources[i], sources[j], policy)
            except LineageMixError:
                mats[(i, j)] = None
    return ComparisonGrid(labels=labels, sources=list(sources), matrices=mats)


def write_grid(out_dir, grid: ComparisonGrid):
    """One CSV per available pair plus ``grid.svg``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (i, j), M in sorted(grid.matrices.items()):
        if M is None:
            continue
        p = out / f"similarity_{grid.labels[i]}__{grid.labels[j]}.csv"
        write_similarity_csv(p, M, _names(grid.sources[i]), _names(grid.sources[j]))
        written.append(p)
    svg = out / "grid.svg"
    svg.write_text(grid_svg(grid))
    written.append(svg)
    return written


def _heat(v):
    # white -> dark blue
    v = float(np.clip(v, 0.0, 1.0))
    r = round(255 - v * (255 - 8))
    g = round(255 - v * (255 - 48))
    b = round(255 - v * (255 - 107))
    return f"#{r:02x}{g:02x}{b:02x}"


def grid_svg(grid: ComparisonGrid, cell=14, gap=30) -> str:
    k = len(grid.labels)
    sizes = [len(_names(s)) for s in grid.sources]
    offs = np.concatenate([[0], np.cumsum([n * cell + gap for n in sizes])])
    left, top = 90, 40
    W = left + int(offs[-1]) + 10
    H = top + int(offs[-1]) + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>']
    for i in range(k):
        y0 = top + offs[i]
        out.append(f'<text x="4" y="{y0 + sizes[i] * cell / 2:.1f}" font-size="11">{escape(grid.labels[i])}</text>')
        out.append(f'<text x="{left + offs[i]:.1f}" y="{top - 8}" font-size="11">{escape(grid.labels[i])}</text>')
        for j in range(i, k):
            x0 = left + offs[j]
            M = grid.matrices[(i, j)]
            if M is None:
                w, h = sizes[j] * cell, sizes[i] * cell
                out.append(f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{w}" height="{h}" fill="#eeeeee" stroke="#999999"/>')
                out.append(f'<text x="{x0 + 3:.1f}" y="{y0 + 12:.1f}" font-size="10">n/a</text>')
                continue
            for a in range(M.shape[0]):
                for b in range(M.shape[1]):
                    out.append(f'<rect x="{x0 + b * cell:.1f}" y="{y0 + a * cell:.1f}" width="{cell}" '
                               f'height="{cell}" fill="{_heat(M[a, b])}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- abundance plot -----------------------------------------------------------------------


def abundance_plot(series, labels=None, width=720, panel_height=220) -> str:
    """SVG with one panel per series and one polyline per lineage.

    All series must share the same dates.  The x axis is linear in calendar
    days, the y axis runs from 0 to 1.  Output depends only on the input.
    """
    if isinstance(series, AbundanceSeries):
        series = [series]
    series = list(series)
    if not series:
        raise LineageMixError("abundance_plot needs at least one series")
    dates = series[0].dates
    if any(s.dates != dates for s in series):
        raise LineageMixError("all series must share one date axis")
    labels = list(labels) if labels is not None else [f"series {k + 1}" for k in range(len(series))]
    days = np.array([(d - dates[0]).days for d in dates], dtype=float)
    span = days[-1] if days[-1] > 0 else 1.0
    left, right, top, legend_w = 50, 20, 30, 130
    plot_w = width - left - right - legend_w
    H = len(series) * (panel_height + top) + 30
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" viewBox="0 0 {width} {H}">',
           f'<rect x="0" y="0" width="{width}" height="{H}" fill="#ffffff"/>']
    for k, (s, lab) in enumerate(zip(series, labels)):
        y0 = top + k * (panel_height + top)
        out.append(f'<text x="{left}" y="{y0 - 8}" font-size="12">{escape(str(lab))}</text>')
        out.append(f'<rect x="{left}" y="{y0}" width="{plot_w}" height="{panel_height}" '
                   f'fill="none" stroke="#444444"/>')
        for v in (0.0, 0.5, 1.0):
            yy = y0 + panel_height * (1.0 - v)
            out.append(f'<text x="{left - 6}" y="{yy + 4:.2f}" font-size="10" text-anchor="end">{v:.1f}</text>')
        for idx in sorted({0, len(dates) // 2, len(dates) - 1}):
            xx = left + plot_w * days[idx] / span
            out.append(f'<text x="{xx:.2f}" y="{y0 + panel_height + 14}" font-size="10" '
                       f'text-anchor="middle">{dates[idx].isoformat()}</text>')
        for j, (name, row) in enumerate(zip(s.names, s.values)):
            color = PALETTE[j % len(PALETTE)]
            pts = " ".join(f"{left + plot_w * x / span:.2f},{y0 + panel_height * (1.0 - v):.2f}"
                           for x, v in zip(days, row))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
            ly = y0 + 14 + 16 * j
            lx = left + plot_w + 12
            out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="3"/>')
            out.append(f'<text x="{lx + 24}" y="{ly}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
