"""Command-line entry point: ``lineagemix <subcommand> ...``.

Exit status is 0 on success, 2 on a usage error and 1 when the run itself
fails.  Every subcommand writes ``run.meta`` (key=value) describing the run.
"""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("lineagemix")


# -- helpers --------------------------------------------------------------------------


def parse_ranks(text):
    """``"2..6"`` / ``"2-6"`` (inclusive ranges) or a comma list like ``"2,4,8"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        for sep in ("..", "-"):
            if sep in part:
                lo, hi = part.split(sep, 1)
                out.extend(range(int(lo), int(hi) + 1))
                break
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"no ranks in {text!r}")
    return sorted(set(out))


def _ranks_arg(text):
    try:
        return parse_ranks(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad rank list {text!r}") from e


def write_run_meta(out_dir, args, extra=None):
    from ._accel import backend_name

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = {
        "command": args.command,
        "version": __version__,
        "backend": backend_name(),
        "created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    for k, v in sorted(vars(args).items()):
        if k in ("func", "command"):
            continue
        items[f"arg.{k}"] = ",".join(map(str, v)) if isinstance(v, (list, tuple)) else v
    items.update(extra or {})
    with open(out / "run.meta", "w") as fh:
        for k, v in items.items():
            fh.write(f"{k}={v}\n")


def _load_defs_source(path, label_map):
    from .lineage_defs import read_label_map
    from .report import read_definitions

    mapping = read_label_map(label_map) if label_map else None
    return read_definitions(path, label_map=mapping)


def _write_matrix(path, row_header, rows, cols, M, fmt=lambda v: repr(float(v))):
    with open(path, "w") as fh:
        fh.write(",".join([row_header, *cols]) + "\n")
        for r, vals in zip(rows, M):
            fh.write(",".join([r, *(fmt(v) for v in vals)]) + "\n")


# -- subcommands --------------------------------------------------------------------------


def cmd_preprocess(args):
    from .ingest import FilterConfig, preprocess, read_mutation_tsv, write_panel

    cfg = FilterConfig(min_depth=args.min_depth, dynamics_d=args.dynamics_d, low_freq=args.low_freq,
                       high_freq=args.high_freq, zero_depth_replacement=args.zero_depth_replacement)
    rows = [r for p in args.input for r in read_mutation_tsv(p)]
    panel = preprocess(rows, cfg, site=args.site)
    write_panel(panel, args.out, cfg)
    write_run_meta(args.out, args, {"n_mutations": panel.n_mutations, "n_dates": panel.n_dates})
    print(f"panel: {panel.n_mutations} mutations x {panel.n_dates} dates -> {args.out}")


def cmd_fit_provoc(args):
    from .core import ConstraintKind
    from .ingest import read_panel
    from .provoc import ProvocOptions, fit_series, write_fits
    from .report import write_abundance_csv

    panel = read_panel(args.panel)
    src = args.barcodes or args.constellations or args.definitions
    catalog = _load_defs_source(src, args.label_map)
    if args.lineages:
        catalog = catalog.subset([s.strip() for s in args.lineages.split(",") if s.strip()])
    defs = catalog.to_definition_set()
    kind = ConstraintKind.SUM_EQ_ONE if args.constraint == "eq" else ConstraintKind.SUM_LE_ONE
    opts = ProvocOptions(constraint=kind, multistarts=args.multistarts, seed=args.seed)
    series, fits = fit_series(panel, defs, opts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_abundance_csv(out / "abundance.csv", series)
    write_fits(out / "fits.txt", series.dates, fits)
    write_run_meta(out, args, {"n_lineages": defs.n_lineages})
    print(f"fitted {len(fits)} samples x {defs.n_lineages} lineages -> {out}")


def cmd_fit_nmf(args):
    from .core import frequency_matrix
    from .ingest import read_panel
    from .nmf import fit_nmf, percentile_rescale, quantile_linear

    panel = read_panel(args.panel)
    res = fit_nmf(frequency_matrix(panel), args.rank, seed=args.seed, max_iter=args.max_iter, tol=args.tol)
    scale = None
    if args.rescale_q is not None:
        scale = quantile_linear(res.Z, args.rescale_q)
        res = percentile_rescale(res, args.rescale_q)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [str(j + 1) for j in range(args.rank)]
    _write_matrix(out / "Z.csv", "mutation", panel.mutations, names, res.Z)
    _write_matrix(out / "G.csv", "lineage", names, [d.isoformat() for d in panel.dates], res.G)
    write_run_meta(out, args, {"residual_sse": repr(float(res.residual_sse)), "n_iter": res.n_iter,
                               "rescale_divisor": "" if scale is None else repr(float(scale))})
    print(f"NMF rank {args.rank}: residual {res.residual_sse:.6g} after {res.n_iter} iterations -> {out}")


def cmd_rank_scan(args):
    from .core import frequency_matrix
    from .ingest import read_panel
    from .nmf import rank_scan, write_rank_scores

    panel = read_panel(args.panel)
    scores = rank_scan(frequency_matrix(panel), args.ranks, runs_per_rank=args.runs, seed=args.seed,
                       max_iter=args.max_iter)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rank_scores(out / "rank_scores.csv", scores)
    write_run_meta(out, args)
    for s in scores:
        print(f"rank {s.rank}: cophenetic {s.cophenetic:.4f} dispersion {s.dispersion:.4f} evar {s.evar:.4f}")


def _sampler_config(args):
    from .mcmc import SamplerConfig

    return SamplerConfig(n_chains=args.chains, n_iter=args.iters, n_burnin=args.burnin, thin=args.thin,
                         seed=args.seed, n_jobs=args.jobs, progress=args.progress)


def _basis_for(args, panel, kind):
    if kind == "bnmf":
        return None
    from .splines import build_basis

    return build_basis(panel.dates, M=args.basis_m, degree=args.basis_degree)


def _write_fit(out, panel, draws, report, save_draws):
    from .bayes import write_draws
    from .report import write_abundance_csv

    R = report.z_point.shape[1]
    names = [str(j + 1) for j in range(R)]
    _write_matrix(out / "Z_mode.csv", "mutation", panel.mutations, names, report.z_point, fmt=lambda v: str(int(v)))
    write_abundance_csv(out / "G_mean.csv", report.point_abundance)
    w = report.waic
    (out / "waic.txt").write_text(f"waic={w.waic!r}\nlppd={w.lppd!r}\np_waic={w.p_waic!r}\n"
                                  f"per_cell_pwaic_max={w.per_cell_pwaic_max!r}\n")
    with open(out / "diagnostics.txt", "w") as fh:
        for k, v in report.diagnostics.items():
            if k == "seconds":
                continue
            fh.write(f"{k}={v}\n")
    if save_draws:
        write_draws(out / "draws", draws)


def _fit_model(args, kind):
    from .bayes import fit
    from .ingest import read_panel

    panel = read_panel(args.panel)
    cfg = _sampler_config(args)
    basis = _basis_for(args, panel, kind)
    draws, report = fit(kind, panel, args.rank, cfg, basis=basis, alpha_min=args.alpha_min)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_fit(out, panel, draws, report, not args.no_draws)
    write_run_meta(out, args, {"model": kind, "waic": repr(report.waic.waic)})
    print(f"{kind} rank {args.rank}: WAIC {report.waic.waic:.3f} -> {out}")


def cmd_waic_scan(args):
    from .bayes import waic_scan
    from .ingest import read_panel

    panel = read_panel(args.panel)
    kind = args.model.replace("-", "_")
    cfg = _sampler_config(args)
    basis = _basis_for(args, panel, kind)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def save(r, draws, report):
        if args.save_fits:
            d = out / f"rank_{r}"
            d.mkdir(exist_ok=True)
            _write_fit(d, panel, draws, report, False)

    rows, selected = waic_scan(panel, args.ranks, kind=kind, cfg=cfg, basis=basis, tie_se=args.tie_se,
                               alpha_min=args.alpha_min, on_fit=save)
    with open(out / "waic_scan.csv", "w") as fh:
        fh.write("rank,waic,lppd,p_waic,se_diff_next\n")
        for r in rows:
            fh.write(f"{r['rank']},{r['waic']!r},{r['lppd']!r},{r['p_waic']!r},{r['se_diff_next']!r}\n")
    (out / "selected_rank.txt").write_text(f"{selected}\n")
    write_run_meta(out, args, {"model": kind, "selected_rank": selected})
    for r in rows:
        print(f"rank {r['rank']}: WAIC {r['waic']:.3f}")
    print(f"selected rank: {selected}")


def cmd_compare(args):
    from .lineage_defs import align_to_reference, read_label_map
    from .report import comparison_grid, read_definitions, write_definition_table, write_grid

    mapping = read_label_map(args.label_map) if args.label_map else None
    sources = [read_definitions(p, label_map=mapping) for p in args.inputs]
    labels = []
    for k, p in enumerate(args.inputs):
        stem = Path(p).stem
        labels.append(stem if stem not in labels else f"{stem}_{k + 1}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.reference:
        ref = next((s.as_sets()[args.reference] for s in sources if args.reference in s.as_sets()), None)
        if ref is None:
            raise _RunError(f"reference lineage {args.reference!r} not found in any input")
        for k, s in enumerate(sources):
            if args.reference in s.as_sets():
                continue
            defs = s.to_definition_set()
            ordered = defs.reorder(align_to_reference(defs, ref))
            write_definition_table(out / f"aligned_{labels[k]}.csv", ordered)
            sources[k] = type(s)(s.source_label, ordered.as_sets())
    grid = comparison_grid(sources, labels)
    written = write_grid(out, grid)
    missing = [f"{labels[i]}/{labels[j]}" for (i, j), M in sorted(grid.matrices.items()) if M is None]
    write_run_meta(out, args, {"unavailable_pairs": ";".join(missing)})
    for p in written:
        print(p)
    if missing:
        print(f"no shared vocabulary for: {', '.join(missing)}", file=sys.stderr)


def cmd_plot(args):
    from .report import abundance_plot, read_abundance_csv

    series = [read_abundance_csv(p) for p in args.abundance]
    labels = args.labels.split(",") if args.labels else [Path(p).parent.name or Path(p).stem for p in args.abundance]
    svg = abundance_plot(series, labels)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    write_run_meta(out.parent, args)
    print(out)


def cmd_simulate(args):
    from dataclasses import replace

    from .ingest import write_panel
    from .synth import ScenarioSpec, generate, read_spec, write_spec, write_truth

    spec = read_spec(args.spec) if args.spec else ScenarioSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    panel, Z, G = generate(spec)
    out = Path(args.out)
    write_panel(panel, out)
    write_truth(out, panel, Z, G)
    write_spec(spec, out / "scenario.txt")
    write_run_meta(out, args, {f"spec.{k}": v for k, v in spec.as_dict().items()})
    print(f"simulated {panel.n_mutations} x {panel.n_dates} panel -> {out}")


class _RunError(Exception):
    pass


# -- parser ------------------------------------------------------------------------------------


def _add_sampler_args(p, model_choice=False):
    p.add_argument("--panel", required=True, help="panel directory (counts.csv, depths.csv)")
    p.add_argument("--out", required=True)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--burnin", type=int, default=10000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="chains run concurrently in threads")
    p.add_argument("--basis-m", type=int, default=10)
    p.add_argument("--basis-degree", type=int, default=3)
    p.add_argument("--alpha-min", type=float, default=1e-3)
    p.add_argument("--progress", action="store_true", help="progress lines on stderr")


def build_parser():
    parser = argparse.ArgumentParser(prog="lineagemix", description="Lineage definitions and abundances "
                                     "from wastewater mutation time series.")
    parser.add_argument("--version", action="version", version=f"lineagemix {__version__}")
    parser.add_argument("--config", help="key=value file of default flag values (flags override)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("preprocess", help="merge, filter and tabulate mutation TSVs into a panel")
    p.add_argument("--input", required=True, action="append", help="TSV file (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--min-depth", type=int, default=40)
    p.add_argument("--dynamics-d", type=int, default=10)
    p.add_argument("--low-freq", type=float, default=0.10)
    p.add_argument("--high-freq", type=float, default=0.90)
    p.add_argument("--zero-depth-replacement", type=int, default=1)
    p.add_argument("--site")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("fit-provoc", help="per-sample constrained binomial GLM")
    p.add_argument("--panel", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--barcodes")
    src.add_argument("--constellations")
    src.add_argument("--definitions", help="mutation x lineage 0/1 table")
    p.add_argument("--label-map")
    p.add_argument("--lineages", help="comma-separated subset of lineages")
    p.add_argument("--constraint", choices=("le", "eq"), default="le")
    p.add_argument("--multistarts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_provoc)

    p = sub.add_parser("fit-nmf", help="classic NMF of the frequency matrix")
    p.add_argument("--panel", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--rescale-q", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_nmf)

    p = sub.add_parser("rank-scan", help="NMF rank diagnostics")
    p.add_argument("--panel", required=True)
    p.add_argument("--ranks", type=_ranks_arg, default=parse_ranks("2..20"))
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank_scan)

    for name, kind in (("fit-bnmf", "bnmf"), ("fit-tbnmf-le1", "tbnmf_le1"), ("fit-tbnmf-eq1", "tbnmf_eq1")):
        p = sub.add_parser(name, help=f"Bayesian {kind} fit")
        _add_sampler_args(p)
        p.add_argument("--rank", type=int, required=True)
        p.add_argument("--no-draws", action="store_true", help="skip writing the draws directory")
        p.set_defaults(func=lambda a, kind=kind: _fit_model(a, kind))

    p = sub.add_parser("waic-scan", help="fit a range of ranks and pick one by WAIC")
    _add_sampler_args(p)
    p.add_argument("--ranks", type=_ranks_arg, required=True)
    p.add_argument("--model", choices=("bnmf", "tbnmf-le1", "tbnmf-eq1"), default="bnmf")
    p.add_argument("--tie-se", type=float, default=2.0,
                   help="WAIC changes within this many standard errors count as ties")
    p.add_argument("--save-fits", action="store_true")
    p.set_defaults(func=cmd_waic_scan)

    p = sub.add_parser("compare", help="similarity grid between definition sources")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--reference", help="lineage name used to order estimated lineages")
    p.add_argument("--label-map")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="SVG of abundance trajectories")
    p.add_argument("--abundance", nargs="+", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("simulate", help="synthetic panel with known truth")
    p.add_argument("--spec", help="key=value scenario file (defaults when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def _apply_config(parser, argv):
    """Turn ``--config`` entries into subparser defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    from .ingest import read_keyvalue

    values = {k.replace("-", "_"): v for k, v in read_keyvalue(known.config).items()}
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in sub_action.choices.values():
        dests = {a.dest: a for a in sp._actions}
        upd = {}
        for k, v in values.items():
            if k in dests:
                a = dests[k]
                if a.type is not None:
                    v = a.type(v)
                elif isinstance(a, argparse._StoreTrueAction):
                    v = v.lower() in ("1", "true", "yes")
                upd[k] = v
                a.required = False
        sp.set_defaults(**upd)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2
    except (OSError, ValueError) as e:
        print(f"lineagemix: error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (_RunError, ValueError, OSError, KeyError) as e:
        print(f"lineagemix {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
