import numpy as np
import pytest

from _fixtures import run_pipeline, tex_definitions
from lineagemix import synth
from lineagemix.cli import main, parse_ranks
from lineagemix.ingest import read_keyvalue, read_panel, write_panel
from lineagemix.report import read_abundance_csv, write_definition_table


def test_parse_ranks_forms():
    assert parse_ranks("2..6") == [2, 3, 4, 5, 6]
    assert parse_ranks("4-6") == [4, 5, 6]
    assert parse_ranks("8,2,4,2") == [2, 4, 8]


def test_missing_panel_is_usage_error(capsys):
    assert main(["fit-bnmf", "--rank", "3", "--out", "x"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_and_subcommand_are_usage_errors(capsys):
    assert main(["simulate", "--out", "x", "--bogus"]) == 2
    assert main(["nonsense"]) == 2
    assert main([]) == 2


def test_runtime_failure_exits_one(tmp_path, capsys):
    assert main(["fit-nmf", "--panel", str(tmp_path / "nope"), "--rank", "2", "--out", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err


def test_simulate_writes_panel_truth_and_meta(tmp_path):
    assert main(["simulate", "--seed", "3", "--out", str(tmp_path)]) == 0
    panel = read_panel(tmp_path)
    ref, Z, G = synth.generate(synth.ScenarioSpec(seed=3))
    np.testing.assert_array_equal(panel.counts, ref.counts)
    meta = read_keyvalue(tmp_path / "run.meta")
    assert meta["command"] == "simulate" and meta["arg.seed"] == "3" and "version" in meta
    np.testing.assert_array_equal(read_abundance_csv(tmp_path / "G_true.csv").values, G)


def test_pipeline_exit_codes_and_outputs(tmp_path, monkeypatch):
    codes, files = run_pipeline(tmp_path, monkeypatch)
    assert codes == [0, 0, 0, 0]
    for name in ("fit/Z_mode.csv", "fit/G_mean.csv", "fit/waic.txt", "fit/draws/manifest.txt",
                 "cmp/grid.svg", "plot/g.svg"):
        assert name in files, name
    assert any(n.startswith("cmp/similarity_") for n in files)


def test_fit_provoc_on_truth_definitions(tmp_path, capsys):
    assert main(["simulate", "--seed", "2", "--out", str(tmp_path / "sim")]) == 0
    out = tmp_path / "pv"
    rc = main(["fit-provoc", "--panel", str(tmp_path / "sim"), "--definitions", str(tmp_path / "sim" / "Z_true.csv"),
               "--constraint", "eq", "--out", str(out)])
    assert rc == 0
    est = read_abundance_csv(out / "abundance.csv")
    truth = read_abundance_csv(tmp_path / "sim" / "G_true.csv")
    assert np.abs(est.values - truth.values).max() < 0.05
    assert (out / "fits.txt").exists() and (out / "run.meta").exists()


def test_fit_nmf_and_rank_scan(tmp_path):
    assert main(["simulate", "--seed", "2", "--out", str(tmp_path / "sim")]) == 0
    assert main(["fit-nmf", "--panel", str(tmp_path / "sim"), "--rank", "3", "--rescale-q", "0.99",
                 "--out", str(tmp_path / "nmf")]) == 0
    Z = np.loadtxt(tmp_path / "nmf" / "Z.csv", delimiter=",", skiprows=1, usecols=(1, 2, 3))
    assert Z.shape == (60, 3)
    assert main(["rank-scan", "--panel", str(tmp_path / "sim"), "--ranks", "2..4", "--runs", "3",
                 "--max-iter", "200", "--out", str(tmp_path / "rs")]) == 0
    assert len((tmp_path / "rs" / "rank_scores.csv").read_text().splitlines()) == 4


def test_waic_scan_reports_each_rank(tmp_path, capsys):
    spec = synth.ScenarioSpec(N=20, T=10, seed=0)
    panel, _, _ = synth.generate(spec)
    write_panel(panel, tmp_path / "p")
    rc = main(["waic-scan", "--panel", str(tmp_path / "p"), "--ranks", "1..3", "--chains", "1", "--iters", "300",
               "--burnin", "150", "--thin", "5", "--out", str(tmp_path / "w")])
    assert rc == 0
    text = capsys.readouterr().out
    assert [l.split(":")[0] for l in text.splitlines() if l.startswith("rank ")] == ["rank 1", "rank 2", "rank 3"]
    sel = int((tmp_path / "w" / "selected_rank.txt").read_text())
    assert f"selected rank: {sel}" in text
    assert len((tmp_path / "w" / "waic_scan.csv").read_text().splitlines()) == 4


@pytest.mark.parametrize("cmd", ["fit-tbnmf-le1", "fit-tbnmf-eq1"])
def test_spline_model_fits(cmd, tmp_path):
    panel, _, _ = synth.generate(synth.ScenarioSpec(N=20, T=12, seed=1))
    write_panel(panel, tmp_path / "p")
    rc = main([cmd, "--panel", str(tmp_path / "p"), "--rank", "2", "--chains", "1", "--iters", "200",
               "--burnin", "100", "--thin", "5", "--basis-m", "6", "--no-draws", "--out", str(tmp_path / "f")])
    assert rc == 0
    assert not (tmp_path / "f" / "draws").exists()
    assert read_abundance_csv(tmp_path / "f" / "G_mean.csv").values.shape == (2, 12)


def test_config_file_supplies_defaults(tmp_path):
    (tmp_path / "cfg.txt").write_text("seed=5\n")
    assert main(["--config", str(tmp_path / "cfg.txt"), "simulate", "--out", str(tmp_path / "a")]) == 0
    assert read_keyvalue(tmp_path / "a" / "run.meta")["arg.seed"] == "5"
    assert main(["--config", str(tmp_path / "cfg.txt"), "simulate", "--seed", "6", "--out", str(tmp_path / "b")]) == 0
    assert read_keyvalue(tmp_path / "b" / "run.meta")["arg.seed"] == "6"


def test_compare_with_reference_and_published_tables(tmp_path):
    paths = []
    for k in (1, 2):
        _, defs = tex_definitions(k)
        paths.append(tmp_path / f"table{k}.csv")
        write_definition_table(paths[-1], defs)
    ref = "9"  # only the first table has a ninth lineage
    rc = main(["compare", "--inputs", *map(str, paths), "--reference", ref, "--out", str(tmp_path / "c")])
    assert rc == 0
    assert (tmp_path / "c" / "aligned_table2.csv").exists()
    assert main(["compare", "--inputs", *map(str, paths), "--reference", "nope", "--out", str(tmp_path / "d")]) == 1
