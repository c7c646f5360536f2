import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _fixtures import random_rows
from lineagemix.core import LineageMixError
from lineagemix.ingest import (
    FilterConfig,
    RawMutationRow,
    build_panel,
    merge_same_day,
    preprocess,
    read_mutation_tsv,
    read_panel,
    select_mutations,
    write_mutation_tsv,
    write_panel,
)

D1 = dt.date(2022, 3, 1)


def row(count, coverage, date=D1, mutation="m", sample="s"):
    return RawMutationRow(date=date, mutation=mutation, position=10, count=count, coverage=coverage, sample_id=sample)


def key(r):
    return (r.date, r.mutation, r.count, r.coverage)


# -- merge_same_day ------------------------------------------------------------------


@pytest.mark.parametrize("rows, expected", [
    ([row(2, 10), row(3, 10, sample="t")], (D1, "m", 5, 20)),
    ([row(2, 10)], (D1, "m", 2, 10)),
    ([row(0, 0), row(4, 8, sample="t")], (D1, "m", 4, 8)),
])
def test_merge_examples(rows, expected):
    out = merge_same_day(rows)
    assert [key(r) for r in out] == [expected]


def test_merge_keeps_distinct_keys_apart():
    out = merge_same_day([row(1, 5), row(2, 5, mutation="n"), row(3, 5, date=D1 + dt.timedelta(1))])
    assert len(out) == 3


@given(st.integers(0, 10_000), st.randoms(use_true_random=False))
@settings(max_examples=25, deadline=None)
def test_merge_order_invariant(seed, rnd):
    rows = random_rows(seed, n_mut=4, n_dates=5, n_samples=3)
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    assert merge_same_day(rows) == merge_same_day(shuffled)


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_merge_associative(seed):
    rows = random_rows(seed, n_mut=3, n_dates=4, n_samples=4)
    half = len(rows) // 2
    staged = merge_same_day(merge_same_day(rows[:half]) + merge_same_day(rows[half:]))
    assert [key(r) for r in staged] == [key(r) for r in merge_same_day(rows)]


# -- select_mutations ------------------------------------------------------------------


def _series(freq, n_dates, depth=100, mutation="m"):
    return [RawMutationRow(date=D1 + dt.timedelta(7 * t), mutation=mutation, position=5,
                           count=int(round(freq * depth)), coverage=depth) for t in range(n_dates)]


def test_select_mid_frequency_counts_toward_both():
    assert select_mutations(_series(0.5, 12), FilterConfig(dynamics_d=10)) == {"m"}


def test_select_rejects_always_high():
    assert select_mutations(_series(0.95, 12), FilterConfig(dynamics_d=10)) == set()


def test_select_empty_input():
    assert select_mutations([], FilterConfig()) == set()


def test_select_ignores_shallow_observations():
    rows = _series(0.5, 12, depth=39)
    assert select_mutations(rows, FilterConfig(dynamics_d=10)) == set()


def test_select_high_freq_boundary_is_strict():
    rows = _series(0.9, 12, depth=100)
    assert select_mutations(rows, FilterConfig(dynamics_d=10)) == set()
    rows = _series(0.1, 12, depth=100)
    assert select_mutations(rows, FilterConfig(dynamics_d=10)) == {"m"}


@given(st.integers(0, 100_000))
@settings(max_examples=25, deadline=None)
def test_dynamics_filter_monotone(seed):
    merged = merge_same_day(random_rows(seed, n_mut=30, n_dates=30))
    sets = [select_mutations(merged, FilterConfig(dynamics_d=d)) for d in (10, 15, 20)]
    assert sets[2] <= sets[1] <= sets[0]


# -- build_panel ------------------------------------------------------------------------


def test_build_panel_missing_cell_is_zero_over_one():
    d = [D1 + dt.timedelta(7 * t) for t in range(3)]
    rows = [row(1, 4, d[0], "a"), row(2, 5, d[1], "a"), row(3, 6, d[2], "a"),
            row(4, 7, d[0], "b"), row(5, 8, d[1], "b")]
    p = build_panel(rows, {"a", "b"}, FilterConfig())
    assert p.shape == (2, 3)
    np.testing.assert_array_equal(p.counts, [[1, 2, 3], [4, 5, 0]])
    np.testing.assert_array_equal(p.depths, [[4, 5, 6], [7, 8, 1]])
    assert int(((p.counts == 0) & (p.depths == 1)).sum()) == 1


def test_build_panel_zero_depth_observation_replaced():
    p = build_panel([row(0, 0, mutation="a"), row(3, 9, mutation="b")], {"a", "b"}, FilterConfig())
    assert (int(p.counts[0, 0]), int(p.depths[0, 0])) == (0, 1)
    assert (int(p.counts[1, 0]), int(p.depths[1, 0])) == (3, 9)


def test_build_panel_absent_selected_mutation_errors():
    with pytest.raises(LineageMixError) as exc:
        build_panel([row(1, 2, mutation="a")], {"a", "zz"}, FilterConfig())
    assert exc.value.details["absent"] == ["zz"]


@given(st.integers(0, 100_000))
@settings(max_examples=20, deadline=None)
def test_zero_depth_cells_become_zero_over_one(seed):
    rows = random_rows(seed, n_mut=8, n_dates=12, p_missing=0.3)
    merged = merge_same_day(rows)
    muts = sorted({r.mutation for r in merged})
    p = build_panel(merged, muts, FilterConfig())
    observed = {(r.mutation, r.date): (r.count, r.coverage) for r in merged}
    for i, m in enumerate(p.mutations):
        for t, d in enumerate(p.dates):
            c, cov = observed.get((m, d), (0, 0))
            if cov == 0:
                assert (p.counts[i, t], p.depths[i, t]) == (0, 1)
            else:
                assert (p.counts[i, t], p.depths[i, t]) == (c, cov)


def test_raw_row_validation():
    with pytest.raises(LineageMixError):
        row(5, 4)
    with pytest.raises(LineageMixError):
        RawMutationRow(date=D1, mutation="m", position=0, count=0, coverage=1)


def test_filter_config_validation():
    with pytest.raises(LineageMixError):
        FilterConfig(low_freq=0.9, high_freq=0.1)
    with pytest.raises(LineageMixError):
        FilterConfig(dynamics_d=0)


# -- files ---------------------------------------------------------------------------------


def test_tsv_and_panel_round_trip(tmp_path):
    rows = random_rows(3, n_mut=10, n_dates=15)
    write_mutation_tsv(rows, tmp_path / "rows.tsv")
    back = read_mutation_tsv(tmp_path / "rows.tsv")
    assert back == rows
    cfg = FilterConfig(dynamics_d=3)
    panel = preprocess(back, cfg, site="X")
    write_panel(panel, tmp_path / "panel", cfg)
    again = read_panel(tmp_path / "panel")
    assert again.mutations == panel.mutations and again.dates == panel.dates and again.site == "X"
    np.testing.assert_array_equal(again.counts, panel.counts)
    np.testing.assert_array_equal(again.depths, panel.depths)
    assert (again.depths >= 1).all()


def test_tsv_bad_line_reports_location(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("sample_id\tdate\tmutation\tposition\tcount\tcoverage\ns\t2022-01-01\tm\t5\tx\t3\n")
    with pytest.raises(LineageMixError) as exc:
        read_mutation_tsv(p)
    assert exc.value.details["line"] == 2


def test_tsv_missing_column(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("date\tmutation\n2022-01-01\tm\n")
    with pytest.raises(LineageMixError):
        read_mutation_tsv(p)
