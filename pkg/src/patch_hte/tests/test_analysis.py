from __future__ import annotations

import logging
import math

import numpy as np
import pandas as pd
import pytest

from patch_hte.config.settings import BinningSpec, TreeConfig
from patch_hte.data.frames import FeatureSpec, TreatmentMeta
from patch_hte.data.models import PatchVersion
from patch_hte.data.reports import WinRateCell, WinRateSeries
from patch_hte.data.trees import CausalTree, EffectEstimate, SplitRule, TreeNode
from patch_hte.errors import AnalysisError
from patch_hte.services.analysis import (
    Z_95,
    analysis_rows,
    ate_series,
    correlate,
    effect_gap,
    effect_gap_report,
    feature_importance,
    heatmap_table,
    pearson_matrix,
    report_manifest,
    win_rate_series,
    write_ate_series,
    write_effect_gaps,
    write_heatmap,
)
from patch_hte.services.causal_tree import fit
from patch_hte.services.features import build_player_features
from patch_hte.services.frames import build_player_frame
from patch_hte.services.ingestion import build_patch_timeline
from patch_hte.services.synthetic import SyntheticSpec, generate
from patch_hte.tests.conftest import make_tables, match_row, player_row

_V = {v: PatchVersion.parse(v) for v in ("4.6", "4.7", "4.8")}


@pytest.fixture
def kills_tables():
    """Kills 3, 4, 5 on 4.6 and 4, 5, 5 on 4.7: tau = 4.6667 - 4.0."""
    matches = [match_row(f"m{i}", i * 3000, "4.6" if i < 3 else "4.7") for i in range(6)]
    kills = [3, 4, 5, 4, 5, 5]
    players = [player_row(f"m{i}", f"u{i}", "Ahri", kills=k) for i, k in enumerate(kills)]
    return make_tables(matches, players)


# ── ATE series ──────────────────────────────

def test_ate_series(kills_tables):
    timeline = build_patch_timeline(kills_tables.matches)
    [cell] = ate_series(kills_tables, timeline).cells
    assert cell.tau == pytest.approx(14 / 3 - 4.0)
    assert (cell.n_before, cell.n_after) == (3, 3)
    assert str(cell.control) == "4.6" and str(cell.treated) == "4.7"


def test_ate_series_leaves_small_arms_empty():
    matches = [match_row("a", 0, "4.6"), match_row("b", 3000, "4.6"), match_row("c", 6000, "4.7")]
    players = [player_row(m, f"u{m}") for m in "abc"]
    tables = make_tables(matches, players)
    [cell] = ate_series(tables, build_patch_timeline(tables.matches)).cells
    assert cell.missing
    assert (cell.n_before, cell.n_after) == (2, 1)


def test_ate_series_needs_two_patches(kills_tables):
    one = build_patch_timeline(kills_tables.matches[kills_tables.matches["patch"] == "4.6"])
    with pytest.raises(AnalysisError):
        ate_series(kills_tables, one)


def test_ate_series_unknown_outcome(kills_tables):
    with pytest.raises(AnalysisError, match="outcome"):
        ate_series(kills_tables, build_patch_timeline(kills_tables.matches), "headshots")


def test_ate_equals_root_effect_of_a_tree(tables):
    timeline = build_patch_timeline(tables.matches)
    pair = (_V["4.6"], _V["4.7"])
    frame = build_player_frame(tables, build_player_features(tables), "Lux", pair)
    tree = fit(frame, TreeConfig(min_arm_count=2))
    cell = ate_series(tables, timeline, champion="Lux").cells[0]
    assert cell.tau == pytest.approx(tree.root.effect.tau, abs=1e-9)
    assert cell.se == pytest.approx(tree.root.effect.se, abs=1e-9)


def test_write_ate_series_leaves_missing_cells_empty(tmp_path):
    matches = [match_row("a", 0, "4.6"), match_row("b", 3000, "4.6"), match_row("c", 6000, "4.7")]
    tables = make_tables(matches, [player_row(m, f"u{m}") for m in "abc"])
    path = write_ate_series(ate_series(tables, build_patch_timeline(tables.matches)), tmp_path / "ate.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "control,treated,tau,se,p_value,n_before,n_after"
    assert lines[1] == "4.6,4.7,,,,2,1"


# ── win rates ───────────────────────────────

def test_win_rate_series():
    matches = [
        match_row("a", 0, "4.6", winning_team="blue"),
        match_row("b", 3000, "4.6", winning_team="blue"),
        match_row("c", 6000, "4.6", winning_team="red"),
        match_row("d", 9000, "4.6", winning_team="blue"),
        match_row("e", 12000, "4.7", winning_team="red"),
    ]
    players = [player_row(m, f"u{m}", "Ahri", "blue") for m in "abcd"]
    # a mirror match: one win and one loss
    players += [player_row("e", "x1", "Ahri", "blue"), player_row("e", "x2", "Ahri", "red")]
    series = win_rate_series(make_tables(matches, players), "Ahri")
    assert [str(c.patch) for c in series.cells] == ["4.6", "4.7"]
    assert series.rates()[_V["4.6"]] == 0.75
    assert series.rates()[_V["4.7"]] == 0.5


def test_win_rate_series_skips_unplayed_patches():
    matches = [match_row("a", 0, "4.6"), match_row("b", 3000, "4.7")]
    series = win_rate_series(make_tables(matches, [player_row("b", "u1", "Zed")]), "Zed")
    assert [str(c.patch) for c in series.cells] == ["4.7"]


# ── correlations ────────────────────────────

def _series(name: str, rates: list[float]) -> WinRateSeries:
    cells = [
        WinRateCell(patch=PatchVersion(major=4, minor=i + 1), wins=round(r * 1000), games=1000)
        for i, r in enumerate(rates)
    ]
    return WinRateSeries(champion=name, cells=tuple(cells))


def test_correlate_reference_values():
    a = {1: 1.0, 2: 2.0, 3: 3.0, 4: 4.0}
    b = {1: 1.1, 2: 1.9, 3: 3.2, 4: 3.8}
    c = correlate(a, b)
    assert c.r == pytest.approx(0.9908, abs=1e-4)
    assert c.n == 4
    assert correlate(b, a).r == pytest.approx(c.r, abs=1e-15)


def test_correlate_extremes():
    assert correlate({1: 1, 2: 2, 3: 3}, {1: 1, 2: 2, 3: 3}).r == pytest.approx(1.0)
    reverse = correlate({1: 1, 2: 2, 3: 3}, {1: 3, 2: 2, 3: 1})
    assert reverse.r == pytest.approx(-1.0)
    assert reverse.p_value == 0.0


def test_correlate_is_affine_invariant():
    a = {1: 0.1, 2: 0.4, 3: 0.3, 4: 0.9, 5: 0.5}
    b = {1: 0.2, 2: 0.1, 3: 0.5, 4: 0.6, 5: 0.4}
    base = correlate(a, b)
    moved = correlate({k: 3 * v + 2 for k, v in a.items()}, {k: 0.5 * v - 1 for k, v in b.items()})
    assert moved.r == pytest.approx(base.r, abs=1e-12)
    assert 0.0 < base.p_value < 1.0


def test_correlate_uses_common_patches_only():
    a = {1: 0.1, 2: 0.4, 3: 0.3, 9: 0.8}
    b = {1: 0.2, 2: 0.5, 3: 0.35}
    assert correlate(a, b).n == 3


@pytest.mark.parametrize(
    "a, b, message",
    [
        ({1: 0.1, 2: 0.2}, {1: 0.1, 2: 0.3}, "at least 3"),
        ({1: 0.5, 2: 0.5, 3: 0.5}, {1: 0.1, 2: 0.2, 3: 0.3}, "undefined"),
    ],
)
def test_correlate_errors(a, b, message):
    with pytest.raises(AnalysisError, match=message):
        correlate(a, b)


def test_pearson_matrix():
    series = [
        _series("Ahri", [0.50, 0.52, 0.49, 0.55]),
        _series("Zed", [0.48, 0.51, 0.47, 0.54]),
        _series("Lux", [0.5, 0.5, 0.5, 0.5]),
    ]
    matrix = pearson_matrix(series)
    assert matrix[["champion_a", "champion_b"]].values.tolist() == [["Ahri", "Zed"]]
    assert matrix["r"].iloc[0] == pytest.approx(0.99602, abs=1e-4)


# ── heatmaps ────────────────────────────────

def _binned_rows() -> pd.DataFrame:
    return pd.DataFrame({
        "patch": ["4.6", "4.6", "4.6", "4.7", "4.7", "4.7"],
        "f": [1.0, 2.0, 8.0, 1.0, 2.0, 8.0],
        "kills": [2.0, 4.0, 6.0, 3.0, 5.0, 9.0],
    })


_THRESHOLD = BinningSpec(feature="f", edges=[5.0], edge_kind="threshold")


def _two_patch_timeline():
    return build_patch_timeline(pd.DataFrame({"patch": ["4.6", "4.7"], "start_time": [0, 10]}))


def test_heatmap_means():
    table = heatmap_table(_binned_rows(), _THRESHOLD, _two_patch_timeline())
    low, high = table.values.index
    assert table.values.loc[low, "4.6"] == 3.0
    assert table.values.loc[high, "4.6"] == 6.0
    assert table.values.loc[high, "4.7"] == 9.0
    assert table.counts.loc[low, "4.7"] == 2
    assert table.shares.tolist() == pytest.approx([4 / 6, 2 / 6])
    assert table.cut_points == (5.0,)


def test_single_bin_heatmap_equals_patch_means():
    spec = BinningSpec(feature="f", edges=[100.0], edge_kind="threshold")
    rows = _binned_rows()
    table = heatmap_table(rows, spec, _two_patch_timeline())
    expected = rows.groupby("patch")["kills"].mean()
    first = table.values.iloc[0]
    assert first["4.6"] == pytest.approx(expected["4.6"])
    assert first["4.7"] == pytest.approx(expected["4.7"])
    assert table.values.iloc[1].isna().all()


def test_heatmap_ate():
    table = heatmap_table(_binned_rows(), _THRESHOLD, _two_patch_timeline(), "ate")
    low, high = table.values.index
    assert table.values.loc[low, "4.6-4.7"] == pytest.approx(1.0)
    # one row per arm in the high bin
    assert np.isnan(table.values.loc[high, "4.6-4.7"])
    assert table.counts.loc[high, "4.6-4.7"] == 2


def test_heatmap_ate_of_identical_arms_is_zero():
    rows = _binned_rows()
    rows.loc[rows["patch"] == "4.7", "kills"] = rows.loc[rows["patch"] == "4.6", "kills"].to_numpy()
    rows = pd.concat([rows, rows], ignore_index=True)
    table = heatmap_table(rows, _THRESHOLD, _two_patch_timeline(), "ate")
    np.testing.assert_allclose(table.values["4.6-4.7"].to_numpy(), 0.0)


@pytest.mark.parametrize("feature, value", [("nope", "mean_outcome"), ("f", "median")])
def test_heatmap_errors(feature, value):
    spec = BinningSpec(feature=feature, edges=[5.0], edge_kind="threshold")
    with pytest.raises(AnalysisError):
        heatmap_table(_binned_rows(), spec, _two_patch_timeline(), value)


def test_write_heatmap(tmp_path):
    table = heatmap_table(_binned_rows(), _THRESHOLD, _two_patch_timeline(), "ate")
    lines = write_heatmap(table, tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin,share,4.6-4.7"
    assert lines[2].endswith(",")


def test_heatmap_on_player_features(tables):
    rows = analysis_rows(tables, build_player_features(tables))
    spec = BinningSpec(feature="meanKillsAtStart", special_zero_bin=True)
    table = heatmap_table(rows, spec, build_patch_timeline(tables.matches))
    assert list(table.values.columns) == ["4.6", "4.7", "4.8"]
    assert table.values.index[0] == "0"
    assert sum(table.shares) == pytest.approx(1.0)
    assert int(table.counts.to_numpy().sum()) == len(rows)


# ── tree summaries ──────────────────────────

_SCHEMA = (FeatureSpec(name="f", kind="continuous"), FeatureSpec(name="g", kind="continuous"))


def _leaf(tau: float, n: int, depth: int) -> TreeNode:
    e = EffectEstimate(tau=tau, se=0.1, p_value=0.5, n_treated=n // 2, n_control=n - n // 2,
                       mean_treated=tau, mean_control=0.0)
    return TreeNode(effect=e, depth=depth)


def _split(feature: str, left: TreeNode, right: TreeNode, depth: int = 0) -> TreeNode:
    n = left.samples + right.samples
    e = EffectEstimate(tau=0.0, se=0.1, p_value=0.5, n_treated=left.effect.n_treated + right.effect.n_treated,
                       n_control=left.effect.n_control + right.effect.n_control, mean_treated=0.0, mean_control=0.0)
    assert e.samples == n
    return TreeNode(effect=e, split=SplitRule(feature=feature, threshold=0.5), left=left, right=right, depth=depth)


def _tree(root: TreeNode) -> CausalTree:
    return CausalTree(root=root, config=TreeConfig(), feature_schema=_SCHEMA, frame_sha256="0" * 64, seed=0,
                      meta=TreatmentMeta(scope="synthetic"))


def test_feature_importance_weights_by_node_samples():
    # root on f (1000 samples), its left child on g (400 samples)
    inner = _split("g", _leaf(0.2, 200, 2), _leaf(0.1, 200, 2), depth=1)
    tree = _tree(_split("f", inner, _leaf(0.0, 600, 1)))
    report = feature_importance([tree])
    assert report.top(2) == ["f", "g"]
    assert report.share_of("f") == pytest.approx(5 / 7)
    assert report.share_of("g") == pytest.approx(2 / 7)
    assert sum(w.share for w in report.weights) == pytest.approx(1.0)


def test_feature_importance_of_root_only_trees_is_empty(caplog):
    with caplog.at_level(logging.WARNING):
        report = feature_importance([_tree(_leaf(0.0, 10, 0))])
    assert report.weights == ()
    assert "empty" in caplog.text


def test_effect_gaps():
    trees = [
        _tree(_split("f", _leaf(0.5, 100, 1), _leaf(0.0, 100, 1))),
        _tree(_split("f", _leaf(0.1, 300, 1), _leaf(-0.2, 100, 1))),
    ]
    gap = effect_gap(trees, "f")
    assert gap.n_splits == 2
    assert gap.mean_gap == pytest.approx(0.4)
    half_width = Z_95 * math.sqrt(0.5 * 0.5 * (0.01 + 0.01) * 2)
    assert gap.ci95_low == pytest.approx(0.4 - half_width)
    assert gap.ci95_high == pytest.approx(0.4 + half_width)

    weighted = effect_gap(trees, "f", weighted=True)
    assert weighted.mean_gap == pytest.approx((200 * 0.5 + 400 * 0.3) / 600)


def test_effect_gap_of_one_split_has_no_interval():
    gap = effect_gap([_tree(_split("f", _leaf(0.5, 100, 1), _leaf(0.25, 100, 1)))], "f")
    assert gap.mean_gap == pytest.approx(0.25)
    assert gap.ci95_low is None and gap.ci95_high is None
    assert not gap.excludes_zero()


def test_effect_gap_without_splits():
    assert effect_gap([_tree(_leaf(0.0, 10, 0))], "f") is None


def test_effect_gap_report_and_file(tmp_path):
    trees = [_tree(_split("f", _leaf(0.5, 100, 1), _leaf(0.0, 100, 1)))]
    report = effect_gap_report(trees, top=5)
    assert [g.feature for g in report.gaps] == ["f"]
    lines = write_effect_gaps(report, tmp_path / "gaps.csv").read_text().splitlines()
    assert lines == ["feature,n_splits,mean_gap,ci95_low,ci95_high", "f,1,0.5,,"]


def test_effect_gap_finds_the_planted_feature():
    trees = []
    for seed in range(20):
        spec = SyntheticSpec.two_box(n_units=3_000, n_continuous=6, high=1.0, low=0.0, seed=seed)
        trees.append(fit(generate(spec)[0], seed=seed))
    report = feature_importance(trees)
    assert report.top(1) == ["x1"]
    assert report.share_of("x1") > 0.5
    gap = effect_gap(trees, "x1")
    assert gap.mean_gap > 0
    assert gap.excludes_zero()


def test_report_manifest_names_every_file():
    files = set(report_manifest()["file"])
    assert {"ate_series.csv", "win_rates.csv", "feature_importance.csv", "effect_gaps.csv"} <= files
