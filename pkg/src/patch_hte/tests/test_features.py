from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from patch_hte.config.settings import BinningSpec
from patch_hte.services.features import (
    FEATURE_COLUMNS,
    build_player_features,
    feature_manifest,
    percentile_bins,
    rolling_stats,
    sessionize,
    tier_ordinal,
)
from patch_hte.tests.conftest import make_tables, match_row, player_row

_DURATION = 1800
_MINUTE = 60


def _timeline_with_gaps(gaps_minutes: list[float]) -> pd.DataFrame:
    starts = [0]
    for gap in gaps_minutes:
        starts.append(starts[-1] + _DURATION + int(gap * _MINUTE))
    return pd.DataFrame({"start_time": starts, "duration": [_DURATION] * len(starts)})


@pytest.mark.parametrize(
    "gaps, sessions, indices",
    [
        ([10, 15, 40], [1, 1, 2, 3], [1, 2, 1, 1]),
        ([10, 40, 14], [1, 1, 2, 2], [1, 2, 1, 2]),
        ([14.99, 14.99], [1, 1, 1], [1, 2, 3]),
    ],
)
def test_session_boundaries(gaps, sessions, indices):
    out = sessionize(_timeline_with_gaps(gaps))
    assert out["sessionNumber"].tolist() == sessions
    assert out["matchIndexInSession"].tolist() == indices


def test_gap_is_idle_time_after_previous_match():
    out = sessionize(_timeline_with_gaps([10, 15]))
    assert np.isnan(out["timeSinceLastMatch"].iloc[0])
    assert out["timeSinceLastMatch"].iloc[1:].tolist() == [600.0, 900.0]


def test_overlapping_matches_are_flagged_and_continue_the_session():
    matches = pd.DataFrame({"start_time": [0, 1000, 5000], "duration": [1800, 1800, 1800]})
    out = sessionize(matches)
    assert out["overlap_flagged"].tolist() == [False, True, False]
    assert out["timeSinceLastMatch"].iloc[1] == 0.0
    assert out["sessionNumber"].tolist() == [1, 1, 2]


def test_sessions_are_per_user():
    matches = pd.DataFrame({
        "user_id": ["a", "b", "a", "b"],
        "start_time": [0, 0, 1800 + 60, 1800 + 3600],
        "duration": [1800] * 4,
    })
    out = sessionize(matches)
    assert out["sessionNumber"].tolist() == [1, 1, 1, 2]


def test_unsorted_matches_are_refused():
    with pytest.raises(ValueError, match="sorted"):
        sessionize(pd.DataFrame({"start_time": [500, 100], "duration": [60, 60]}))


def _user_matches(kills: list[int], gaps_minutes: list[float]) -> pd.DataFrame:
    df = _timeline_with_gaps(gaps_minutes)
    df = pd.concat([df, sessionize(df)], axis=1)
    n = len(df)
    df["kills"] = kills
    df["deaths"] = 1
    df["assists"] = 0
    df["kda"] = df["kills"].astype(float)
    df["gold_earned"] = 100
    df["gold_spent"] = 50
    df["win"] = [1, 0] * (n // 2) + [1] * (n % 2)
    df["champ_level"] = 10
    return df


def test_rolling_stats_use_only_earlier_matches():
    stats = rolling_stats(_user_matches([2, 4, 6, 8], [5, 40, 5]))
    assert stats["matchesPlayedSoFar"].tolist() == [0, 1, 2, 3]
    assert stats["cumKillsAtStart"].tolist() == [0, 2, 6, 12]
    assert stats["meanKillsAtStart"].tolist() == [0.0, 2.0, 3.0, 4.0]
    assert stats["cumWinsAtStart"].tolist() == [0, 1, 1, 2]
    assert stats["cumMatchDurationAtStart"].tolist() == [0, 1800, 3600, 5400]
    # the third match opens a new session
    assert stats["sessionCumKillsAtStart"].tolist() == [0, 2, 0, 6]
    assert stats["sessionMeanKillsAtStart"].tolist() == [0.0, 2.0, 0.0, 6.0]


def test_appending_matches_never_changes_earlier_rows():
    short = rolling_stats(_user_matches([2, 4, 6], [5, 40]))
    long = rolling_stats(_user_matches([2, 4, 6, 100, 3], [5, 40, 5, 5]))
    pd.testing.assert_frame_equal(short, long.iloc[:3])


def test_current_match_does_not_leak():
    base = rolling_stats(_user_matches([2, 4, 6], [5, 5]))
    changed = rolling_stats(_user_matches([2, 4, 60], [5, 5]))
    pd.testing.assert_frame_equal(base, changed)


@pytest.mark.parametrize(
    "tier, expected",
    [(None, 0), ("", 0), ("unranked", 0), ("Bronze", 1), ("gold", 3), ("challenger", 7), ("5", 5)],
)
def test_tier_ordinal(tier, expected):
    assert tier_ordinal(tier) == expected


def test_unknown_tier():
    with pytest.raises(ValueError):
        tier_ordinal("wood")


def test_player_features_end_to_end():
    tables = make_tables(
        [match_row("m1", 0), match_row("m2", 2400, winning_team="red"), match_row("m3", 10_000)],
        [
            player_row("m3", "u1", kills=1),
            player_row("m1", "u1", kills=4),
            player_row("m2", "u1", kills=6, team="red"),
            player_row("m2", "u2", kills=2, highest_prev_season_tier=None),
        ],
    )
    features = build_player_features(tables)
    assert list(features.columns) == ["user_id", "match_id", *FEATURE_COLUMNS, "overlap_flagged"]
    u1 = features[features["user_id"] == "u1"]
    assert u1["match_id"].tolist() == ["m1", "m2", "m3"]
    assert u1["cumKillsAtStart"].tolist() == [0, 4, 10]
    assert u1["cumWinsAtStart"].tolist() == [0, 1, 2]
    assert u1["sessionNumber"].tolist() == [1, 1, 2]
    assert u1["highestPrevSeasonTier"].tolist() == [3, 3, 3]
    u2 = features[features["user_id"] == "u2"].iloc[0]
    assert u2["matchesPlayedSoFar"] == 0
    assert u2["highestPrevSeasonTier"] == 0


def test_player_features_are_deterministic(tables):
    a = build_player_features(tables)
    b = build_player_features(tables)
    pd.testing.assert_frame_equal(a, b)
    assert not a[list(FEATURE_COLUMNS)].drop(columns="timeSinceLastMatch").isna().any().any()


def test_feature_manifest_covers_every_column():
    manifest = feature_manifest()
    assert set(FEATURE_COLUMNS) <= set(manifest["name"])
    assert manifest["description"].str.len().gt(0).all()


# ── binning ─────────────────────────────────

def test_zero_bin_and_percentiles_over_the_rest():
    values = [0, 0, 1, 2, 3, 4, 5, 6, 7, 8]
    spec = BinningSpec(feature="f", special_zero_bin=True, edges=[50.0])
    out = percentile_bins(values, spec)
    assert out.cut_points == (4.5,)
    assert out.bins.tolist() == [0, 0, 1, 1, 1, 1, 2, 2, 2, 2]
    assert out.shares == {0: 0.2, 1: 0.4, 2: 0.4}
    assert sum(out.shares.values()) == pytest.approx(1.0)


def test_value_on_a_cut_point_goes_up():
    spec = BinningSpec(feature="f", edges=[2.0, 4.0], edge_kind="threshold")
    assert percentile_bins([1, 2, 3, 4, 5], spec).bins.tolist() == [0, 1, 1, 2, 2]


def test_duplicate_edges_collapse(caplog):
    values = [1, 1, 1, 1, 1, 1, 1, 1, 2, 3]
    out = percentile_bins(values, BinningSpec(feature="f", edges=[25.0, 50.0, 75.0]))
    assert out.cut_points == (1.0,)
    assert out.n_bins == 2
    assert "duplicate bin edges" in caplog.text


@pytest.mark.parametrize("missing, expected", [("zero_bin", [0, 0, 1, 2]), ("exclude", [0, -1, 1, 2])])
def test_missing_values(missing, expected):
    spec = BinningSpec(feature="f", special_zero_bin=True, edges=[50.0], missing=missing)
    out = percentile_bins([0.0, np.nan, 1.0, 3.0], spec)
    assert out.bins.tolist() == expected
