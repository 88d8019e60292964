"""
features.py - per-(user, match) history features.

Every ``*AtStart`` statistic is computed from strictly earlier matches of the
same user (``shift`` before ``cumsum``), so the current match never leaks into
its own features and appending later matches never changes earlier rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from patch_hte.config.settings import BinningSpec
from patch_hte.services.ingestion import TelemetryTables

logger = logging.getLogger(__name__)

DEFAULT_GAP_THRESHOLD = 15 * 60  # seconds

TIER_ORDINALS: dict[str, int] = {
    "unranked": 0, "bronze": 1, "silver": 2, "gold": 3,
    "platinum": 4, "diamond": 5, "master": 6, "challenger": 7,
}

# feature stem -> raw per-match column
STAT_SOURCES: dict[str, str] = {
    "Kills": "kills",
    "Deaths": "deaths",
    "Assists": "assists",
    "Kda": "kda",
    "GoldEarned": "gold_earned",
    "GoldSpent": "gold_spent",
    "MatchDuration": "duration",
    "Wins": "win",
    "ChampLevel": "champ_level",
}
CUM_STATS: tuple[str, ...] = ("Kills", "Deaths", "Assists", "GoldEarned", "GoldSpent", "MatchDuration", "Wins")
MEAN_STATS: tuple[str, ...] = tuple(STAT_SOURCES)


def _feature_kinds() -> dict[str, str]:
    kinds = {
        "timeSinceLastMatch": "continuous",
        "sessionNumber": "count",
        "matchIndexInSession": "count",
        "matchesPlayedSoFar": "count",
    }
    for prefix in ("cum", "sessionCum"):
        kinds.update({f"{prefix}{s}AtStart": "count" for s in CUM_STATS})
    for prefix in ("mean", "sessionMean"):
        kinds.update({f"{prefix}{s}AtStart": "continuous" for s in MEAN_STATS})
    kinds["highestPrevSeasonTier"] = "ordinal"
    return kinds


FEATURE_KINDS: dict[str, str] = _feature_kinds()
FEATURE_COLUMNS: tuple[str, ...] = tuple(FEATURE_KINDS)
ID_COLUMNS: tuple[str, ...] = ("user_id", "match_id")


def tier_ordinal(tier: str | int | None) -> int:
    """unranked/missing -> 0, bronze -> 1 ... challenger -> 7."""
    if tier is None or (isinstance(tier, float) and np.isnan(tier)):
        return 0
    s = str(tier).strip().lower()
    if not s:
        return 0
    if s.isdigit() and 0 <= int(s) <= 7:
        return int(s)
    if s not in TIER_ORDINALS:
        raise ValueError(f"unknown season tier {tier!r}")
    return TIER_ORDINALS[s]


def feature_manifest() -> pd.DataFrame:
    """Column order and meaning of ``features.csv``."""
    def describe(name: str) -> str:
        for prefix, text in (
            ("sessionCum", "sum over earlier matches of the current session of "),
            ("sessionMean", "mean over earlier matches of the current session of "),
            ("cum", "sum over all earlier matches of "),
            ("mean", "mean over all earlier matches of "),
        ):
            if name.startswith(prefix) and name.endswith("AtStart"):
                stem = name[len(prefix):-len("AtStart")]
                return text + STAT_SOURCES[stem]
        return {
            "timeSinceLastMatch": "idle seconds since the end of the previous match (-1 in frames for a first match)",
            "sessionNumber": "1-based session counter of the user",
            "matchIndexInSession": "1-based position of the match within its session",
            "matchesPlayedSoFar": "number of earlier matches of the user",
            "highestPrevSeasonTier": "previous season tier, unranked=0 ... challenger=7",
        }[name]

    rows = [{"name": c, "kind": "id", "description": "identifier"} for c in ID_COLUMNS]
    rows += [{"name": c, "kind": FEATURE_KINDS[c], "description": describe(c)} for c in FEATURE_COLUMNS]
    rows.append({"name": "overlap_flagged", "kind": "flag", "description": "previous match ended after this one started"})
    return pd.DataFrame(rows, columns=["name", "kind", "description"])


# ── sessions ────────────────────────────────

def sessionize(matches: pd.DataFrame, gap_threshold: float = DEFAULT_GAP_THRESHOLD) -> pd.DataFrame:
    """
    Assign sessions to chronologically sorted matches.

    *matches* needs ``start_time`` and ``duration`` (seconds) and optionally
    ``user_id``; without it all rows belong to one user. The idle gap is
    ``start(next) - (start(prev) + duration(prev))`` and a gap of at least
    *gap_threshold* starts a new session. Negative gaps (overlapping matches)
    are flagged and treated as 0.

    Returns a frame aligned with *matches* holding ``sessionNumber``,
    ``matchIndexInSession``, ``timeSinceLastMatch`` (NaN for a first match)
    and ``overlap_flagged``.
    """
    users = matches["user_id"] if "user_id" in matches else pd.Series(0, index=matches.index)
    start = matches["start_time"].astype("float64")
    end = start + matches["duration"].astype("float64")

    if (start.groupby(users, sort=False).diff() < 0).any():
        raise ValueError("matches must be sorted by start_time within each user")

    gap = start - end.groupby(users, sort=False).shift(1)
    overlap = gap < 0
    if overlap.any():
        logger.warning(f"[features] {int(overlap.sum())} overlapping matches; their gap is treated as 0")
    gap = gap.where(~overlap, 0.0)

    new_session = gap.isna() | (gap >= gap_threshold)
    session_number = new_session.astype("int64").groupby(users, sort=False).cumsum()
    index_in_session = session_number.groupby([users, session_number], sort=False).cumcount() + 1

    return pd.DataFrame(
        {
            "sessionNumber": session_number.astype("int64"),
            "matchIndexInSession": index_in_session.astype("int64"),
            "timeSinceLastMatch": gap,
            "overlap_flagged": overlap,
        },
        index=matches.index,
    )


# ── rolling statistics ──────────────────────

def _prior_sum(values: pd.Series, keys: list[pd.Series]) -> pd.Series:
    """Sum of *values* over strictly earlier rows of the same group."""
    prior = values.groupby(keys, sort=False).shift(1).fillna(0.0)
    return prior.groupby(keys, sort=False).cumsum()


def rolling_stats(matches: pd.DataFrame) -> pd.DataFrame:
    """
    ``cum*AtStart`` / ``mean*AtStart`` and their session-restricted variants.

    *matches* must be sorted by time within each user, already sessionized,
    and carry the raw per-match columns named in ``STAT_SOURCES``. A user's
    first match has every statistic equal to 0.
    """
    users = matches["user_id"] if "user_id" in matches else pd.Series(0, index=matches.index)
    sessions = matches["sessionNumber"]

    played = users.groupby(users, sort=False).cumcount().astype("int64")
    played_in_session = (matches["matchIndexInSession"] - 1).astype("int64")

    out = {"matchesPlayedSoFar": played}
    session_out = {}
    for stem, source in STAT_SOURCES.items():
        values = matches[source].astype("float64")
        cum = _prior_sum(values, [users])
        session_cum = _prior_sum(values, [users, sessions])
        if stem in CUM_STATS:
            out[f"cum{stem}AtStart"] = cum.astype("int64")
            session_out[f"sessionCum{stem}AtStart"] = session_cum.astype("int64")
        out[f"mean{stem}AtStart"] = (cum / played.where(played > 0)).fillna(0.0)
        session_out[f"sessionMean{stem}AtStart"] = (
            session_cum / played_in_session.where(played_in_session > 0)
        ).fillna(0.0)

    return pd.DataFrame({**out, **session_out}, index=matches.index)


def build_player_features(tables: TelemetryTables, gap_threshold: float = DEFAULT_GAP_THRESHOLD) -> pd.DataFrame:
    """
    One row per (user_id, match_id) with every column of ``FEATURE_COLUMNS``.

    Rows are ordered by user, then start time, then match id.
    """
    rows = tables.with_patch()
    if rows.empty:
        return pd.DataFrame(columns=list(ID_COLUMNS) + list(FEATURE_COLUMNS) + ["overlap_flagged"])

    rows = rows.sort_values(["user_id", "start_time", "match_id"], kind="mergesort").reset_index(drop=True)
    rows["win"] = (rows["team"] == rows["winning_team"]).astype("int64")
    rows["kda"] = (rows["kills"] + rows["assists"]) / rows["deaths"].clip(lower=1)

    sessions = sessionize(rows, gap_threshold)
    rows = pd.concat([rows, sessions], axis=1)
    stats = rolling_stats(rows)

    features = pd.concat([rows[list(ID_COLUMNS)], sessions, stats], axis=1)
    features["highestPrevSeasonTier"] = rows["highest_prev_season_tier"].map(tier_ordinal).astype("int64")
    features = features[list(ID_COLUMNS) + list(FEATURE_COLUMNS) + ["overlap_flagged"]]

    logger.info(
        f"[features] Built {len(features)} feature rows for {rows['user_id'].nunique()} users "
        f"({int(features['sessionNumber'].groupby(features['user_id']).max().sum())} sessions)"
    )
    return features


# ── binning ─────────────────────────────────

@dataclass(frozen=True)
class BinAssignment:
    """Per-value bin ids (``-1`` = excluded) plus the realized cut points and shares."""

    bins: np.ndarray
    cut_points: tuple[float, ...]
    shares: dict[int, float]
    labels: dict[int, str]

    @property
    def n_bins(self) -> int:
        return len(self.labels)


def percentile_bins(values, spec: BinningSpec) -> BinAssignment:
    """
    Bin *values* per *spec*.

    With ``special_zero_bin`` zeros (and missing values unless *spec*
    excludes them) go to bin 0 and the percentile cut points are computed over
    the remaining values only. A value equal to a cut point goes to the upper
    bin.
    """
    v = np.asarray(values, dtype=np.float64)
    missing = np.isnan(v)
    bins = np.full(v.shape, -1, dtype=np.int64)

    zero = np.zeros(v.shape, dtype=bool)
    if spec.special_zero_bin:
        zero = (v == 0) | (missing & (spec.missing == "zero_bin"))
        bins[zero] = 0
    rest = ~missing & ~zero

    if spec.edge_kind == "threshold":
        cuts = np.asarray(spec.edges, dtype=np.float64)
    elif rest.any():
        cuts = np.percentile(v[rest], spec.edges)
    else:
        cuts = np.empty(0)
    unique_cuts = np.unique(cuts)
    if len(unique_cuts) < len(cuts):
        logger.warning(
            f"[features] {spec.feature}: {len(cuts) - len(unique_cuts)} duplicate bin edges collapsed"
        )

    offset = 1 if spec.special_zero_bin else 0
    bins[rest] = offset + np.searchsorted(unique_cuts, v[rest], side="right")

    labels: dict[int, str] = {}
    if spec.special_zero_bin:
        labels[0] = "0"
    bounds = [-np.inf, *unique_cuts.tolist(), np.inf]
    for i, (lo, hi) in enumerate(zip(bounds, bounds[1:])):
        labels[offset + i] = f"[{lo:.9g}, {hi:.9g})"

    counted = bins >= 0
    total = int(counted.sum())
    shares = {b: (float((bins == b).sum()) / total if total else 0.0) for b in labels}
    return BinAssignment(bins=bins, cut_points=tuple(unique_cuts.tolist()), shares=shares, labels=labels)
