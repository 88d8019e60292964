"""
frames.py - treatment frames ``(X, W, Y)`` for one consecutive patch pair.

Matches on the earlier patch ``w_t`` are control (``w = 0``), matches on the
later patch ``w_{t+1}`` are treated (``w = 1``); matches on any other patch
are left out. Frames are pure functions of their inputs and are ordered
deterministically, so identical inputs serialize to identical bytes.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel

from patch_hte.data.frames import (
    OUTCOME_COLUMN,
    TREATMENT_COLUMN,
    FeatureSpec,
    TreatmentFrame,
    TreatmentMeta,
)
from patch_hte.data.models import (
    CHAMPION_TYPES,
    ChampionCatalog,
    PatchPair,
    PatchTimeline,
    PatchVersion,
    pair_label,
)
from patch_hte.errors import FrameError
from patch_hte.services.features import FEATURE_COLUMNS, FEATURE_KINDS
from patch_hte.services.ingestion import TelemetryTables
from patch_hte.utils.files import atomic_write_bytes, atomic_write_text, safe_name

logger = logging.getLogger(__name__)

TEAM_SIZE = 5
FIRST_MATCH_GAP = -1.0  # timeSinceLastMatch of a user's first match
SECONDS_PER_DAY = 86_400


class SkipRecord(BaseModel):
    champion: str | None
    control: PatchVersion
    treated: PatchVersion
    reason: str

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


def presence_feature(champion_name: str) -> str:
    return f"on_team:{champion_name}"


def type_count_feature(champion_type: str) -> str:
    return f"count:{champion_type}"


def _pair_mask(patches: pd.Series, pair: PatchPair) -> tuple[pd.Series, pd.Series]:
    control, treated = (str(v) for v in pair)
    return patches == control, patches == treated


def _window_mask(
    start: pd.Series,
    is_control: pd.Series,
    is_treated: pd.Series,
    release: float,
    window_days: float | None,
) -> pd.Series:
    """Rows kept by the optional release window around the treated patch."""
    if window_days is None:
        return is_control | is_treated
    span = window_days * SECONDS_PER_DAY
    return (is_control & (start >= release - span)) | (is_treated & (start < release + span))


def _release_time(start: pd.Series, is_treated: pd.Series, timeline: PatchTimeline | None, treated) -> float:
    if timeline is not None and treated in timeline.versions:
        return float(timeline.release_time(treated))
    return float(start[is_treated].min()) if is_treated.any() else float("nan")


def _require_both_arms(w: np.ndarray, what: str) -> None:
    n_treated = int(w.sum())
    if n_treated == 0 or n_treated == len(w):
        raise FrameError(f"degenerate treatment arm for {what}: control={len(w) - n_treated}, treated={n_treated}")


# ── team frames ─────────────────────────────

def build_team_frame(
    tables: TelemetryTables,
    catalog: ChampionCatalog,
    pair: PatchPair,
    *,
    timeline: PatchTimeline | None = None,
    window_days: float | None = None,
) -> TreatmentFrame:
    """
    Two rows per match (one per team) with champion-presence indicators and
    champion-type counts; ``y = 1`` when the team won.

    Matches whose teams do not field exactly five distinct champions are
    dropped with a warning.
    """
    matches = tables.matches
    is_control, is_treated = _pair_mask(matches["patch"], pair)
    release = _release_time(matches["start_time"], is_treated, timeline, pair[1])
    keep = _window_mask(matches["start_time"], is_control, is_treated, release, window_days)
    matches = matches.loc[keep, ["match_id", "start_time", "patch", "winning_team"]]

    players = tables.player_matches[tables.player_matches["match_id"].isin(matches["match_id"])]
    roster = players.groupby(["match_id", "team"])["champion"].nunique()
    full = roster[roster == TEAM_SIZE].reset_index().groupby("match_id").size()
    complete = set(full[full == 2].index)
    dropped = len(matches) - len(complete)
    if dropped:
        logger.warning(f"[frames] {pair_label(pair)}: dropped {dropped} matches without two full rosters")
    matches = matches[matches["match_id"].isin(complete)]
    players = players[players["match_id"].isin(complete)]

    champion_ids = catalog.ids()
    presence = pd.crosstab([players["match_id"], players["team"]], players["champion"])
    presence = presence.reindex(columns=champion_ids, fill_value=0).clip(upper=1)
    types = pd.crosstab(
        [players["match_id"], players["team"]], players["champion"].map(catalog.type_of)
    ).reindex(columns=list(CHAMPION_TYPES), fill_value=0)

    units = (
        matches.assign(_key=1)
        .merge(pd.DataFrame({"team": ["blue", "red"], "_key": 1}), on="_key")
        .drop(columns="_key")
        .sort_values(["start_time", "match_id", "team"], kind="mergesort")
    )
    index = pd.MultiIndex.from_frame(units[["match_id", "team"]])
    x = np.hstack([
        presence.reindex(index, fill_value=0).to_numpy(dtype=np.float64),
        types.reindex(index, fill_value=0).to_numpy(dtype=np.float64),
    ])
    w = (units["patch"] == str(pair[1])).to_numpy(dtype=np.int8)
    y = (units["team"] == units["winning_team"]).to_numpy(dtype=np.float64)

    schema = tuple(
        [FeatureSpec(name=presence_feature(catalog.name_of(c)), kind="binary") for c in champion_ids]
        + [FeatureSpec(name=type_count_feature(t), kind="count") for t in CHAMPION_TYPES]
    )
    _require_both_arms(w, f"team frame {pair_label(pair)}")
    frame = TreatmentFrame(
        schema, x, w, y, "binary_win",
        TreatmentMeta(scope="team", control=pair[0], treated=pair[1]),
    )
    logger.info(f"[frames] Team frame {pair_label(pair)}: {frame.n_rows} rows, arms {frame.arm_sizes()}")
    return frame


# ── player frames ───────────────────────────

def player_rows(tables: TelemetryTables, features: pd.DataFrame) -> pd.DataFrame:
    """Player rows with match metadata and derived features, ordered by start time."""
    rows = tables.with_patch().merge(
        features[["user_id", "match_id", *FEATURE_COLUMNS]],
        on=["user_id", "match_id"], how="inner", validate="one_to_one",
    )
    rows["timeSinceLastMatch"] = rows["timeSinceLastMatch"].astype("float64").fillna(FIRST_MATCH_GAP)
    return rows.sort_values(["start_time", "match_id", "user_id"], kind="mergesort").reset_index(drop=True)


def _player_frame_from_rows(
    rows: pd.DataFrame,
    champion: str,
    pair: PatchPair,
    *,
    timeline: PatchTimeline | None,
    window_days: float | None,
) -> TreatmentFrame:
    rows = rows[rows["champion"] == champion]
    is_control, is_treated = _pair_mask(rows["patch"], pair)
    if not (is_control | is_treated).any():
        raise FrameError(f"champion {champion!r} absent from both patches of {pair_label(pair)}")
    release = _release_time(rows["start_time"], is_treated, timeline, pair[1])
    rows = rows[_window_mask(rows["start_time"], is_control, is_treated, release, window_days)]

    w = (rows["patch"] == str(pair[1])).to_numpy(dtype=np.int8)
    _require_both_arms(w, f"{champion} {pair_label(pair)}")
    schema = tuple(FeatureSpec(name=c, kind=FEATURE_KINDS[c]) for c in FEATURE_COLUMNS)
    return TreatmentFrame(
        schema,
        rows[list(FEATURE_COLUMNS)].to_numpy(dtype=np.float64),
        w,
        rows["kills"].to_numpy(dtype=np.float64),
        "count_kills",
        TreatmentMeta(scope="player", control=pair[0], treated=pair[1], champion=champion),
    )


def build_player_frame(
    tables: TelemetryTables,
    features: pd.DataFrame,
    champion: str,
    pair: PatchPair,
    *,
    catalog: ChampionCatalog | None = None,
    timeline: PatchTimeline | None = None,
    window_days: float | None = None,
) -> TreatmentFrame:
    """
    Rows are (player, match) units where the player picked *champion*;
    ``x`` is the derived-feature vector and ``y`` the kills in that match.
    """
    if catalog is not None and champion not in catalog:
        raise FrameError(f"champion {champion!r} is not in the catalog")
    frame = _player_frame_from_rows(
        player_rows(tables, features), champion, pair, timeline=timeline, window_days=window_days
    )
    logger.info(f"[frames] Player frame {champion} {pair_label(pair)}: {frame.n_rows} rows, arms {frame.arm_sizes()}")
    return frame


def batch_frames(
    tables: TelemetryTables,
    features: pd.DataFrame,
    champions: list[str],
    timeline: PatchTimeline,
    *,
    min_arm: int = 2,
    window_days: float | None = None,
    skipped: list[SkipRecord] | None = None,
) -> Iterator[tuple[str, PatchPair, TreatmentFrame]]:
    """
    Yield ``(champion, pair, frame)`` for every champion x consecutive pair
    with a fittable frame, in (champion, pair) order. Unfittable combinations
    are logged and appended to *skipped*.
    """
    if len(timeline) < 2:
        raise FrameError("a batch needs a timeline with at least two patches")
    rows = player_rows(tables, features)
    for champion in champions:
        for pair in timeline.pairs():
            try:
                frame = _player_frame_from_rows(rows, champion, pair, timeline=timeline, window_days=window_days)
                if not frame.is_fittable(min_arm):
                    raise FrameError(f"arm sizes {frame.arm_sizes()} below minimum {max(min_arm, 2)}")
            except FrameError as e:
                logger.info(f"[frames] Skipping {champion} {pair_label(pair)}: {e}")
                if skipped is not None:
                    skipped.append(SkipRecord(champion=champion, control=pair[0], treated=pair[1], reason=str(e)))
                continue
            yield champion, pair, frame


# ── serialization ───────────────────────────

def frame_file_name(meta: TreatmentMeta) -> str:
    if meta.scope == "synthetic" or meta.control is None or meta.treated is None:
        return "frame_synthetic.csv"
    who = "team" if meta.scope == "team" else safe_name(meta.champion or "player")
    return f"frame_{who}_{meta.control}_{meta.treated}.csv"


def write_frame(frame: TreatmentFrame, directory: Path, name: str | None = None) -> Path:
    """Write ``<name>.csv`` plus a ``<name>.json`` sidecar; returns the CSV path."""
    path = Path(directory) / (name or frame_file_name(frame.meta))
    atomic_write_bytes(path, frame.to_csv_bytes())
    atomic_write_text(path.with_suffix(".json"), json.dumps(frame.sidecar(), indent=2, sort_keys=True) + "\n")
    return path


def read_frame(path: Path | str) -> TreatmentFrame:
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FrameError(f"frame sidecar not found at '{sidecar_path}'") from exc

    schema = tuple(FeatureSpec.model_validate(f) for f in sidecar["schema"])
    df = pd.read_csv(path, float_precision="round_trip")
    expected = [f.name for f in schema] + [TREATMENT_COLUMN, OUTCOME_COLUMN]
    if list(df.columns) != expected:
        raise FrameError(f"{path.name}: columns do not match the sidecar schema")
    frame = TreatmentFrame(
        schema,
        df[[f.name for f in schema]].to_numpy(dtype=np.float64),
        df[TREATMENT_COLUMN].to_numpy(),
        df[OUTCOME_COLUMN].to_numpy(dtype=np.float64),
        sidecar["outcome_kind"],
        TreatmentMeta.model_validate(sidecar["treatment_meta"]),
    )
    if sidecar.get("sha256") and sidecar["sha256"] != frame.fingerprint():
        logger.warning(f"[frames] {path.name}: content hash differs from its sidecar")
    return frame
