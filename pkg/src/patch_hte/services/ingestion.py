"""
ingestion.py - load, validate and filter raw match telemetry.

Rows are validated one by one against the pydantic row models; a row that
fails becomes a `RejectRecord` (with its 1-based file line) instead of
aborting the load. Only when the overall reject rate exceeds the configured
threshold does loading fail with `DataQualityError`.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field, replace
from functools import singledispatch
from pathlib import Path
from typing import TypeVar

import pandas as pd
from pydantic import BaseModel, TypeAdapter, ValidationError

from patch_hte.config.settings import FilterSettings
from patch_hte.data.models import (
    CHAMPION_COLUMNS,
    COUNT_FIELDS,
    MATCH_COLUMNS,
    PLAYER_MATCH_COLUMNS,
    ChampionCatalog,
    ChampionInfo,
    MatchRecord,
    PatchTimeline,
    PatchVersion,
    PlayerMatchRecord,
    RejectRecord,
    RejectsReport,
)
from patch_hte.errors import DataQualityError, IngestionError, SchemaError

logger = logging.getLogger(__name__)

MAX_ERRS_TO_SHOW = 5

_RecordType = TypeVar("_RecordType", bound=BaseModel)


@dataclass(frozen=True)
class TelemetryTables:
    """Validated telemetry. Functions in this package never mutate the frames."""

    matches: pd.DataFrame
    player_matches: pd.DataFrame
    rejects: RejectsReport = field(default_factory=RejectsReport)

    def match_records(self) -> list[MatchRecord]:
        return [MatchRecord.model_validate(row) for row in self.matches.to_dict("records")]

    def player_match_records(self) -> list[PlayerMatchRecord]:
        return [PlayerMatchRecord.model_validate(row) for row in self.player_matches.to_dict("records")]

    def with_patch(self) -> pd.DataFrame:
        """Player rows joined with their match metadata (patch, start, duration, outcome)."""
        cols = ["match_id", "patch", "start_time", "duration", "winning_team"]
        return self.player_matches.merge(self.matches[cols], on="match_id", how="inner", validate="many_to_one")


# ── reading ─────────────────────────────────

def _scan_records(path: Path) -> tuple[int, list[tuple[int, int]]]:
    """Header width and ``(first file line, field count)`` of every non-blank data record."""
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, [])
        records: list[tuple[int, int]] = []
        start = reader.line_num + 1
        for fields in reader:
            if len(fields) > 1 or (fields and fields[0].strip()):  # pandas skips blank lines
                records.append((start, len(fields)))
            start = reader.line_num + 1
    return len(header), records


def _read_raw(
    path: Path, required: tuple[str, ...], optional: tuple[str, ...] = ()
) -> tuple[pd.DataFrame, list[RejectRecord]]:
    """
    Read *path* as strings, indexed by 1-based file line. Records with more
    fields than the header are returned as ``malformed row`` rejects.
    """
    path = Path(path)
    width, records = _scan_records(path)
    fitting = [line for line, n in records if n <= width]
    overlong = [(line, n) for line, n in records if n > width]
    set_aside: list[list[str]] = []

    # pandas would take over-long leading records for index columns
    leading = [line - 1 for line, _ in itertools.takewhile(lambda r: r[1] > width, records)]
    try:
        df = pd.read_csv(
            path, dtype=str, keep_default_na=False, na_filter=False, engine="python",
            on_bad_lines=set_aside.append, skiprows=leading or None,
        )
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path.name}: file is empty", column=required[0]) from exc
    except pd.errors.ParserError as exc:
        raise IngestionError(f"{path.name}: {exc}") from exc
    if len(df) != len(fitting) or len(set_aside) + len(leading) != len(overlong):
        raise IngestionError(f"{path.name}: parsed rows do not line up with the file's records")
    df.index = pd.Index(fitting, name="line")

    for column in required:
        if column not in df.columns:
            raise SchemaError(f"{path.name}: missing required column '{column}'", column=column)
    for column in optional:
        if column not in df.columns:
            df[column] = ""
    malformed = [
        RejectRecord(source=path.name, line=line, reason="malformed row", detail=f"{n} fields, header has {width}")
        for line, n in overlong
    ]
    return df[list(required) + list(optional)], malformed


def _reject_reason(error: ValidationError) -> tuple[str, str]:
    first = error.errors()[0]
    name = str(first["loc"][0]) if first.get("loc") else "row"
    if name in COUNT_FIELDS:
        reason = "unparsable count"
    elif name == "patch":
        reason = "unparsable patch"
    else:
        reason = f"invalid {name}"
    return reason, f"{name}: {first.get('msg', '')}"


def _validate_rows(
    df: pd.DataFrame, record_type: type[_RecordType], source: str
) -> tuple[list[tuple[int, _RecordType]], list[RejectRecord]]:
    adapter = TypeAdapter(record_type)
    valid: list[tuple[int, _RecordType]] = []
    rejects: list[RejectRecord] = []
    for line, row in zip(df.index.tolist(), df.to_dict("records")):
        try:
            valid.append((line, adapter.validate_python(row)))
        except ValidationError as e:
            reason, detail = _reject_reason(e)
            rejects.append(RejectRecord(source=source, line=line, reason=reason, detail=detail))
    return valid, rejects


def load_champion_catalog(path: Path | str) -> ChampionCatalog:
    """Read ``champions.csv``; the catalog must be clean, so any bad row is a schema error."""
    path = Path(path)
    df, malformed = _read_raw(path, CHAMPION_COLUMNS)
    if malformed:
        raise SchemaError(f"{path.name}:{malformed[0].line}: {malformed[0].detail}")
    champions: dict[str, ChampionInfo] = {}
    for line, row in zip(df.index.tolist(), df.to_dict("records")):
        cid = row["champion_id"].strip()
        if cid in champions:
            raise SchemaError(f"{path.name}:{line}: duplicate champion_id {cid!r}", column="champion_id")
        try:
            champions[cid] = ChampionInfo(name=row["name"].strip(), champion_type=row["champion_type"].strip())
        except ValidationError as e:
            raise SchemaError(f"{path.name}:{line}: {e.errors()[0]['msg']}", column="champion_type") from e
    logger.info(f"[ingest] Loaded {len(champions)} champions from {path.name}")
    return ChampionCatalog(champions=champions)


def _records_frame(records: list[BaseModel], columns: tuple[str, ...]) -> pd.DataFrame:
    rows = [r.model_dump() for r in records]
    df = pd.DataFrame(rows, columns=list(columns))
    for column in columns:
        if rows and isinstance(rows[0][column], int):
            df[column] = df[column].astype("int64")
    return df


def load_matches(
    matches_path: Path | str,
    player_matches_path: Path | str,
    catalog: ChampionCatalog | None = None,
    *,
    max_reject_rate: float = FilterSettings().max_reject_rate,
) -> TelemetryTables:
    """
    Load ``matches.csv`` and ``player_matches.csv`` into validated tables.

    Raises:
        SchemaError: a required column is missing (the message names it).
        DataQualityError: the share of rejected rows exceeds *max_reject_rate*.
    """
    matches_path, player_matches_path = Path(matches_path), Path(player_matches_path)
    raw_matches, malformed_matches = _read_raw(matches_path, MATCH_COLUMNS, optional=("queue_subtype",))
    raw_players, malformed_players = _read_raw(player_matches_path, PLAYER_MATCH_COLUMNS)

    m_source, p_source = matches_path.name, player_matches_path.name
    valid_matches, match_rejects = _validate_rows(raw_matches, MatchRecord, m_source)
    rejects = malformed_matches + match_rejects

    matches: dict[str, MatchRecord] = {}
    for line, record in valid_matches:
        if record.match_id in matches:
            rejects.append(RejectRecord(source=m_source, line=line, reason="duplicate match", detail=record.match_id))
        else:
            matches[record.match_id] = record

    valid_players, player_rejects = _validate_rows(raw_players, PlayerMatchRecord, p_source)
    rejects.extend(malformed_players + player_rejects)

    seen_units: set[tuple[str, str]] = set()
    players: list[PlayerMatchRecord] = []
    for line, record in valid_players:
        unit = (record.match_id, record.user_id)
        if unit in seen_units:
            rejects.append(RejectRecord(source=p_source, line=line, reason="duplicate unit", detail=f"{unit}"))
        elif record.match_id not in matches:
            rejects.append(RejectRecord(source=p_source, line=line, reason="orphan unit", detail=record.match_id))
        elif catalog is not None and record.champion not in catalog:
            rejects.append(RejectRecord(source=p_source, line=line, reason="unknown champion", detail=record.champion))
        else:
            seen_units.add(unit)
            players.append(record)

    n_match_rows = len(raw_matches) + len(malformed_matches)
    n_player_rows = len(raw_players) + len(malformed_players)
    report = RejectsReport(rejects=tuple(rejects), rows_read={m_source: n_match_rows, p_source: n_player_rows})
    logger.info(
        f"[ingest] Read {n_match_rows} match rows and {n_player_rows} player rows; "
        f"kept {len(matches)} matches and {len(players)} player rows, rejected {len(rejects)}"
    )
    for r in rejects[:MAX_ERRS_TO_SHOW]:
        logger.warning(f"[ingest] {r.source}:{r.line}: {r.reason} ({r.detail})")
    if len(rejects) > MAX_ERRS_TO_SHOW:
        logger.warning(f"[ingest] ... and {len(rejects) - MAX_ERRS_TO_SHOW} more rejects")

    if report.rate() > max_reject_rate:
        raise DataQualityError(
            f"reject rate {report.rate():.2%} exceeds threshold {max_reject_rate:.2%}", rejects=report
        )

    matches_df = _records_frame(list(matches.values()), MATCH_COLUMNS + ("queue_subtype",))
    players_df = _records_frame(players, PLAYER_MATCH_COLUMNS)
    return TelemetryTables(matches=matches_df, player_matches=players_df, rejects=report)


def rejects_frame(report: RejectsReport) -> pd.DataFrame:
    return pd.DataFrame(
        [r.model_dump() for r in report.rejects], columns=["source", "line", "reason", "detail"]
    )


# ── filtering ───────────────────────────────

@singledispatch
def filter_competitive(data, settings: FilterSettings = FilterSettings()):
    raise TypeError(f"Cannot filter {type(data).__name__}")


@filter_competitive.register
def _filter_matches(data: pd.DataFrame, settings: FilterSettings = FilterSettings()) -> pd.DataFrame:
    """Keep ranked five-versus-five matches. Returns a new frame."""
    keep = (data["queue_type"] == settings.queue_type) & (data["map_mode"] == settings.map_mode)
    return data.loc[keep].reset_index(drop=True)


@filter_competitive.register
def _filter_tables(data: TelemetryTables, settings: FilterSettings = FilterSettings()) -> TelemetryTables:
    matches = _filter_matches(data.matches, settings)
    players = data.player_matches[data.player_matches["match_id"].isin(matches["match_id"])]
    logger.info(f"[ingest] Competitive filter kept {len(matches)} of {len(data.matches)} matches")
    return replace(data, matches=matches, player_matches=players.reset_index(drop=True))


# ── patches and champions ───────────────────

def build_patch_timeline(matches: pd.DataFrame) -> PatchTimeline:
    """Distinct patches in numeric ``(major, minor)`` order with first-seen timestamps."""
    first_seen: dict[PatchVersion, int] = {}
    if len(matches):
        for raw, start in matches.groupby("patch", sort=False)["start_time"].min().items():
            try:
                version = PatchVersion.parse(raw)
            except ValueError as e:
                raise IngestionError(f"unparsable patch version {raw!r}") from e
            first_seen[version] = min(int(start), first_seen.get(version, int(start)))

    versions = sorted(first_seen)
    try:
        timeline = PatchTimeline(versions=tuple(versions), first_seen=tuple(first_seen[v] for v in versions))
    except ValidationError as e:
        raise IngestionError(f"inconsistent patch timeline: {e.errors()[0]['msg']}") from e
    logger.info(f"[ingest] Patch timeline has {len(versions)} versions")
    return timeline


def top_champions(player_matches: pd.DataFrame, k: int, catalog: ChampionCatalog | None = None) -> list[str]:
    """
    Champions by pick count, most picked first; ties broken by name ascending.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    counts = player_matches["champion"].value_counts()

    def name(cid: str) -> str:
        return catalog.name_of(cid) if catalog is not None and cid in catalog else cid

    ranked = sorted(counts.index, key=lambda cid: (-int(counts[cid]), name(cid), cid))
    if k > len(ranked):
        logger.warning(f"[ingest] Requested top {k} champions but only {len(ranked)} are played; returning all")
    return ranked[:k]
