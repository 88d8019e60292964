from __future__ import annotations

import functools
import re
from collections.abc import Mapping
from typing import Literal

from pydantic import BaseModel, Field, NonNegativeInt, field_validator, model_serializer, model_validator

CHAMPION_TYPES: tuple[str, ...] = (
    "controller", "fighter", "mage", "marksman", "slayer", "tank", "unique",
)
ChampionType = Literal["controller", "fighter", "mage", "marksman", "slayer", "tank", "unique"]
Team = Literal["blue", "red"]

_PATCH_RE = re.compile(r"^(\d+)\.(\d+)$")


# ── Patches ──────────────────────────────────

@functools.total_ordering
class PatchVersion(BaseModel):
    major: NonNegativeInt
    minor: NonNegativeInt

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @classmethod
    def parse(cls, raw: str | Mapping | PatchVersion) -> PatchVersion:
        """Strict ``"X.Y"`` parser; anything else raises ``ValueError``."""
        if isinstance(raw, PatchVersion):
            return raw
        if isinstance(raw, Mapping):
            return cls(**raw)
        m = _PATCH_RE.match(str(raw).strip())
        if m is None:
            raise ValueError(f"patch version must look like '<int>.<int>', got {raw!r}")
        return cls(major=int(m.group(1)), minor=int(m.group(2)))

    @model_validator(mode="before")
    @classmethod
    def _from_string(cls, data):
        if isinstance(data, str):
            m = _PATCH_RE.match(data.strip())
            if m is None:
                raise ValueError(f"patch version must look like '<int>.<int>', got {data!r}")
            return {"major": int(m.group(1)), "minor": int(m.group(2))}
        return data

    @model_serializer
    def _as_string(self) -> str:
        return str(self)

    def key(self) -> tuple[int, int]:
        return self.major, self.minor

    def __lt__(self, other: PatchVersion) -> bool:
        if not isinstance(other, PatchVersion):
            return NotImplemented
        return self.key() < other.key()

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}"


PatchPair = tuple[PatchVersion, PatchVersion]


def pair_label(pair: PatchPair) -> str:
    return f"{pair[0]}-{pair[1]}"


class PatchTimeline(BaseModel):
    versions: tuple[PatchVersion, ...]
    first_seen: tuple[int, ...]  # unix seconds, aligned with versions

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @model_validator(mode="after")
    def _ordered(self) -> PatchTimeline:
        if len(self.versions) != len(self.first_seen):
            raise ValueError("versions and first_seen must have the same length")
        for a, b in zip(self.versions, self.versions[1:]):
            if not a < b:
                raise ValueError(f"timeline must be strictly ordered, got {a} before {b}")
        for (va, ta), (vb, tb) in zip(zip(self.versions, self.first_seen), zip(self.versions[1:], self.first_seen[1:])):
            if tb < ta:
                raise ValueError(f"patch {vb} first seen before {va}")
        return self

    def __len__(self) -> int:
        return len(self.versions)

    def pairs(self) -> list[PatchPair]:
        """Consecutive ``(w_t, w_{t+1})`` pairs in timeline order."""
        return list(zip(self.versions, self.versions[1:]))

    def release_time(self, version: PatchVersion) -> int:
        return self.first_seen[self.versions.index(version)]


# ── Champions ──────────────────────────────────

class ChampionInfo(BaseModel):
    name: str
    champion_type: ChampionType

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class ChampionCatalog(BaseModel):
    champions: Mapping[str, ChampionInfo]  # champion id to metadata

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    def __contains__(self, champion_id: object) -> bool:
        return champion_id in self.champions

    def ids(self) -> list[str]:
        """Champion ids ordered by name, the order used for frame columns."""
        return sorted(self.champions, key=lambda cid: (self.champions[cid].name, cid))

    def name_of(self, champion_id: str) -> str:
        return self.champions[champion_id].name

    def type_of(self, champion_id: str) -> str:
        return self.champions[champion_id].champion_type

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.champions)))


# ── Telemetry rows ─────────────────────────────

def _empty_to_none(value):
    if value is None:
        return None
    if isinstance(value, str) and not value.strip():
        return None
    return value


class MatchRecord(BaseModel):
    match_id: str
    start_time: NonNegativeInt  # unix seconds, UTC
    duration: int = Field(gt=0)  # seconds
    patch: PatchVersion
    queue_type: Literal["ranked", "normal", "other"]
    map_mode: Literal["five_v_five", "three_v_three", "other"]
    season_id: int
    winning_team: Team
    queue_subtype: str | None = None  # pass-through, never filtered on

    model_config = dict(extra="ignore", frozen=True)

    @field_validator("patch", mode="before")
    def _parse_patch(cls, value):
        return PatchVersion.parse(value)

    @field_validator("queue_subtype", mode="before")
    def _optional_subtype(cls, value):
        return _empty_to_none(value)


class PlayerMatchRecord(BaseModel):
    match_id: str
    user_id: str
    team: Team
    champion: str
    role: str
    lane: str
    kills: NonNegativeInt
    deaths: NonNegativeInt
    assists: NonNegativeInt
    gold_earned: NonNegativeInt
    gold_spent: NonNegativeInt
    champ_level: int = Field(ge=1, le=18)
    highest_prev_season_tier: str | None = None

    model_config = dict(extra="ignore", frozen=True)

    @field_validator("highest_prev_season_tier", mode="before")
    def _optional_tier(cls, value):
        return _empty_to_none(value)


MATCH_COLUMNS: tuple[str, ...] = (
    "match_id", "start_time", "duration", "patch", "queue_type", "map_mode", "season_id", "winning_team",
)
PLAYER_MATCH_COLUMNS: tuple[str, ...] = (
    "match_id", "user_id", "team", "champion", "role", "lane", "kills", "deaths", "assists",
    "gold_earned", "gold_spent", "champ_level", "highest_prev_season_tier",
)
CHAMPION_COLUMNS: tuple[str, ...] = ("champion_id", "name", "champion_type")

COUNT_FIELDS = frozenset({"kills", "deaths", "assists", "gold_earned", "gold_spent"})


# ── Rejects ──────────────────────────────────

class RejectRecord(BaseModel):
    source: str  # file name
    line: int  # 1-based line in the file, header is line 1
    reason: str
    detail: str = ""

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class RejectsReport(BaseModel):
    rejects: tuple[RejectRecord, ...] = ()
    rows_read: Mapping[str, int] = Field(default_factory=dict)  # source to data rows seen

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    def rate(self) -> float:
        total = sum(self.rows_read.values())
        return len(self.rejects) / total if total else 0.0

    def count_by_reason(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.rejects:
            counts[r.reason] = counts.get(r.reason, 0) + 1
        return dict(sorted(counts.items()))
