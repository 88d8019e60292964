from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from patch_hte.data.models import MATCH_COLUMNS, PLAYER_MATCH_COLUMNS
from patch_hte.services.ingestion import TelemetryTables, load_champion_catalog, load_matches

FIXTURES = Path(__file__).parent / "fixtures"
CHAMPIONS_CSV = FIXTURES / "champions.csv"

PATCHES = ("4.6", "4.7", "4.8")
MATCHES_PER_PATCH = 24
BASE_TIME = 1_400_000_000
MATCH_SPACING = 2_400  # longer than any match, so no user overlaps
TIERS = ("", "bronze", "silver", "gold", "platinum", "diamond")


def match_row(match_id: str, start_time: int, patch: str = "4.6", **overrides) -> dict:
    row = dict(
        match_id=match_id, start_time=start_time, duration=1800, patch=patch,
        queue_type="ranked", map_mode="five_v_five", season_id=4, winning_team="blue",
    )
    row.update(overrides)
    return row


def player_row(match_id: str, user_id: str, champion: str = "Ahri", team: str = "blue", **overrides) -> dict:
    row = dict(
        match_id=match_id, user_id=user_id, team=team, champion=champion, role="solo", lane="mid",
        kills=3, deaths=2, assists=5, gold_earned=11000, gold_spent=10500, champ_level=14,
        highest_prev_season_tier="gold",
    )
    row.update(overrides)
    return row


def make_tables(matches: list[dict], players: list[dict]) -> TelemetryTables:
    """Tables straight from row dicts, skipping CSV validation."""
    m = pd.DataFrame(matches, columns=list(MATCH_COLUMNS))
    m["queue_subtype"] = None
    p = pd.DataFrame(players, columns=list(PLAYER_MATCH_COLUMNS))
    return TelemetryTables(matches=m, player_matches=p)


def synthetic_telemetry(
    patches: tuple[str, ...] = PATCHES, matches_per_patch: int = MATCHES_PER_PATCH, seed: int = 7
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Deterministic 5v5 telemetry drawn from the fixture champion pool."""
    rng = np.random.default_rng(seed)
    champions = pd.read_csv(CHAMPIONS_CSV)["champion_id"].tolist()
    users = [f"u{i:02d}" for i in range(30)]
    matches, players = [], []
    for i in range(len(patches) * matches_per_patch):
        patch = patches[i // matches_per_patch]
        mid = f"m{i:04d}"
        matches.append(match_row(
            mid, BASE_TIME + i * MATCH_SPACING, patch,
            duration=int(rng.integers(1500, 2100)),
            winning_team=str(rng.choice(["blue", "red"])),
        ))
        picks = rng.choice(champions, size=10, replace=False)
        seats = rng.choice(users, size=10, replace=False)
        for j, (champion, user) in enumerate(zip(picks, seats)):
            players.append(player_row(
                mid, str(user), str(champion), "blue" if j < 5 else "red",
                kills=int(rng.integers(0, 12)), deaths=int(rng.integers(0, 10)),
                assists=int(rng.integers(0, 15)), gold_earned=int(rng.integers(6000, 16000)),
                gold_spent=int(rng.integers(5000, 15000)), champ_level=int(rng.integers(8, 19)),
                highest_prev_season_tier=str(rng.choice(TIERS)),
            ))
    return pd.DataFrame(matches), pd.DataFrame(players)


def write_telemetry(directory: Path, matches: pd.DataFrame, players: pd.DataFrame) -> dict[str, Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"matches": directory / "matches.csv", "player_matches": directory / "player_matches.csv"}
    matches.to_csv(paths["matches"], index=False)
    players.to_csv(paths["player_matches"], index=False)
    paths["champions"] = CHAMPIONS_CSV
    return paths


@pytest.fixture
def telemetry_files(tmp_path) -> dict[str, Path]:
    matches, players = synthetic_telemetry()
    return write_telemetry(tmp_path / "input", matches, players)


@pytest.fixture
def catalog():
    return load_champion_catalog(CHAMPIONS_CSV)


@pytest.fixture
def tables(telemetry_files, catalog) -> TelemetryTables:
    return load_matches(telemetry_files["matches"], telemetry_files["player_matches"], catalog)


@pytest.fixture
def run_config(tmp_path, telemetry_files) -> Path:
    """A config file pointing at the fixture telemetry, with small-sample tree settings."""
    doc = {
        "inputs": {k: str(v) for k, v in telemetry_files.items()},
        "top_k_champions": 4,
        "tree": {"min_arm_count": 2, "min_leaf_fraction": 0.1, "max_depth": 3},
        "analysis": {"win_rate_champions": 3},
        "output_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path
