from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from platformdirs import user_cache_dir
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from patch_hte.errors import ConfigError

APP = "patch_hte"

PACKAGE_DIR: Path = Path(__file__).resolve().parent.parent
DEFAULT_SETTINGS_PATH: Path = PACKAGE_DIR / "run_settings.yaml"

# Runs without an explicit output directory land here:
#   <user_cache_dir(APP)>/runs
CACHE_DIR: Path = Path(user_cache_dir(APP)) / "runs"


class TreeConfig(BaseModel):
    """Hyperparameters of a single causal tree fit."""

    min_leaf_fraction: float = Field(0.05, gt=0.0, lt=0.5, description="Minimum node size as a share of root samples")
    max_depth: int = Field(10, ge=0)
    alpha: float = Field(0.05, gt=0.0, lt=1.0, description="Significance level of the split gate")
    min_arm_count: int = Field(10, ge=2, description="Per-arm floor in every child")
    validation_fraction: float = Field(0.25, gt=0.0, lt=0.5)
    candidate_thresholds_per_feature: int = Field(100, ge=1)
    split_criterion: Literal["variance", "heterogeneity"] = "variance"
    seed: int = 0

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class BinningSpec(BaseModel):
    """How a feature is binned for heatmaps.

    With ``special_zero_bin`` the zero values get bin 0 and the cut points are
    computed over the remaining values only.
    """

    feature: str
    special_zero_bin: bool = False
    edges: list[float] = Field(default_factory=lambda: [25.0, 50.0, 75.0])
    edge_kind: Literal["percentile", "threshold"] = "percentile"
    missing: Literal["zero_bin", "exclude"] = "zero_bin"

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @field_validator("edges", mode="after")
    def _strictly_increasing(cls, edges: list[float]) -> list[float]:
        for lo, hi in zip(edges, edges[1:]):
            if not hi > lo:
                raise ValueError(f"binning edges must be strictly increasing, got {edges}")
        return edges

    @model_validator(mode="after")
    def _percentiles_in_range(self) -> BinningSpec:
        if self.edge_kind == "percentile" and any(not 0.0 < e < 100.0 for e in self.edges):
            raise ValueError("percentile edges must lie strictly between 0 and 100")
        return self


class FilterSettings(BaseModel):
    queue_type: str = "ranked"
    map_mode: str = "five_v_five"
    max_reject_rate: float = Field(0.01, ge=0.0, le=1.0)
    window_days: float | None = Field(None, gt=0.0, description="Limit both arms to N days around a release")

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class InputPaths(BaseModel):
    matches: Path | None = None
    player_matches: Path | None = None
    champions: Path | None = None

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class AnalysisToggles(BaseModel):
    ate_series: bool = True
    win_rates: bool = True
    heatmaps: bool = True
    feature_importance: bool = True
    effect_gaps: bool = True
    weighted_gaps: bool = False
    outcome: str = "kills"
    win_rate_champions: int = Field(3, ge=1, description="Top-N champions that get a win-rate series")
    heatmap_values: tuple[Literal["mean_outcome", "ate"], ...] = ("mean_outcome", "ate")
    top_features: int = Field(10, ge=1)
    alpha_display: float = Field(0.05, gt=0.0, le=1.0)

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


def _default_binnings() -> list[BinningSpec]:
    return [
        BinningSpec(feature="timeSinceLastMatch", special_zero_bin=True, missing="exclude"),
        BinningSpec(feature="meanKillsAtStart", special_zero_bin=True),
    ]


class RunConfig(BaseModel):
    """Strongly-typed configuration of one pipeline run."""

    inputs: InputPaths = Field(default_factory=InputPaths)
    filters: FilterSettings = Field(default_factory=FilterSettings)
    top_k_champions: int = Field(25, ge=1)
    gap_threshold: float = Field(900.0, gt=0.0, description="Idle seconds that start a new session")
    tree: TreeConfig = Field(default_factory=TreeConfig)
    binnings: list[BinningSpec] = Field(default_factory=_default_binnings)
    analysis: AnalysisToggles = Field(default_factory=AnalysisToggles)
    output_dir: Path | None = None
    seed: int = 0
    threads: int = Field(1, ge=1)

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @model_validator(mode="before")
    @classmethod
    def _seed_the_tree(cls, data):
        """The run seed is the only seed; ``tree.seed`` always follows it."""
        if not isinstance(data, dict):
            return data
        tree = data.get("tree")
        if isinstance(tree, TreeConfig):
            tree = tree.model_dump()
        elif tree is None:
            tree = {}
        elif not isinstance(tree, dict):
            return data
        return {**data, "tree": {**tree, "seed": data.get("seed", 0)}}

    def with_overrides(self, **flags) -> RunConfig:
        """Apply CLI flags on top of the file values; ``None`` means "not given"."""
        update = {k: v for k, v in flags.items() if v is not None}
        try:
            return self.model_validate({**self.model_dump(), **update})
        except ValidationError as exc:
            raise ConfigError(f"Invalid command-line override:\n{exc}") from exc

    def output_path(self) -> Path:
        return Path(self.output_dir) if self.output_dir is not None else CACHE_DIR / "default"

    def paths_must_exist(self, *names: str) -> None:
        for name in names:
            path = getattr(self.inputs, name)
            if path is None:
                raise ConfigError(f"Input '{name}' is required for this command but not configured")
            if not Path(path).is_file():
                raise ConfigError(f"Input '{name}' not found at '{path}'")


def get_settings(path: Path | str | None = None) -> RunConfig:
    """Return a :class:`RunConfig` loaded from *path*.

    Parameters
    ----------
    path:
        YAML or JSON document (JSON is valid YAML). Defaults to the bundled
        ``run_settings.yaml``.
    """
    path = Path(path) if path is not None else DEFAULT_SETTINGS_PATH
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except FileNotFoundError as exc:
        raise ConfigError(f"Settings file not found at '{path}'. Create it or pass a custom path.") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"Settings file '{path}' is not valid YAML/JSON: {exc}") from exc

    if not isinstance(data, dict):
        raise ConfigError(f"Settings file '{path}' must contain a mapping at the top level")

    try:
        return RunConfig(**data)
    except ValidationError as exc:
        raise ConfigError(f"Invalid settings in '{path}':\n{exc}") from exc
