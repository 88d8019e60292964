from __future__ import annotations

from dataclasses import dataclass

import pandas as pd
from pydantic import BaseModel, Field, NonNegativeInt, model_validator

from patch_hte.data.models import PatchPair, PatchVersion


class AteCell(BaseModel):
    control: PatchVersion
    treated: PatchVersion
    tau: float | None = None  # None when an arm is too small
    se: float | None = None
    p_value: float | None = None
    n_before: NonNegativeInt = 0
    n_after: NonNegativeInt = 0

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @property
    def pair(self) -> PatchPair:
        return self.control, self.treated

    @property
    def missing(self) -> bool:
        return self.tau is None


class AteSeries(BaseModel):
    outcome: str
    cells: tuple[AteCell, ...]

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class WinRateCell(BaseModel):
    patch: PatchVersion
    wins: NonNegativeInt
    games: int = Field(gt=0)

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @model_validator(mode="after")
    def _wins_within_games(self) -> WinRateCell:
        if self.wins > self.games:
            raise ValueError("wins cannot exceed games")
        return self

    @property
    def rate(self) -> float:
        return self.wins / self.games


class WinRateSeries(BaseModel):
    champion: str
    cells: tuple[WinRateCell, ...]

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    def rates(self) -> dict[PatchVersion, float]:
        return {c.patch: c.rate for c in self.cells}


class Correlation(BaseModel):
    r: float
    p_value: float
    n: int

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class EffectGap(BaseModel):
    feature: str
    n_splits: int = Field(ge=1)
    mean_gap: float
    ci95_low: float | None = None  # None with fewer than two splits
    ci95_high: float | None = None

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @model_validator(mode="after")
    def _ci_brackets_mean(self) -> EffectGap:
        if self.ci95_low is not None and not self.ci95_low <= self.mean_gap <= self.ci95_high:
            raise ValueError("confidence interval must contain the mean gap")
        return self

    def excludes_zero(self) -> bool:
        return self.ci95_low is not None and (self.ci95_low > 0 or self.ci95_high < 0)


class EffectGapReport(BaseModel):
    weighted: bool = False
    gaps: tuple[EffectGap, ...] = ()

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class FeatureWeight(BaseModel):
    feature: str
    total_weight: NonNegativeInt
    share: float = Field(ge=0.0, le=1.0)

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class FeatureImportanceReport(BaseModel):
    weights: tuple[FeatureWeight, ...] = ()  # ordered by weight, heaviest first

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    def top(self, k: int) -> list[str]:
        return [fw.feature for fw in self.weights[:k]]

    def share_of(self, feature: str) -> float:
        return next((fw.share for fw in self.weights if fw.feature == feature), 0.0)


@dataclass(frozen=True)
class HeatmapTable:
    """Bins x patches (mean mode) or bins x patch pairs (ate mode).

    ``values`` holds NaN for empty cells; ``counts`` the rows behind each cell;
    ``shares`` the population share of every bin.
    """

    feature: str
    value: str
    values: pd.DataFrame
    counts: pd.DataFrame
    shares: pd.Series
    cut_points: tuple[float, ...]
