"""
analysis.py - derived analyses over telemetry and fitted trees.

ATE and win-rate series across the patch timeline, their correlations,
binned heatmaps, split-weight feature importance and effect gaps. Every
function is a read-only fold over its inputs; the ``write_*`` helpers turn
the results into the report CSVs.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping
from itertools import combinations
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from patch_hte.config.settings import BinningSpec
from patch_hte.data.models import PatchTimeline, PatchVersion, pair_label
from patch_hte.data.reports import (
    AteCell,
    AteSeries,
    Correlation,
    EffectGap,
    EffectGapReport,
    FeatureImportanceReport,
    FeatureWeight,
    HeatmapTable,
    WinRateCell,
    WinRateSeries,
)
from patch_hte.data.trees import CausalTree
from patch_hte.errors import AnalysisError, InsufficientArmError
from patch_hte.services.causal_tree import estimate_effect
from patch_hte.services.features import FEATURE_COLUMNS, percentile_bins
from patch_hte.services.ingestion import TelemetryTables
from patch_hte.utils.files import write_csv

logger = logging.getLogger(__name__)

Z_95 = 1.959963984540054


def analysis_rows(tables: TelemetryTables, features: pd.DataFrame | None = None) -> pd.DataFrame:
    """Player rows with match metadata, a ``win`` flag and (optionally) the raw derived features."""
    rows = tables.with_patch()
    rows["win"] = (rows["team"] == rows["winning_team"]).astype("int64")
    if features is not None:
        rows = rows.merge(features[["user_id", "match_id", *FEATURE_COLUMNS]], on=["user_id", "match_id"], how="inner")
    return rows


def _outcome(rows: pd.DataFrame, outcome: str) -> pd.Series:
    if outcome not in rows.columns:
        raise AnalysisError(f"unknown outcome column {outcome!r}")
    return rows[outcome].astype("float64")


# ── series ──────────────────────────────────

def ate_series(
    tables: TelemetryTables,
    timeline: PatchTimeline,
    outcome: str = "kills",
    *,
    champion: str | None = None,
) -> AteSeries:
    """
    Difference in mean *outcome* between consecutive patches, over all
    player-match rows (optionally only picks of *champion*).
    """
    if len(timeline) < 2:
        raise AnalysisError("an ATE series needs at least two patches")
    rows = analysis_rows(tables)
    if champion is not None:
        rows = rows[rows["champion"] == champion]
    values = _outcome(rows, outcome)

    cells = []
    for control, treated in timeline.pairs():
        before = values[rows["patch"] == str(control)].to_numpy()
        after = values[rows["patch"] == str(treated)].to_numpy()
        counts = dict(control=control, treated=treated, n_before=len(before), n_after=len(after))
        try:
            e = estimate_effect(after, before)
        except InsufficientArmError:
            logger.info(f"[analysis] ATE {pair_label((control, treated))}: arm too small, cell left empty")
            cells.append(AteCell(**counts))
            continue
        cells.append(AteCell(tau=e.tau, se=e.se, p_value=e.p_value, **counts))
    return AteSeries(outcome=outcome, cells=tuple(cells))


def win_rate_series(tables: TelemetryTables, champion: str) -> WinRateSeries:
    """
    Per patch, the share of team-presence rows for *champion* whose team
    won. A mirror match counts once for each team.
    """
    rows = analysis_rows(tables)
    rows = rows[rows["champion"] == champion].drop_duplicates(["match_id", "team"])
    grouped = rows.groupby("patch")["win"].agg(["sum", "count"])

    cells = [
        WinRateCell(patch=PatchVersion.parse(patch), wins=int(r["sum"]), games=int(r["count"]))
        for patch, r in grouped.iterrows()
        if r["count"] > 0
    ]
    return WinRateSeries(champion=champion, cells=tuple(sorted(cells, key=lambda c: c.patch)))


def correlate(series_a: Mapping | WinRateSeries, series_b: Mapping | WinRateSeries) -> Correlation:
    """
    Pearson correlation over the keys (patches) both series share, with a
    two-sided p-value from the t transform on ``n - 2`` degrees of freedom.
    """
    a = series_a.rates() if isinstance(series_a, WinRateSeries) else dict(series_a)
    b = series_b.rates() if isinstance(series_b, WinRateSeries) else dict(series_b)
    common = sorted(set(a) & set(b))
    n = len(common)
    if n < 3:
        raise AnalysisError(f"correlation needs at least 3 common cells, got {n}")
    x = np.array([a[k] for k in common], dtype=np.float64)
    y = np.array([b[k] for k in common], dtype=np.float64)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise AnalysisError("undefined correlation: a series has zero variance")

    dx, dy = x - x.mean(), y - y.mean()
    r = float(np.clip(np.sum(dx * dy) / math.sqrt(np.sum(dx * dx) * np.sum(dy * dy)), -1.0, 1.0))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 2)))
    return Correlation(r=r, p_value=p, n=n)


def pearson_matrix(series: Iterable[WinRateSeries]) -> pd.DataFrame:
    """Pairwise correlations; pairs without a defined correlation are left out."""
    rows = []
    for a, b in combinations(series, 2):
        try:
            c = correlate(a, b)
        except AnalysisError as e:
            logger.info(f"[analysis] No correlation for {a.champion} vs {b.champion}: {e}")
            continue
        rows.append({"champion_a": a.champion, "champion_b": b.champion, "r": c.r, "p_value": c.p_value, "n": c.n})
    return pd.DataFrame(rows, columns=["champion_a", "champion_b", "r", "p_value", "n"])


# ── heatmaps ────────────────────────────────

def heatmap_table(
    rows: pd.DataFrame,
    binning: BinningSpec,
    timeline: PatchTimeline,
    value: str = "mean_outcome",
    *,
    outcome: str = "kills",
) -> HeatmapTable:
    """
    Bins of ``binning.feature`` (computed on all *rows* pooled) against
    patches (``mean_outcome``) or consecutive patch pairs (``ate``).
    Empty cells are NaN.
    """
    if binning.feature not in rows.columns:
        raise AnalysisError(f"unknown heatmap feature {binning.feature!r}")
    rows = rows[rows["patch"].isin([str(v) for v in timeline.versions])]
    assignment = percentile_bins(rows[binning.feature].to_numpy(dtype=np.float64), binning)
    labels = [assignment.labels[b] for b in sorted(assignment.labels)]
    kept = assignment.bins >= 0
    binned = pd.DataFrame({
        "bin": pd.Categorical.from_codes(assignment.bins[kept], categories=labels),
        "patch": rows["patch"].to_numpy()[kept],
        "y": _outcome(rows, outcome).to_numpy()[kept],
    })

    if value == "mean_outcome":
        columns = [str(v) for v in timeline.versions]
        grouped = binned.groupby(["bin", "patch"], observed=False)["y"]
        values = grouped.mean().unstack().reindex(index=labels, columns=columns)
        counts = grouped.count().unstack().reindex(index=labels, columns=columns).fillna(0).astype("int64")
    elif value == "ate":
        columns = [pair_label(p) for p in timeline.pairs()]
        values = pd.DataFrame(np.nan, index=labels, columns=columns)
        counts = pd.DataFrame(0, index=labels, columns=columns, dtype="int64")
        for label in labels:
            in_bin = binned[binned["bin"] == label]
            for (control, treated), column in zip(timeline.pairs(), columns):
                before = in_bin.loc[in_bin["patch"] == str(control), "y"].to_numpy()
                after = in_bin.loc[in_bin["patch"] == str(treated), "y"].to_numpy()
                counts.loc[label, column] = len(before) + len(after)
                try:
                    values.loc[label, column] = estimate_effect(after, before).tau
                except InsufficientArmError:
                    pass
    else:
        raise AnalysisError(f"unknown heatmap value {value!r}")

    values.index.name = counts.index.name = "bin"
    shares = pd.Series([assignment.shares[b] for b in sorted(assignment.labels)], index=labels, name="share")
    return HeatmapTable(
        feature=binning.feature, value=value, values=values, counts=counts,
        shares=shares, cut_points=assignment.cut_points,
    )


# ── tree summaries ──────────────────────────

def feature_importance(trees: Iterable[CausalTree]) -> FeatureImportanceReport:
    """Split weight: the samples at every internal node, summed per split feature."""
    weights: dict[str, int] = {}
    for tree in trees:
        for node in tree.internal_nodes():
            weights[node.split.feature] = weights.get(node.split.feature, 0) + node.samples
    total = sum(weights.values())
    if not total:
        logger.warning("[analysis] No tree has a split; feature importance is empty")
        return FeatureImportanceReport()
    ranked = sorted(weights.items(), key=lambda kv: (-kv[1], kv[0]))
    return FeatureImportanceReport(
        weights=tuple(FeatureWeight(feature=f, total_weight=w, share=w / total) for f, w in ranked)
    )


def effect_gap(trees: Iterable[CausalTree], feature: str, *, weighted: bool = False) -> EffectGap | None:
    """
    Mean of ``tau(left) - tau(right)`` over every split on *feature*, with a
    normal-approximation 95% interval (absent below two splits). *weighted*
    weights each split by its node's samples.
    """
    gaps, weights = [], []
    for tree in trees:
        for node in tree.internal_nodes():
            if node.split.feature == feature:
                gaps.append(node.left.effect.tau - node.right.effect.tau)
                weights.append(float(node.samples) if weighted else 1.0)
    n = len(gaps)
    if n == 0:
        return None

    g = np.asarray(gaps)
    p = np.asarray(weights) / math.fsum(weights)
    mean = float(np.sum(p * g))
    if n < 2:
        return EffectGap(feature=feature, n_splits=n, mean_gap=mean)
    se = math.sqrt(float(np.sum(p * p * (g - mean) ** 2)) * n / (n - 1))
    return EffectGap(
        feature=feature, n_splits=n, mean_gap=mean,
        ci95_low=min(mean, mean - Z_95 * se), ci95_high=max(mean, mean + Z_95 * se),
    )


def effect_gap_report(
    trees: list[CausalTree],
    features: list[str] | None = None,
    *,
    top: int = 10,
    weighted: bool = False,
) -> EffectGapReport:
    """Effect gaps of *features*, by default the *top* features by split weight."""
    if features is None:
        features = feature_importance(trees).top(top)
    gaps = [g for f in features if (g := effect_gap(trees, f, weighted=weighted)) is not None]
    return EffectGapReport(weighted=weighted, gaps=tuple(gaps))


# ── report files ────────────────────────────

REPORT_COLUMNS: dict[str, list[tuple[str, str]]] = {
    "ate_series.csv": [
        ("control", "earlier patch"), ("treated", "later patch"),
        ("tau", "mean outcome after minus before"), ("se", "Welch standard error"),
        ("p_value", "two-sided Welch t-test"), ("n_before", "rows on the earlier patch"),
        ("n_after", "rows on the later patch"),
    ],
    "win_rates.csv": [
        ("champion", "champion id"), ("patch", "patch version"), ("wins", "team rows won"),
        ("games", "team rows with the champion"), ("rate", "wins / games"),
    ],
    "correlations.csv": [
        ("champion_a", "champion id"), ("champion_b", "champion id"), ("r", "Pearson r of win rates"),
        ("p_value", "two-sided, t transform"), ("n", "common patches"),
    ],
    "heatmap_<feature>_<value>.csv": [
        ("bin", "bin label"), ("share", "population share of the bin"),
        ("<patch or pair>", "cell value, empty when the cell has no rows"),
    ],
    "feature_importance.csv": [
        ("feature", "split feature"), ("total_weight", "samples at splits on the feature"),
        ("share", "total_weight over all splits"),
    ],
    "effect_gaps.csv": [
        ("feature", "split feature"), ("n_splits", "splits on the feature"), ("mean_gap", "mean left minus right effect"),
        ("ci95_low", "lower 95% bound, empty below two splits"), ("ci95_high", "upper 95% bound"),
    ],
}


def report_manifest() -> pd.DataFrame:
    return pd.DataFrame(
        [{"file": f, "column": c, "description": d} for f, cols in REPORT_COLUMNS.items() for c, d in cols],
        columns=["file", "column", "description"],
    )


def write_ate_series(series: AteSeries, path: Path) -> Path:
    df = pd.DataFrame(
        [{"control": str(c.control), "treated": str(c.treated), "tau": c.tau, "se": c.se,
          "p_value": c.p_value, "n_before": c.n_before, "n_after": c.n_after} for c in series.cells],
        columns=[c for c, _ in REPORT_COLUMNS["ate_series.csv"]],
    )
    return write_csv(df, path)


def write_win_rates(series: Iterable[WinRateSeries], path: Path) -> Path:
    df = pd.DataFrame(
        [{"champion": s.champion, "patch": str(c.patch), "wins": c.wins, "games": c.games, "rate": c.rate}
         for s in series for c in s.cells],
        columns=[c for c, _ in REPORT_COLUMNS["win_rates.csv"]],
    )
    return write_csv(df, path)


def write_heatmap(table: HeatmapTable, path: Path) -> Path:
    df = table.values.copy()
    df.insert(0, "share", table.shares.reindex(df.index))
    return write_csv(df.reset_index(), path)


def write_feature_importance(report: FeatureImportanceReport, path: Path) -> Path:
    df = pd.DataFrame([w.model_dump() for w in report.weights], columns=["feature", "total_weight", "share"])
    return write_csv(df, path)


def write_effect_gaps(report: EffectGapReport, path: Path) -> Path:
    df = pd.DataFrame(
        [g.model_dump() for g in report.gaps],
        columns=["feature", "n_splits", "mean_gap", "ci95_low", "ci95_high"],
    )
    return write_csv(df, path)
