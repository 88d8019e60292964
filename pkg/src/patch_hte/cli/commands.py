"""
commands.py - one function per subcommand.

Each command takes the effective `RunConfig`, the `RunRecorder` of the run
and the parsed arguments, writes its files below ``config.output_path()`` and
returns the exit code. Failures are raised as `PatchHteError` subclasses and
mapped to exit codes by ``main``.
"""

from __future__ import annotations

import json
import logging
from argparse import Namespace
from pathlib import Path

import pandas as pd

from patch_hte.config.settings import RunConfig
from patch_hte.data.frames import TreatmentFrame, TreatmentMeta
from patch_hte.data.models import PatchPair, PatchVersion, pair_label
from patch_hte.data.trees import CausalTree
from patch_hte.errors import ConfigError, DataQualityError, FrameError, TreeError
from patch_hte.services import analysis
from patch_hte.services.causal_tree import fit, fit_batch, read_tree, trim, verify_tree, write_tree
from patch_hte.services.features import build_player_features, feature_manifest
from patch_hte.services.frames import (
    SkipRecord,
    batch_frames,
    build_player_frame,
    build_team_frame,
    read_frame,
    write_frame,
)
from patch_hte.services.ingestion import (
    TelemetryTables,
    build_patch_timeline,
    filter_competitive,
    load_champion_catalog,
    load_matches,
    rejects_frame,
    top_champions,
)
from patch_hte.services.synthetic import generate, load_spec, oracle_metadata
from patch_hte.utils.files import atomic_write_text, safe_name, write_csv

logger = logging.getLogger(__name__)

TREES_DIR = "trees"
FRAMES_DIR = "frames"
REPORTS_DIR = "reports"
DISPLAY_DIR = "report"


# ── shared loading ──────────────────────────

def _load(config: RunConfig, rec, *, need_catalog: bool = False):
    required = ["matches", "player_matches"] + (["champions"] if need_catalog else [])
    config.paths_must_exist(*required)
    with rec.stage("ingest") as rows:
        catalog = load_champion_catalog(config.inputs.champions) if config.inputs.champions is not None else None
        tables = load_matches(
            config.inputs.matches, config.inputs.player_matches, catalog,
            max_reject_rate=config.filters.max_reject_rate,
        )
        tables = filter_competitive(tables, config.filters)
        rows.update(matches=len(tables.matches), player_matches=len(tables.player_matches),
                    rejects=len(tables.rejects.rejects))
    return tables, catalog


def _features(config: RunConfig, rec, tables: TelemetryTables) -> pd.DataFrame:
    with rec.stage("features") as rows:
        features = build_player_features(tables, config.gap_threshold)
        rows.update(features=len(features))
    return features


def tree_stem(meta: TreatmentMeta | None) -> str:
    if meta is None or meta.scope == "synthetic" or meta.control is None:
        return "tree_synthetic"
    who = "team" if meta.scope == "team" else safe_name(meta.champion or "player")
    return f"tree_{who}_{meta.control}_{meta.treated}"


def _save_tree(config: RunConfig, rec, tree: CausalTree) -> Path:
    verify_tree(tree)
    base = config.output_path() / TREES_DIR / tree_stem(tree.meta)
    rec.wrote(write_tree(tree, base.with_suffix(".json"), "json"))
    rec.wrote(write_tree(tree, base.with_suffix(".dot"), "dot"))
    return base.with_suffix(".json")


def load_trees(out_dir: Path) -> list[CausalTree]:
    paths = sorted((Path(out_dir) / TREES_DIR).glob("tree_*.json"))
    return [read_tree(p) for p in paths]


def parse_pair(text: str) -> PatchPair:
    try:
        control, treated = text.split("-")
        return PatchVersion.parse(control), PatchVersion.parse(treated)
    except ValueError as e:
        raise ConfigError(f"patch pair must look like '<X.Y>-<X.Y>', got {text!r}") from e


# ── ingest ──────────────────────────────────

def cmd_ingest(config: RunConfig, rec, args: Namespace) -> int:
    out = config.output_path()
    try:
        tables, _ = _load(config, rec)
    except DataQualityError as e:
        if e.rejects is not None:
            rec.wrote(write_csv(rejects_frame(e.rejects), out / "rejects.csv"))
        raise

    rec.wrote(write_csv(rejects_frame(tables.rejects), out / "rejects.csv"))
    rec.wrote(write_csv(tables.matches, out / "matches.valid.csv"))
    rec.wrote(write_csv(tables.player_matches, out / "player_matches.valid.csv"))
    timeline = build_patch_timeline(tables.matches)
    timeline_df = pd.DataFrame(
        {"patch": [str(v) for v in timeline.versions], "first_seen": list(timeline.first_seen)},
        columns=["patch", "first_seen"],
    )
    rec.wrote(write_csv(timeline_df, out / "patch_timeline.csv"))
    for reason, count in tables.rejects.count_by_reason().items():
        logger.info(f"[cli] Rejected {count} rows: {reason}")
    return 0


# ── features ────────────────────────────────

def cmd_features(config: RunConfig, rec, args: Namespace) -> int:
    tables, _ = _load(config, rec)
    features = _features(config, rec, tables)
    out = config.output_path()
    rec.wrote(write_csv(features, out / "features.csv", float_format="%.17g"))
    rec.wrote(write_csv(feature_manifest(), out / "features.columns.csv"))
    return 0


# ── fit ─────────────────────────────────────

def _skip(rec, meta_champion: str | None, pair: PatchPair, error: Exception) -> int:
    logger.warning(f"[cli] Skipping {meta_champion or 'team'} {pair_label(pair)}: {error}")
    rec.skipped.append(SkipRecord(champion=meta_champion, control=pair[0], treated=pair[1], reason=str(error)))
    return 0


def _fit_one(config: RunConfig, rec, frame: TreatmentFrame) -> int:
    with rec.stage("fit") as rows:
        tree = fit(frame, config.tree)
        rows.update(frame_rows=frame.n_rows, leaves=len(tree.leaves()))
    _save_tree(config, rec, tree)
    return 0


def cmd_fit(config: RunConfig, rec, args: Namespace) -> int:
    scope: str = args.scope
    out = config.output_path()

    if scope.startswith("frame:"):
        path = Path(scope.removeprefix("frame:"))
        if not path.is_file():
            raise ConfigError(f"frame file not found at '{path}'")
        rec.hash_input("frame", path)
        return _fit_one(config, rec, read_frame(path))

    if scope.startswith("team:"):
        tables, catalog = _load(config, rec, need_catalog=True)
        pair = parse_pair(scope.removeprefix("team:"))
        timeline = build_patch_timeline(tables.matches)
        try:
            with rec.stage("frames"):
                frame = build_team_frame(tables, catalog, pair, timeline=timeline,
                                         window_days=config.filters.window_days)
            rec.wrote(write_frame(frame, out / FRAMES_DIR))
            return _fit_one(config, rec, frame)
        except (FrameError, TreeError) as e:
            return _skip(rec, None, pair, e)

    if scope.startswith("player:"):
        champion, _, pair_text = scope.removeprefix("player:").rpartition(":")
        if not champion:
            raise ConfigError(f"player scope must look like 'player:<champion>:<X.Y>-<X.Y>', got {scope!r}")
        pair = parse_pair(pair_text)
        tables, catalog = _load(config, rec)
        features = _features(config, rec, tables)
        timeline = build_patch_timeline(tables.matches)
        try:
            with rec.stage("frames"):
                frame = build_player_frame(tables, features, champion, pair, catalog=catalog, timeline=timeline,
                                           window_days=config.filters.window_days)
            rec.wrote(write_frame(frame, out / FRAMES_DIR))
            return _fit_one(config, rec, frame)
        except (FrameError, TreeError) as e:
            return _skip(rec, champion, pair, e)

    if scope == "batch":
        tables, catalog = _load(config, rec)
        features = _features(config, rec, tables)
        timeline = build_patch_timeline(tables.matches)
        champions = top_champions(tables.player_matches, config.top_k_champions, catalog)
        with rec.stage("frames") as rows:
            frames = [
                (f"{champion}|{pair[0]}|{pair[1]}", frame)
                for champion, pair, frame in batch_frames(
                    tables, features, champions, timeline,
                    min_arm=config.tree.min_arm_count, window_days=config.filters.window_days,
                    skipped=rec.skipped,
                )
            ]
            rows.update(frames=len(frames), skipped=len(rec.skipped))
        with rec.stage("fit") as rows:
            trees = fit_batch(frames, config.tree, seed=config.seed, threads=config.threads)
            rows.update(trees=len(trees))
        for _, tree in trees:
            _save_tree(config, rec, tree)
        return 0

    raise ConfigError(f"unknown fit scope {scope!r}; use team:<pair>, player:<champion>:<pair>, batch or frame:<csv>")


# ── analyze ─────────────────────────────────

def cmd_analyze(config: RunConfig, rec, args: Namespace) -> int:
    toggles = config.analysis
    out = config.output_path() / REPORTS_DIR
    tables, catalog = _load(config, rec)
    features = _features(config, rec, tables)
    timeline = build_patch_timeline(tables.matches)

    with rec.stage("analyze") as rows:
        if toggles.ate_series and len(timeline) >= 2:
            series = analysis.ate_series(tables, timeline, toggles.outcome)
            rec.wrote(analysis.write_ate_series(series, out / "ate_series.csv"))
            rows["ate_cells"] = len(series.cells)

        if toggles.win_rates and len(tables.player_matches):
            champions = top_champions(tables.player_matches, toggles.win_rate_champions, catalog)
            win_rates = [analysis.win_rate_series(tables, c) for c in champions]
            rec.wrote(analysis.write_win_rates(win_rates, out / "win_rates.csv"))
            rec.wrote(write_csv(analysis.pearson_matrix(win_rates), out / "correlations.csv"))

        if toggles.heatmaps:
            pooled = analysis.analysis_rows(tables, features)
            for binning in config.binnings:
                for value in toggles.heatmap_values:
                    if value == "ate" and len(timeline) < 2:
                        continue
                    table = analysis.heatmap_table(pooled, binning, timeline, value, outcome=toggles.outcome)
                    rec.wrote(analysis.write_heatmap(table, out / f"heatmap_{safe_name(binning.feature)}_{value}.csv"))

        trees = load_trees(config.output_path())
        rows["trees"] = len(trees)
        if not trees and (toggles.feature_importance or toggles.effect_gaps):
            logger.warning("[cli] No fitted trees found; importance and effect-gap reports are empty")
        if toggles.feature_importance:
            importance = analysis.feature_importance(trees)
            rec.wrote(analysis.write_feature_importance(importance, out / "feature_importance.csv"))
        if toggles.effect_gaps:
            gaps = analysis.effect_gap_report(trees, top=toggles.top_features, weighted=toggles.weighted_gaps)
            rec.wrote(analysis.write_effect_gaps(gaps, out / "effect_gaps.csv"))

    rec.wrote(write_csv(analysis.report_manifest(), out / "reports.columns.csv"))
    return 0


# ── synth ───────────────────────────────────

def cmd_synth(config: RunConfig, rec, args: Namespace) -> int:
    spec_path = Path(args.spec)
    spec = load_spec(spec_path)
    rec.hash_input("spec", spec_path)
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    with rec.stage("synth") as rows:
        frame, _ = generate(spec)
        rows.update(units=frame.n_rows)
    out = config.output_path() / "synthetic"
    csv_path = rec.wrote(write_frame(frame, out, "frame_synthetic.csv"))
    rec.wrote(csv_path.with_suffix(".json"))
    oracle_path = out / "oracle.json"
    atomic_write_text(oracle_path, json.dumps(oracle_metadata(spec), indent=2) + "\n")
    rec.wrote(oracle_path)
    logger.info(f"[cli] Synthetic frame written to {csv_path} (sha256 {frame.fingerprint()[:12]})")
    return 0


# ── report ──────────────────────────────────

def _summary_lines(trees: list[CausalTree], top: int, weighted: bool) -> list[str]:
    importance = analysis.feature_importance(trees)
    gaps = {g.feature: g for g in analysis.effect_gap_report(trees, top=top, weighted=weighted).gaps}
    lines = [f"{len(trees)} trees, {sum(len(t.internal_nodes()) for t in trees)} splits", ""]
    lines.append(f"Top {top} features by split weight")
    for w in importance.weights[:top]:
        line = f"  {w.feature:<32} share {w.share:7.2%}  weight {w.total_weight}"
        gap = gaps.get(w.feature)
        if gap is not None:
            line += f"  gap {gap.mean_gap:+.4g}"
            if gap.ci95_low is not None:
                line += f" [{gap.ci95_low:+.4g}, {gap.ci95_high:+.4g}]"
        lines.append(line)
    return lines


def cmd_report(config: RunConfig, rec, args: Namespace) -> int:
    toggles = config.analysis
    trees = load_trees(config.output_path())
    out = config.output_path() / DISPLAY_DIR
    with rec.stage("report") as rows:
        for tree in trees:
            display = trim(tree, toggles.alpha_display)
            rec.wrote(write_tree(display, out / f"{tree_stem(tree.meta)}.dot", "dot"))
        rows.update(trees=len(trees))
    if not trees:
        logger.warning("[cli] No fitted trees found; the report is empty")
    summary = out / "summary.txt"
    atomic_write_text(summary, "\n".join(_summary_lines(trees, toggles.top_features, toggles.weighted_gaps)) + "\n")
    rec.wrote(summary)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "fit": cmd_fit,
    "analyze": cmd_analyze,
    "synth": cmd_synth,
    "report": cmd_report,
}
