"""
fit.py - greedy causal tree growth.

At every node the candidate splits of every feature are scored on the
training rows from prefix sums over the rows sorted by that feature. Only the
best admissible split is tested: its child-effect difference must be
significant on the training rows and replicate (same sign, significant) on
the validation rows held out once at the root. Reported node effects use all
rows of the node.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from patch_hte.config.settings import TreeConfig
from patch_hte.data.frames import TreatmentFrame
from patch_hte.data.trees import CausalTree, SplitRule, TreeNode
from patch_hte.errors import InsufficientArmError, TreeError
from patch_hte.services.causal_tree.stats import difference_test, estimate_effect

logger = logging.getLogger(__name__)

SCORE_RTOL = 1e-9  # scores this close to the best are ties


@dataclass(frozen=True)
class _Candidate:
    score: float
    feature: str
    threshold: float
    column: int


def candidate_thresholds(values: np.ndarray, max_candidates: int) -> np.ndarray:
    """
    Midpoints between adjacent distinct values, thinned to at most
    *max_candidates* picked at evenly spaced quantiles. A 0/1 feature yields
    the single threshold 0.5.
    """
    distinct = np.unique(values)
    if len(distinct) < 2:
        return np.empty(0)
    mids = distinct[:-1] + (distinct[1:] - distinct[:-1]) / 2
    if len(mids) <= max_candidates:
        return mids
    levels = np.quantile(values, np.arange(1, max_candidates + 1) / (max_candidates + 1))
    pos = np.clip(np.searchsorted(distinct, levels, side="right"), 1, len(distinct) - 1)
    return np.unique(mids[pos - 1])


def _moments(n: np.ndarray, s: np.ndarray, ss: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased variance from counts, sums and sums of squares (NaN below two rows)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = np.where(n > 0, s / n, np.nan)
        var = np.where(n > 1, np.maximum(ss - s * mean, 0.0) / (n - 1), np.nan)
    return mean, var


class _Grower:
    def __init__(self, frame: TreatmentFrame, config: TreeConfig, seed: int) -> None:
        self.x, self.w, self.y = frame.x, frame.w, frame.y
        self.names = frame.feature_names
        self.config = config
        n = frame.n_rows
        self.min_leaf = max(1, math.ceil(round(config.min_leaf_fraction * n, 9)))
        self.min_arm = max(config.min_arm_count, 2)

        # the held-out rows depend on (n, seed) only, never on w or y
        rng = np.random.Generator(np.random.PCG64(seed))
        self.is_validation = np.zeros(n, dtype=bool)
        self.is_validation[rng.permutation(n)[: int(round(n * config.validation_fraction))]] = True

    def grow(self, idx: np.ndarray, depth: int) -> TreeNode:
        w, y = self.w[idx], self.y[idx]
        effect = estimate_effect(y[w == 1], y[w == 0])
        if depth < self.config.max_depth:
            best = self._best_split(idx)
            if best is not None and self._passes_gate(idx, best, depth):
                goes_left = self.x[idx, best.column] >= best.threshold
                return TreeNode(
                    effect=effect,
                    split=SplitRule(feature=best.feature, threshold=best.threshold),
                    left=self.grow(idx[goes_left], depth + 1),
                    right=self.grow(idx[~goes_left], depth + 1),
                    depth=depth,
                )
        return TreeNode(effect=effect, depth=depth)

    # ── split search ───────────────────────────
    def _admissible(self, idx: np.ndarray, column: int, thresholds: np.ndarray) -> np.ndarray:
        """Size constraints, checked on all rows of the node."""
        w = self.w[idx]
        ok = np.ones(len(thresholds), dtype=bool)
        n_right = np.zeros(len(thresholds), dtype=np.int64)
        for arm in (0, 1):
            xs = np.sort(self.x[idx[w == arm], column])
            right = np.searchsorted(xs, thresholds, side="left")
            ok &= (right >= self.min_arm) & (len(xs) - right >= self.min_arm)
            n_right += right
        return ok & (n_right >= self.min_leaf) & (len(idx) - n_right >= self.min_leaf)

    def _scores(self, train: np.ndarray, column: int, thresholds: np.ndarray) -> np.ndarray:
        w = self.w[train]
        n, se2, tau = {}, {}, {}
        for side in ("left", "right"):
            n[side] = np.zeros(len(thresholds))
            se2[side] = np.zeros(len(thresholds))
            tau[side] = np.zeros(len(thresholds))

        for arm, sign in ((1, 1.0), (0, -1.0)):
            rows = train[w == arm]
            order = np.argsort(self.x[rows, column], kind="mergesort")
            xs = self.x[rows, column][order]
            ys = self.y[rows][order]
            ys = ys - ys.mean()  # arm offsets cancel in every difference used below
            cs = np.concatenate(([0.0], np.cumsum(ys)))
            css = np.concatenate(([0.0], np.cumsum(ys * ys)))

            pos = np.searchsorted(xs, thresholds, side="left")
            parts = {
                "right": (pos, cs[pos], css[pos]),
                "left": (len(xs) - pos, cs[-1] - cs[pos], css[-1] - css[pos]),
            }
            for side, (count, s, ss) in parts.items():
                count = count.astype(np.float64)
                mean, var = _moments(count, s, ss)
                n[side] += count
                with np.errstate(divide="ignore", invalid="ignore"):
                    se2[side] += var / count
                tau[side] += sign * mean

        total = n["left"] + n["right"]
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.config.split_criterion == "heterogeneity":
                return -(n["left"] * n["right"] / total**2) * (tau["left"] - tau["right"]) ** 2
            return (n["left"] * se2["left"] + n["right"] * se2["right"]) / total

    def _best_split(self, idx: np.ndarray) -> _Candidate | None:
        train = idx[~self.is_validation[idx]]
        candidates: list[_Candidate] = []
        for column, name in enumerate(self.names):
            thresholds = candidate_thresholds(self.x[idx, column], self.config.candidate_thresholds_per_feature)
            if not len(thresholds):
                continue
            ok = self._admissible(idx, column, thresholds)
            if not ok.any():
                continue
            scores = self._scores(train, column, thresholds[ok])
            for score, t in zip(scores, thresholds[ok]):
                if np.isfinite(score):
                    candidates.append(_Candidate(float(score), name, float(t), column))
        if not candidates:
            return None
        best = min(c.score for c in candidates)
        tied = [c for c in candidates if c.score <= best + SCORE_RTOL * abs(best)]
        return min(tied, key=lambda c: (c.feature, c.threshold))

    # ── significance gate ──────────────────────
    def _child_difference(self, rows: np.ndarray, split: _Candidate) -> tuple[float, float] | None:
        goes_left = self.x[rows, split.column] >= split.threshold
        w, y = self.w[rows], self.y[rows]
        try:
            left = estimate_effect(y[goes_left & (w == 1)], y[goes_left & (w == 0)])
            right = estimate_effect(y[~goes_left & (w == 1)], y[~goes_left & (w == 0)])
        except InsufficientArmError:
            return None
        return difference_test(left, right)

    def _passes_gate(self, idx: np.ndarray, split: _Candidate, depth: int) -> bool:
        alpha = self.config.alpha
        held_out = self.is_validation[idx]
        on_train = self._child_difference(idx[~held_out], split)
        if on_train is None or on_train[1] >= alpha:
            return False
        on_validation = self._child_difference(idx[held_out], split)
        if on_validation is None:
            return False
        replicated = np.sign(on_validation[0]) == np.sign(on_train[0]) and on_validation[1] < alpha
        logger.debug(
            f"[tree] depth {depth}: {split.feature} >= {split.threshold:.6g} "
            f"train p={on_train[1]:.3g}, validation p={on_validation[1]:.3g}, accepted={replicated}"
        )
        return bool(replicated)


def fit(frame: TreatmentFrame, config: TreeConfig | None = None, *, seed: int | None = None) -> CausalTree:
    """
    Grow a causal tree on *frame*.

    *seed* (default ``config.seed``) picks the validation rows; together with
    the frame content and the config it fully determines the tree.

    Raises:
        TreeError: an arm of the frame is smaller than ``max(min_arm_count, 2)``.
    """
    config = config or TreeConfig()
    seed = config.seed if seed is None else seed
    floor = max(config.min_arm_count, 2)
    if not frame.is_fittable(floor):
        raise TreeError(f"unfittable frame: arm sizes {frame.arm_sizes()} below the minimum of {floor}")

    root = _Grower(frame, config, seed).grow(np.arange(frame.n_rows), 0)
    tree = CausalTree(
        root=root,
        config=config.model_copy(update={"seed": seed}),
        feature_schema=frame.schema,
        frame_sha256=frame.fingerprint(),
        seed=seed,
        meta=frame.meta,
    )
    logger.info(
        f"[tree] Fitted {len(tree.leaves())} leaves (depth {tree.depth()}) on {frame.n_rows} rows; "
        f"root tau={root.effect.tau:.4g}, p={root.effect.p_value:.3g}"
    )
    return tree
