"""
synthetic.py - treatment frames with a planted, known effect function.

Randomness comes from one ``numpy.random.SeedSequence(spec.seed)`` spawned
into three ``PCG64`` streams, in this order: features, assignment, noise.
The same spec therefore always produces the same frame.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from patch_hte.data.frames import FeatureSpec, TreatmentFrame, TreatmentMeta
from patch_hte.data.trees import CausalTree
from patch_hte.errors import SyntheticSpecError
from patch_hte.services.causal_tree import leaf_boxes, predict_many

logger = logging.getLogger(__name__)

BIT_GENERATOR = "PCG64"
STREAMS = ("features", "assignment", "noise")

Bounds = tuple[float | None, float | None]  # None = unbounded on that side


class EffectBox(BaseModel):
    """Axis-aligned region ``low <= x < high`` per named feature; unnamed features are unbounded."""

    bounds: dict[str, Bounds] = Field(default_factory=dict)
    effect: float

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @model_validator(mode="after")
    def _non_empty_intervals(self) -> EffectBox:
        for name, (low, high) in self.bounds.items():
            if low is not None and high is not None and not low < high:
                raise ValueError(f"empty interval for {name}: [{low}, {high})")
        return self

    def contains(self, values: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        inside = np.ones(n, dtype=bool)
        for name, (low, high) in self.bounds.items():
            if low is not None:
                inside &= values[name] >= low
            if high is not None:
                inside &= values[name] < high
        return inside


class SyntheticSpec(BaseModel):
    n_units: int = Field(10_000, ge=4)
    n_continuous: int = Field(2, ge=0)
    n_binary: int = Field(0, ge=0)
    baseline: Literal["constant", "linear", "piecewise"] = "constant"
    intercept: float = 0.0
    coefficients: dict[str, float] = Field(default_factory=dict)  # linear baseline
    baseline_boxes: tuple[EffectBox, ...] = ()  # piecewise baseline, 0 outside every box
    effect_boxes: tuple[EffectBox, ...] = (EffectBox(effect=0.0),)
    p_w: float = Field(0.5, gt=0.0, lt=1.0)
    noise_sigma: float = Field(0.5, ge=0.0)
    outcome: Literal["continuous", "binary"] = "continuous"
    seed: int = 0

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @model_validator(mode="after")
    def _known_features(self) -> SyntheticSpec:
        if self.n_continuous + self.n_binary == 0:
            raise ValueError("a spec needs at least one feature")
        names = set(self.feature_names)
        referenced = set(self.coefficients)
        for box in self.effect_boxes + self.baseline_boxes:
            referenced |= set(box.bounds)
        unknown = sorted(referenced - names)
        if unknown:
            raise ValueError(f"unknown features {unknown}")
        return self

    @property
    def continuous_names(self) -> list[str]:
        return [f"x{i + 1}" for i in range(self.n_continuous)]

    @property
    def binary_names(self) -> list[str]:
        return [f"b{i + 1}" for i in range(self.n_binary)]

    @property
    def feature_names(self) -> list[str]:
        return self.continuous_names + self.binary_names

    def schema(self) -> tuple[FeatureSpec, ...]:
        return tuple(
            [FeatureSpec(name=n, kind="continuous") for n in self.continuous_names]
            + [FeatureSpec(name=n, kind="binary") for n in self.binary_names]
        )

    @classmethod
    def two_box(
        cls, *, cut: float = 0.5, high: float = 1.0, low: float = -1.0, feature: str = "x1", **kwargs
    ) -> SyntheticSpec:
        """``tau = high`` where ``feature >= cut`` and ``low`` elsewhere."""
        return cls(
            effect_boxes=(
                EffectBox(bounds={feature: (cut, None)}, effect=high),
                EffectBox(bounds={feature: (None, cut)}, effect=low),
            ),
            **kwargs,
        )

    @classmethod
    def null(cls, **kwargs) -> SyntheticSpec:
        return cls(effect_boxes=(EffectBox(effect=0.0),), **kwargs)


def load_spec(path: Path | str) -> SyntheticSpec:
    path = Path(path)
    try:
        return SyntheticSpec.model_validate_json(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise SyntheticSpecError(f"Synthetic spec not found at '{path}'") from exc
    except ValidationError as exc:
        raise SyntheticSpecError(f"Invalid synthetic spec '{path}':\n{exc}") from exc


# ── oracle ──────────────────────────────────

@dataclass(frozen=True)
class OracleCate:
    """The planted effect function: the effect of the one box containing ``x``."""

    schema: tuple[FeatureSpec, ...]
    boxes: tuple[EffectBox, ...]

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.schema]

    def many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, len(self.schema))
        columns = {name: X[:, i] for i, name in enumerate(self.feature_names)}
        tau = np.full(len(X), np.nan)
        for box in self.boxes:
            inside = box.contains(columns, len(X)) & np.isnan(tau)
            tau[inside] = box.effect
        return tau

    def __call__(self, x) -> float:
        if isinstance(x, Mapping):
            x = [x[name] for name in self.feature_names]
        return float(self.many(np.asarray(x, dtype=np.float64))[0])


def oracle_cate(oracle: OracleCate, x) -> float:
    return oracle(x)


def empirical_oracle(tree: CausalTree) -> OracleCate:
    """Oracle whose boxes are the leaves of *tree*, carrying the leaf effects."""
    def finite(bound: float) -> float | None:
        return None if math.isinf(bound) else bound

    return OracleCate(
        schema=tree.feature_schema,
        boxes=tuple(
            EffectBox(bounds={f: (finite(lo), finite(hi)) for f, (lo, hi) in box.items()}, effect=leaf.effect.tau)
            for leaf, box in leaf_boxes(tree)
        ),
    )


def check_partition(spec: SyntheticSpec) -> None:
    """
    Every cell of the grid spanned by the box edges must lie in exactly one
    effect box.

    Raises:
        SyntheticSpecError: some region is covered by no box or by several.
    """
    axes: list[list[float]] = []
    for name in spec.feature_names:
        if name in spec.binary_names:
            axes.append([0.0, 1.0])
            continue
        edges = {0.0, 1.0}
        for box in spec.effect_boxes:
            edges.update(e for e in box.bounds.get(name, ()) if e is not None and 0.0 < e < 1.0)
        ordered = sorted(edges)
        axes.append([lo + (hi - lo) / 2 for lo, hi in zip(ordered, ordered[1:])])

    for cell in itertools.product(*axes):
        point = {name: np.array([v]) for name, v in zip(spec.feature_names, cell)}
        covering = sum(bool(box.contains(point, 1)[0]) for box in spec.effect_boxes)
        if covering != 1:
            where = ", ".join(f"{n}={v:.4g}" for n, v in zip(spec.feature_names, cell))
            raise SyntheticSpecError(f"effect boxes do not partition the feature space: {covering} boxes cover ({where})")


# ── generation ──────────────────────────────

def _sample_features(spec: SyntheticSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    continuous = rng.random((n, spec.n_continuous))
    binary = rng.integers(0, 2, size=(n, spec.n_binary)).astype(np.float64)
    return np.hstack([continuous, binary])


def _baseline(spec: SyntheticSpec, X: np.ndarray) -> np.ndarray:
    columns = {name: X[:, i] for i, name in enumerate(spec.feature_names)}
    f = np.full(len(X), spec.intercept)
    if spec.baseline == "linear":
        for name, coef in spec.coefficients.items():
            f = f + coef * columns[name]
    elif spec.baseline == "piecewise":
        for box in spec.baseline_boxes:
            f = f + np.where(box.contains(columns, len(X)), box.effect, 0.0)
    return f


def generate(spec: SyntheticSpec) -> tuple[TreatmentFrame, OracleCate]:
    """
    ``y = f(x) + w * tau(x) + noise`` with ``w ~ Bernoulli(p_w)`` independent
    of ``x``. With a binary outcome ``y ~ Bernoulli(clip(f + w * tau, 0, 1))``.
    """
    check_partition(spec)
    feature_ss, assignment_ss, noise_ss = np.random.SeedSequence(spec.seed).spawn(len(STREAMS))
    n = spec.n_units

    X = _sample_features(spec, np.random.Generator(np.random.PCG64(feature_ss)), n)
    w = (np.random.Generator(np.random.PCG64(assignment_ss)).random(n) < spec.p_w).astype(np.int8)

    oracle = OracleCate(schema=spec.schema(), boxes=spec.effect_boxes)
    mean = _baseline(spec, X) + w * oracle.many(X)
    noise_rng = np.random.Generator(np.random.PCG64(noise_ss))
    if spec.outcome == "binary":
        y = (noise_rng.random(n) < np.clip(mean, 0.0, 1.0)).astype(np.float64)
        outcome_kind = "binary_win"
    else:
        y = mean + noise_rng.normal(0.0, spec.noise_sigma, n)
        outcome_kind = "continuous"

    frame = TreatmentFrame(spec.schema(), X, w, y, outcome_kind, TreatmentMeta(scope="synthetic"))
    logger.info(f"[synth] Generated {n} units (arms {frame.arm_sizes()}) from seed {spec.seed}")
    return frame, oracle


def oracle_metadata(spec: SyntheticSpec) -> dict:
    """What a reader needs to regenerate the frame and check a tree against the truth."""
    return {
        "bit_generator": BIT_GENERATOR,
        "seed_sequence": spec.seed,
        "streams": list(STREAMS),
        "spec": spec.model_dump(mode="json"),
    }


# ── evaluation ──────────────────────────────

@dataclass(frozen=True)
class TreeEvaluation:
    mean_absolute_error: float
    sign_agreement: float | None  # over points whose true effect is non-zero
    n_eval: int


def evaluate_tree(tree: CausalTree, oracle: OracleCate, n_eval: int = 5000, seed: int = 0) -> TreeEvaluation:
    """Compare leaf effects with the true effect at *n_eval* random points."""
    rng = np.random.Generator(np.random.PCG64(seed))
    kinds = [f.kind for f in oracle.schema]
    X = np.column_stack([
        rng.integers(0, 2, n_eval).astype(np.float64) if kind == "binary" else rng.random(n_eval)
        for kind in kinds
    ])
    predicted = predict_many(tree, X)
    truth = oracle.many(X)
    nonzero = truth != 0
    agreement = float(np.mean(np.sign(predicted[nonzero]) == np.sign(truth[nonzero]))) if nonzero.any() else None
    return TreeEvaluation(
        mean_absolute_error=float(np.mean(np.abs(predicted - truth))),
        sign_agreement=agreement,
        n_eval=n_eval,
    )
