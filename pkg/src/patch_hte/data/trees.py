from __future__ import annotations

from collections.abc import Iterator

from pydantic import BaseModel, Field, NonNegativeInt, model_validator

from patch_hte.config.settings import TreeConfig
from patch_hte.data.frames import FeatureSpec, TreatmentMeta


class EffectEstimate(BaseModel):
    """Difference in means, treated minus control, with Welch inference."""

    tau: float
    se: float = Field(ge=0.0)
    p_value: float = Field(ge=0.0, le=1.0)
    n_treated: NonNegativeInt
    n_control: NonNegativeInt
    mean_treated: float
    mean_control: float

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @property
    def samples(self) -> int:
        return self.n_treated + self.n_control


class SplitRule(BaseModel):
    """Rows with ``feature >= threshold`` go left, the rest go right."""

    feature: str
    threshold: float

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    def goes_left(self, value: float) -> bool:
        return value >= self.threshold


class TreeNode(BaseModel):
    effect: EffectEstimate
    split: SplitRule | None = None
    left: TreeNode | None = None
    right: TreeNode | None = None
    depth: NonNegativeInt = 0
    significant: bool = False  # set by trimming: p below the display level

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @model_validator(mode="after")
    def _leaf_iff_no_split(self) -> TreeNode:
        has_children = self.left is not None and self.right is not None
        if (self.split is None) == has_children or (self.left is None) != (self.right is None):
            raise ValueError("a node has a split exactly when it has both children")
        if has_children and self.left.samples + self.right.samples != self.samples:
            raise ValueError("child sample counts must add up to the parent")
        return self

    @property
    def samples(self) -> int:
        return self.effect.samples

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def walk(self) -> Iterator[TreeNode]:
        """Pre-order traversal, left before right."""
        yield self
        if not self.is_leaf:
            yield from self.left.walk()
            yield from self.right.walk()


class CausalTree(BaseModel):
    root: TreeNode
    config: TreeConfig
    feature_schema: tuple[FeatureSpec, ...]
    frame_sha256: str
    seed: int
    meta: TreatmentMeta | None = None

    model_config = dict(extra="forbid", frozen=True)  # help catch typos

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.feature_schema]

    def nodes(self) -> list[TreeNode]:
        return list(self.root.walk())

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.root.walk() if n.is_leaf]

    def internal_nodes(self) -> list[TreeNode]:
        return [n for n in self.root.walk() if not n.is_leaf]

    def depth(self) -> int:
        return max(n.depth for n in self.root.walk())

    def is_root_only(self) -> bool:
        return self.root.is_leaf


TreeNode.model_rebuild()
CausalTree.model_rebuild()
