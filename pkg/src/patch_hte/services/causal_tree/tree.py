"""Descent, trimming and structural checks on fitted trees."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence

import numpy as np

from patch_hte.data.trees import CausalTree, EffectEstimate, TreeNode
from patch_hte.errors import InvariantError, TreeError

Box = dict[str, tuple[float, float]]  # feature -> [low, high)


def _as_vector(tree: CausalTree, x: Mapping[str, float] | Sequence[float] | np.ndarray) -> dict[str, float]:
    names = tree.feature_names
    if isinstance(x, Mapping):
        missing = [n for n in names if n not in x]
        if missing:
            raise TreeError(f"feature vector is missing {missing[:3]}")
        return {n: float(x[n]) for n in names}
    values = np.asarray(x, dtype=np.float64).ravel()
    if len(values) != len(names):
        raise TreeError(f"feature vector has {len(values)} values, the tree expects {len(names)}")
    return dict(zip(names, values.tolist()))


def leaf_for(tree: CausalTree, x) -> TreeNode:
    vector = _as_vector(tree, x)
    node = tree.root
    while not node.is_leaf:
        node = node.left if node.split.goes_left(vector[node.split.feature]) else node.right
    return node


def predict(tree: CausalTree, x) -> EffectEstimate:
    """Effect of the leaf containing *x* (a mapping by feature name or a vector in schema order)."""
    return leaf_for(tree, x).effect


def apply(tree: CausalTree, X: np.ndarray) -> np.ndarray:
    """Leaf index (position in ``tree.leaves()``) of every row of *X*."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(tree.feature_schema):
        raise TreeError(f"feature matrix has shape {X.shape}, the tree expects (n, {len(tree.feature_schema)})")
    columns = {name: i for i, name in enumerate(tree.feature_names)}
    out = np.full(len(X), -1, dtype=np.int64)
    counter = iter(range(len(tree.leaves())))

    def descend(node: TreeNode, rows: np.ndarray) -> None:
        if node.is_leaf:
            out[rows] = next(counter)
            return
        left = X[rows, columns[node.split.feature]] >= node.split.threshold
        descend(node.left, rows[left])
        descend(node.right, rows[~left])

    descend(tree.root, np.arange(len(X)))
    return out


def predict_many(tree: CausalTree, X: np.ndarray) -> np.ndarray:
    taus = np.array([leaf.effect.tau for leaf in tree.leaves()])
    return taus[apply(tree, X)]


def leaf_boxes(tree: CausalTree) -> list[tuple[TreeNode, Box]]:
    """Every leaf with its region; bounds are closed below and open above."""
    out: list[tuple[TreeNode, Box]] = []

    def visit(node: TreeNode, box: Box) -> None:
        if node.is_leaf:
            out.append((node, box))
            return
        f, t = node.split.feature, node.split.threshold
        lo, hi = box.get(f, (-math.inf, math.inf))
        visit(node.left, {**box, f: (max(lo, t), hi)})
        visit(node.right, {**box, f: (lo, min(hi, t))})

    visit(tree.root, {})
    return out


# ── trimming ────────────────────────────────

def trim(tree: CausalTree, alpha_display: float) -> CausalTree:
    """
    Display copy of *tree*: nodes with ``p < alpha_display`` are marked
    significant and every subtree without a significant node is collapsed
    into its top node. With ``alpha_display >= 1`` the tree is returned as is.
    """
    if alpha_display >= 1.0:
        return tree

    def has_significant(node: TreeNode) -> bool:
        return any(n.effect.p_value < alpha_display for n in node.walk())

    def rebuild(node: TreeNode) -> TreeNode:
        significant = node.effect.p_value < alpha_display
        if node.is_leaf or not (has_significant(node.left) or has_significant(node.right)):
            return TreeNode(effect=node.effect, depth=node.depth, significant=significant)
        return node.model_copy(
            update={"left": rebuild(node.left), "right": rebuild(node.right), "significant": significant}
        )

    return tree.model_copy(update={"root": rebuild(tree.root)})


# ── invariants ──────────────────────────────

def decomposition_gap(tree: CausalTree) -> float:
    """
    ``|sum of leaf arm means weighted by arm share - root tau|``, relative to
    ``max(1, |root tau|)``. Zero up to rounding for every well-formed tree.
    """
    root = tree.root.effect
    leaves = [leaf.effect for leaf in tree.leaves()]
    treated = math.fsum(e.n_treated * e.mean_treated for e in leaves) / root.n_treated
    control = math.fsum(e.n_control * e.mean_control for e in leaves) / root.n_control
    return abs(treated - control - root.tau) / max(1.0, abs(root.tau))


def verify_tree(tree: CausalTree, *, rtol: float = 1e-9) -> None:
    """
    Raises:
        InvariantError: the tree breaks its depth or leaf-size limits, or the
            leaf effects do not add up to the root effect.
    """
    config = tree.config
    if tree.depth() > config.max_depth:
        raise InvariantError(f"tree depth {tree.depth()} exceeds max_depth {config.max_depth}")
    min_leaf = max(1, math.ceil(round(config.min_leaf_fraction * tree.root.samples, 9)))
    for node in tree.nodes():
        if node is not tree.root and node.samples < min_leaf:
            raise InvariantError(f"node at depth {node.depth} has {node.samples} samples, below {min_leaf}")
    gap = decomposition_gap(tree)
    if gap > rtol:
        raise InvariantError(f"leaf effects do not decompose the root effect (gap {gap:.3g})")
