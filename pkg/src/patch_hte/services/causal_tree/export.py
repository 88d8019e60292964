"""
export.py - JSON and Graphviz DOT renderings of causal trees.

The JSON document is the persisted form of a tree and loads back with
`tree_from_json`. Node keys are emitted in a fixed order, so exporting the
same tree twice gives identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from patch_hte.config.settings import TreeConfig
from patch_hte.data.frames import FeatureSpec, TreatmentMeta
from patch_hte.data.trees import CausalTree, EffectEstimate, SplitRule, TreeNode
from patch_hte.errors import TreeError
from patch_hte.utils.files import atomic_write_text

ExportFormat = Literal["json", "dot"]

SIGNIFICANT_STYLE = 'style="filled,bold", fillcolor="#f4c27a"'
PLAIN_STYLE = 'style="rounded"'


# ── json ────────────────────────────────────

def _node_to_dict(node: TreeNode) -> dict:
    e = node.effect
    return {
        "tau": e.tau,
        "se": e.se,
        "p": e.p_value,
        "n_treated": e.n_treated,
        "n_control": e.n_control,
        "mean_treated": e.mean_treated,
        "mean_control": e.mean_control,
        "significant": node.significant,
        "split": None if node.is_leaf else {"feature": node.split.feature, "threshold": node.split.threshold},
        "left": None if node.is_leaf else _node_to_dict(node.left),
        "right": None if node.is_leaf else _node_to_dict(node.right),
    }


def tree_to_dict(tree: CausalTree) -> dict:
    return {
        "config": tree.config.model_dump(mode="json"),
        "seed": tree.seed,
        "frame_sha256": tree.frame_sha256,
        "feature_schema": [f.model_dump() for f in tree.feature_schema],
        "treatment_meta": tree.meta.model_dump(mode="json") if tree.meta is not None else None,
        "root": _node_to_dict(tree.root),
    }


def _node_from_dict(doc: dict, depth: int) -> TreeNode:
    effect = EffectEstimate(
        tau=doc["tau"], se=doc["se"], p_value=doc["p"],
        n_treated=doc["n_treated"], n_control=doc["n_control"],
        mean_treated=doc["mean_treated"], mean_control=doc["mean_control"],
    )
    if doc.get("split") is None:
        return TreeNode(effect=effect, depth=depth, significant=doc.get("significant", False))
    return TreeNode(
        effect=effect,
        split=SplitRule(**doc["split"]),
        left=_node_from_dict(doc["left"], depth + 1),
        right=_node_from_dict(doc["right"], depth + 1),
        depth=depth,
        significant=doc.get("significant", False),
    )


def tree_from_json(document: str | bytes | dict) -> CausalTree:
    """Rebuild a tree from its JSON export."""
    try:
        doc = json.loads(document) if isinstance(document, (str, bytes)) else document
        meta = doc.get("treatment_meta")
        return CausalTree(
            root=_node_from_dict(doc["root"], 0),
            config=TreeConfig(**doc["config"]),
            feature_schema=tuple(FeatureSpec(**f) for f in doc["feature_schema"]),
            frame_sha256=doc["frame_sha256"],
            seed=doc["seed"],
            meta=TreatmentMeta.model_validate(meta) if meta is not None else None,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise TreeError(f"not a valid tree document: {e}") from e


# ── dot ─────────────────────────────────────

def _quote(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def to_dot(tree: CausalTree, *, alpha_display: float | None = None, name: str = "causal_tree") -> str:
    """
    One box per node labelled with effect, p-value and samples; the split
    rule goes on the internal node and the edges read ``>= t`` (left) and
    ``< t`` (right). Nodes flagged significant, or with ``p < alpha_display``
    when given, are highlighted.
    """
    lines = [f"digraph {name} {{", '  node [shape=box, fontname="Helvetica"];']
    ids = {id(node): f"n{i}" for i, node in enumerate(tree.root.walk())}

    for node in tree.root.walk():
        e = node.effect
        label = f"tau = {e.tau:.4g}\\np = {e.p_value:.3g}\\nsamples = {node.samples}"
        if not node.is_leaf:
            label += f"\\n{_quote(node.split.feature)} >= {node.split.threshold:.6g}"
        highlighted = node.significant or (alpha_display is not None and e.p_value < alpha_display)
        style = SIGNIFICANT_STYLE if highlighted else PLAIN_STYLE
        lines.append(f'  {ids[id(node)]} [label="{label}", {style}];')

    for node in tree.root.walk():
        if node.is_leaf:
            continue
        t = f"{node.split.threshold:.6g}"
        lines.append(f'  {ids[id(node)]} -> {ids[id(node.left)]} [label=">= {t}"];')
        lines.append(f'  {ids[id(node)]} -> {ids[id(node.right)]} [label="< {t}"];')

    lines.append("}")
    return "\n".join(lines) + "\n"


def export(tree: CausalTree, fmt: ExportFormat = "json", **kwargs) -> str:
    if fmt == "json":
        return json.dumps(tree_to_dict(tree), indent=2) + "\n"
    if fmt == "dot":
        return to_dot(tree, **kwargs)
    raise ValueError(f"unknown export format {fmt!r}")


def write_tree(tree: CausalTree, path: Path, fmt: ExportFormat = "json", **kwargs) -> Path:
    path = Path(path)
    atomic_write_text(path, export(tree, fmt, **kwargs))
    return path


def read_tree(path: Path | str) -> CausalTree:
    return tree_from_json(Path(path).read_text(encoding="utf-8"))
