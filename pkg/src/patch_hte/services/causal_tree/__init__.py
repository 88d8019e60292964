from __future__ import annotations

from .stats import estimate_effect, difference_test

from .fit import candidate_thresholds, fit

from .tree import (
    apply,
    decomposition_gap,
    leaf_boxes,
    leaf_for,
    predict,
    predict_many,
    trim,
    verify_tree,
)

from .export import export, read_tree, to_dot, tree_from_json, tree_to_dict, write_tree

from .batch import derive_seed, fit_batch


__all__ = [
    "estimate_effect",
    "difference_test",
    "candidate_thresholds",
    "fit",
    "apply",
    "decomposition_gap",
    "leaf_boxes",
    "leaf_for",
    "predict",
    "predict_many",
    "trim",
    "verify_tree",
    "export",
    "read_tree",
    "to_dot",
    "tree_from_json",
    "tree_to_dict",
    "write_tree",
    "derive_seed",
    "fit_batch",
]
