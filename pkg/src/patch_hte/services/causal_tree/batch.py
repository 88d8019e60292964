from __future__ import annotations

import hashlib
import logging
from collections.abc import Iterable

import numpy as np
from joblib import Parallel, delayed

from patch_hte.config.settings import TreeConfig
from patch_hte.data.frames import TreatmentFrame
from patch_hte.data.trees import CausalTree
from patch_hte.errors import TreeError
from patch_hte.services.causal_tree.fit import fit

logger = logging.getLogger(__name__)


def derive_seed(seed: int, key: str) -> int:
    """Per-frame seed from the global seed and a stable key such as ``"Lucian|4.11|4.12"``."""
    digest = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")
    return int(np.random.SeedSequence([seed, digest]).generate_state(1, dtype=np.uint32)[0])


def _fit_one(key: str, frame: TreatmentFrame, config: TreeConfig, seed: int) -> tuple[str, CausalTree | None, str]:
    try:
        return key, fit(frame, config, seed=seed), ""
    except TreeError as e:
        return key, None, str(e)


def fit_batch(
    frames: Iterable[tuple[str, TreatmentFrame]],
    config: TreeConfig,
    *,
    seed: int = 0,
    threads: int = 1,
) -> list[tuple[str, CausalTree]]:
    """
    Fit one tree per ``(key, frame)``. Results come back in input order and
    each tree is seeded from ``(seed, key)``, so the output does not depend on
    *threads*. Frames that cannot be fitted are logged and left out.

    *frames* is consumed lazily; at most ``2 * threads`` frames wait for a
    worker at any time.
    """
    n_jobs = 0

    def jobs():
        nonlocal n_jobs
        for key, frame in frames:
            n_jobs += 1
            yield delayed(_fit_one)(key, frame, config, derive_seed(seed, key))

    results = Parallel(n_jobs=threads, pre_dispatch="2*n_jobs")(jobs())

    fitted = []
    for key, tree, error in results:
        if tree is None:
            logger.warning(f"[tree] Skipping {key}: {error}")
        else:
            fitted.append((key, tree))
    logger.info(f"[tree] Fitted {len(fitted)} of {n_jobs} trees with {threads} thread(s)")
    return fitted
