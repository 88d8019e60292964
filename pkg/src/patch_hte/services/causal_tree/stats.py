"""
Two-sample inference used by tree nodes.

``estimate_effect`` is a difference in means with a Welch standard error and a
two-sided Welch t-test (Satterthwaite degrees of freedom). ``difference_test``
compares two independent effect estimates with a normal approximation.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from patch_hte.data.trees import EffectEstimate
from patch_hte.errors import InsufficientArmError


def _clip_p(p: float) -> float:
    return float(min(max(p, 0.0), 1.0))


def welch_df(var_treated: float, n_treated: int, var_control: float, n_control: int) -> float:
    a, b = var_treated / n_treated, var_control / n_control
    denominator = a * a / (n_treated - 1) + b * b / (n_control - 1)
    return (a + b) ** 2 / denominator if denominator > 0 else math.inf


def estimate_effect(treated, control) -> EffectEstimate:
    """
    Effect of treatment on the outcome, treated minus control.

    Raises:
        InsufficientArmError: an arm has fewer than two observations.
    """
    y1 = np.asarray(treated, dtype=np.float64)
    y0 = np.asarray(control, dtype=np.float64)
    n1, n0 = len(y1), len(y0)
    if n1 < 2 or n0 < 2:
        raise InsufficientArmError(f"insufficient arm for inference: n_treated={n1}, n_control={n0}")

    m1, m0 = float(y1.mean()), float(y0.mean())
    v1, v0 = float(y1.var(ddof=1)), float(y0.var(ddof=1))
    tau = m1 - m0
    se = math.sqrt(v1 / n1 + v0 / n0)
    if se == 0.0:
        p = 1.0  # constant arms: never significant
    else:
        df = welch_df(v1, n1, v0, n0)
        p = 2.0 * float(stats.t.sf(abs(tau) / se, df))
    return EffectEstimate(
        tau=tau, se=se, p_value=_clip_p(p),
        n_treated=n1, n_control=n0, mean_treated=m1, mean_control=m0,
    )


def difference_test(a: EffectEstimate, b: EffectEstimate) -> tuple[float, float]:
    """``(a.tau - b.tau, two-sided p)`` of the z statistic on the difference."""
    diff = a.tau - b.tau
    se = math.hypot(a.se, b.se)
    if se == 0.0:
        return diff, 1.0
    return diff, _clip_p(2.0 * float(stats.norm.sf(abs(diff) / se)))
