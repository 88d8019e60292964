from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel

from patch_hte.data.models import PatchVersion
from patch_hte.errors import FrameError

FeatureKind = Literal["binary", "count", "continuous", "ordinal"]
OutcomeKind = Literal["binary_win", "count_kills", "continuous"]

TREATMENT_COLUMN = "w"
OUTCOME_COLUMN = "y"
FRAME_FLOAT_FORMAT = "%.17g"  # lossless, so fingerprints survive a CSV round trip


class FeatureSpec(BaseModel):
    name: str
    kind: FeatureKind

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class TreatmentMeta(BaseModel):
    """Which patch is control (``w = 0``) and which is treated (``w = 1``)."""

    scope: Literal["team", "player", "synthetic"]
    control: PatchVersion | None = None
    treated: PatchVersion | None = None
    champion: str | None = None

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TreatmentFrame:
    """Unit table ``(X, W, Y)`` for one treatment comparison.

    ``x`` is an ``(n, d)`` float matrix whose columns follow ``schema``;
    ``w`` is 0 for control rows and 1 for treated rows. Arrays are made
    read-only on construction.
    """

    schema: tuple[FeatureSpec, ...]
    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    outcome_kind: OutcomeKind
    meta: TreatmentMeta
    _fingerprint: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=np.float64, copy=True)
        w = np.array(self.w, copy=True)
        y = np.array(self.y, dtype=np.float64, copy=True)
        n = len(y)
        if x.ndim != 2:
            x = x.reshape(n, len(self.schema))
        if x.shape != (n, len(self.schema)):
            raise FrameError(f"feature matrix has shape {x.shape}, expected ({n}, {len(self.schema)})")
        if w.shape != (n,):
            raise FrameError(f"treatment vector has shape {w.shape}, expected ({n},)")
        if n and not np.isin(w, (0, 1)).all():
            raise FrameError("treatment must be 0 (control) or 1 (treated) on every row")
        if np.isnan(x).any():
            raise FrameError("feature matrix contains missing values")
        if np.isnan(y).any():
            raise FrameError("outcome contains missing values")
        names = [f.name for f in self.schema]
        if len(set(names)) != len(names):
            raise FrameError("feature names must be unique")
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "w", _readonly(w.astype(np.int8)))
        object.__setattr__(self, "y", _readonly(y))

    # ── shape ──────────────────────────────────
    @property
    def n_rows(self) -> int:
        return len(self.y)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.schema]

    def arm_sizes(self) -> tuple[int, int]:
        """``(n_control, n_treated)``."""
        n_treated = int(self.w.sum())
        return self.n_rows - n_treated, n_treated

    def is_fittable(self, min_arm: int = 2) -> bool:
        return min(self.arm_sizes()) >= max(min_arm, 2)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.x[:, self.feature_names.index(name)]
        except ValueError:
            raise FrameError(f"unknown feature {name!r}") from None

    # ── derived frames ─────────────────────────
    def subset(self, mask: np.ndarray) -> TreatmentFrame:
        return TreatmentFrame(self.schema, self.x[mask], self.w[mask], self.y[mask], self.outcome_kind, self.meta)

    def with_outcome(self, y: np.ndarray) -> TreatmentFrame:
        return TreatmentFrame(self.schema, self.x, self.w, y, self.outcome_kind, self.meta)

    def swap_arms(self) -> TreatmentFrame:
        meta = self.meta.model_copy(update={"control": self.meta.treated, "treated": self.meta.control})
        return TreatmentFrame(self.schema, self.x, 1 - self.w, self.y, self.outcome_kind, meta)

    # ── serialization ──────────────────────────
    def to_dataframe(self) -> pd.DataFrame:
        df = pd.DataFrame(self.x, columns=self.feature_names)
        df[TREATMENT_COLUMN] = self.w.astype(np.int64)
        df[OUTCOME_COLUMN] = self.y
        return df

    def to_csv_bytes(self) -> bytes:
        buf = io.StringIO()
        self.to_dataframe().to_csv(buf, index=False, float_format=FRAME_FLOAT_FORMAT, lineterminator="\n")
        return buf.getvalue().encode("utf-8")

    def fingerprint(self) -> str:
        """sha256 of the canonical CSV bytes."""
        if not self._fingerprint:
            self._fingerprint.append(hashlib.sha256(self.to_csv_bytes()).hexdigest())
        return self._fingerprint[0]

    def sidecar(self) -> dict:
        n_control, n_treated = self.arm_sizes()
        return {
            "schema": [f.model_dump() for f in self.schema],
            "outcome_kind": self.outcome_kind,
            "arm_sizes": {"control": n_control, "treated": n_treated},
            "treatment_meta": self.meta.model_dump(mode="json"),
            "sha256": self.fingerprint(),
        }
