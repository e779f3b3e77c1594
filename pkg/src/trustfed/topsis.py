"""TOPSIS closeness scores over the per-round client decision matrix.

Every criterion (accuracy, macro precision, macro recall, macro F1) is a
benefit criterion, so the ideal solution is the column-wise maximum of the
weighted normalized matrix and the anti-ideal the column-wise minimum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

N_CRITERIA = 4
EQUAL_WEIGHTS = (0.25, 0.25, 0.25, 0.25)


@dataclass(frozen=True)
class DecisionMatrix:
    rows: np.ndarray
    client_ids: tuple

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] != N_CRITERIA:
            raise ValueError(f"decision matrix must be n x {N_CRITERIA} with n >= 1, got {rows.shape}")
        if np.any(rows < 0.0) or np.any(rows > 1.0):
            raise ValueError("decision matrix entries must lie in [0, 1]")
        if len(self.client_ids) != rows.shape[0]:
            raise ValueError("client_ids must align with rows")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "client_ids", tuple(self.client_ids))

    @classmethod
    def from_metrics(cls, metrics: Mapping) -> "DecisionMatrix":
        """Build from ``{client_id: MetricVector}`` in ascending id order."""
        ids = sorted(metrics)
        return cls(np.array([metrics[i].as_row() for i in ids], dtype=float), tuple(ids))


def check_weights(w: Sequence[float]) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (N_CRITERIA,):
        raise ValueError(f"expected {N_CRITERIA} criteria weights, got {w.shape}")
    if np.any(w < 0):
        raise ValueError("criteria weights must be non-negative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"criteria weights must sum to 1, got {w.sum()!r}")
    return w


def normalize_columns(rows: np.ndarray) -> np.ndarray:
    """Divide each column by its Euclidean norm; all-zero columns stay zero."""
    rows = np.asarray(rows, dtype=float)
    norms = np.sqrt((rows**2).sum(axis=0))
    out = np.zeros_like(rows)
    np.divide(rows, norms, out=out, where=norms > 0)
    return out


def ideal_solutions(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=float)
    return v.max(axis=0), v.min(axis=0)


def closeness(v: np.ndarray, a_plus: np.ndarray, a_minus: np.ndarray) -> np.ndarray:
    """Relative closeness S- / (S+ + S-) per row.

    A row that coincides with both ideals (all alternatives identical) gets 1.0.
    """
    v = np.asarray(v, dtype=float)
    s_plus = np.sqrt(((v - a_plus) ** 2).sum(axis=1))
    s_minus = np.sqrt(((v - a_minus) ** 2).sum(axis=1))
    denom = s_plus + s_minus
    scores = np.ones(v.shape[0])
    np.divide(s_minus, denom, out=scores, where=denom > 0)
    return np.clip(scores, 0.0, 1.0)


def topsis_scores(d: DecisionMatrix, w: Sequence[float] = EQUAL_WEIGHTS) -> dict:
    """Raw trust score T_i for every client in ``d``."""
    weights = check_weights(w)
    v = normalize_columns(d.rows) * weights
    a_plus, a_minus = ideal_solutions(v)
    t = closeness(v, a_plus, a_minus)
    return {cid: float(score) for cid, score in zip(d.client_ids, t)}
