"""EMA smoothing of raw trust scores with static or variance-adaptive alpha."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

STATIC = "static"
ADAPTIVE = "adaptive"

ALPHA_STEP_UP = 0.05
ALPHA_SHRINK = 0.5


@dataclass(frozen=True)
class SmootherState:
    alpha: float = 0.3
    mode: str = ADAPTIVE
    variance_threshold: float = 0.01
    alpha_floor: float = 0.05
    alpha_cap: float = 1.0

    def __post_init__(self):
        if self.mode not in (STATIC, ADAPTIVE):
            raise ValueError(f"unknown smoother mode {self.mode!r}")
        if self.variance_threshold < 0:
            raise ValueError("variance_threshold must be >= 0")
        if not 0 < self.alpha_floor <= self.alpha_cap:
            raise ValueError("alpha_floor must lie in (0, alpha_cap]")
        if not self.alpha_floor <= self.alpha <= self.alpha_cap:
            raise ValueError(
                f"alpha={self.alpha} outside [{self.alpha_floor}, {self.alpha_cap}]"
            )


def trust_variance(scores: Mapping) -> float:
    """Population variance of the round's raw scores."""
    if not scores:
        raise ValueError("cannot take the variance of an empty score set")
    vals = np.fromiter(scores.values(), dtype=float)
    if (vals == vals[0]).all():
        return 0.0  # avoid rounding residue from the mean
    return float(np.var(vals))


def adapt_alpha(state: SmootherState, sigma2: float) -> SmootherState:
    """High variance halves alpha (more smoothing); low variance raises it by 0.05."""
    if state.mode == STATIC:
        return state
    if sigma2 > state.variance_threshold:
        alpha = max(ALPHA_SHRINK * state.alpha, state.alpha_floor)
    else:
        alpha = min(state.alpha + ALPHA_STEP_UP, state.alpha_cap)
    return replace(state, alpha=alpha)


def initial_trust(client_ids) -> dict:
    return {cid: 1.0 for cid in client_ids}


def ema_update(prev: Mapping, raw: Mapping, alpha: float) -> dict:
    """Return a new smoothed map; clients absent from ``raw`` keep their value."""
    out = dict(prev)
    for cid, t in raw.items():
        if cid not in prev:
            raise KeyError(f"unknown client id {cid!r}")
        value = alpha * t + (1.0 - alpha) * prev[cid]
        out[cid] = min(max(value, 0.0), 1.0)
    return out
