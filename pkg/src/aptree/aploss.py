"""Antecedent-prioritized loss weights.

Each step's negative log-likelihood is scaled by ``alpha * f**-gamma`` where
``f`` grows with the action's position in the tree, so actions near the root
dominate the gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

from .astvec import ast2vec, vec_norm
from .transition import ActionStep

AUTO = "auto"
GAMMA_HINT = (0.1, 0.5)


class FactorMode(str, Enum):
    ASTVEC = "astvec"
    SIMPLE = "simple"


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.0
    alpha: Union[float, str] = 2.0
    factor_mode: FactorMode = FactorMode.ASTVEC
    root_clamp: float = 1.0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.alpha != AUTO and not (isinstance(self.alpha, (int, float)) and self.alpha > 0):
            raise ValueError(f"alpha must be positive or 'auto', got {self.alpha!r}")
        if not self.root_clamp > 0:
            raise ValueError("root_clamp must be positive")
        object.__setattr__(self, "factor_mode", FactorMode(self.factor_mode))

    @classmethod
    def cross_entropy(cls) -> "LossConfig":
        return cls(gamma=0.0, alpha=1.0)


@dataclass(frozen=True)
class WeightedSteps:
    factors: tuple[float, ...]
    weights: tuple[float, ...]
    alpha: float

    @property
    def total(self) -> int:
        return len(self.weights)


def position_factor(steps: Sequence[ActionStep], cfg: LossConfig) -> list[float]:
    if cfg.factor_mode is FactorMode.SIMPLE:
        return [float(t) for t in range(1, len(steps) + 1)]
    # the root vector is (0, 0); clamping keeps 0**-gamma out of the loss
    return [max(vec_norm(v), cfg.root_clamp) for v in ast2vec(steps)]


def scaling_factor(f: float, gamma: float) -> float:
    if not f > 0:
        raise ValueError(f"position factor must be positive, got {f}")
    if gamma == 0:
        return 1.0
    return f ** -gamma


def alpha_auto(gamma: float, T: float) -> float:
    """Magnitude factor keeping the scaled loss at the scale of plain CE for f(t) = t."""
    if T <= 0 or gamma < 0:
        raise ValueError("need T > 0 and gamma >= 0")
    if gamma == 1:
        return T / math.log(T + 1)
    return (1 - gamma) * T ** gamma


def resolve_alpha(cfg: LossConfig, T: int) -> float:
    return alpha_auto(cfg.gamma, T) if cfg.alpha == AUTO else float(cfg.alpha)


def step_weights(steps: Sequence[ActionStep], cfg: LossConfig) -> WeightedSteps:
    factors = position_factor(steps, cfg)
    alpha = resolve_alpha(cfg, len(steps))
    return WeightedSteps(tuple(factors), tuple(alpha * scaling_factor(f, cfg.gamma) for f in factors), alpha)


def ap_loss(log_probs: Sequence[float], steps: Sequence[ActionStep], cfg: LossConfig) -> tuple[float, list[float]]:
    """Return (total loss, per-step contributions) for gold-action log-probabilities."""
    if len(log_probs) != len(steps):
        raise ValueError(f"{len(log_probs)} log-probs for {len(steps)} steps")
    if not steps:
        raise ValueError("empty action sequence")
    for t, lp in enumerate(log_probs, start=1):
        if not math.isfinite(lp):
            raise ValueError(f"non-finite log-probability at step {t}")
    ws = step_weights(steps, cfg)
    contributions = [-w * lp for w, lp in zip(ws.weights, log_probs)]
    return math.fsum(contributions), contributions


def cross_entropy(log_probs: Sequence[float]) -> float:
    return -math.fsum(log_probs)


def factor_curve(gammas: Sequence[float], tmax: int) -> list[tuple[int, float, float]]:
    """(t, gamma, t**-gamma) rows for t = 1..tmax."""
    return [(t, g, scaling_factor(t, g)) for g in gammas for t in range(1, tmax + 1)]
