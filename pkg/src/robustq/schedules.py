"""Learning-rate and regularization-radius schedules.

The step-size family is alpha_n = N * alpha0 * w / (n + w), where N is the
number of parameter copies carried by the method (N = 1 for single-estimate
methods, and for any method configured to skip the copy scaling). Episodic
tasks pass the episode counter instead of the step counter; the caption
form without the copy factor is obtained by leaving the scaling off. The
"gain" mode is the asymptotic-analysis rate alpha_n = N * g / n, clamped at
early indices so it never exceeds one.

The radius schedule decays either as rho0 * w / (n + w) or as
rho0 * w / (n^2 + w); both start at rho0 and vanish as n grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LR_MODES = ("weighted", "gain")
DECAY_INDICES = ("n", "e")
RHO_MODES = ("linear-denominator", "quadratic-denominator")


@dataclass(frozen=True)
class LearningRateSchedule:
    alpha0: float
    w_alpha: float
    copies: int = 1
    decay_index: str = "n"   # "n": per update step, "e": per episode (no N factor)
    mode: str = "weighted"

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.mode == "weighted" and self.w_alpha <= 0:
            raise ValueError("w_alpha must be positive")
        if self.copies < 1:
            raise ValueError("copies must be at least 1")
        if self.decay_index not in DECAY_INDICES:
            raise ValueError(f"decay_index must be one of {DECAY_INDICES}")
        if self.mode not in LR_MODES:
            raise ValueError(f"mode must be one of {LR_MODES}")

    def value(self, n):
        """Step size at counter ``n`` (scalar or ndarray).

        Emitted values are capped at 1: the asynchronous-update convergence
        assumptions require steps in (0, 1], and copy-scaled schedules can
        exceed that early on.
        """
        n = np.asarray(n, dtype=np.float64)
        if self.mode == "gain":
            # N*g/n for n past the point where it drops below 1
            gain = self.copies * self.alpha0
            n_min = math.floor(gain) + 1
            out = gain / np.maximum(n, n_min)
        else:
            out = np.minimum(
                self.copies * self.alpha0 * self.w_alpha / (n + self.w_alpha), 1.0
            )
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RhoSchedule:
    rho0: float
    w_rho: float
    mode: str = "linear-denominator"

    def __post_init__(self):
        if self.rho0 < 0:
            raise ValueError("rho0 must be non-negative")
        if self.w_rho <= 0:
            raise ValueError("w_rho must be positive")
        if self.mode not in RHO_MODES:
            raise ValueError(f"mode must be one of {RHO_MODES}")

    def value(self, n):
        """Radius at counter ``n`` (scalar or ndarray)."""
        n = np.asarray(n, dtype=np.float64)
        if self.mode == "quadratic-denominator":
            out = self.rho0 * self.w_rho / (n * n + self.w_rho)
        else:
            out = self.rho0 * self.w_rho / (n + self.w_rho)
        return float(out) if out.ndim == 0 else out


ZERO_RHO = RhoSchedule(rho0=0.0, w_rho=1.0)


def lr_at(schedule: LearningRateSchedule, n):
    """Step size emitted by ``schedule`` at counter ``n``."""
    return schedule.value(n)


def rho_at(schedule: RhoSchedule, n):
    """Radius emitted by ``schedule`` at counter ``n``."""
    return schedule.value(n)
