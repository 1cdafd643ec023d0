"""Annealed KL set points: plateau-then-ramp ("hybrid") and pure step."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

HYBRID = "hybrid"
STEP_ONLY = "step_only"

# Final KL targets used for the three benchmark datasets.
TARGETS = {"dsprites": 20.0, "mnist": 26.0, "chairs": 18.0}


@dataclass(frozen=True)
class AnnealSchedule:
    """Set point that rises by ``step_size`` every ``period`` steps.

    Each period holds flat for ``plateau_len`` steps and then (in hybrid mode)
    rises linearly over ``ramp_len`` steps to the next level. In step-only mode
    the level jumps at the period boundary instead. The value never exceeds
    ``c_final``.
    """

    c0: float = 0.5
    c_final: float = 20.0
    step_size: float = 0.15
    period: int = 6000
    plateau_len: int = 5000
    ramp_len: int = 1000
    mode: str = HYBRID

    def __post_init__(self):
        if self.mode not in (HYBRID, STEP_ONLY):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.period < 1 or self.plateau_len < 1 or self.ramp_len < 1:
            raise ValueError("period, plateau_len and ramp_len must be positive")
        if self.plateau_len + self.ramp_len != self.period:
            raise ValueError(
                f"plateau_len + ramp_len must equal period "
                f"({self.plateau_len} + {self.ramp_len} != {self.period})"
            )
        if not (math.isfinite(self.c0) and math.isfinite(self.c_final)):
            raise ValueError("set points must be finite")
        if self.c_final < self.c0:
            raise ValueError("c_final must be >= c0")
        if not self.step_size > 0.0:
            raise ValueError("step_size must be positive")

    def with_mode(self, mode: str) -> "AnnealSchedule":
        return replace(self, mode=mode)

    @property
    def saturation_step(self) -> int:
        """First step from which the set point equals ``c_final`` forever."""
        n = 0
        while self.c0 + n * self.step_size < self.c_final:
            n += 1
        # level n reached at period n (step mode) or during the ramp of period n-1
        if n == 0:
            return 0
        if self.mode == STEP_ONLY:
            t = n * self.period
        else:
            k = n - 1
            frac = (self.c_final - (self.c0 + k * self.step_size)) / self.step_size
            t = k * self.period + self.plateau_len + math.ceil(frac * self.ramp_len)
        # absorb float rounding in the closed form
        while t > 0 and setpoint_at(self, t - 1) >= self.c_final:
            t -= 1
        while setpoint_at(self, t) < self.c_final:
            t += 1
        return t


def setpoint_at(sched: AnnealSchedule, t: int) -> float:
    if t < 0:
        raise ValueError("t must be nonnegative")
    k, p = divmod(int(t), sched.period)
    base = min(sched.c0 + k * sched.step_size, sched.c_final)
    if sched.mode == STEP_ONLY or p < sched.plateau_len:
        return base
    return min(base + sched.step_size * (p - sched.plateau_len) / sched.ramp_len, sched.c_final)


def setpoint_array(sched: AnnealSchedule, n: int) -> np.ndarray:
    """``setpoint_at`` for ``t = 0..n-1``; bit-identical to the scalar form."""
    t = np.arange(n, dtype=np.int64)
    k, p = np.divmod(t, sched.period)
    base = np.minimum(sched.c0 + k * sched.step_size, sched.c_final)
    if sched.mode == STEP_ONLY:
        return base
    ramp = np.minimum(base + sched.step_size * (p - sched.plateau_len) / sched.ramp_len, sched.c_final)
    return np.where(p < sched.plateau_len, base, ramp)


def recommend_setpoint(vae_converged_kl: float, fraction: float = 1.0) -> float:
    """Final KL target from the KL an unweighted VAE converges to.

    Any value at or below the plain-VAE KL is admissible; ``fraction`` scales
    it down (default: take it as is).
    """
    if not (math.isfinite(vae_converged_kl) and vae_converged_kl > 0.0):
        raise ValueError(f"converged KL must be positive, got {vae_converged_kl!r}")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    return vae_converged_kl * fraction
