"""Nonlinear PI control of the KL weight and feedback smoothing.

The incremental controller updates

    beta(t) = beta(t-1) + kp * [sig(-e(t)) - sig(-e(t-1))] - ki * e(t)

with ``e(t) = C - y(t)`` (set point minus smoothed KL), a floor ``beta_min`` and
an anti-windup guard that drops the integral increment while the previous
output sits below the floor. The positional form is kept for ablations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple


def sigmoid(u: float) -> float:
    """Logistic function, evaluated without overflow for large ``|u|``."""
    if u >= 0.0:
        return 1.0 / (1.0 + math.exp(-u))
    z = math.exp(u)
    return z / (1.0 + z)


@dataclass(frozen=True)
class Gains:
    kp: float
    ki: float

    def __post_init__(self):
        for name in ("kp", "ki"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"gain {name} must be finite and nonnegative, got {v!r}")


@dataclass(frozen=True)
class ControllerState:
    gains: Gains
    beta: float
    prev_error: float = 0.0
    beta_min: float = 0.0
    err_sum: float = 0.0

    @classmethod
    def initial(cls, gains: Gains, beta0: float, beta_min: float = 0.0) -> "ControllerState":
        if not math.isfinite(beta0):
            raise ValueError(f"beta0 must be finite, got {beta0!r}")
        return cls(gains=gains, beta=float(beta0), prev_error=0.0, beta_min=float(beta_min))

    @classmethod
    def positional(cls, gains: Gains, beta_min: float = 0.0) -> "ControllerState":
        """State for the positional variant: no large initial weight.

        The starting output is the positional law evaluated at zero error
        history, ``kp * sig(0)``, floored at ``beta_min``.
        """
        beta0 = max(gains.kp * sigmoid(0.0), beta_min)
        return cls(gains=gains, beta=beta0, prev_error=0.0, beta_min=float(beta_min))


def _check_error(error: float) -> float:
    error = float(error)
    if not math.isfinite(error):
        raise ValueError(f"controller error must be finite, got {error!r}")
    return error


def pi_step(state: ControllerState, error: float) -> Tuple[float, ControllerState]:
    """One incremental PI update. Returns the new weight and the new state."""
    error = _check_error(error)
    kp, ki = state.gains.kp, state.gains.ki
    d_p = kp * (sigmoid(-error) - sigmoid(-state.prev_error))
    d_i = -ki * error
    if state.beta < state.beta_min:
        d_i = 0.0
    beta = state.beta + (d_p + d_i)
    if beta < state.beta_min:
        beta = state.beta_min
    return beta, replace(state, beta=beta, prev_error=error)


def positional_pi_step(state: ControllerState, error: float) -> Tuple[float, ControllerState]:
    """Positional PI law ``kp*sig(-e) - ki*sum(e)``, floored at ``beta_min``."""
    error = _check_error(error)
    err_sum = state.err_sum + error
    beta = state.gains.kp * sigmoid(-error) - state.gains.ki * err_sum
    if beta < state.beta_min:
        beta = state.beta_min
    return beta, replace(state, beta=beta, prev_error=error, err_sum=err_sum)


@dataclass(frozen=True)
class MovingAverage:
    """Fixed-window moving average over raw KL samples.

    ``weights`` are ordered oldest to newest and must sum to one; ``None`` means
    equal weights. Until the window fills, the equal-weight mean of the samples
    seen so far is returned.
    """

    size: int
    weights: Optional[Tuple[float, ...]] = None
    window: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("window size must be >= 1")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != self.size:
                raise ValueError(f"expected {self.size} weights, got {len(w)}")
            if any(x < 0.0 for x in w) or not math.isclose(math.fsum(w), 1.0, abs_tol=1e-12):
                raise ValueError("weights must be nonnegative and sum to 1")
            object.__setattr__(self, "weights", w)

    @classmethod
    def equal(cls, size: int) -> "MovingAverage":
        return cls(size=size)

    @classmethod
    def weighted(cls, weights: Sequence[float]) -> "MovingAverage":
        return cls(size=len(weights), weights=tuple(weights))


def window_mean(window: Sequence[float], size: int, weights: Optional[Sequence[float]]) -> float:
    # left-to-right accumulation; the compiled loop kernel mirrors this order
    n = len(window)
    acc = 0.0
    if n < size or weights is None:
        for v in window:
            acc += v
        return acc / n
    for w, v in zip(weights, window):
        acc += w * v
    return acc


def smooth(ma: MovingAverage, y_kl: float) -> Tuple[float, MovingAverage]:
    """Push a raw KL sample and return the smoothed value with the new state."""
    y_kl = float(y_kl)
    if not math.isfinite(y_kl) or y_kl < 0.0:
        raise ValueError(f"KL sample must be finite and nonnegative, got {y_kl!r}")
    window = (ma.window + (y_kl,))[-ma.size:]
    out = window_mean(window, ma.size, ma.weights)
    return out, replace(ma, window=window)
