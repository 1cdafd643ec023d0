"""Closed-loop simulation: annealed set point -> plant -> smoother -> PI controller."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .control import ControllerState, Gains
from .errors import ConfigError
from .plant import ExpMap, PlantModel, discrete_rise, plant_step
from .schedule import STEP_ONLY, AnnealSchedule, setpoint_array

FULL = "full"
POSITIONAL = "no_init_positional"
STEP_ANNEAL = "step_only_anneal"
NO_SMOOTHING = "no_smoothing"
VARIANTS = (FULL, POSITIONAL, STEP_ANNEAL, NO_SMOOTHING)

TRAJECTORY_HEADER = ["step", "setpoint", "kl_raw", "kl_smoothed", "beta"]


@dataclass(frozen=True)
class PlantSpec:
    """Plant parameters for a run; the RNG is seeded from the run seed."""

    a: float
    g: ExpMap
    y0: float = 0.0
    noise_std: float = 0.0

    def build(self, seed: int) -> PlantModel:
        return PlantModel(a=self.a, g=self.g, y=self.y0, noise_std=self.noise_std, rng_seed=seed)


@dataclass(frozen=True)
class LoopConfig:
    schedule: AnnealSchedule
    gains: Gains
    plant: PlantSpec
    steps: int
    beta0: float = 150.0
    beta_min: float = 0.0
    window_t: int = 5
    weights: Optional[Tuple[float, ...]] = None
    variant: str = FULL
    seed: int = 0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.steps < 1:
            raise ConfigError("steps must be positive")
        if self.window_t < 1:
            raise ConfigError("window_t must be >= 1")
        if self.weights is not None and len(self.weights) != self.window_t:
            raise ConfigError("weights must have window_t entries")
        if self.weights is not None and (
            any(w < 0 for w in self.weights) or not math.isclose(math.fsum(self.weights), 1.0, abs_tol=1e-12)
        ):
            raise ConfigError("weights must be nonnegative and sum to 1")
        if not math.isfinite(self.beta0):
            raise ConfigError("beta0 must be finite")
        reachable = self.plant.g(max(self.beta_min, 0.0))
        if self.schedule.c_final > reachable:
            raise ConfigError(
                f"set point {self.schedule.c_final} unreachable: plant KL is at most g(beta_min)={reachable:.4g}"
            )

    def effective_schedule(self) -> AnnealSchedule:
        if self.variant == STEP_ANNEAL:
            return self.schedule.with_mode(STEP_ONLY)
        return self.schedule

    def to_dict(self) -> dict:
        s = self.schedule
        return {
            "schedule": {
                "c0": s.c0, "c_final": s.c_final, "step_size": s.step_size, "period": s.period,
                "plateau_len": s.plateau_len, "ramp_len": s.ramp_len, "mode": s.mode,
            },
            "gains": {"kp": self.gains.kp, "ki": self.gains.ki},
            "plant": {
                "a": self.plant.a, "amplitude": self.plant.g.amplitude, "rate": self.plant.g.rate,
                "y0": self.plant.y0, "noise_std": self.plant.noise_std,
            },
            "steps": self.steps,
            "beta0": self.beta0,
            "beta_min": self.beta_min,
            "window_t": self.window_t,
            "weights": list(self.weights) if self.weights is not None else None,
            "variant": self.variant,
            "seed": self.seed,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Trajectory:
    setpoint: np.ndarray
    kl_raw: np.ndarray
    kl_smoothed: np.ndarray
    beta: np.ndarray
    final_beta: float = float("nan")
    c_final: float = float("nan")
    metadata: dict = field(default_factory=dict)

    @property
    def step(self) -> np.ndarray:
        return np.arange(len(self.setpoint))

    def __len__(self):
        return len(self.setpoint)

    @property
    def error(self) -> np.ndarray:
        return self.setpoint - self.kl_smoothed

    def rows(self):
        for i in range(len(self)):
            yield (i, float(self.setpoint[i]), float(self.kl_raw[i]),
                   float(self.kl_smoothed[i]), float(self.beta[i]))

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for row in self.rows():
            w.writerow([row[0]] + [repr(v) for v in row[1:]])

    @classmethod
    def read_csv(cls, fh) -> "Trajectory":
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRAJECTORY_HEADER:
            raise ValueError(f"bad trajectory header {header}")
        cols = list(zip(*[[float(v) for v in row] for row in reader if row]))
        if not cols:
            cols = [()] * 5
        return cls(*(np.array(c, dtype=float) for c in cols[1:]))


def run_closed_loop(cfg: LoopConfig, backend=None) -> Trajectory:
    """Simulate ``cfg.steps`` sampling periods of the controlled plant.

    At each step the plant responds to the current weight, the raw KL is
    smoothed, the error against the annealed set point drives the controller,
    and the row logs the weight that produced that step's KL.
    """
    cfg.validate()
    run = backend or kernels.run_loop
    sched = cfg.effective_schedule()
    plant = cfg.plant.build(cfg.seed)
    noisy = plant.noise_std > 0.0
    noise = plant.draw_noise(cfg.steps)
    if cfg.variant == POSITIONAL:
        beta0 = ControllerState.positional(cfg.gains, cfg.beta_min).beta
    else:
        beta0 = cfg.beta0
    weights = np.asarray(cfg.weights if cfg.weights is not None else [], dtype=float)
    kl_raw, kl_s, betas, final_beta = run(
        setpoint_array(sched, cfg.steps), np.ascontiguousarray(noise, dtype=float), noisy,
        plant.a, plant.g.amplitude, plant.g.rate, plant.y,
        float(beta0), cfg.gains.kp, cfg.gains.ki, cfg.beta_min,
        cfg.window_t, weights, cfg.weights is not None,
        cfg.variant == POSITIONAL, cfg.variant != NO_SMOOTHING,
    )
    return Trajectory(
        setpoint=setpoint_array(sched, cfg.steps),
        kl_raw=kl_raw,
        kl_smoothed=kl_s,
        beta=betas,
        final_beta=float(final_beta),
        c_final=sched.c_final,
        metadata={"config_digest": cfg.digest(), "seed": cfg.seed, "backend": kernels.BACKEND
                  if backend is None else getattr(backend, "__module__", "custom")},
    )


def run_batch(configs: Sequence[LoopConfig], workers: int = 1) -> List[Trajectory]:
    """Run independent loops, results in config order regardless of completion order."""
    if workers <= 1:
        return [run_closed_loop(c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_closed_loop, configs))


@dataclass(frozen=True)
class TrackingMetrics:
    max_overshoot: float
    settle_step: int
    steady_err: float
    settled: bool

    def to_dict(self) -> dict:
        return {"max_overshoot": self.max_overshoot, "settle_step": self.settle_step,
                "steady_err": self.steady_err, "settled": self.settled}


def tracking_metrics(traj: Trajectory, c_final: Optional[float] = None, band: float = 0.02) -> TrackingMetrics:
    """Overshoot, 2%-band settling step and steady-state error of a trajectory.

    A trajectory that is outside the band at its last step has
    ``settle_step == len(traj)`` and ``settled == False``.
    """
    n = len(traj)
    if n == 0:
        raise ValueError("empty trajectory")
    if c_final is None:
        c_final = traj.c_final if math.isfinite(traj.c_final) else float(np.max(traj.setpoint))
    excess = traj.kl_smoothed - traj.setpoint
    max_overshoot = max(float(np.max(excess)), 0.0)
    outside = np.abs(excess) > band * c_final
    if outside[-1]:
        settle, settled = n, False
    else:
        bad = np.flatnonzero(outside)
        settle, settled = (int(bad[-1]) + 1 if bad.size else 0), True
    tail = max(1, int(math.ceil(0.05 * n)))
    steady = float(np.mean(np.abs(excess[-tail:])))
    return TrackingMetrics(max_overshoot, settle, steady, settled)


def segment_rise_fractions(cfg: LoopConfig, traj: Trajectory, segment_len: Optional[int] = None):
    """Open-loop rise of the noiseless plant from each schedule segment start.

    From the plant state at the start of each segment, hold the weight logged
    there for ``round(1/a)`` steps and report the covered fraction of the gap
    to ``g(beta)``, alongside the discrete-model prediction ``1-(1+a)^-n``.
    """
    a = cfg.plant.a
    n = int(round(1.0 / a))
    seg = segment_len or cfg.schedule.period
    out = []
    for s in range(0, len(traj), seg):
        y_start = cfg.plant.y0 if s == 0 else float(traj.kl_raw[s - 1])
        beta = float(traj.beta[s])
        target = cfg.plant.g(beta)
        gap = target - y_start
        if abs(gap) < 1e-6 * max(1.0, abs(target)):
            continue
        p = PlantModel(a=a, g=cfg.plant.g, y=y_start)
        for _ in range(n):
            plant_step(p, beta)
        out.append((s, (p.y - y_start) / gap, discrete_rise(a, n)))
    return out
