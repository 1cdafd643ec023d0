"""First-order surrogate of the KL response to the KL weight, and its identification.

The training process is modelled as the sampled first-order system

    y(t) = y(t-1) / (1 + a) + a / (1 + a) * g(beta(t))

where ``g(beta) = A * exp(-k * beta)`` is the KL the model would converge to
under a fixed weight ``beta``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import IdentificationError

# y(1/a) / C' for the continuous open-loop response
RISE_FRACTION = 1.0 - math.exp(-1.0)


@dataclass(frozen=True)
class ExpMap:
    """Steady-state KL as a function of the weight: ``A * exp(-k * x)``."""

    amplitude: float
    rate: float

    def __post_init__(self):
        if not (self.amplitude > 0.0 and math.isfinite(self.amplitude)):
            raise ValueError(f"amplitude must be positive, got {self.amplitude!r}")
        if not (self.rate > 0.0 and math.isfinite(self.rate)):
            raise ValueError(f"rate must be positive, got {self.rate!r}")

    def __call__(self, x: float) -> float:
        return self.amplitude * math.exp(-self.rate * x)

    def derivative(self, x: float) -> float:
        return -self.rate * self.amplitude * math.exp(-self.rate * x)

    def inverse(self, y: float) -> float:
        if not 0.0 < y:
            raise ValueError(f"g is only invertible on (0, A], got {y!r}")
        return -math.log(y / self.amplitude) / self.rate


@dataclass(frozen=True)
class PlantPreset:
    name: str
    a: float
    g: ExpMap
    # conservative bound on g' used for the stability check
    g_prime_min: float


PRESETS = {
    "mnist": PlantPreset("mnist", 1.0 / 5000.0, ExpMap(26.38, 0.0476), -1.26),
    "dsprites": PlantPreset("dsprites", 1.0 / 2500.0, ExpMap(3.2 / 0.121, 0.121), -3.2),
}


def get_preset(name: str) -> PlantPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown plant preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class PlantModel:
    """Mutable plant state. Owns its random generator, seeded from ``rng_seed``.

    ``y`` is the noiseless KL state; noise only affects the returned sample.
    """

    a: float
    g: ExpMap
    y: float = 0.0
    noise_std: float = 0.0
    rng_seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise ValueError(f"plant parameter a must be positive, got {self.a!r}")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be nonnegative")
        if self.y < 0.0:
            raise ValueError("initial KL must be nonnegative")
        self.rng = np.random.default_rng(self.rng_seed)

    @classmethod
    def from_preset(cls, name: str, **kwargs) -> "PlantModel":
        p = get_preset(name)
        return cls(a=p.a, g=p.g, **kwargs)

    def draw_noise(self, n: int) -> np.ndarray:
        """The next ``n`` noise samples ``plant_step`` would add (advances the RNG)."""
        if self.noise_std == 0.0:
            return np.zeros(n)
        return self.rng.normal(0.0, self.noise_std, size=n)


def plant_step(p: PlantModel, beta: float) -> Tuple[float, PlantModel]:
    if not math.isfinite(beta):
        raise ValueError(f"beta must be finite, got {beta!r}")
    a = p.a
    p.y = p.y / (1.0 + a) + (a / (1.0 + a)) * p.g(beta)
    if p.noise_std == 0.0:
        return p.y, p
    sample = p.y + p.rng.normal(0.0, p.noise_std)
    return (sample if sample > 0.0 else 0.0), p


def discrete_rise(a: float, n: float) -> float:
    """Fraction of a step covered after ``n`` samples by the discrete plant."""
    return 1.0 - (1.0 + a) ** (-n)


def open_loop_response(a: float, c_prime: float, t):
    """Continuous reference response ``C' (1 - exp(-a t))`` from rest."""
    if not a > 0.0:
        raise ValueError(f"a must be positive, got {a!r}")
    if np.ndim(t):
        return c_prime * (1.0 - np.exp(-a * np.asarray(t, dtype=float)))
    return c_prime * (1.0 - math.exp(-a * t))


def fit_exp_map(samples: Iterable[Tuple[float, float]]) -> ExpMap:
    """Least-squares fit of ``ln KL = ln A - k * beta`` on converged-KL samples."""
    pts = [(float(b), float(y)) for b, y in samples]
    if len(pts) < 2:
        raise IdentificationError("need at least 2 (beta, KL) samples")
    x = np.array([b for b, _ in pts])
    y = np.array([v for _, v in pts])
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        raise IdentificationError("samples must be finite")
    if np.any(y <= 0.0):
        raise IdentificationError("converged KL values must be positive")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0 or np.ptp(x) == 0.0:
        raise IdentificationError("need at least two distinct beta values")
    ly = np.log(y)
    slope = float(xc @ (ly - ly.mean())) / sxx
    intercept = float(ly.mean() - slope * x.mean())
    if not slope < 0.0:
        raise IdentificationError(
            f"plant not monotone decreasing (fitted slope {slope:+.4g}); "
            "the stability analysis requires g' < 0"
        )
    return ExpMap(amplitude=math.exp(intercept), rate=-slope)


def crossing_time(trajectory: Sequence[Tuple[float, float]], level: float) -> Optional[float]:
    """First time the samples reach ``level``, linearly interpolated; None if never."""
    prev = None
    for t, y in trajectory:
        if y >= level:
            if prev is None:
                return float(t)
            t0, y0 = prev
            return t0 + (level - y0) * (t - t0) / (y - y0)
        prev = (t, y)
    return None


def estimate_a(trajectory: Sequence[Tuple[float, float]], c_prime: float) -> float:
    """Identify ``a = 1 / t*`` where ``t*`` is the 63.2% rise time."""
    if not c_prime > 0.0:
        raise IdentificationError("final value C' must be positive")
    pts = sorted((float(t), float(y)) for t, y in trajectory)
    t_star = crossing_time(pts, RISE_FRACTION * c_prime)
    if t_star is None:
        raise IdentificationError(
            f"insufficient rise: trajectory never reaches {RISE_FRACTION:.3f} of C'={c_prime}"
        )
    if t_star <= pts[0][0] or t_star <= 0.0:
        raise IdentificationError("trajectory already above the 63.2% level at its first sample")
    return 1.0 / t_star


def write_step_kl_csv(path, rows: Iterable[Tuple[int, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "kl"])
        for t, y in rows:
            w.writerow([int(t), repr(float(y))])


def read_two_column_csv(path, header: Tuple[str, str]) -> List[Tuple[float, float]]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or tuple(c.strip() for c in first) != header:
            raise ValueError(f"{path}: expected header {','.join(header)}, got {first}")
        out = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{i}: expected 2 columns")
            out.append((float(row[0]), float(row[1])))
    return out
