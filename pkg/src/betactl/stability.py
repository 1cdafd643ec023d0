"""Local stability of the PI-controlled first-order plant.

The closed loop is linearised at ``(g^-1(C), C, C)`` in the state
``(beta(t), y(t-1), y(t-2))``. Its Jacobian

    [[K1, K2, K3],
     [K4, K5, 0 ],
     [0,  1,  0 ]]

has the characteristic polynomial ``l^3 - (K1+K5) l^2 + (K1 K5 - K2 K4) l - K3 K4``.
Two independent verdicts are produced: Routh-Hurwitz on the polynomial mapped
through ``xi = (l - 1) / (l + 1)``, and the spectral radius from the roots.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import AssumptionError
from .plant import ExpMap

MARGINAL_TOL = 1e-6

CONDITIONS = {
    "i": "Kp+Ki < -4(1+a)/(a g')",
    "ii": "-0.5 Kp^2 a g'^2 - 2[Kp - 4 Ki (1+a)] g' + 8(1+a) > 0",
    "iii": "Ki>0, Kp>0",
}


@dataclass(frozen=True)
class LinearizedSystem:
    kp: float
    ki: float
    a: float
    g_prime_eq: float
    k_entries: Tuple[float, float, float, float, float]

    @property
    def jacobian(self) -> np.ndarray:
        k1, k2, k3, k4, k5 = self.k_entries
        return np.array([[k1, k2, k3], [k4, k5, 0.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class StabilityReport:
    kp: float
    ki: float
    a: float
    g_prime_eq: float
    b_coeffs: Tuple[float, float, float, float]
    routh_stable: bool
    eigenvalues: Tuple[complex, complex, complex]
    spectral_radius: float
    eig_stable: bool
    marginal: bool
    verdicts_agree: bool
    violated_conditions: List[str] = field(default_factory=list)

    @property
    def stable(self) -> bool:
        return self.routh_stable and self.eig_stable

    def to_dict(self) -> dict:
        return {
            "kp": self.kp,
            "ki": self.ki,
            "a": self.a,
            "g_prime_eq": self.g_prime_eq,
            "b_coeffs": list(self.b_coeffs),
            "routh_stable": self.routh_stable,
            "eig_stable": self.eig_stable,
            "marginal": self.marginal,
            "verdicts_agree": self.verdicts_agree,
            "spectral_radius": self.spectral_radius,
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "violated_conditions": list(self.violated_conditions),
            "violated_descriptions": [CONDITIONS[c] for c in self.violated_conditions],
        }


def _check_hypotheses(a: float, g_prime_eq: float) -> None:
    if not (math.isfinite(a) and a > 0.0):
        raise AssumptionError(f"stability assumptions unmet: need a > 0, got a={a!r}")
    if not (math.isfinite(g_prime_eq) and g_prime_eq < 0.0):
        raise AssumptionError(
            f"stability assumptions unmet: need g'(x*) < 0 (KL decreasing in beta), got {g_prime_eq!r}"
        )


def _k_entries(kp, ki, a, g_prime_eq):
    # sig'(0) = 1/4 enters K2 and K3
    return (
        1.0,
        kp / 4.0 + ki,
        -kp / 4.0,
        a * g_prime_eq / (1.0 + a),
        1.0 / (1.0 + a),
    )


def linearize(kp: float, ki: float, a: float, g_prime_eq: float) -> LinearizedSystem:
    _check_hypotheses(a, g_prime_eq)
    if not (kp > 0.0 and ki > 0.0):
        raise AssumptionError(f"controller gains must be positive (Kp>0, Ki>0), got kp={kp!r}, ki={ki!r}")
    return LinearizedSystem(kp, ki, a, g_prime_eq, _k_entries(kp, ki, a, g_prime_eq))


def characteristic_coeffs(sys: LinearizedSystem) -> Tuple[float, float, float, float]:
    """Coefficients ``(c3, c2, c1, c0)`` of ``det(l I - A)``, highest power first."""
    k1, k2, k3, k4, k5 = sys.k_entries
    return (1.0, -(k1 + k5), k1 * k5 - k2 * k4, -k3 * k4)


def routh_coeffs_kform(sys: LinearizedSystem) -> Tuple[float, float, float, float]:
    """Bilinear-mapped coefficients ``(b3, b2, b1, b0)`` expressed in the K entries."""
    k1, k2, k3, k4, k5 = sys.k_entries
    b3 = k1 + k5 + k1 * k5 - k2 * k4 + k3 * k4 + 1.0
    b2 = k1 + k5 - k1 * k5 + k2 * k4 - 3.0 * k3 * k4 + 3.0
    b1 = -k1 - k5 - k1 * k5 + k2 * k4 + 3.0 * k3 * k4 + 3.0
    b0 = -k1 - k5 + k1 * k5 - k2 * k4 - k3 * k4 + 1.0
    return (b3, b2, b1, b0)


def routh_coeffs(sys: LinearizedSystem) -> Tuple[float, float, float, float]:
    """Bilinear-mapped coefficients in closed form of the plant and gain parameters.

    Free of the cancellation the K-form suffers when ``a`` is small.
    """
    kp, ki, a, g = sys.kp, sys.ki, sys.a, sys.g_prime_eq
    ag = a * g
    b3 = (4.0 * a + 8.0 - (kp + 2.0 * ki) * ag) / (2.0 * (1.0 + a))
    b2 = (4.0 * (1.0 + a) + (kp + ki) * ag) / (1.0 + a)
    b1 = a * (4.0 + g * (2.0 * ki - kp)) / (2.0 * (1.0 + a))
    b0 = -ki * ag / (1.0 + a)
    return (b3, b2, b1, b0)


def hurwitz_margin(sys: LinearizedSystem) -> float:
    """Closed form of ``b1*b2 - b3*b0``."""
    kp, ki, a, g = sys.kp, sys.ki, sys.a, sys.g_prime_eq
    num = -0.5 * kp ** 2 * a ** 2 * g ** 2 - 2.0 * a * (kp - 4.0 * ki * (1.0 + a)) * g + 8.0 * a * (1.0 + a)
    return num / (1.0 + a) ** 2


def routh_hurwitz_cubic(b3: float, b2: float, b1: float, b0: float, margin: float = None) -> bool:
    """All roots of ``b3 x^3 + b2 x^2 + b1 x + b0`` in the open left half-plane."""
    if margin is None:
        margin = b1 * b2 - b3 * b0
    return b3 > 0.0 and b2 > 0.0 and b1 > 0.0 and b0 > 0.0 and margin > 0.0


def simplified_conditions(kp: float, ki: float, a: float, g: float) -> List[str]:
    """Identifiers of the violated gain conditions (see ``CONDITIONS``)."""
    violated = []
    if not kp + ki < -4.0 * (1.0 + a) / (a * g):
        violated.append("i")
    if not (-0.5 * kp ** 2 * a * g ** 2 - 2.0 * (kp - 4.0 * ki * (1.0 + a)) * g + 8.0 * (1.0 + a)) > 0.0:
        violated.append("ii")
    if not (ki > 0.0 and kp > 0.0):
        violated.append("iii")
    return violated


def _polyval(c, x):
    return ((c[0] * x + c[1]) * x + c[2]) * x + c[3]


def _dpolyval(c, x):
    return (3.0 * c[0] * x + 2.0 * c[1]) * x + c[2]


def _newton(c, x, iters=3):
    for _ in range(iters):
        f = _polyval(c, x)
        df = _dpolyval(c, x)
        if df == 0:
            break
        x_new = x - f / df
        if abs(_polyval(c, x_new)) >= abs(f):
            break
        x = x_new
    return x


def _real_cubic_root(b: float, c: float, d: float) -> float:
    """One real root of the monic cubic ``x^3 + b x^2 + c x + d`` (Cardano)."""
    shift = b / 3.0
    p = c - b * b / 3.0
    q = 2.0 * b ** 3 / 27.0 - b * c / 3.0 + d
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc >= 0.0:
        s = math.sqrt(disc)
        u = -q / 2.0 + s if q <= 0.0 else -q / 2.0 - s
        cu = math.copysign(abs(u) ** (1.0 / 3.0), u)
        t = cu - p / (3.0 * cu) if cu != 0.0 else 0.0
    else:
        # three real roots; take the largest
        r = math.sqrt(-p / 3.0)
        arg = max(-1.0, min(1.0, (3.0 * q) / (2.0 * p) * math.sqrt(-3.0 / p)))
        t = 2.0 * r * math.cos(math.acos(arg) / 3.0)
    return t - shift


def cubic_roots(c3: float, c2: float, c1: float, c0: float) -> Tuple[complex, complex, complex]:
    """Roots of a real cubic: Cardano for one real root, deflation, then Newton polish."""
    if c3 == 0.0:
        raise ValueError("leading coefficient must be nonzero")
    b, c, d = c2 / c3, c1 / c3, c0 / c3
    mon = (1.0, b, c, d)
    r = _newton(mon, _real_cubic_root(b, c, d), iters=6)
    # x^3 + b x^2 + c x + d = (x - r)(x^2 + e x + f)
    e = b + r
    f = c + r * e
    disc = e * e - 4.0 * f
    if disc >= 0.0:
        sq = math.sqrt(disc)
        q = -0.5 * (e + math.copysign(sq, e))
        z1 = q if q != 0.0 else 0.0
        z2 = f / q if q != 0.0 else 0.0
        pair = (complex(z1), complex(z2))
    else:
        sq = math.sqrt(-disc)
        pair = (complex(-e / 2.0, sq / 2.0), complex(-e / 2.0, -sq / 2.0))
    roots = [complex(r)] + [_newton(mon, z) for z in pair]
    roots.sort(key=lambda z: (-abs(z), -z.imag))
    return tuple(roots)


def bilinear(lam: complex) -> complex:
    """Unit disk to left half-plane: ``(l - 1) / (l + 1)``."""
    return (lam - 1.0) / (lam + 1.0)


def check_stability(kp: float, ki: float, a: float, g_prime_eq: float) -> StabilityReport:
    """Both stability verdicts for the given gains at the given operating point.

    Raises ``AssumptionError`` when ``a <= 0`` or ``g' >= 0``: the analysis does
    not apply there, which is different from an unstable verdict.
    """
    _check_hypotheses(a, g_prime_eq)
    if not (math.isfinite(kp) and math.isfinite(ki)):
        raise ValueError("gains must be finite")
    sys = LinearizedSystem(kp, ki, a, g_prime_eq, _k_entries(kp, ki, a, g_prime_eq))
    b = routh_coeffs(sys)
    routh = routh_hurwitz_cubic(*b, margin=hurwitz_margin(sys))
    eig = cubic_roots(*characteristic_coeffs(sys))
    rho = max(abs(z) for z in eig)
    eig_stable = rho < 1.0
    return StabilityReport(
        kp=kp,
        ki=ki,
        a=a,
        g_prime_eq=g_prime_eq,
        b_coeffs=b,
        routh_stable=routh,
        eigenvalues=eig,
        spectral_radius=rho,
        eig_stable=eig_stable,
        marginal=abs(rho - 1.0) < MARGINAL_TOL,
        verdicts_agree=routh == eig_stable,
        violated_conditions=simplified_conditions(kp, ki, a, g_prime_eq),
    )


def g_prime_at_setpoint(g: ExpMap, setpoint: float) -> float:
    """``g'(g^-1(C))`` for an exponential map, i.e. ``-k * C``."""
    return g.derivative(g.inverse(setpoint))


@dataclass(frozen=True)
class RegionCell:
    kp: float
    ki: float
    routh_stable: bool
    eig_stable: bool
    spectral_radius: float
    violated: Tuple[str, ...]


def stability_region(
    a: float,
    g_prime_eq: float,
    kp_range: Tuple[float, float],
    ki_range: Tuple[float, float],
    resolution: int | Tuple[int, int] = 100,
) -> List[RegionCell]:
    """Evaluate ``check_stability`` on a dense (kp, ki) grid, kp-major order."""
    _check_hypotheses(a, g_prime_eq)
    nx, ny = (resolution, resolution) if isinstance(resolution, int) else resolution
    if nx < 2 or ny < 2:
        raise ValueError("resolution must be >= 2 per axis")
    cells = []
    for kp in np.linspace(kp_range[0], kp_range[1], nx):
        for ki in np.linspace(ki_range[0], ki_range[1], ny):
            r = check_stability(float(kp), float(ki), a, g_prime_eq)
            cells.append(
                RegionCell(float(kp), float(ki), r.routh_stable, r.eig_stable,
                           r.spectral_radius, tuple(r.violated_conditions))
            )
    return cells


REGION_HEADER = ["kp", "ki", "routh_stable", "eig_stable", "spectral_radius", "violated"]


def write_region_csv(fh, cells: Sequence[RegionCell]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REGION_HEADER)
    for c in cells:
        w.writerow([repr(c.kp), repr(c.ki), int(c.routh_stable), int(c.eig_stable),
                    repr(c.spectral_radius), ";".join(c.violated)])
