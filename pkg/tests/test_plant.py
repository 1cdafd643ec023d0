import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from betactl.errors import IdentificationError
from betactl.plant import (
    PRESETS,
    RISE_FRACTION,
    ExpMap,
    PlantModel,
    discrete_rise,
    estimate_a,
    fit_exp_map,
    open_loop_response,
    plant_step,
    read_two_column_csv,
    write_step_kl_csv,
)

MNIST = ExpMap(26.38, 0.0476)


def test_expmap_shape():
    g = MNIST
    assert g(0.0) == 26.38
    assert g.derivative(0.0) == pytest.approx(-1.26, abs=0.01)
    xs = np.linspace(0, 200, 50)
    vals = [g(x) for x in xs]
    assert all(v > 0 for v in vals) and np.all(np.diff(vals) < 0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, 200.0))
def test_expmap_inverse_roundtrip(x):
    y = MNIST(x)
    back = MNIST.inverse(y)
    assert abs(back - x) <= 1e-12 * max(abs(x), 1.0)


def test_presets():
    assert PRESETS["mnist"].a == 1 / 5000
    assert PRESETS["dsprites"].a == 1 / 2500
    assert PRESETS["dsprites"].g.derivative(0.0) == pytest.approx(-3.2, rel=1e-12)
    assert PRESETS["dsprites"].g.amplitude == pytest.approx(26.446, abs=1e-3)
    # equilibrium weight for the MNIST target lies below one
    assert PRESETS["mnist"].g.inverse(26.0) < 1.0


def test_equilibrium_fixed_point():
    g = MNIST
    beta = g.inverse(20.0)
    p = PlantModel(a=0.01, g=g, y=20.0)
    for _ in range(100):
        y, p = plant_step(p, beta)
    assert y == pytest.approx(20.0, rel=1e-12)


def test_single_step_value():
    # g(beta) = 2 for a = 1 from rest gives y = 1
    g = ExpMap(2.0, 1.0)
    y, _ = plant_step(PlantModel(a=1.0, g=g), 0.0)
    assert y == 1.0


def test_discrete_rise_matches_closed_form():
    a, c = 1 / 2500, 20.0
    g = ExpMap(c, 1.0)
    p = PlantModel(a=a, g=g)
    ys = []
    for _ in range(5000):
        y, p = plant_step(p, 0.0)
        ys.append(y)
    t = np.arange(1, 5001)
    np.testing.assert_allclose(ys, c * (1 - (1 + a) ** (-t)), rtol=1e-10)
    assert ys[2499] / c == pytest.approx(1 - (1 + a) ** -2500, rel=1e-12)
    assert ys[2499] / c == pytest.approx(0.6323, abs=5e-4)
    assert discrete_rise(a, 2500) == pytest.approx(RISE_FRACTION, rel=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 0.5), st.floats(0.0, 30.0), st.floats(0.0, 50.0))
def test_geometric_convergence(a, y0, beta):
    g = ExpMap(26.0, 0.05)
    p = PlantModel(a=a, g=g, y=y0)
    target = g(beta)
    for t in range(1, 60):
        y, p = plant_step(p, beta)
        assert abs(y - target) == pytest.approx(abs(y0 - target) * (1 + a) ** (-t), rel=1e-9, abs=1e-12)


def test_noise_is_seeded_and_clipped():
    def run(seed):
        p = PlantModel(a=0.1, g=ExpMap(0.01, 1.0), noise_std=0.5, rng_seed=seed)
        return [plant_step(p, 0.0)[0] for _ in range(200)]

    a, b, c = run(3), run(3), run(4)
    assert a == b and a != c
    assert min(a) == 0.0  # heavy noise around ~0.01 must clip


def test_open_loop_response():
    assert open_loop_response(0.01, 20.0, 0.0) == 0.0
    assert open_loop_response(0.01, 20.0, 100.0) == pytest.approx(0.632 * 20, rel=1e-3)
    assert open_loop_response(0.01, 20.0, 1e6) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        open_loop_response(0.0, 1.0, 1.0)


def test_fit_exact_recovery():
    betas = np.arange(0, 81, 10)
    fit = fit_exp_map([(b, MNIST(b)) for b in betas])
    assert fit.amplitude == pytest.approx(26.38, rel=1e-6)
    assert fit.rate == pytest.approx(0.0476, rel=1e-6)


def test_fit_two_points():
    A = 7.5
    fit = fit_exp_map([(0.0, A), (1.0, A / math.e)])
    assert fit.rate == pytest.approx(1.0, rel=1e-12)
    assert fit.amplitude == pytest.approx(A, rel=1e-12)


def test_fit_noisy_recovery():
    rng = np.random.default_rng(2024)
    betas = np.arange(0, 81, 10)
    ys = [MNIST(b) * (1 + 0.01 * rng.standard_normal()) for b in betas]
    fit = fit_exp_map(zip(betas, ys))
    assert fit.amplitude == pytest.approx(26.38, rel=0.05)
    assert fit.rate == pytest.approx(0.0476, rel=0.05)


@pytest.mark.parametrize("samples", [
    [(0.0, 1.0)],
    [(0.0, 1.0), (1.0, 0.0)],
    [(2.0, 1.0), (2.0, 3.0)],
])
def test_fit_rejects_bad_input(samples):
    with pytest.raises(IdentificationError):
        fit_exp_map(samples)


def test_fit_rejects_increasing():
    with pytest.raises(IdentificationError, match="not monotone decreasing"):
        fit_exp_map([(0.0, 1.0), (1.0, 2.0), (2.0, 4.0)])


def test_estimate_a_from_continuous_curve():
    a, c = 1 / 2500, 20.0
    t = np.arange(0, 20000, 10)
    est = estimate_a(list(zip(t, open_loop_response(a, c, t))), c)
    assert est == pytest.approx(a, rel=0.01)


def test_estimate_a_from_discrete_plant():
    a, c = 1 / 5000, 26.0
    p = PlantModel(a=a, g=ExpMap(c, 1.0))
    traj = [(0, 0.0)] + [(t, plant_step(p, 0.0)[0]) for t in range(1, 20001)]
    assert 1 / estimate_a(traj, c) == pytest.approx(5000, rel=0.01)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-4, 1e-1))
def test_estimate_a_roundtrip(a):
    t = np.linspace(0.0, 5.0 / a, 4001)
    assert estimate_a(list(zip(t, open_loop_response(a, 3.0, t))), 3.0) == pytest.approx(a, rel=0.01)


def test_estimate_a_errors():
    with pytest.raises(IdentificationError, match="insufficient rise"):
        estimate_a([(t, 0.0) for t in range(100)], 1.0)
    with pytest.raises(IdentificationError):
        estimate_a([(0, 0.0), (1, 1.0)], 0.0)


def test_step_kl_csv_roundtrip(tmp_path):
    rows = [(0, 0.0), (1, 0.125), (2, 1 / 3)]
    path = tmp_path / "ol.csv"
    write_step_kl_csv(path, rows)
    raw = path.read_bytes()
    assert raw.startswith(b"step,kl\n") and b"\r" not in raw
    assert read_two_column_csv(path, ("step", "kl")) == [(0.0, 0.0), (1.0, 0.125), (2.0, 1 / 3)]
    with pytest.raises(ValueError):
        read_two_column_csv(path, ("beta", "kl"))
