import io
import math

import numpy as np
import pytest

from betactl.control import Gains
from betactl.errors import ConfigError
from betactl.plant import PRESETS, ExpMap
from betactl.schedule import AnnealSchedule
from betactl.simloop import (
    NO_SMOOTHING,
    POSITIONAL,
    STEP_ANNEAL,
    TRAJECTORY_HEADER,
    LoopConfig,
    PlantSpec,
    Trajectory,
    run_batch,
    run_closed_loop,
    tracking_metrics,
)
from betactl.stability import check_stability

DS = PRESETS["dsprites"]
REFERENCE_SCHED = AnnealSchedule(c0=0.5, c_final=20.0, step_size=0.15, period=6000, plateau_len=5000, ramp_len=1000)
FAST_SCHED = AnnealSchedule(c0=1.0, c_final=10.0, step_size=1.0, period=100, plateau_len=80, ramp_len=20)


def fast_cfg(**kw):
    base = dict(schedule=FAST_SCHED, gains=Gains(0.5, 0.05), plant=PlantSpec(a=0.05, g=DS.g),
                steps=4000, beta0=30.0)
    base.update(kw)
    return LoopConfig(**base)


def test_equilibrium_is_held():
    c = 12.0
    sched = AnnealSchedule(c0=c, c_final=c, step_size=1.0, period=10, plateau_len=5, ramp_len=5)
    beta_eq = DS.g.inverse(c)
    cfg = LoopConfig(schedule=sched, gains=Gains(0.01, 0.005), plant=PlantSpec(a=DS.a, g=DS.g, y0=c),
                     steps=2000, beta0=beta_eq)
    traj = run_closed_loop(cfg)
    np.testing.assert_allclose(traj.kl_smoothed, c, rtol=1e-12)
    np.testing.assert_allclose(traj.beta, beta_eq, rtol=1e-9)
    m = tracking_metrics(traj)
    assert m.settle_step == 0 and m.settled
    assert m.max_overshoot == pytest.approx(0.0, abs=1e-12)
    assert m.steady_err == pytest.approx(0.0, abs=1e-12)


def test_row_invariants_and_reproducibility():
    cfg = fast_cfg(plant=PlantSpec(a=0.05, g=DS.g, noise_std=0.5), beta_min=0.2, seed=3)
    a, b = run_closed_loop(cfg), run_closed_loop(cfg)
    for col in ("setpoint", "kl_raw", "kl_smoothed", "beta"):
        assert np.array_equal(getattr(a, col), getattr(b, col))
    assert np.all(a.kl_raw >= 0) and np.all(a.kl_smoothed >= 0)
    assert np.all(a.beta >= 0.2)
    assert a.metadata["config_digest"] == cfg.digest() and a.metadata["seed"] == 3
    c = run_closed_loop(fast_cfg(plant=PlantSpec(a=0.05, g=DS.g, noise_std=0.5), beta_min=0.2, seed=4))
    assert not np.array_equal(a.kl_raw, c.kl_raw)


def test_window_one_equals_no_smoothing():
    for noise in (0.0, 0.4):
        p = PlantSpec(a=0.05, g=DS.g, noise_std=noise)
        full = run_closed_loop(fast_cfg(plant=p, window_t=1, seed=1))
        raw = run_closed_loop(fast_cfg(plant=p, variant=NO_SMOOTHING, seed=1))
        for col in ("kl_raw", "kl_smoothed", "beta"):
            assert np.array_equal(getattr(full, col), getattr(raw, col))
        assert np.array_equal(raw.kl_raw, raw.kl_smoothed)


def test_step_variant_uses_step_schedule():
    traj = run_closed_loop(fast_cfg(variant=STEP_ANNEAL))
    assert traj.setpoint[99] == 1.0 and traj.setpoint[100] == 2.0
    assert traj.setpoint[90] == 1.0


def test_positional_variant_starts_small():
    traj = run_closed_loop(fast_cfg(variant=POSITIONAL))
    assert traj.beta[0] == pytest.approx(0.5 * 0.5)


def test_stable_gains_converge_after_saturation():
    # the reference schedule followed by 20 time constants at the final set point
    sat = REFERENCE_SCHED.saturation_step
    cfg = LoopConfig(schedule=REFERENCE_SCHED, gains=Gains(0.01, 0.005), plant=PlantSpec(a=DS.a, g=DS.g),
                     steps=sat + 20 * 2500)
    traj = run_closed_loop(cfg)
    m = tracking_metrics(traj)
    assert m.steady_err < 1e-3 * 20.0
    assert traj.final_beta == pytest.approx(DS.g.inverse(20.0), rel=1e-3)


@pytest.mark.parametrize("kp,ki,a", [(0.5, 0.05, 0.05), (2.0, 0.5, 0.2), (0.05, 0.2, 0.01), (5.0, 0.01, 0.5)])
def test_stable_gain_convergence_grid(kp, ki, a):
    c = 10.0
    g_eq = -DS.g.rate * c
    r = check_stability(kp, ki, a, g_eq)
    assert r.stable
    # the slowest closed-loop mode, not the plant alone, sets the horizon
    settle = max(20 / a, math.log(1e-6) / math.log(r.spectral_radius))
    steps = FAST_SCHED.saturation_step + int(settle)
    traj = run_closed_loop(fast_cfg(gains=Gains(kp, ki), plant=PlantSpec(a=a, g=DS.g), steps=steps))
    assert tracking_metrics(traj).steady_err < 1e-3 * c


def test_unstable_gains_never_settle():
    a, c = 0.05, 10.0
    g_eq = -DS.g.rate * c
    bound = 4 * (1 + a) / (-a * g_eq)
    kp = 2 * bound
    r = check_stability(kp, 0.05, a, g_eq)
    assert "i" in r.violated_conditions and not r.stable
    traj = run_closed_loop(fast_cfg(gains=Gains(kp, 0.05), plant=PlantSpec(a=a, g=DS.g), steps=20000))
    m = tracking_metrics(traj)
    assert not m.settled and m.settle_step == len(traj)


def test_tracking_metrics_examples():
    n = 1000
    c = np.full(n, 5.0)
    const = Trajectory(c, c.copy(), c.copy(), np.ones(n), c_final=5.0)
    m = tracking_metrics(const)
    assert (m.max_overshoot, m.settle_step, m.steady_err, m.settled) == (0.0, 0, 0.0, True)

    osc = c + np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    m = tracking_metrics(Trajectory(c, osc, osc, np.ones(n), c_final=5.0))
    assert m.settle_step == n and not m.settled
    assert m.max_overshoot == 1.0 and m.steady_err == 1.0

    decay = c + 2.0 * 0.9 ** np.arange(n)
    m = tracking_metrics(Trajectory(c, decay, decay, np.ones(n), c_final=5.0))
    # first index with 2 * 0.9^t <= 0.1
    assert m.settle_step == math.ceil(math.log(0.05) / math.log(0.9))
    assert m.max_overshoot == 2.0
    with pytest.raises(ValueError):
        tracking_metrics(Trajectory(*(np.array([]),) * 4))


def test_csv_roundtrip():
    traj = run_closed_loop(fast_cfg(steps=300, plant=PlantSpec(a=0.05, g=DS.g, noise_std=0.2)))
    buf = io.StringIO()
    traj.write_csv(buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == ",".join(TRAJECTORY_HEADER)
    assert len(text.splitlines()) == 301
    back = Trajectory.read_csv(io.StringIO(text))
    for col in ("setpoint", "kl_raw", "kl_smoothed", "beta"):
        assert np.array_equal(getattr(back, col), getattr(traj, col))


@pytest.mark.parametrize("kw", [
    dict(variant="bogus"),
    dict(steps=0),
    dict(window_t=0),
    dict(weights=(0.5, 0.5)),
    dict(window_t=2, weights=(0.7, 0.7)),
    dict(beta0=float("nan")),
    dict(plant=PlantSpec(a=0.05, g=ExpMap(5.0, 0.1))),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        run_closed_loop(fast_cfg(**kw))


def test_digest_tracks_every_field():
    assert fast_cfg().digest() == fast_cfg().digest()
    assert fast_cfg().digest() != fast_cfg(seed=1).digest()
    assert fast_cfg().digest() != fast_cfg(beta_min=0.1).digest()


def test_batch_preserves_order():
    cfgs = [fast_cfg(seed=s, plant=PlantSpec(a=0.05, g=DS.g, noise_std=0.3), steps=500) for s in range(6)]
    serial = run_batch(cfgs)
    threaded = run_batch(cfgs, workers=4)
    for a, b, cfg in zip(serial, threaded, cfgs):
        assert np.array_equal(a.kl_raw, b.kl_raw)
        assert a.metadata["seed"] == cfg.seed
