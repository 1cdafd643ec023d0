"""Time the compiled closed-loop kernel against the pure-Python twin.

    python3 benchmarks/bench_kernels.py [--steps N] [--repeat R]
"""
import argparse
import time

import numpy as np

from betactl import kernels
from betactl.control import Gains
from betactl.plant import PRESETS
from betactl.schedule import AnnealSchedule
from betactl.simloop import LoopConfig, PlantSpec, run_closed_loop


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    ds = PRESETS["dsprites"]
    cfg = LoopConfig(
        schedule=AnnealSchedule(c0=0.5, c_final=20.0, step_size=0.15, period=6000, plateau_len=5000, ramp_len=1000),
        gains=Gains(0.01, 0.005), plant=PlantSpec(a=ds.a, g=ds.g, noise_std=0.05), steps=args.steps,
    )
    if kernels.compiled_run_loop is None:
        raise SystemExit("compiled extension not built; run pip install -e . --no-build-isolation")
    t_c, traj_c = best_of(lambda: run_closed_loop(cfg, backend=kernels.compiled_run_loop), args.repeat)
    t_p, traj_p = best_of(lambda: run_closed_loop(cfg, backend=kernels.python_run_loop), args.repeat)
    same = all(np.array_equal(getattr(traj_c, k), getattr(traj_p, k)) for k in ("kl_raw", "kl_smoothed", "beta"))
    print(f"steps={args.steps} repeat={args.repeat}")
    print(f"compiled  {t_c * 1e3:9.2f} ms  ({t_c / args.steps * 1e9:7.1f} ns/step)")
    print(f"python    {t_p * 1e3:9.2f} ms  ({t_p / args.steps * 1e9:7.1f} ns/step)")
    print(f"speedup   {t_p / t_c:9.1f}x   bit-identical: {same}")


if __name__ == "__main__":
    main()
