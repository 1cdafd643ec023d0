"""Command-line entry point: simulate, stability, identify, train-toy.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
Every output file is written to a temporary sibling and renamed into place,
so a failed command leaves no partial output behind.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .control import Gains
from .errors import AssumptionError, ConfigError, DivergenceError, IdentificationError
from .plant import PRESETS, ExpMap, estimate_a, fit_exp_map, read_two_column_csv
from .schedule import HYBRID, AnnealSchedule, recommend_setpoint
from .simloop import VARIANTS, LoopConfig, PlantSpec, run_closed_loop, tracking_metrics
from .stability import CONDITIONS, check_stability, stability_region, write_region_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

CONDITION_NAMES = {"i": "Kp+Ki bound", "ii": "Hurwitz margin", "iii": "Ki>0"}
TOY_VARIANTS = {"full": "full", "positional": "no_init_positional",
                "step-anneal": "step_only_anneal", "no-smooth": "no_smoothing"}


# -- configuration schema ---------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class ScheduleCfg(_Strict):
    c0: float = 0.5
    c_final: float = 20.0
    step_size: float = 0.15
    period: int = 6000
    plateau_len: int = 5000
    ramp_len: int = 1000
    mode: Literal["hybrid", "step_only"] = HYBRID

    def build(self, c_final: Optional[float] = None) -> AnnealSchedule:
        d = self.model_dump()
        if c_final is not None:
            d["c_final"] = c_final
        return AnnealSchedule(**d)


class GainsCfg(_Strict):
    kp: float = 0.01
    ki: float = 0.005


class PlantCfg(_Strict):
    preset: Optional[Literal["mnist", "dsprites"]] = None
    a: Optional[float] = None
    amplitude: Optional[float] = None
    rate: Optional[float] = None
    y0: float = 0.0
    noise_std: float = 0.0

    @model_validator(mode="after")
    def _one_source(self):
        explicit = (self.a, self.amplitude, self.rate)
        if self.preset is None and any(v is None for v in explicit):
            raise ValueError("plant needs either a preset or all of a, amplitude, rate")
        if self.preset is not None and any(v is not None for v in explicit):
            raise ValueError("plant preset and explicit parameters are mutually exclusive")
        return self

    def build(self) -> PlantSpec:
        if self.preset is not None:
            p = PRESETS[self.preset]
            return PlantSpec(a=p.a, g=p.g, y0=self.y0, noise_std=self.noise_std)
        return PlantSpec(a=self.a, g=ExpMap(self.amplitude, self.rate), y0=self.y0, noise_std=self.noise_std)


class SimulateCfg(_Strict):
    schedule: ScheduleCfg = ScheduleCfg()
    gains: GainsCfg = GainsCfg()
    plant: PlantCfg
    steps: int
    beta0: float = 150.0
    beta_min: float = 0.0
    window_t: int = 5
    weights: Optional[Tuple[float, ...]] = None
    variant: Literal[VARIANTS] = "full"
    seed: int = 0
    output: str = "trajectory.csv"

    def loop_config(self, seed: int) -> LoopConfig:
        return LoopConfig(
            schedule=self.schedule.build(), gains=Gains(self.gains.kp, self.gains.ki), plant=self.plant.build(),
            steps=self.steps, beta0=self.beta0, beta_min=self.beta_min, window_t=self.window_t,
            weights=self.weights, variant=self.variant, seed=seed,
        )


class DatasetCfg(_Strict):
    nx: int = 8
    ny: int = 8
    ns: int = 3
    image_size: int = 16


class VaeCfg(_Strict):
    hidden_dim: int = 128
    latent_dim: int = 6
    batch_size: int = 128
    lr: float = 1e-3


class TrainToyCfg(_Strict):
    dataset: DatasetCfg = DatasetCfg()
    vae: VaeCfg = VaeCfg()
    schedule: ScheduleCfg = ScheduleCfg(c0=0.5, c_final=8.5, step_size=0.5, period=1000,
                                        plateau_len=800, ramp_len=200)
    gains: GainsCfg = GainsCfg(kp=1.0, ki=0.01)
    beta0: float = 20.0
    beta_min: float = 0.0
    window_t: int = 5
    variant: Literal[tuple(TOY_VARIANTS)] = "full"
    steps: int = 30000
    seed: int = 0
    eval_every: int = 1000
    bins: int = 20
    plain_steps: int = 8000
    setpoint_fraction: float = 1.0
    output: str = "trainlog.csv"


def load_config(path: str, model):
    """Parse a JSON config file into ``model``; any problem becomes ConfigError."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return model.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}:\n{exc}") from None


def dump_config(cfg: BaseModel) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


# -- output helpers ---------------------------------------------------------

def atomic_write(path: Path, data, binary: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb" if binary else "w", **({} if binary else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_outputs(files: List[Tuple[Path, object, bool]]) -> None:
    """Write every prepared output; called only once all results are computed."""
    for path, data, binary in files:
        atomic_write(path, data, binary)


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def seeded_path(path: Path, seed: Optional[int], suffix: str = None) -> Path:
    path = Path(path)
    stem = path.stem if seed is None else f"{path.stem}_seed{seed}"
    return path.with_name(stem + (suffix if suffix is not None else path.suffix))


def fan_out(fn: Callable, seeds: List[int], workers: int) -> list:
    if workers <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


# -- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config, SimulateCfg)
    out = Path(args.out or cfg.output)
    seeds = args.seeds if args.seeds else [cfg.seed]
    multi = bool(args.seeds)
    try:
        for s in seeds:
            cfg.loop_config(s).validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    def one(seed):
        lc = cfg.loop_config(seed)
        traj = run_closed_loop(lc)
        buf = io.StringIO()
        traj.write_csv(buf)
        metrics = tracking_metrics(traj).to_dict()
        metrics.update(final_beta=traj.final_beta, steps=len(traj), seed=seed,
                       config_digest=lc.digest())
        return buf.getvalue(), metrics

    files = []
    for seed, (csv_text, metrics) in zip(seeds, fan_out(one, seeds, args.workers)):
        path = seeded_path(out, seed if multi else None)
        files.append((path, csv_text, False))
        files.append((path.with_name(path.stem + "_metrics.json"), to_json(metrics), False))
    write_outputs(files)
    for path, _, _ in files:
        print(path)
    return EXIT_OK


def _condition_lines(violated) -> List[str]:
    return [f"condition {CONDITION_NAMES[c]} violated: {CONDITIONS[c]}" for c in violated]


def cmd_stability(args) -> int:
    if args.preset is not None:
        if args.a is not None or args.g_prime is not None:
            raise ConfigError("--preset excludes --a/--g-prime")
        a, g_prime = PRESETS[args.preset].a, PRESETS[args.preset].g_prime_min
    else:
        if args.a is None or args.g_prime is None:
            raise ConfigError("give --preset or both --a and --g-prime")
        a, g_prime = args.a, args.g_prime

    if args.region:
        if args.out is None:
            raise ConfigError("--region needs --out for the CSV")
        if args.resolution < 2:
            raise ConfigError("--resolution must be at least 2")
        cells = stability_region(a, g_prime, tuple(args.kp_range), tuple(args.ki_range), args.resolution)
        buf = io.StringIO()
        write_region_csv(buf, cells)
        write_outputs([(Path(args.out), buf.getvalue(), False)])
        n_stable = sum(c.routh_stable for c in cells)
        print(f"{len(cells)} cells, {n_stable} stable -> {args.out}")
        return EXIT_OK

    if args.kp is None or args.ki is None:
        raise ConfigError("--kp and --ki are required without --region")
    report = check_stability(args.kp, args.ki, a, g_prime)
    verdict = "STABLE" if report.stable else ("MARGINAL" if report.marginal else "UNSTABLE")
    lines = [f"{verdict}: routh={'stable' if report.routh_stable else 'unstable'}, "
             f"eigen={'stable' if report.eig_stable else 'unstable'}, "
             f"spectral_radius={report.spectral_radius!r}"]
    lines += _condition_lines(report.violated_conditions)
    if args.out:
        d = report.to_dict()
        d["verdict"] = verdict
        write_outputs([(Path(args.out), to_json(d), False)])
    print("\n".join(lines))
    return EXIT_OK


def cmd_identify(args) -> int:
    try:
        open_loop = read_two_column_csv(args.open_loop, ("step", "kl"))
        samples = read_two_column_csv(args.samples, ("beta", "kl"))
    except OSError as exc:
        raise ConfigError(f"cannot read input: {exc}") from None
    if not open_loop:
        raise ConfigError("open-loop file has no rows")
    if args.c_prime is not None:
        c_prime = args.c_prime
    else:
        tail = open_loop[-max(1, len(open_loop) // 20):]
        c_prime = sum(v for _, v in tail) / len(tail)
    a = estimate_a(open_loop, c_prime)
    g = fit_exp_map(samples)
    plant = {"a": a, "amplitude": g.amplitude, "rate": g.rate, "y0": 0.0, "noise_std": 0.0}
    result = {"plant": plant, "c_prime": c_prime, "time_constant_steps": 1.0 / a,
              "g_prime_at_zero": g.derivative(0.0)}
    write_outputs([(Path(args.out), to_json(result), False)])
    print(f"a = {a!r} (1/a = {1.0 / a:.6g}), A = {g.amplitude!r}, k = {g.rate!r} -> {args.out}")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .toyvae.data import make_factor_dataset
    from .toyvae.metrics import dimwise_kl_trace
    from .toyvae.train import ControlConfig, VaeConfig, plain_vae_kl, train_with_controller

    cfg = load_config(args.config, TrainToyCfg) if args.config else TrainToyCfg()
    if args.variant:
        cfg = cfg.model_copy(update={"variant": args.variant})
    if args.steps is not None:
        cfg = cfg.model_copy(update={"steps": args.steps})
    out = Path(args.out or cfg.output)
    seeds = args.seeds if args.seeds else [cfg.seed]
    multi = bool(args.seeds)
    try:
        dataset = make_factor_dataset(**cfg.dataset.model_dump())
        vae = VaeConfig(**cfg.vae.model_dump())
        cfg.schedule.build()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.steps < 1 or cfg.eval_every < 1 or cfg.bins < 2:
        raise ConfigError("steps and eval_every must be positive, bins >= 2")

    def one(seed):
        c_final = None
        if cfg.plain_steps > 0:
            c_final = recommend_setpoint(plain_vae_kl(dataset, vae, cfg.plain_steps, seed), cfg.setpoint_fraction)
            c_final = max(c_final, cfg.schedule.c0)
        sched = cfg.schedule.build(c_final)
        ctl = ControlConfig(schedule=sched, gains=Gains(cfg.gains.kp, cfg.gains.ki), beta0=cfg.beta0,
                            beta_min=cfg.beta_min, window_t=cfg.window_t, variant=TOY_VARIANTS[cfg.variant])
        model, log = train_with_controller(dataset, vae, ctl, cfg.steps, seed=seed,
                                           eval_every=cfg.eval_every, bins=cfg.bins)
        csv_buf, ckpt = io.StringIO(), io.BytesIO()
        log.write_csv(csv_buf)
        model.save(ckpt)
        metrics = {
            "seed": seed, "variant": cfg.variant, "c_final": sched.c_final, "mig": log.mig,
            "recon_final": log.recon_final, "final_beta": float(log.beta[-1]),
            "final_kl_smoothed": float(log.kl_smoothed[-1]),
            "activation_steps": dimwise_kl_trace(log), "checkpoints": log.checkpoints,
        }
        return csv_buf.getvalue(), ckpt.getvalue(), metrics

    files = []
    for seed, (csv_text, ckpt, metrics) in zip(seeds, fan_out(one, seeds, args.workers)):
        path = seeded_path(out, seed if multi else None)
        files.append((path, csv_text, False))
        files.append((path.with_suffix(".ckpt"), ckpt, True))
        files.append((path.with_name(path.stem + "_metrics.json"), to_json(metrics), False))
    write_outputs(files)
    for path, _, _ in files:
        print(path)
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

def _add_fan_out(p):
    p.add_argument("--seeds", type=int, nargs="+", help="run once per seed; outputs named <stem>_seed<k>")
    p.add_argument("--workers", type=int, default=1, help="parallel runs for --seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="betactl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="closed-loop simulation of the controlled KL plant")
    p.add_argument("config", help="JSON run config")
    p.add_argument("--out", help="trajectory CSV path (default: config 'output')")
    _add_fan_out(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stability", help="stability verdict or (kp, ki) region sweep")
    p.add_argument("--kp", type=float)
    p.add_argument("--ki", type=float)
    p.add_argument("--a", type=float, help="plant time-constant parameter")
    p.add_argument("--g-prime", type=float, help="slope of the KL map at equilibrium (negative)")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--region", action="store_true", help="sweep a (kp, ki) grid instead")
    p.add_argument("--kp-range", type=float, nargs=2, default=(1e-3, 1.0), metavar=("LO", "HI"))
    p.add_argument("--ki-range", type=float, nargs=2, default=(1e-3, 1.0), metavar=("LO", "HI"))
    p.add_argument("--resolution", type=int, default=100)
    p.add_argument("--out", help="report JSON, or region CSV with --region")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("identify", help="fit plant parameters from open-loop and converged-KL data")
    p.add_argument("open_loop", help="CSV with header step,kl from an open-loop run")
    p.add_argument("samples", help="CSV with header beta,kl of converged KL per fixed weight")
    p.add_argument("--c-prime", type=float, help="final open-loop KL (default: mean of last 5%% of samples)")
    p.add_argument("--out", required=True, help="plant JSON path")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("train-toy", help="train the toy VAE under the KL controller")
    p.add_argument("config", nargs="?", help="JSON training config (defaults if omitted)")
    p.add_argument("--variant", choices=sorted(TOY_VARIANTS))
    p.add_argument("--steps", type=int)
    p.add_argument("--out", help="train log CSV path (default: config 'output')")
    _add_fan_out(p)
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, IdentificationError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
