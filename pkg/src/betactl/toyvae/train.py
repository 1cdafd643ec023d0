"""Training the toy VAE with the KL weight driven by the PI controller."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..control import ControllerState, Gains, MovingAverage, pi_step, positional_pi_step, smooth
from ..errors import DivergenceError
from ..schedule import STEP_ONLY, AnnealSchedule, setpoint_at
from ..simloop import FULL, NO_SMOOTHING, POSITIONAL, STEP_ANNEAL, VARIANTS
from .data import FactorDataset
from .metrics import mig_score
from .model import ToyVae, elbo_terms


@dataclass(frozen=True)
class VaeConfig:
    hidden_dim: int = 128
    latent_dim: int = 6
    batch_size: int = 128
    lr: float = 1e-4


@dataclass(frozen=True)
class ControlConfig:
    """Controller and annealing settings; ``fixed_beta`` disables the controller."""

    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    gains: Gains = field(default_factory=lambda: Gains(0.01, 0.005))
    beta0: float = 150.0
    beta_min: float = 0.0
    window_t: int = 5
    variant: str = FULL
    fixed_beta: Optional[float] = None


@dataclass
class TrainLog:
    setpoint: np.ndarray
    kl_total: np.ndarray
    kl_smoothed: np.ndarray
    beta: np.ndarray
    recon_loss: np.ndarray
    kl_per_dim: np.ndarray
    checkpoints: List[dict] = field(default_factory=list)
    mig: float = float("nan")
    recon_final: float = float("nan")

    def __len__(self):
        return len(self.setpoint)

    @property
    def latent_dim(self) -> int:
        return self.kl_per_dim.shape[1]

    def header(self) -> List[str]:
        return ["step", "setpoint", "kl_total", "kl_smoothed", "beta", "recon_loss"] + [
            f"kl_dim_{j}" for j in range(self.latent_dim)
        ]

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.header())
        for i in range(len(self)):
            w.writerow([i] + [repr(float(v)) for v in (
                self.setpoint[i], self.kl_total[i], self.kl_smoothed[i], self.beta[i], self.recon_loss[i]
            )] + [repr(float(v)) for v in self.kl_per_dim[i]])


def _eval_recon(model: ToyVae, x: np.ndarray, eps: np.ndarray) -> Tuple[float, float]:
    t = elbo_terms(model, x, 1.0, eps=eps, grads=False)
    return t.recon_nll, t.kl_total


def train_with_controller(
    dataset: FactorDataset,
    vae_cfg: VaeConfig,
    ctl_cfg: ControlConfig,
    steps: int,
    seed: int = 0,
    eval_every: Optional[int] = None,
    bins: int = 20,
) -> Tuple[ToyVae, TrainLog]:
    """Train for ``steps`` minibatch updates; the weight follows the controller.

    The weight used in step ``t``'s loss is the one logged in row ``t``; the
    batch KL of that step then feeds the smoother and controller to produce
    the weight for step ``t+1``. Checkpoints record MIG and a fixed-noise
    full-dataset reconstruction NLL every ``eval_every`` steps.
    """
    if ctl_cfg.variant not in VARIANTS:
        raise ValueError(f"unknown variant {ctl_cfg.variant!r}")
    if vae_cfg.batch_size < 1 or not vae_cfg.lr > 0.0:
        raise ValueError("batch size and learning rate must be positive")
    rng = np.random.default_rng(seed)
    x_all = dataset.flat
    n = len(x_all)
    model = ToyVae.init(x_all.shape[1], vae_cfg.hidden_dim, vae_cfg.latent_dim, rng=rng, lr=vae_cfg.lr)
    eval_eps = np.random.default_rng(seed + 1_000_003).standard_normal((n, vae_cfg.latent_dim))
    eval_every = eval_every or max(1, steps // 50)

    sched = ctl_cfg.schedule
    if ctl_cfg.variant == STEP_ANNEAL:
        sched = sched.with_mode(STEP_ONLY)
    if ctl_cfg.variant == POSITIONAL:
        state = ControllerState.positional(ctl_cfg.gains, ctl_cfg.beta_min)
        update = positional_pi_step
    else:
        state = ControllerState.initial(ctl_cfg.gains, ctl_cfg.beta0, ctl_cfg.beta_min)
        update = pi_step
    ma = MovingAverage.equal(ctl_cfg.window_t)
    beta = ctl_cfg.fixed_beta if ctl_cfg.fixed_beta is not None else state.beta

    cols = {k: np.empty(steps) for k in ("setpoint", "kl_total", "kl_smoothed", "beta", "recon_loss")}
    kl_dims = np.empty((steps, vae_cfg.latent_dim))
    checkpoints = []
    bsz = min(vae_cfg.batch_size, n)
    for t in range(steps):
        c = setpoint_at(sched, t)
        idx = rng.choice(n, bsz, replace=False)
        terms = elbo_terms(model, x_all[idx], beta, rng)
        if not (math.isfinite(terms.loss) and all(np.all(np.isfinite(g)) for g in terms.grads.values())):
            raise DivergenceError(f"non-finite loss or gradient at step {t}", step=t)
        model.optimizer.update(model.params, terms.grads)
        if not model.all_finite():
            raise DivergenceError(f"non-finite parameters after update at step {t}", step=t)

        if ctl_cfg.variant == NO_SMOOTHING:
            y_s = terms.kl_total
        else:
            y_s, ma = smooth(ma, terms.kl_total)
        cols["setpoint"][t] = c
        cols["kl_total"][t] = terms.kl_total
        cols["kl_smoothed"][t] = y_s
        cols["beta"][t] = beta
        cols["recon_loss"][t] = terms.recon_nll
        kl_dims[t] = terms.kl_per_dim

        if ctl_cfg.fixed_beta is None:
            beta, state = update(state, c - y_s)

        if (t + 1) % eval_every == 0 or t == steps - 1:
            recon, kl = _eval_recon(model, x_all, eval_eps)
            checkpoints.append({"step": t + 1, "mig": mig_score(model, dataset, bins),
                                "recon": recon, "kl": kl})

    log = TrainLog(kl_per_dim=kl_dims, checkpoints=checkpoints, **cols)
    log.mig = checkpoints[-1]["mig"]
    log.recon_final = checkpoints[-1]["recon"]
    return model, log


def plain_vae_kl(dataset: FactorDataset, vae_cfg: VaeConfig, steps: int, seed: int = 0, tail: float = 0.1) -> float:
    """Converged batch KL of an unweighted VAE run (mean over the final ``tail`` of steps)."""
    if steps < 1 or not 0.0 < tail <= 1.0:
        raise ValueError("steps must be positive and tail in (0, 1]")
    _, log = train_with_controller(dataset, vae_cfg, ControlConfig(fixed_beta=1.0), steps, seed=seed,
                                   eval_every=steps)
    n = max(1, int(round(tail * steps)))
    return float(np.mean(log.kl_total[-n:]))
