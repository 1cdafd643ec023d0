"""Two-layer MLP VAE with hand-written backward pass and Adam.

Encoder ``x -> relu -> (mu, logvar)``, decoder ``z -> relu -> logits`` for a
Bernoulli likelihood. Everything is float64 numpy.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0

PARAM_NAMES = ("W1", "b1", "Wmu", "bmu", "Wlv", "blv", "W3", "b3", "W4", "b4")


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.90
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def update(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in PARAM_NAMES:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class ToyVae:
    input_dim: int
    hidden_dim: int = 128
    latent_dim: int = 6
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: Adam = field(default_factory=Adam)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int = 128, latent_dim: int = 6,
             rng: np.random.Generator = None, lr: float = 1e-4) -> "ToyVae":
        rng = rng if rng is not None else np.random.default_rng(0)

        def dense(n_in, n_out):
            return rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))

        d, h, k = input_dim, hidden_dim, latent_dim
        params = {
            "W1": dense(d, h), "b1": np.zeros(h),
            "Wmu": dense(h, k) * 0.1, "bmu": np.zeros(k),
            "Wlv": dense(h, k) * 0.1, "blv": np.zeros(k),
            "W3": dense(k, h), "b3": np.zeros(h),
            "W4": dense(h, d), "b4": np.zeros(d),
        }
        return cls(d, h, k, params, Adam(lr=lr))

    def encode(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        p = self.params
        h1 = np.maximum(x @ p["W1"] + p["b1"], 0.0)
        mu = h1 @ p["Wmu"] + p["bmu"]
        logvar = np.clip(h1 @ p["Wlv"] + p["blv"], LOGVAR_MIN, LOGVAR_MAX)
        return mu, logvar

    def decode_logits(self, z: np.ndarray) -> np.ndarray:
        p = self.params
        return np.maximum(z @ p["W3"] + p["b3"], 0.0) @ p["W4"] + p["b4"]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    # -- persistence: JSON shape header, then float64 little-endian weights --

    def save(self, fh) -> None:
        header = {
            "input_dim": self.input_dim, "hidden_dim": self.hidden_dim, "latent_dim": self.latent_dim,
            "params": [[n, list(self.params[n].shape)] for n in PARAM_NAMES],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in PARAM_NAMES:
            fh.write(np.ascontiguousarray(self.params[n], dtype="<f8").tobytes())

    @classmethod
    def load(cls, fh) -> "ToyVae":
        (n_header,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n_header))
        params = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            params[name] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).astype(float)
        return cls(header["input_dim"], header["hidden_dim"], header["latent_dim"], params)


@dataclass
class ElboTerms:
    recon_nll: float
    kl_total: float
    kl_per_dim: np.ndarray
    loss: float
    grads: Dict[str, np.ndarray] = None


def _softplus(u):
    return np.logaddexp(0.0, u)


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def elbo_terms(model: ToyVae, batch: np.ndarray, beta: float, rng: np.random.Generator = None,
               eps: np.ndarray = None, grads: bool = True) -> ElboTerms:
    """Loss ``recon_nll + beta * KL`` on one batch, with parameter gradients.

    ``recon_nll`` is the Bernoulli negative log-likelihood summed over pixels
    and averaged over the batch; the KL is the closed form against N(0, I).
    The reparameterisation noise comes from ``eps`` if given, else from ``rng``.
    """
    p = model.params
    x = batch
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if eps is None:
        eps = rng.standard_normal((n, model.latent_dim))

    pre1 = x @ p["W1"] + p["b1"]
    h1 = np.maximum(pre1, 0.0)
    mu = h1 @ p["Wmu"] + p["bmu"]
    lv_raw = h1 @ p["Wlv"] + p["blv"]
    lv = np.clip(lv_raw, LOGVAR_MIN, LOGVAR_MAX)
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    pre2 = z @ p["W3"] + p["b3"]
    h2 = np.maximum(pre2, 0.0)
    logits = h2 @ p["W4"] + p["b4"]

    recon = float(np.sum(_softplus(logits) - x * logits) / n)
    var = np.exp(lv)
    kl_per_dim = 0.5 * np.mean(mu * mu + var - lv - 1.0, axis=0)
    kl_total = float(np.sum(kl_per_dim))
    loss = recon + beta * kl_total
    out = ElboTerms(recon, kl_total, kl_per_dim, loss)
    if not grads:
        return out

    d_logits = (_sigmoid(logits) - x) / n
    g = {"W4": h2.T @ d_logits, "b4": d_logits.sum(axis=0)}
    d_pre2 = (d_logits @ p["W4"].T) * (pre2 > 0.0)
    g["W3"] = z.T @ d_pre2
    g["b3"] = d_pre2.sum(axis=0)
    d_z = d_pre2 @ p["W3"].T
    d_mu = d_z + (beta / n) * mu
    d_lv = d_z * eps * 0.5 * std + (beta / n) * 0.5 * (var - 1.0)
    d_lv = d_lv * ((lv_raw > LOGVAR_MIN) & (lv_raw < LOGVAR_MAX))
    g["Wmu"] = h1.T @ d_mu
    g["bmu"] = d_mu.sum(axis=0)
    g["Wlv"] = h1.T @ d_lv
    g["blv"] = d_lv.sum(axis=0)
    d_pre1 = (d_mu @ p["Wmu"].T + d_lv @ p["Wlv"].T) * (pre1 > 0.0)
    g["W1"] = x.T @ d_pre1
    g["b1"] = d_pre1.sum(axis=0)
    out.grads = g
    return out
