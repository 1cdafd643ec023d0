"""Disentanglement score (mutual information gap) and per-dimension KL activation."""
from __future__ import annotations

from typing import List, Optional

import numpy as np


def discretize(codes: np.ndarray, bins: int) -> np.ndarray:
    """Equal-frequency binning per column. Equal values always share a bin."""
    codes = np.asarray(codes, dtype=float)
    out = np.empty(codes.shape, dtype=np.int64)
    q = np.linspace(0.0, 1.0, bins + 1)[1:-1]
    for j in range(codes.shape[1]):
        edges = np.quantile(codes[:, j], q)
        out[:, j] = np.searchsorted(edges, codes[:, j], side="right")
    return out


def _entropy(labels: np.ndarray) -> float:
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def discrete_mutual_info(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in mutual information (nats) between two label vectors."""
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


def mutual_info_matrix(codes: np.ndarray, factors: np.ndarray, bins: int = 20) -> np.ndarray:
    """``m[j, k] = I(z_j; v_k)`` with latents discretised into ``bins`` bins."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    disc = discretize(codes, bins)
    return np.array([[discrete_mutual_info(disc[:, j], factors[:, k])
                      for k in range(factors.shape[1])] for j in range(disc.shape[1])])


def mig_per_factor(codes: np.ndarray, factors: np.ndarray, bins: int = 20) -> np.ndarray:
    m = mutual_info_matrix(codes, factors, bins)
    if m.shape[0] < 2:
        raise ValueError("need at least two latent dimensions")
    top = np.sort(m, axis=0)[::-1]
    h = np.array([_entropy(factors[:, k]) for k in range(factors.shape[1])])
    return (top[0] - top[1]) / h


def mig_from_codes(codes: np.ndarray, factors: np.ndarray, bins: int = 20) -> float:
    return float(np.mean(mig_per_factor(codes, factors, bins)))


def mig_score(model, dataset, bins: int = 20) -> float:
    """MIG of the posterior means over the whole dataset; lies in [0, 1]."""
    mu, _ = model.encode(dataset.flat)
    return mig_from_codes(mu, dataset.factors, bins)


def running_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` rows (shorter at the start)."""
    x = np.asarray(x, dtype=float)
    c = np.cumsum(np.vstack([np.zeros((1,) + x.shape[1:]), x]), axis=0)
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    n = (idx - lo).reshape((-1,) + (1,) * (x.ndim - 1))
    return (c[idx] - c[lo]) / n


def dimwise_kl_trace(log, threshold: float = 0.1, window: int = 50) -> List[Optional[int]]:
    """First step at which each latent's running-mean KL exceeds ``threshold``.

    ``log`` is a training log with a ``kl_per_dim`` table, or the table itself.
    """
    kl = np.asarray(getattr(log, "kl_per_dim", log), dtype=float)
    if kl.size == 0:
        return []
    rm = running_mean(kl, window)
    out = []
    for j in range(kl.shape[1]):
        hits = np.flatnonzero(rm[:, j] > threshold)
        out.append(int(hits[0]) if hits.size else None)
    return out
