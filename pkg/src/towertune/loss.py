"""Similarity distribution matching: KL between temperature-softmaxed
similarity rows and identity-normalized label rows, summed over both
retrieval directions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError


@dataclass
class LossConfig:
    tau: float = 0.02
    eps: float = 1e-8

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if self.eps <= 0:
            raise ConfigError(f"label guard eps must be positive, got {self.eps}")


def match_matrix(identities) -> np.ndarray:
    """y[i, j] = 1.0 where samples i and j share an identity."""
    ids = np.asarray(identities).reshape(-1)
    return (ids[:, None] == ids[None, :]).astype(np.float64)


def sdm_directional(sim: Tensor, y: np.ndarray, cfg: LossConfig) -> Tensor:
    """Mean over rows of KL(p_i || q_i) with p_i = softmax(sim_i / tau) and
    q_i the row-normalized match labels (eps-guarded inside the log)."""
    if sim.ndim != 2:
        raise DimensionError(f"similarity matrix must be 2-D, got {sim.shape}")
    b, b2 = sim.shape
    if b != b2:
        raise DimensionError(f"similarity matrix must be square, got {sim.shape}")
    if y.shape != sim.shape:
        raise DimensionError(
            f"label matrix {y.shape} does not match similarities {sim.shape}")
    row_sums = y.sum(axis=1, keepdims=True)
    if (row_sums == 0).any():
        raise DimensionError("every label row needs at least one match")
    q = y / row_sums

    p = ad.softmax(ad.scale(sim, 1.0 / cfg.tau), axis=1)
    # p * (log p - log(q + eps)); log p stays on the graph, q is constant
    log_ratio = ad.add(ad.log(p), Tensor(-np.log(q + cfg.eps)))
    per_entry = ad.mul(p, log_ratio)
    return ad.scale(ad.tsum(per_entry), 1.0 / b)


def sdm_total(sim: Tensor, y: np.ndarray, cfg: LossConfig) -> Tensor:
    """Image-to-text plus text-to-image directions."""
    forward = sdm_directional(sim, y, cfg)
    backward = sdm_directional(ad.transpose(sim), y.T, cfg)
    return ad.add(forward, backward)
