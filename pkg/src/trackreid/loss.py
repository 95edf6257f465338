"""Temperature-scaled contrastive (NT-Xent) loss.

Batch layout: ``2N`` unit-norm rows where row ``k`` and row ``k + N`` are the
positive pair. For each anchor the softmax runs over every other row (self
excluded, positive included) and the loss is the mean over all ``2N`` anchors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import L2Normalize, Layer
from .errors import ContractViolation, DimensionError


@dataclass
class LossConfig:
    temperature: float = 0.1

    def __post_init__(self):
        if not self.temperature > 0:
            raise ContractViolation(f"temperature must be positive, got {self.temperature}")


def _positive_index(n2: int) -> np.ndarray:
    n = n2 // 2
    return np.concatenate([np.arange(n, n2), np.arange(n)])


def nt_xent_raw(z: np.ndarray, temperature: float):
    """Loss and gradient without the unit-norm precondition."""
    n2 = z.shape[0]
    if z.ndim != 2 or n2 < 4 or n2 % 2:
        raise DimensionError(f"expected an even batch of at least 4 rows, got shape {z.shape}")
    logits = (z @ z.T) / temperature
    np.fill_diagonal(logits, -np.inf)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    denom = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(denom))[:, 0]
    pos = _positive_index(n2)
    rows = np.arange(n2)
    loss = float(np.mean(lse - logits[rows, pos]))
    dlogits = e / denom
    dlogits[rows, pos] -= 1.0
    dlogits /= n2
    dz = (dlogits + dlogits.T) @ z / temperature
    return loss, dz


def nt_xent_loss(z, cfg: LossConfig | None = None, tol: float | None = None):
    """Return ``(loss, d loss / d z)`` for a ``2N x D`` batch of unit-norm embeddings."""
    cfg = cfg or LossConfig()
    z = np.asarray(z)
    if tol is None:
        tol = 1e-6 if z.dtype == np.float64 else 1e-4
    norms = np.linalg.norm(z, axis=-1)
    if z.ndim == 2 and z.size and np.max(np.abs(norms - 1.0)) > tol:
        raise ContractViolation(
            f"embeddings must be unit-norm; worst norm deviation {np.max(np.abs(norms - 1.0)):.3g}")
    return nt_xent_raw(z, cfg.temperature)


class ContrastiveHead(Layer):
    """L2-normalize then NT-Xent, as one layer with a scalar output."""

    def __init__(self, temperature: float = 0.1):
        self.temperature = temperature
        self.norm = L2Normalize()

    def forward(self, params, x):
        z, c = self.norm.forward(params, x)
        loss, dz = nt_xent_raw(z, self.temperature)
        return np.array(loss), (c, dz)

    def backward(self, params, cache, dy):
        c, dz = cache
        dx, _ = self.norm.backward(params, c, dz * dy)
        return dx, {}


class EncoderLoss(Layer):
    """An encoder followed by NT-Xent; used to gradient-check the whole graph."""

    def __init__(self, encoder, temperature: float = 0.1):
        self.encoder, self.temperature = encoder, temperature

    def param_names(self):
        return self.encoder.param_names()

    def init(self, rng, dtype=np.float64):
        return self.encoder.init(rng, dtype)

    def forward(self, params, x):
        z, c = self.encoder.forward(params, x)
        loss, dz = nt_xent_raw(z, self.temperature)
        return np.array(loss), (c, dz)

    def backward(self, params, cache, dy):
        c, dz = cache
        return self.encoder.backward(params, c, dz * dy)
