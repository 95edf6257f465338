"""LARS (for the contrastive encoders) and Adam, over flat named-parameter dicts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Params
from .errors import ConfigurationError


@dataclass
class LarsConfig:
    lr: float = 0.01
    trust_coef: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    eps: float = 1e-9

    def __post_init__(self):
        if not (self.lr > 0 and self.trust_coef > 0 and 0 <= self.momentum < 1):
            raise ConfigurationError(f"invalid LARS settings: {self}")


def trust_ratio(w: np.ndarray, g: np.ndarray, cfg: LarsConfig) -> float:
    w_norm = float(np.linalg.norm(w))
    g_norm = float(np.linalg.norm(g))
    if w_norm > 0 and g_norm > 0:
        return cfg.trust_coef * w_norm / (g_norm + cfg.eps)
    return 1.0


def lars_step(params: Params, grads: Params, state: Params, cfg: LarsConfig,
              names=None) -> tuple[Params, Params]:
    """One LARS update; returns new ``(params, state)`` without touching the inputs.

    Tensors missing from ``grads`` (or not in ``names``) are left unchanged.
    """
    new_params = dict(params)
    new_state = dict(state)
    for name in (names if names is not None else grads):
        if name not in grads:
            continue
        w = params[name]
        g = grads[name] + cfg.weight_decay * w if cfg.weight_decay else grads[name]
        lam = trust_ratio(w, g, cfg)
        v = state.get(name)
        v = cfg.lr * lam * g if v is None else cfg.momentum * v + cfg.lr * lam * g
        new_state[name] = v
        new_params[name] = (w - v).astype(w.dtype, copy=False)
    return new_params, new_state


@dataclass
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError(f"invalid Adam settings: {self}")


def adam_step(params: Params, grads: Params, state: dict, cfg: AdamConfig) -> tuple[Params, dict]:
    t = state.get("t", 0) + 1
    m_all, v_all = dict(state.get("m", {})), dict(state.get("v", {}))
    new_params = dict(params)
    for name, g in grads.items():
        m = cfg.beta1 * m_all.get(name, 0.0) + (1 - cfg.beta1) * g
        v = cfg.beta2 * v_all.get(name, 0.0) + (1 - cfg.beta2) * g * g
        m_all[name], v_all[name] = m, v
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
        w = params[name]
        new_params[name] = (w - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(w.dtype, copy=False)
    return new_params, {"t": t, "m": m_all, "v": v_all}
