"""Synthetic tracklet benchmark with known identities.

Each entity has a latent identity vector ``z``; each frame adds a nuisance
vector ``u`` that drifts as an AR(1) process within a tracklet. Observed
features are ``tanh(A z + B u) + noise`` with mixing maps ``A`` and ``B``
drawn once per dataset. One entity is seen as several disjoint tracklets
(fragments) inside its procedure, each with a fresh nuisance trajectory.

Optionally a fraction of frames is degraded (occlusion, blur, fluid): those
frames carry no identity signal and are drawn from a "debris" distribution
``tanh(C v)`` shared by the whole dataset.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import TrackletRecord
from .errors import ConfigurationError, MissingGroundTruthError

AR_COEF = 0.9


def _as_range(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    lo, hi = v
    return int(lo), int(hi)


@dataclass
class SyntheticConfig:
    procedures: int = 20
    entities_per_procedure: int | tuple[int, int] = 2
    tracklets_per_entity: int | tuple[int, int] = (2, 4)
    frames_per_tracklet: int | tuple[int, int] = (20, 40)
    feature_dim: int = 32
    identity_dim: int = 8
    nuisance_dim: int = 8
    view_noise: float = 1.0
    observation_noise: float = 0.1
    identity_gain: float = 1.0
    degraded_rate: float = 0.0
    fps: float = 15.0
    gap_frames: tuple[int, int] = (5, 60)
    confidence_range: tuple[float, float] = (0.3, 1.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("entities_per_procedure", "tracklets_per_entity", "frames_per_tracklet"):
            lo, hi = _as_range(getattr(self, name))
            if lo < 1 or hi < lo:
                raise ConfigurationError(f"{name} must be a count >= 1 or a range lo <= hi")
        if self.procedures < 1 or self.feature_dim < 1 or self.identity_dim < 1 or self.nuisance_dim < 0:
            raise ConfigurationError("procedures and dimensions must be >= 1")
        if self.view_noise < 0 or self.observation_noise < 0:
            raise ConfigurationError("noise levels must be >= 0")
        if not 0 <= self.degraded_rate < 1:
            raise ConfigurationError("degraded_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        for k in ("entities_per_procedure", "tracklets_per_entity", "frames_per_tracklet",
                  "gap_frames", "confidence_range"):
            if isinstance(d.get(k), list):
                d[k] = tuple(d[k])
        return cls(**d)


def _nuisance(rng: np.random.Generator, n: int, dim: int, sigma: float) -> np.ndarray:
    u = np.empty((n, dim))
    innov = math.sqrt(1 - AR_COEF**2)
    u[0] = sigma * rng.standard_normal(dim)
    for t in range(1, n):
        u[t] = AR_COEF * u[t - 1] + innov * sigma * rng.standard_normal(dim)
    return u


def generate_dataset(cfg: SyntheticConfig) -> tuple[list[TrackletRecord], dict[str, str]]:
    """Return ``(tracklets, {tracklet_id: entity_id})``; deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    F, k, ud = cfg.feature_dim, cfg.identity_dim, cfg.nuisance_dim
    A = rng.standard_normal((F, k)) * (cfg.identity_gain / math.sqrt(k))
    B = rng.standard_normal((F, ud)) / math.sqrt(max(ud, 1))
    C = rng.standard_normal((F, k)) / math.sqrt(k)
    e_lo, e_hi = _as_range(cfg.entities_per_procedure)
    t_lo, t_hi = _as_range(cfg.tracklets_per_entity)
    f_lo, f_hi = _as_range(cfg.frames_per_tracklet)
    g_lo, g_hi = cfg.gap_frames
    c_lo, c_hi = cfg.confidence_range

    tracklets: list[TrackletRecord] = []
    truth: dict[str, str] = {}
    for p in range(cfg.procedures):
        proc_id = f"p{p:04d}"
        n_ent = int(rng.integers(e_lo, e_hi + 1))
        # (entity, length) per fragment, shuffled into temporal order
        fragments = []
        identities = []
        for e in range(n_ent):
            identities.append(rng.standard_normal(k))
            for _ in range(int(rng.integers(t_lo, t_hi + 1))):
                fragments.append((e, int(rng.integers(f_lo, f_hi + 1))))
        order = rng.permutation(len(fragments))
        frame = int(rng.integers(0, g_hi + 1))
        for ti, fi in enumerate(order):
            e, n = fragments[fi]
            ent_id = f"{proc_id}-e{e}"
            signal = A @ identities[e]
            if ud and cfg.view_noise > 0:
                u = _nuisance(rng, n, ud, cfg.view_noise)
                pre = signal[None, :] + u @ B.T
            else:
                pre = np.broadcast_to(signal, (n, F))
            feats = np.tanh(pre)
            if cfg.degraded_rate > 0:
                bad = rng.random(n) < cfg.degraded_rate
                feats[bad] = np.tanh(rng.standard_normal((int(bad.sum()), k)) @ C.T)
            if cfg.observation_noise > 0:
                feats = feats + cfg.observation_noise * rng.standard_normal((n, F))
            idx = frame + np.arange(n)
            frame = int(idx[-1]) + int(rng.integers(g_lo, g_hi + 1))
            tid = f"{proc_id}-t{ti:02d}"
            tracklets.append(TrackletRecord(
                tracklet_id=tid, procedure_id=proc_id, entity_id=ent_id,
                frame_index=idx, timestamp=idx / cfg.fps,
                confidence=rng.uniform(c_lo, c_hi, size=n),
                features=np.array(feats),
            ))
            truth[tid] = ent_id
    return tracklets, truth


def random_class_map(entities: Sequence[str], seed: int, positive_rate: float = 0.5) -> dict[str, int]:
    rng = np.random.default_rng(seed)
    ents = sorted(set(entities))
    return {e: int(v) for e, v in zip(ents, rng.random(len(ents)) < positive_rate)}


def inject_frame_scores(tracklets: Sequence[TrackletRecord], class_map: Mapping[str, int],
                        separability: float, seed: int, sigma: float = 0.25) -> dict[str, np.ndarray]:
    """Per-frame classifier scores: ``clip(Normal(mu_label, sigma), 0, 1)``.

    ``mu`` is ``0.5 +/- separability / 2`` for labels 1 / 0.
    """
    rng = np.random.default_rng(seed)
    out: dict[str, np.ndarray] = {}
    for t in tracklets:
        if t.entity_id is None or t.entity_id not in class_map:
            raise MissingGroundTruthError(f"tracklet {t.tracklet_id} has no class label")
        label = class_map[t.entity_id]
        if label not in (0, 1):
            raise ConfigurationError(f"class labels must be binary, got {label!r}")
        mu = 0.5 + separability / 2 if label == 1 else 0.5 - separability / 2
        out[t.tracklet_id] = np.clip(mu + sigma * rng.standard_normal(len(t)), 0.0, 1.0)
    return out
