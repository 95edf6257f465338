"""Two-phase contrastive training of the frame encoder and the joint encoder."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import TrackletRecord
from .diffcore import Params
from .encoders import EncoderConfig, FrameEncoder, JointEncoder
from .loss import LossConfig, nt_xent_loss
from .optim import LarsConfig, lars_step
from .sampling import MULTI_VIEW, SINGLE_FRAME, build_batch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    phase1_steps: int = 1000
    phase2_steps: int = 1000
    N: int = 16
    views_per_sample: int = 8
    split_fractions: tuple[float, float] = (1 / 3, 1 / 3)
    freeze_backbone: bool = False
    precision: str = "float64"
    seed: int = 0
    fps: float = 15.0
    min_duration_s: float = 1.0
    min_high_conf: int = 15
    conf_threshold: float = 0.5
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    # the optimizer's own default rate (0.01) barely moves a desk-scale model
    # within 2000 steps; with trust coefficient 0.001 a rate of 1.0 gives
    # per-step updates of about 0.1% of each tensor's norm
    lars: LarsConfig = field(default_factory=lambda: LarsConfig(lr=1.0))
    loss: LossConfig = field(default_factory=LossConfig)

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "encoder" in d:
            d["encoder"] = EncoderConfig.from_dict(d["encoder"])
        if "lars" in d:
            d["lars"] = LarsConfig(**d["lars"])
        if "loss" in d:
            d["loss"] = LossConfig(**d["loss"])
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class TrainResult:
    params: Params
    losses: list[tuple[int, str, float]]  # (global step, phase, loss)
    config: TrainConfig


def init_params(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float64) -> Params:
    params = FrameEncoder(cfg).init(rng, dtype)
    params.update(JointEncoder(cfg).init(rng, dtype))
    return params


def copy_backbone(params: Params, src: str = "frame", dst: str = "joint") -> Params:
    out = dict(params)
    for k, v in params.items():
        if k.startswith(f"{src}.backbone."):
            out[f"{dst}.backbone." + k[len(src) + 10:]] = v.copy()
    return out


def _train_phase(params, encoder, names, dataset, cfg: TrainConfig, mode, steps, rng,
                 losses, phase, offset):
    state: Params = {}
    for step in range(steps):
        batch = build_batch(dataset, cfg.N, mode, rng, cfg.views_per_sample, cfg.split_fractions)
        x = batch.views.astype(cfg.dtype)
        z, cache = encoder.forward(params, x)
        loss, dz = nt_xent_loss(z, cfg.loss)
        _, grads = encoder.backward(params, cache, dz)
        params, state = lars_step(params, grads, state, cfg.lars, names)
        losses.append((offset + step, phase, loss))
        if step % 100 == 0:
            log.info("%s step %d loss %.4f", phase, step, loss)
    return params


def train_reid(dataset: Sequence[TrackletRecord], cfg: TrainConfig,
               params: Params | None = None) -> TrainResult:
    """Phase 1 trains the frame encoder on within-tracklet frame pairs; phase 2
    trains the joint encoder on pseudo-positive segment pairs, starting from the
    phase-1 backbone. ``dataset`` is expected to be filtered already."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng, batch_rng = (np.random.default_rng(s) for s in seeds)
    if params is None:
        params = init_params(cfg.encoder, init_rng, cfg.dtype)
    params = dict(params)
    losses: list[tuple[int, str, float]] = []

    frame = FrameEncoder(cfg.encoder)
    params = _train_phase(params, frame, frame.param_names(), dataset, cfg, SINGLE_FRAME,
                          cfg.phase1_steps, batch_rng, losses, "frame", 0)

    if cfg.phase2_steps > 0:
        params = copy_backbone(params)
    joint = JointEncoder(cfg.encoder)
    names = joint.own_param_names() if cfg.freeze_backbone else joint.param_names()
    params = _train_phase(params, joint, names, dataset, cfg, MULTI_VIEW,
                          cfg.phase2_steps, batch_rng, losses, "joint", cfg.phase1_steps)
    return TrainResult(params=params, losses=losses, config=cfg)


def write_loss_curve(path, losses) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for step, _, loss in losses:
            w.writerow([step, repr(float(loss))])
