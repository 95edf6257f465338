"""Frame encoder and joint multi-view (CLS-token transformer) encoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .diffcore import (
    L2Normalize,
    LayerNorm,
    Params,
    TransformerBlock,
    mlp,
)
from .errors import (
    DegenerateAverageError,
    DimensionError,
    EmptyTrackletError,
)


@dataclass
class EncoderConfig:
    feature_dim: int = 32
    hidden_dim: int = 64
    embed_dim: int = 128
    backbone_widths: list[int] = field(default_factory=lambda: [64])
    head_hidden: int = 64
    heads: int = 4
    ffn_mult: int = 4
    blocks: int = 3
    max_views: int = 8
    prenorm: bool = True
    final_norm: bool = True
    ln_eps: float = 1e-5
    cls_std: float = 0.02

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


class FrameEncoder:
    """Backbone MLP (features -> representation) plus projection head.

    The backbone output is the representation the joint encoder consumes;
    the head maps it to the unit-norm embedding.
    """

    def __init__(self, cfg: EncoderConfig, prefix: str = "frame"):
        self.cfg = cfg
        widths = [cfg.feature_dim, *cfg.backbone_widths, cfg.hidden_dim]
        self.backbone = mlp(f"{prefix}.backbone", widths)
        self.head = mlp(f"{prefix}.head", [cfg.hidden_dim, cfg.head_hidden, cfg.embed_dim])
        self.norm = L2Normalize()

    def param_names(self) -> list[str]:
        return self.backbone.param_names() + self.head.param_names()

    def init(self, rng: np.random.Generator, dtype=np.float64) -> Params:
        params = self.backbone.init(rng, dtype)
        params.update(self.head.init(rng, dtype))
        return params

    def _check(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.cfg.feature_dim:
            raise DimensionError(
                f"frame features have length {x.shape[-1]}, expected {self.cfg.feature_dim}")

    def represent(self, params: Params, x: np.ndarray) -> np.ndarray:
        self._check(x)
        return self.backbone(params, x)

    def forward(self, params, x):
        self._check(x)
        rep, c1 = self.backbone.forward(params, x)
        h, c2 = self.head.forward(params, rep)
        z, c3 = self.norm.forward(params, h)
        return z, (c1, c2, c3)

    def backward(self, params, cache, dz):
        c1, c2, c3 = cache
        dh, _ = self.norm.backward(params, c3, dz)
        drep, grads = self.head.backward(params, c2, dh)
        dx, g = self.backbone.backward(params, c1, drep)
        grads.update(g)
        return dx, grads

    def __call__(self, params, x):
        return self.forward(params, x)[0]


class JointEncoder:
    """Set encoder over a tracklet's frames.

    Frame representations (backbone outputs) are stacked, a learned CLS row is
    prepended, the set goes through the transformer blocks, and the CLS output
    is projected and L2-normalized. Input shape is ``(..., m, F)``.

    The backbone is a separate copy (``joint.backbone.*``) so fine-tuning it
    leaves the single-frame model intact.
    """

    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        self.frame = FrameEncoder(cfg, prefix="joint")
        H = cfg.hidden_dim
        self.blocks = [
            TransformerBlock(f"joint.block{i}", H, cfg.heads, cfg.ffn_mult * H,
                             prenorm=cfg.prenorm, eps=cfg.ln_eps)
            for i in range(cfg.blocks)
        ]
        self.final_ln = LayerNorm("joint.ln_f", H, cfg.ln_eps) if cfg.final_norm else None
        self.head = mlp("joint.proj", [H, cfg.head_hidden, cfg.embed_dim])
        self.norm = L2Normalize()

    def backbone_names(self) -> list[str]:
        return self.frame.backbone.param_names()

    def own_param_names(self) -> list[str]:
        """Everything except the backbone."""
        names = ["joint.cls"]
        for b in self.blocks:
            names += b.param_names()
        if self.final_ln is not None:
            names += self.final_ln.param_names()
        return names + self.head.param_names()

    def param_names(self) -> list[str]:
        return self.frame.backbone.param_names() + self.own_param_names()

    def init(self, rng: np.random.Generator, dtype=np.float64) -> Params:
        params = self.frame.backbone.init(rng, dtype)
        params["joint.cls"] = (self.cfg.cls_std * rng.standard_normal((1, self.cfg.hidden_dim))).astype(dtype)
        for b in self.blocks:
            params.update(b.init(rng, dtype))
        if self.final_ln is not None:
            params.update(self.final_ln.init(rng, dtype))
        params.update(self.head.init(rng, dtype))
        return params

    def forward(self, params, x):
        if x.ndim < 2 or x.shape[-2] == 0:
            raise EmptyTrackletError("a tracklet needs at least one frame")
        self.frame._check(x)
        rep, c_bb = self.frame.backbone.forward(params, x)
        cls = np.broadcast_to(params["joint.cls"], rep.shape[:-2] + (1, rep.shape[-1]))
        h = np.concatenate([cls, rep], axis=-2)
        c_blocks = []
        for b in self.blocks:
            h, c = b.forward(params, h)
            c_blocks.append(c)
        c_ln = None
        if self.final_ln is not None:
            h, c_ln = self.final_ln.forward(params, h)
        tokens = h.shape[-2]
        out, c_head = self.head.forward(params, h[..., 0, :])
        z, c_norm = self.norm.forward(params, out)
        return z, (c_bb, c_blocks, c_ln, c_head, c_norm, tokens)

    def backward(self, params, cache, dz):
        c_bb, c_blocks, c_ln, c_head, c_norm, tokens = cache
        dout, _ = self.norm.backward(params, c_norm, dz)
        dcls_out, grads = self.head.backward(params, c_head, dout)
        dh = np.zeros(dcls_out.shape[:-1] + (tokens, dcls_out.shape[-1]), dtype=dcls_out.dtype)
        dh[..., 0, :] = dcls_out
        if self.final_ln is not None:
            dh, g = self.final_ln.backward(params, c_ln, dh)
            grads.update(g)
        for b, c in zip(reversed(self.blocks), reversed(c_blocks)):
            dh, g = b.backward(params, c, dh)
            grads.update(g)
        grads["joint.cls"] = dh[..., 0, :].reshape(-1, dh.shape[-1]).sum(axis=0, keepdims=True)
        dx, g = self.frame.backbone.backward(params, c_bb, dh[..., 1:, :])
        grads.update(g)
        return dx, grads

    def __call__(self, params, x):
        return self.forward(params, x)[0]


def _as_frames(frames, cfg: EncoderConfig) -> np.ndarray:
    x = np.asarray(frames, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise EmptyTrackletError("a tracklet needs at least one frame")
    if x.shape[-1] != cfg.feature_dim:
        raise DimensionError(f"frame features have length {x.shape[-1]}, expected {cfg.feature_dim}")
    return x


def encode_frame(features, params: Params, cfg: EncoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(embedding, representation)`` for one frame or a stack of frames."""
    enc = FrameEncoder(cfg)
    x = np.asarray(features, dtype=params["frame.head.0.W"].dtype)
    if x.shape[-1] != cfg.feature_dim:
        raise DimensionError(f"frame features have length {x.shape[-1]}, expected {cfg.feature_dim}")
    rep = enc.represent(params, x)
    return enc.norm(params, enc.head(params, rep)), rep


def canonical_order(x: np.ndarray) -> np.ndarray:
    """Rows sorted lexicographically.

    Attention is permutation invariant in exact arithmetic, but float sums over
    keys depend on their order. Fixing the order makes the set function exact.
    """
    return x[np.lexsort(x.T[::-1])] if x.shape[0] > 1 else x


def encode_tracklet_joint(frames, params: Params, cfg: EncoderConfig) -> np.ndarray:
    x = canonical_order(_as_frames(frames, cfg))
    if x.shape[0] > cfg.max_views:
        raise DimensionError(f"{x.shape[0]} views exceed the configured maximum of {cfg.max_views}")
    x = x.astype(params["joint.cls"].dtype)
    return JointEncoder(cfg)(params, x)


def average_embeddings(embeddings) -> np.ndarray:
    mean = np.asarray(embeddings, dtype=float).mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise DegenerateAverageError("frame embeddings average to (near) zero")
    return mean / norm


def encode_tracklet_average(frames, params: Params, cfg: EncoderConfig) -> np.ndarray:
    x = _as_frames(frames, cfg)
    emb, _ = encode_frame(x, params, cfg)
    return average_embeddings(emb)


def select_views(n_frames: int, max_views: int = 8) -> np.ndarray:
    """Up to ``max_views`` frame indices spread uniformly along a tracklet."""
    if n_frames <= max_views:
        return np.arange(n_frames)
    return np.round(np.linspace(0, n_frames - 1, max_views)).astype(int)
