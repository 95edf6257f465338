"""Finite-difference check of every layer and of the full loss graph."""
from __future__ import annotations

import numpy as np

from .diffcore import (
    GELU,
    L2Normalize,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    ReLU,
    Softmax,
    TransformerBlock,
    grad_check,
    mlp,
)
from .encoders import EncoderConfig, FrameEncoder, JointEncoder
from .loss import ContrastiveHead, EncoderLoss

SMALL = EncoderConfig(feature_dim=6, hidden_dim=8, embed_dim=5, backbone_widths=[7],
                      head_hidden=6, heads=2, ffn_mult=2, blocks=2, max_views=3)
# the loss-over-joint case only needs one block; stacking is covered above
ONE_BLOCK = EncoderConfig(**{**SMALL.to_dict(), "blocks": 1})


def _cases():
    """(name, layer, input factory) triples; inputs are drawn per seed."""
    def rows(*shape):
        return lambda rng: rng.standard_normal(shape)

    def views(rng):
        return rng.standard_normal((4, 3, SMALL.feature_dim))

    return [
        ("linear", Linear("lin", 4, 3), rows(3, 4)),
        ("relu", ReLU(), rows(3, 5)),
        ("gelu", GELU(), rows(3, 5)),
        ("layer_norm", LayerNorm("ln", 6), rows(3, 6)),
        ("softmax", Softmax(), rows(3, 5)),
        ("l2_normalize", L2Normalize(), rows(3, 5)),
        ("multi_head_attention", MultiHeadAttention("mha", 8, 2), rows(2, 4, 8)),
        ("transformer_block_prenorm", TransformerBlock("blk", 8, 2, 16), rows(2, 4, 8)),
        ("transformer_block_postnorm", TransformerBlock("blk", 8, 2, 16, prenorm=False), rows(2, 4, 8)),
        ("projection_head", mlp("head", [8, 6, 5]), rows(3, 8)),
        ("frame_encoder", FrameEncoder(SMALL), rows(3, SMALL.feature_dim)),
        ("joint_encoder", JointEncoder(SMALL), views),
        ("nt_xent", ContrastiveHead(0.5), rows(6, 5)),
        ("nt_xent_over_frame_encoder", EncoderLoss(FrameEncoder(SMALL), 0.1),
         rows(6, SMALL.feature_dim)),
        ("nt_xent_over_joint_encoder", EncoderLoss(JointEncoder(ONE_BLOCK), 0.1), views),
    ]


def case_names() -> list[str]:
    return [name for name, _, _ in _cases()]


def gradient_suite(seeds: int = 20, names=None) -> dict[str, float]:
    """Maximum relative error over ``seeds`` seeds, per layer name."""
    out = {}
    for name, layer, make_input in _cases():
        if names is not None and name not in names:
            continue
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            x = make_input(rng)
            # jitter away from the init point: zero biases, unit gains and a
            # near-zero CLS token are special points, not generic ones
            params = {k: v + 0.1 * rng.standard_normal(v.shape)
                      for k, v in layer.init(rng, np.float64).items()}
            worst = max(worst, grad_check(layer, x, seed=seed, params=params))
        out[name] = worst
    return out
