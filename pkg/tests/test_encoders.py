import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trackreid.encoders import (
    canonical_order,
    EncoderConfig,
    FrameEncoder,
    JointEncoder,
    average_embeddings,
    encode_frame,
    encode_tracklet_average,
    encode_tracklet_joint,
    select_views,
)
from trackreid.errors import DegenerateAverageError, DimensionError, EmptyTrackletError
from trackreid.formats import dump_weights, load_weights
from trackreid.train import init_params

TINY = EncoderConfig(feature_dim=5, hidden_dim=8, embed_dim=6, backbone_widths=[7],
                     head_hidden=6, heads=2, ffn_mult=2, blocks=2, max_views=8)


def _params(cfg, seed=0, jitter=0.1):
    rng = np.random.default_rng(seed)
    p = init_params(cfg, rng)
    return {k: v + jitter * rng.standard_normal(v.shape) for k, v in p.items()}


def test_default_config_shapes():
    cfg = EncoderConfig()
    p = init_params(cfg, np.random.default_rng(0))
    assert (cfg.feature_dim, cfg.hidden_dim, cfg.embed_dim, cfg.heads, cfg.blocks) == (32, 64, 128, 4, 3)
    assert p["joint.block0.ffn.0.W"].shape == (64, 256)
    assert p["joint.cls"].shape == (1, 64)
    assert np.all(p["frame.backbone.0.b"] == 0)
    bound = math.sqrt(1 / 32)
    assert np.abs(p["frame.backbone.0.W"]).max() <= bound


def test_encode_frame_unit_norm_and_deterministic(rng):
    p = _params(TINY)
    x = rng.standard_normal(TINY.feature_dim)
    e1, rep = encode_frame(x, p, TINY)
    e2, _ = encode_frame(x.copy(), p, TINY)
    assert abs(np.linalg.norm(e1) - 1) < 1e-12
    assert rep.shape == (TINY.hidden_dim,)
    assert np.array_equal(e1, e2)


def test_encode_frame_zero_weights_gives_normalized_bias():
    p = _params(TINY)
    p = {k: (np.zeros_like(v) if k.startswith("frame.") else v) for k, v in p.items()}
    b = np.array([[3.0, 0, -4.0, 0, 0, 0]])
    p["frame.head.1.b"] = b
    e, _ = encode_frame(np.ones(TINY.feature_dim), p, TINY)
    np.testing.assert_allclose(e, b[0] / 5.0, atol=1e-15)


def test_encode_frame_wrong_dimension():
    with pytest.raises(DimensionError):
        encode_frame(np.ones(TINY.feature_dim + 1), _params(TINY), TINY)


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_joint_output_is_unit_norm(seed, m):
    rng = np.random.default_rng(seed)
    z = encode_tracklet_joint(rng.standard_normal((m, TINY.feature_dim)), _params(TINY, seed % 7), TINY)
    assert abs(np.linalg.norm(z) - 1) < 1e-6


def test_joint_permutation_invariance_exact(rng):
    p = _params(TINY)
    x = rng.standard_normal((8, TINY.feature_dim))
    ref = encode_tracklet_joint(x, p, TINY)
    for _ in range(20):
        assert np.array_equal(encode_tracklet_joint(x[rng.permutation(8)], p, TINY), ref)


@given(st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_canonical_order_is_a_permutation_fixed_under_shuffles(m, seed):
    r = np.random.default_rng(seed)
    x = np.round(r.standard_normal((m, 3)), 1)  # coarse values give tied columns
    c = canonical_order(x)
    assert sorted(map(tuple, c)) == sorted(map(tuple, x))
    assert np.array_equal(canonical_order(x[r.permutation(m)]), c)


def test_joint_permutation_invariance_float32(rng):
    p = {k: v.astype(np.float32) for k, v in _params(TINY).items()}
    x = rng.standard_normal((8, TINY.feature_dim)).astype(np.float32)
    ref = encode_tracklet_joint(x, p, TINY)
    out = encode_tracklet_joint(x[::-1], p, TINY)
    assert np.max(np.abs(out - ref)) <= 1e-5


def test_joint_single_view_is_a_function_of_the_frame(rng):
    p = _params(TINY)
    x = rng.standard_normal((1, TINY.feature_dim))
    assert np.array_equal(encode_tracklet_joint(x, p, TINY), encode_tracklet_joint(x[0], p, TINY))


def test_joint_errors(rng):
    p = _params(TINY)
    with pytest.raises(EmptyTrackletError):
        encode_tracklet_joint(np.zeros((0, TINY.feature_dim)), p, TINY)
    with pytest.raises(DimensionError):
        encode_tracklet_joint(rng.standard_normal((9, TINY.feature_dim)), p, TINY)


# -- hand-rolled forward trace on a 1-head, H=4 configuration -------------------

ORACLE_CFG = EncoderConfig(feature_dim=3, hidden_dim=4, embed_dim=3, backbone_widths=[],
                           head_hidden=5, heads=1, ffn_mult=2, blocks=1, max_views=8)


def _ln(v, g, s, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return np.array([(x - mu) / math.sqrt(var + eps) for x in v]) * g[0] + s[0]


def _gelu(v):
    return np.array([0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3))) for x in v])


def _oracle_joint(frames, P):
    """Token-by-token evaluation; also returns the CLS attention weights."""
    reps = [f @ P["joint.backbone.0.W"] + P["joint.backbone.0.b"][0] for f in frames]
    tokens = [P["joint.cls"][0]] + reps
    pre = "joint.block0."
    normed = [_ln(t, P[pre + "ln1.gain"], P[pre + "ln1.shift"]) for t in tokens]
    q = [n @ P[pre + "attn.q.W"] + P[pre + "attn.q.b"][0] for n in normed]
    k = [n @ P[pre + "attn.k.W"] for n in normed]
    v = [n @ P[pre + "attn.v.W"] + P[pre + "attn.v.b"][0] for n in normed]
    out, cls_weights = [], None
    for i in range(len(tokens)):
        s = [float(q[i] @ k[j]) / 2.0 for j in range(len(tokens))]  # sqrt(head_dim=4)
        m = max(s)
        w = np.array([math.exp(x - m) for x in s])
        w /= w.sum()
        if i == 0:
            cls_weights = w
        ctx = sum(w[j] * v[j] for j in range(len(tokens)))
        x1 = tokens[i] + ctx @ P[pre + "attn.o.W"] + P[pre + "attn.o.b"][0]
        h = _ln(x1, P[pre + "ln2.gain"], P[pre + "ln2.shift"])
        f = _gelu(h @ P[pre + "ffn.0.W"] + P[pre + "ffn.0.b"][0]) @ P[pre + "ffn.1.W"] + P[pre + "ffn.1.b"][0]
        out.append(x1 + f)
    c = _ln(out[0], P["joint.ln_f.gain"], P["joint.ln_f.shift"])
    h = np.maximum(c @ P["joint.proj.0.W"] + P["joint.proj.0.b"][0], 0)
    e = h @ P["joint.proj.1.W"] + P["joint.proj.1.b"][0]
    return e / np.linalg.norm(e), cls_weights


def test_joint_matches_hand_trace(rng):
    P = _params(ORACLE_CFG, seed=3, jitter=0.3)
    frames = rng.standard_normal((2, 3))
    expected, _ = _oracle_joint(frames, P)
    np.testing.assert_allclose(encode_tracklet_joint(frames, P, ORACLE_CFG), expected, rtol=0, atol=1e-12)


def test_duplicated_frames_keep_relative_attention(rng):
    P = _params(ORACLE_CFG, seed=4, jitter=0.3)
    frames = rng.standard_normal((2, 3))
    doubled = np.repeat(frames, 2, axis=0)
    z2, w2 = _oracle_joint(doubled, P)
    _, w1 = _oracle_joint(frames, P)
    # per distinct frame, the pooled weight of its copies keeps the same ratio
    pooled = np.array([w2[1] + w2[2], w2[3] + w2[4]])
    np.testing.assert_allclose(pooled / pooled.sum(), w1[1:] / w1[1:].sum(), atol=1e-12)
    np.testing.assert_allclose(encode_tracklet_joint(doubled, P, ORACLE_CFG), z2, atol=1e-12)


# -- averaging ------------------------------------------------------------------

def test_average_of_identical_frames_equals_frame(rng):
    p = _params(TINY)
    x = rng.standard_normal(TINY.feature_dim)
    np.testing.assert_allclose(encode_tracklet_average(np.tile(x, (4, 1)), p, TINY),
                               encode_frame(x, p, TINY)[0], atol=1e-15)


def test_average_of_opposite_embeddings_is_degenerate():
    with pytest.raises(DegenerateAverageError):
        average_embeddings([[0.6, 0.8], [-0.6, -0.8]])


def test_average_of_orthogonal_embeddings():
    np.testing.assert_allclose(average_embeddings([[1, 0], [0, 1]]), [1 / math.sqrt(2)] * 2)


def test_average_rejects_empty():
    with pytest.raises(EmptyTrackletError):
        encode_tracklet_average(np.zeros((0, TINY.feature_dim)), _params(TINY), TINY)


def test_select_views():
    assert list(select_views(5, 8)) == [0, 1, 2, 3, 4]
    v = select_views(30, 8)
    assert len(v) == 8 and v[0] == 0 and v[-1] == 29 and np.all(np.diff(v) > 0)


def test_weight_roundtrip_gives_identical_outputs(rng):
    p = {k: v.astype(np.float32).astype(np.float64) for k, v in _params(TINY).items()}
    q = load_weights(dump_weights(p))
    x = rng.standard_normal((5, TINY.feature_dim))
    assert np.array_equal(encode_tracklet_joint(x, p, TINY), encode_tracklet_joint(x, q, TINY))
    assert np.array_equal(encode_frame(x, p, TINY)[0], encode_frame(x, q, TINY)[0])


def test_joint_backbone_is_a_separate_copy():
    names = JointEncoder(TINY).param_names()
    assert all(n.startswith("joint.") for n in names)
    assert not set(names) & set(FrameEncoder(TINY).param_names())
