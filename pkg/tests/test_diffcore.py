import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trackreid.diffcore import (
    GELU,
    L2Normalize,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    ReLU,
    Softmax,
    TransformerBlock,
    grad_check,
    layer_norm,
    linear_forward,
    mlp,
    multi_head_attention,
    numeric_gradient,
    softmax,
)
from trackreid.errors import ConfigurationError, DimensionError
from trackreid.gradsuite import SMALL, _cases
from trackreid.loss import EncoderLoss
from trackreid.encoders import FrameEncoder


def test_linear_identity_weights():
    out = linear_forward([[1, 2]], [[1, 0], [0, 1]], [0, 0])
    np.testing.assert_array_equal(out, [[1, 2]])


def test_linear_zero_weights_pass_bias():
    out = linear_forward([[1, 2]], [[0, 0], [0, 0]], [3, 4])
    np.testing.assert_array_equal(out, [[3, 4]])


def test_linear_hand_product():
    out = linear_forward([[1, 1]], [[2, -1], [0.5, 3]], [1, 1])
    np.testing.assert_allclose(out, [[3.5, 3.0]], atol=1e-15)


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
        linear_forward([[1, 2, 3]], np.eye(2), [0, 0])


def test_layer_norm_constant_row_is_zero():
    np.testing.assert_allclose(layer_norm([5.0, 5, 5], 1.0, 0.0), [0, 0, 0], atol=1e-12)


def test_layer_norm_already_standard():
    np.testing.assert_allclose(layer_norm([1.0, -1], 1.0, 0.0, eps=0.0), [1, -1], atol=1e-15)


def test_layer_norm_formula():
    # mean 2, population variance 8/3
    x = np.array([0.0, 2.0, 4.0])
    expected = 2 * (x - 2) / math.sqrt(8 / 3 + 1e-5) + 1
    np.testing.assert_allclose(layer_norm(x, 2.0, 1.0, eps=1e-5), expected, rtol=0, atol=1e-14)


def _mha_oracle(X, P):
    """Single head, explicit loops."""
    T, d = X.shape
    q = [X[i] @ P["a.q.W"] + P["a.q.b"][0] for i in range(T)]
    k = [X[i] @ P["a.k.W"] for i in range(T)]
    v = [X[i] @ P["a.v.W"] + P["a.v.b"][0] for i in range(T)]
    out = []
    for i in range(T):
        s = [float(np.dot(q[i], k[j])) / math.sqrt(d) for j in range(T)]
        m = max(s)
        w = [math.exp(x - m) for x in s]
        tot = sum(w)
        ctx = sum(w[j] / tot * v[j] for j in range(T))
        out.append(ctx @ P["a.o.W"] + P["a.o.b"][0])
    return np.array(out)


def test_attention_hand_three_tokens():
    P = {
        "a.q.W": np.array([[1.0, 0.5], [0.0, 1.0]]), "a.q.b": np.array([[0.1, 0.0]]),
        "a.k.W": np.array([[0.5, -1.0], [1.0, 0.0]]),
        "a.v.W": np.array([[2.0, 0.0], [1.0, 1.0]]), "a.v.b": np.array([[0.0, -0.5]]),
        "a.o.W": np.array([[1.0, 1.0], [0.0, 2.0]]), "a.o.b": np.array([[0.2, 0.3]]),
    }
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]])
    np.testing.assert_allclose(multi_head_attention(X, P, 1, name="a"), _mha_oracle(X, P),
                               rtol=0, atol=1e-13)


def test_attention_single_token_is_projected_value(rng):
    mha = MultiHeadAttention("attn", 8, 2)
    P = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in mha.init(rng).items()}
    x = rng.standard_normal((1, 8))
    expected = (x @ P["attn.v.W"] + P["attn.v.b"]) @ P["attn.o.W"] + P["attn.o.b"]
    np.testing.assert_allclose(mha(P, x), expected, atol=1e-13)


def test_attention_rejects_indivisible_heads():
    with pytest.raises(ConfigurationError):
        MultiHeadAttention("attn", 6, 4)


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_attention_permutation_equivariance(seed, m):
    rng = np.random.default_rng(seed)
    mha = MultiHeadAttention("attn", 8, 2)
    P = mha.init(rng)
    X = rng.standard_normal((m + 1, 8))
    perm = np.r_[0, 1 + rng.permutation(m)]
    Y, Yp = mha(P, X), mha(P, X[perm])
    np.testing.assert_allclose(Yp, Y[perm], rtol=0, atol=1e-12)
    np.testing.assert_allclose(Yp[0], Y[0], rtol=0, atol=1e-12)


def test_softmax_stable_on_large_inputs():
    s = softmax(np.array([[1000.0, 1000.0, -1000.0]]))
    np.testing.assert_allclose(s, [[0.5, 0.5, 0.0]])
    assert np.isfinite(s).all()


@pytest.mark.parametrize("layer, shape", [
    (Linear("lin", 4, 3), (3, 4)),
    (ReLU(), (3, 5)),
    (GELU(), (3, 5)),
    (Softmax(), (2, 5)),
    (L2Normalize(), (2, 5)),
    (LayerNorm("ln", 6), (3, 6)),
    (TransformerBlock("blk", 8, 2, 16), (2, 3, 8)),
    (mlp("head", [8, 6, 5]), (3, 8)),
])
def test_forward_is_deterministic(layer, shape, rng):
    P = layer.init(rng)
    x = rng.standard_normal(shape)
    a, b = layer(P, x), layer(P, x.copy())
    assert np.array_equal(a, b)
    assert np.isfinite(a).all()


def test_grad_check_linear_exact(rng):
    assert grad_check(Linear("lin", 4, 3), rng.standard_normal((3, 4)), seed=0) < 1e-6


def test_grad_check_transformer_block(rng):
    blk = TransformerBlock("blk", 8, 2, 16)
    P = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in blk.init(rng).items()}
    assert grad_check(blk, rng.standard_normal((2, 4, 8)), seed=3, params=P) < 1e-6


def test_grad_check_loss_over_frame_encoder(rng):
    layer = EncoderLoss(FrameEncoder(SMALL), 0.1)
    P = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in layer.init(rng).items()}
    assert grad_check(layer, rng.standard_normal((6, SMALL.feature_dim)), seed=5, params=P) < 1e-6


def test_grad_check_detects_a_wrong_backward(rng):
    class Broken(ReLU):
        def backward(self, params, cache, dy):
            dx, g = super().backward(params, cache, dy)
            return 1.01 * dx, g

    assert grad_check(Broken(), rng.standard_normal((3, 4)) + 0.5, seed=1) > 1e-3


def test_grad_check_detail_covers_every_tensor(rng):
    blk = TransformerBlock("blk", 8, 2, 16)
    errs = grad_check(blk, rng.standard_normal((1, 3, 8)), seed=0, detail=True)
    assert set(errs) == {"input", *blk.param_names()}


def test_numeric_gradient_of_quadratic():
    a = np.array([1.0, -2.0, 3.0])
    g = numeric_gradient(lambda: float(np.sum(a**3)), a, 1e-5)
    np.testing.assert_allclose(g, 3 * np.array([1.0, 4.0, 9.0]), rtol=1e-9)


def test_suite_has_every_layer():
    names = {n for n, _, _ in _cases()}
    for required in ("linear", "relu", "gelu", "layer_norm", "softmax", "l2_normalize",
                     "multi_head_attention", "transformer_block_prenorm", "projection_head",
                     "nt_xent_over_frame_encoder", "nt_xent_over_joint_encoder"):
        assert required in names
