"""Small differentiable layer library with hand-written backward passes.

Parameters live in one flat ``dict[str, np.ndarray]`` keyed by dotted names
(``"frame.backbone.0.W"``). Every layer knows the names it owns, so composite
models, the optimizer and the weight file all share the same namespace.

Each layer exposes three pure functions::

    init(rng, dtype)            -> {name: array}
    forward(params, x)          -> (y, cache)
    backward(params, cache, dy) -> (dx, {name: grad})

Inputs are arrays whose last axis is the feature axis; any leading axes are
treated as batch axes. Vectors such as biases and layer-norm gains are stored
as ``1 x d`` rows.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DimensionError

Params = dict[str, np.ndarray]
Grads = dict[str, np.ndarray]

GELU_C = math.sqrt(2.0 / math.pi)


def _uniform_fan_in(rng: np.random.Generator, d_in: int, d_out: int, dtype) -> np.ndarray:
    bound = math.sqrt(1.0 / d_in)
    return rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)


class Layer:
    """Base class; stateless layers only override forward/backward."""

    name: str = ""

    def param_names(self) -> list[str]:
        return []

    def init(self, rng: np.random.Generator, dtype=np.float64) -> Params:
        return {}

    def forward(self, params: Params, x: np.ndarray):
        raise NotImplementedError

    def backward(self, params: Params, cache, dy: np.ndarray):
        raise NotImplementedError

    def __call__(self, params: Params, x: np.ndarray) -> np.ndarray:
        return self.forward(params, x)[0]


class Linear(Layer):
    def __init__(self, name: str, d_in: int, d_out: int, bias: bool = True):
        self.name, self.d_in, self.d_out, self.bias = name, d_in, d_out, bias

    def param_names(self):
        return [f"{self.name}.W", f"{self.name}.b"] if self.bias else [f"{self.name}.W"]

    def init(self, rng, dtype=np.float64):
        params = {f"{self.name}.W": _uniform_fan_in(rng, self.d_in, self.d_out, dtype)}
        if self.bias:
            params[f"{self.name}.b"] = np.zeros((1, self.d_out), dtype=dtype)
        return params

    def forward(self, params, x):
        W = params[f"{self.name}.W"]
        if x.shape[-1] != W.shape[0]:
            raise DimensionError(
                f"{self.name}: input shape {x.shape} incompatible with weight shape {W.shape}")
        if not self.bias:
            return x @ W, x
        b = params[f"{self.name}.b"]
        if b.shape != (1, W.shape[1]):
            raise DimensionError(f"{self.name}: bias shape {b.shape} does not match weight shape {W.shape}")
        return x @ W + b[0], x

    def backward(self, params, cache, dy):
        x = cache
        W = params[f"{self.name}.W"]
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        grads = {f"{self.name}.W": x2.T @ dy2}
        if self.bias:
            grads[f"{self.name}.b"] = dy2.sum(axis=0, keepdims=True)
        return dy @ W.T, grads


def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``x @ W + b`` for a 2-D ``x``, with the shape check of ``Linear``."""
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float).reshape(1, -1)
    if x.ndim != 2 or W.ndim != 2:
        raise DimensionError(f"expected 2-D input and weight, got {x.shape} and {W.shape}")
    layer = Linear("linear", W.shape[0], W.shape[1])
    return layer({"linear.W": W, "linear.b": b}, x)


class ReLU(Layer):
    def forward(self, params, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, cache, dy):
        return dy * cache, {}


class GELU(Layer):
    """tanh approximation of GELU."""

    def forward(self, params, x):
        inner = GELU_C * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        return 0.5 * x * (1.0 + t), (x, t)

    def backward(self, params, cache, dy):
        x, t = cache
        d_inner = GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner), {}


class LayerNorm(Layer):
    def __init__(self, name: str, dim: int, eps: float = 1e-5):
        self.name, self.dim, self.eps = name, dim, eps

    def param_names(self):
        return [f"{self.name}.gain", f"{self.name}.shift"]

    def init(self, rng, dtype=np.float64):
        return {
            f"{self.name}.gain": np.ones((1, self.dim), dtype=dtype),
            f"{self.name}.shift": np.zeros((1, self.dim), dtype=dtype),
        }

    def forward(self, params, x):
        gain, shift = params[f"{self.name}.gain"][0], params[f"{self.name}.shift"][0]
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc**2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        return xhat * gain + shift, (xhat, inv)

    def backward(self, params, cache, dy):
        xhat, inv = cache
        gain = params[f"{self.name}.gain"][0]
        d = xhat.shape[-1]
        grads = {
            f"{self.name}.gain": (dy * xhat).reshape(-1, d).sum(axis=0, keepdims=True),
            f"{self.name}.shift": dy.reshape(-1, d).sum(axis=0, keepdims=True),
        }
        dxhat = dy * gain
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, grads


def layer_norm(x, gain, shift, eps: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    gain = np.broadcast_to(np.asarray(gain, dtype=float), (d,)).reshape(1, d)
    shift = np.broadcast_to(np.asarray(shift, dtype=float), (d,)).reshape(1, d)
    ln = LayerNorm("ln", d, eps)
    return ln({"ln.gain": gain, "ln.shift": shift}, x)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class Softmax(Layer):
    def forward(self, params, x):
        y = softmax(x)
        return y, y

    def backward(self, params, cache, dy):
        y = cache
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True)), {}


class L2Normalize(Layer):
    def forward(self, params, x):
        norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        y = x / norm
        return y, (y, norm)

    def backward(self, params, cache, dy):
        y, norm = cache
        return (dy - y * (dy * y).sum(axis=-1, keepdims=True)) / norm, {}


class Sequential(Layer):
    def __init__(self, name: str, layers: list[Layer]):
        self.name, self.layers = name, layers

    def param_names(self):
        return [n for layer in self.layers for n in layer.param_names()]

    def init(self, rng, dtype=np.float64):
        params: Params = {}
        for layer in self.layers:
            params.update(layer.init(rng, dtype))
        return params

    def forward(self, params, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(params, x)
            caches.append(c)
        return x, caches

    def backward(self, params, cache, dy):
        grads: Grads = {}
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            dy, g = layer.backward(params, c, dy)
            grads.update(g)
        return dy, grads


def mlp(name: str, widths: list[int], activation: type[Layer] = ReLU) -> Sequential:
    """Affine layers between consecutive widths, activation between them (not after the last)."""
    layers: list[Layer] = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        if i:
            layers.append(activation())
        layers.append(Linear(f"{name}.{i}", a, b))
    return Sequential(name, layers)


class MultiHeadAttention(Layer):
    """Unmasked scaled dot-product attention over a token set.

    Input is ``(..., T, H)``. No positional information is added, so the map
    is equivariant under permutations of the token axis. The key projection
    has no bias: it would add a per-query constant to the scores, which the
    softmax cancels.
    """

    def __init__(self, name: str, dim: int, heads: int):
        if heads < 1 or dim % heads:
            raise ConfigurationError(f"model dim {dim} is not divisible by {heads} heads")
        self.name, self.dim, self.heads = name, dim, heads
        self.head_dim = dim // heads
        self.q = Linear(f"{name}.q", dim, dim)
        self.k = Linear(f"{name}.k", dim, dim, bias=False)
        self.v = Linear(f"{name}.v", dim, dim)
        self.o = Linear(f"{name}.o", dim, dim)

    def param_names(self):
        return [n for p in (self.q, self.k, self.v, self.o) for n in p.param_names()]

    def init(self, rng, dtype=np.float64):
        params: Params = {}
        for proj in (self.q, self.k, self.v, self.o):
            params.update(proj.init(rng, dtype))
        return params

    def _split(self, x):
        # (..., T, H) -> (..., heads, T, head_dim)
        s = x.shape[:-1] + (self.heads, self.head_dim)
        return np.swapaxes(x.reshape(s), -2, -3)

    def _merge(self, x):
        x = np.swapaxes(x, -2, -3)
        return x.reshape(x.shape[:-2] + (self.dim,))

    def forward(self, params, x):
        if x.ndim < 2 or x.shape[-1] != self.dim:
            raise DimensionError(f"{self.name}: expected (..., T, {self.dim}), got {x.shape}")
        q, cq = self.q.forward(params, x)
        k, ck = self.k.forward(params, x)
        v, cv = self.v.forward(params, x)
        qh, kh, vh = self._split(q), self._split(k), self._split(v)
        scale = 1.0 / math.sqrt(self.head_dim)
        att = softmax(qh @ np.swapaxes(kh, -1, -2) * scale)
        ctx = self._merge(att @ vh)
        y, co = self.o.forward(params, ctx)
        return y, (cq, ck, cv, co, qh, kh, vh, att)

    def backward(self, params, cache, dy):
        cq, ck, cv, co, qh, kh, vh, att = cache
        scale = 1.0 / math.sqrt(self.head_dim)
        dctx, grads = self.o.backward(params, co, dy)
        dctx_h = self._split(dctx)
        datt = dctx_h @ np.swapaxes(vh, -1, -2)
        dvh = np.swapaxes(att, -1, -2) @ dctx_h
        dscore = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
        dqh = dscore @ kh
        dkh = np.swapaxes(dscore, -1, -2) @ qh
        dx = 0.0
        for proj, c, dh in ((self.q, cq, dqh), (self.k, ck, dkh), (self.v, cv, dvh)):
            d_in, g = proj.backward(params, c, self._merge(dh))
            dx = dx + d_in
            grads.update(g)
        return dx, grads


def multi_head_attention(X, params: Params, heads: int, name: str = "attn") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return MultiHeadAttention(name, X.shape[-1], heads)(params, X)


class TransformerBlock(Layer):
    """Residual attention + feed-forward block, pre-norm by default."""

    def __init__(self, name: str, dim: int, heads: int, ffn_dim: int,
                 prenorm: bool = True, eps: float = 1e-5):
        self.name, self.prenorm = name, prenorm
        self.ln1 = LayerNorm(f"{name}.ln1", dim, eps)
        self.attn = MultiHeadAttention(f"{name}.attn", dim, heads)
        self.ln2 = LayerNorm(f"{name}.ln2", dim, eps)
        self.ffn = mlp(f"{name}.ffn", [dim, ffn_dim, dim], activation=GELU)

    def _parts(self):
        return (self.ln1, self.attn, self.ln2, self.ffn)

    def param_names(self):
        return [n for p in self._parts() for n in p.param_names()]

    def init(self, rng, dtype=np.float64):
        params: Params = {}
        for p in self._parts():
            params.update(p.init(rng, dtype))
        return params

    def forward(self, params, x):
        if self.prenorm:
            h, c1 = self.ln1.forward(params, x)
            a, c2 = self.attn.forward(params, h)
            x1 = x + a
            h2, c3 = self.ln2.forward(params, x1)
            f, c4 = self.ffn.forward(params, h2)
            return x1 + f, (c1, c2, c3, c4)
        a, c2 = self.attn.forward(params, x)
        x1, c1 = self.ln1.forward(params, x + a)
        f, c4 = self.ffn.forward(params, x1)
        y, c3 = self.ln2.forward(params, x1 + f)
        return y, (c1, c2, c3, c4)

    def backward(self, params, cache, dy):
        c1, c2, c3, c4 = cache
        grads: Grads = {}
        if self.prenorm:
            dh2, g = self.ffn.backward(params, c4, dy)
            grads.update(g)
            dx1_ln, g = self.ln2.backward(params, c3, dh2)
            grads.update(g)
            dx1 = dy + dx1_ln
            dh, g = self.attn.backward(params, c2, dx1)
            grads.update(g)
            dx_ln, g = self.ln1.backward(params, c1, dh)
            grads.update(g)
            return dx1 + dx_ln, grads
        dsum2, g = self.ln2.backward(params, c3, dy)
        grads.update(g)
        dx1_f, g = self.ffn.backward(params, c4, dsum2)
        grads.update(g)
        dsum1, g = self.ln1.backward(params, c1, dsum2 + dx1_f)
        grads.update(g)
        dx_a, g = self.attn.backward(params, c2, dsum1)
        grads.update(g)
        return dsum1 + dx_a, grads


# -- gradient checking -------------------------------------------------------

def _relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    # floor: some gradients are identically zero (e.g. key biases under softmax),
    # where central differences only return rounding noise
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradient(f: Callable[[], float], arr: np.ndarray, step: float = 1e-5,
                     indices=None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arr`` (perturbed in place and restored).

    Uses the fourth-order stencil ``(-f(+2h) + 8 f(+h) - 8 f(-h) + f(-2h)) / 12h``;
    the plain two-point form leaves O(h^2) truncation error near 1e-6 on
    strongly curved graphs such as attention followed by L2 normalization.
    """
    flat = arr.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx))
    for n, i in enumerate(idx):
        orig = flat[i]
        vals = []
        for k in (2, 1, -1, -2):
            flat[i] = orig + k * step
            vals.append(f())
        flat[i] = orig
        out[n] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * step)
    return out


def grad_check(layer: Layer, x: np.ndarray, seed: int = 0, step: float = 1e-5,
               params: Params | None = None, max_coords: int | None = None,
               detail: bool = False):
    """Compare analytic gradients of ``layer`` against central differences.

    The output is reduced to a scalar with fixed random weights, so every
    output coordinate contributes. The error for one tensor is
    ``||analytic - numeric|| / max(||analytic||, ||numeric||, floor)`` where
    ``floor`` is 1e-3 of the norm of the whole analytic gradient (at least
    1e-6), so structurally-zero gradients are not judged on rounding noise. The maximum
    over the input and all parameters is returned (or the per-tensor dict
    when ``detail`` is set). ``max_coords`` limits finite differences to a
    seeded random subset of coordinates per tensor.
    """
    # own stream: callers often draw the input from default_rng(seed) too
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    x = np.array(x, dtype=np.float64)
    if params is None:
        params = layer.init(rng, np.float64)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    y, cache = layer.forward(params, x)
    weights = rng.standard_normal(np.shape(y))

    def scalar() -> float:
        return float(np.sum(weights * layer.forward(params, x)[0]))

    dx, grads = layer.backward(params, cache, weights)
    targets = [("input", x, np.asarray(dx))]
    targets += [(k, params[k], grads.get(k, np.zeros_like(params[k]))) for k in sorted(params)]
    total = math.sqrt(sum(float(np.sum(np.square(a))) for _, _, a in targets))
    floor = max(1e-6, 1e-3 * total)
    errors = {}
    for name, arr, analytic in targets:
        idx = None
        if max_coords is not None and arr.size > max_coords:
            idx = sorted(rng.choice(arr.size, size=max_coords, replace=False).tolist())
        numeric = numeric_gradient(scalar, arr, step, idx)
        a = analytic.reshape(-1)
        errors[name] = _relative_error(a if idx is None else a[idx], numeric, floor)
    return errors if detail else max(errors.values())
