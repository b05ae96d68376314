"""Dense layers, layer norm and masked multi-head attention over a flat parameter dict."""

from __future__ import annotations

import numpy as np

from formation_rl.nn.autodiff import Tensor, parameter, softmax


def orthogonal(rng: np.random.Generator, d_in: int, d_out: int, gain: float) -> np.ndarray:
    a = rng.normal(size=(max(d_in, d_out), min(d_in, d_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    w = q if d_in >= d_out else q.T
    return gain * w[:d_in, :d_out]


def init_linear(params: dict, prefix: str, rng, d_in: int, d_out: int, gain: float = np.sqrt(2.0)):
    params[f"{prefix}.w"] = parameter(orthogonal(rng, d_in, d_out, gain), f"{prefix}.w")
    params[f"{prefix}.b"] = parameter(np.zeros(d_out), f"{prefix}.b")


def linear(x: Tensor, params: dict, prefix: str) -> Tensor:
    w = params[f"{prefix}.w"]
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"{prefix}: input width {x.shape[-1]} does not match {w.shape[0]}")
    return x @ w + params[f"{prefix}.b"]


def init_mlp(params: dict, prefix: str, rng, sizes: list[int], out_gain: float = np.sqrt(2.0)):
    for i, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        init_linear(params, f"{prefix}.{i}", rng, d_in, d_out, out_gain if last else np.sqrt(2.0))


def mlp_forward(x, params: dict, prefix: str, activation: str = "relu") -> Tensor:
    """Affine + activation on every hidden layer, plain affine output."""
    x = Tensor._lift(x)
    n_layers = 0
    while f"{prefix}.{n_layers}.w" in params:
        n_layers += 1
    for i in range(n_layers):
        x = linear(x, params, f"{prefix}.{i}")
        if i < n_layers - 1 and activation == "relu":
            x = x.relu()
    return x


def init_layer_norm(params: dict, prefix: str, dim: int):
    params[f"{prefix}.gain"] = parameter(np.ones(dim), f"{prefix}.gain")
    params[f"{prefix}.bias"] = parameter(np.zeros(dim), f"{prefix}.bias")


def layer_norm(x: Tensor, params: dict, prefix: str, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * params[f"{prefix}.gain"] + params[f"{prefix}.bias"]


def init_attention(params: dict, prefix: str, rng, dim: int):
    for name in ("q", "k", "v", "o"):
        init_linear(params, f"{prefix}.{name}", rng, dim, dim, gain=1.0)


def multihead_attention(query, keys, mask, params: dict, prefix: str, heads: int, return_weights: bool = False):
    """Scaled dot-product attention, ``query`` [B, nq, d] over ``keys`` [B, nk, d].

    ``mask`` [B, nk] marks usable key slots; masked slots get zero weight.
    """
    query, keys = Tensor._lift(query), Tensor._lift(keys)
    b, nq, d = query.shape
    nk = keys.shape[1]
    if d % heads:
        raise ValueError("embedding width must be divisible by the head count")
    dh = d // heads
    mask = np.ones((b, nk), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise ValueError("attention needs at least one unmasked key per row")

    def split(t, n):
        return t.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)

    q = split(linear(query, params, f"{prefix}.q"), nq)
    k = split(linear(keys, params, f"{prefix}.k"), nk)
    v = split(linear(keys, params, f"{prefix}.v"), nk)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    weights = softmax(scores, axis=-1, mask=mask[:, None, None, :])
    out = (weights @ v).transpose(0, 2, 1, 3).reshape(b, nq, d)
    out = linear(out, params, f"{prefix}.o")
    return (out, weights) if return_weights else out
