"""Numpy layers with explicit forward caches and backward passes.

Parameters live in a flat ``dict[str, ndarray]``; each backward accumulates
into a gradient dict with the same keys. Shapes are batch-first ``(B, T, D)``.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
MASK_FILL = -1e30


def _acc(grads: dict | None, name: str, value: np.ndarray) -> None:
    if grads is None:
        return
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value.copy()


def linear(params, name, x):
    w, b = params[name + ".w"], params[name + ".b"]
    return x @ w + b, x


def linear_backward(params, grads, name, dy, x):
    w = params[name + ".w"]
    _acc(grads, name + ".w", x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1]))
    _acc(grads, name + ".b", dy.reshape(-1, dy.shape[-1]).sum(axis=0))
    return dy @ w.T


def layer_norm(params, name, x):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * params[name + ".g"] + params[name + ".b"], (xhat, inv)


def layer_norm_backward(params, grads, name, dy, cache):
    xhat, inv = cache
    d = xhat.shape[-1]
    _acc(grads, name + ".g", (dy * xhat).reshape(-1, d).sum(axis=0))
    _acc(grads, name + ".b", dy.reshape(-1, d).sum(axis=0))
    dxhat = dy * params[name + ".g"]
    return inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))


def silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, (x, s)


def silu_backward(dy, cache):
    x, s = cache
    return dy * s * (1.0 + x * (1.0 - s))


def mlp_block(params, name, x):
    """Linear -> LayerNorm -> SiLU, the building block of the embedding and head layers."""
    h, c1 = linear(params, name + ".fc", x)
    n, c2 = layer_norm(params, name + ".ln", h)
    y, c3 = silu(n)
    return y, (c1, c2, c3)


def mlp_block_backward(params, grads, name, dy, cache):
    c1, c2, c3 = cache
    dn = silu_backward(dy, c3)
    dh = layer_norm_backward(params, grads, name + ".ln", dn, c2)
    return linear_backward(params, grads, name + ".fc", dh, c1)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def attention(params, name, q_in, kv_in, key_mask, n_heads):
    """Multi-head scaled dot-product attention.

    ``key_mask`` is a boolean ``(B, Tk)`` array marking valid keys; at least one
    key per batch row must be valid.
    """
    q, cq = linear(params, name + ".q", q_in)
    k, ck = linear(params, name + ".k", kv_in)
    v, cv = linear(params, name + ".v", kv_in)
    qh, kh, vh = (_split_heads(z, n_heads) for z in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    if key_mask is not None:
        scores = np.where(key_mask[:, None, None, :], scores, MASK_FILL)
    scores = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(weights @ vh)
    out, co = linear(params, name + ".o", ctx)
    return out, (cq, ck, cv, co, qh, kh, vh, weights, scale, n_heads)


def attention_backward(params, grads, name, dout, cache):
    """Returns (d_q_in, d_kv_in)."""
    cq, ck, cv, co, qh, kh, vh, weights, scale, n_heads = cache
    dctx = linear_backward(params, grads, name + ".o", dout, co)
    dctx_h = _split_heads(dctx, n_heads)
    dweights = dctx_h @ vh.transpose(0, 1, 3, 2)
    dvh = weights.transpose(0, 1, 3, 2) @ dctx_h
    dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dqh = (dscores @ kh) * scale
    dkh = (dscores.transpose(0, 1, 3, 2) @ qh) * scale
    dq_in = linear_backward(params, grads, name + ".q", _merge_heads(dqh), cq)
    dkv_in = linear_backward(params, grads, name + ".k", _merge_heads(dkh), ck)
    dkv_in = dkv_in + linear_backward(params, grads, name + ".v", _merge_heads(dvh), cv)
    return dq_in, dkv_in


def feed_forward(params, name, x):
    h, c1 = linear(params, name + ".ff1", x)
    a, c2 = silu(h)
    y, c3 = linear(params, name + ".ff2", a)
    return y, (c1, c2, c3)


def feed_forward_backward(params, grads, name, dy, cache):
    c1, c2, c3 = cache
    da = linear_backward(params, grads, name + ".ff2", dy, c3)
    dh = silu_backward(da, c2)
    return linear_backward(params, grads, name + ".ff1", dh, c1)


def encoder_layer(params, name, x, key_mask, n_heads):
    """Post-norm block: LN(x + SelfAttn(x)) then LN(y + FF(y))."""
    a, ca = attention(params, name + ".attn", x, x, key_mask, n_heads)
    y, cl1 = layer_norm(params, name + ".ln1", x + a)
    f, cf = feed_forward(params, name, y)
    z, cl2 = layer_norm(params, name + ".ln2", y + f)
    return z, (ca, cl1, cf, cl2)


def encoder_layer_backward(params, grads, name, dz, cache):
    ca, cl1, cf, cl2 = cache
    ds = layer_norm_backward(params, grads, name + ".ln2", dz, cl2)
    dy = ds + feed_forward_backward(params, grads, name, ds, cf)
    dr = layer_norm_backward(params, grads, name + ".ln1", dy, cl1)
    dq, dkv = attention_backward(params, grads, name + ".attn", dr, ca)
    return dr + dq + dkv


def cross_layer(params, name, q, memory, key_mask, n_heads):
    """Decoder block without self-attention: LN(q + CrossAttn(q, mem)) then LN(y + FF(y))."""
    a, ca = attention(params, name + ".attn", q, memory, key_mask, n_heads)
    y, cl1 = layer_norm(params, name + ".ln1", q + a)
    f, cf = feed_forward(params, name, y)
    z, cl2 = layer_norm(params, name + ".ln2", y + f)
    return z, (ca, cl1, cf, cl2)


def cross_layer_backward(params, grads, name, dz, cache):
    """Returns (d_query, d_memory)."""
    ca, cl1, cf, cl2 = cache
    ds = layer_norm_backward(params, grads, name + ".ln2", dz, cl2)
    dy = ds + feed_forward_backward(params, grads, name, ds, cf)
    dr = layer_norm_backward(params, grads, name + ".ln1", dy, cl1)
    dq, dmem = attention_backward(params, grads, name + ".attn", dr, ca)
    return dr + dq, dmem


def masked_mean(x, mask):
    m = mask.astype(x.dtype)[..., None]
    count = m.sum(axis=1)
    return (x * m).sum(axis=1) / count, (m, count)


def masked_mean_backward(dy, cache):
    m, count = cache
    return (dy / count)[:, None, :] * m


def huber(residual, delta):
    """Elementwise Huber penalty of ``residual`` with transition point ``delta``."""
    r = np.abs(residual)
    return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


def huber_grad(residual, delta):
    return np.clip(residual, -delta, delta)
