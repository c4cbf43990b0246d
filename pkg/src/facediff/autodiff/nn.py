"""Differentiable NN primitives: convolutions, normalization, attention.

All ops accept an optional leading batch axis on their main input; weights are
unbatched. Convolutions use im2col forward and col2im (scatter-add) backward.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import erf as _erf

from .tensor import Tensor, concat, _unbroadcast

_SQRT_2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def relu(x: Tensor) -> Tensor:
    a = x
    mask = a.data > 0

    def bwd(g):
        return [(a, g * mask)]
    return Tensor._make(np.maximum(a.data, 0.0), (a,), bwd)


def silu(x: Tensor) -> Tensor:
    a = x
    sig = 1.0 / (1.0 + np.exp(-a.data))
    val = a.data * sig

    def bwd(g):
        return [(a, g * (sig * (1.0 + a.data * (1.0 - sig))))]
    return Tensor._make(val, (a,), bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    a = x
    cdf = 0.5 * (1.0 + _erf(a.data / _SQRT_2))

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        return [(a, g * (cdf + a.data * pdf))]
    return Tensor._make(a.data * cdf, (a,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    val = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * val).sum(axis=axis, keepdims=True)
        return [(a, val * (g - dot))]
    return Tensor._make(val, (a,), bwd)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: x[..., D_in] @ weight[D_in, D_out] + bias."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: inner dims mismatch {x.shape[-1]} vs {weight.shape[0]}")
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           padding: Optional[int] = None, stride: int = 1) -> Tensor:
    """Cross-correlation over the last axis.

    x: (C_in, L) or (B, C_in, L); weight: (C_out, C_in, K), K odd.
    Default padding (K-1)//2 keeps the length for stride 1.
    """
    c_out, c_in, k = weight.shape
    if k % 2 == 0:
        raise ValueError("conv1d kernel size must be odd")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.shape[1] != c_in:
        raise ValueError(f"conv1d: channel mismatch {xd.shape[1]} vs {c_in}")
    pad = (k - 1) // 2 if padding is None else padding
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad)))
    b, _, lp = xp.shape
    l_out = (lp - k) // stride + 1

    s0, s1, s2 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c_in, k, l_out), strides=(s0, s1, s2, s2 * stride))
    # (B, L_out, C_in*K) @ (C_in*K, C_out)
    cols2 = cols.transpose(0, 3, 1, 2).reshape(b, l_out, c_in * k)
    w2 = weight.data.reshape(c_out, c_in * k).T
    val = cols2 @ w2
    if bias is not None:
        val = val + bias.data
    val = val.transpose(0, 2, 1)

    xt, wt, bt = x, weight, bias
    cols2c = np.ascontiguousarray(cols2)

    def bwd(g):
        gb = g[None] if squeeze else g            # (B, C_out, L_out)
        g2 = gb.transpose(0, 2, 1)                # (B, L_out, C_out)
        grads = []
        if xt.requires_grad:
            gcols = g2 @ w2.T                     # (B, L_out, C_in*K)
            gxp = np.zeros_like(xp)
            gc = gcols.reshape(b, l_out, c_in, k).transpose(0, 2, 3, 1)
            for j in range(k):
                gxp[:, :, j:j + l_out * stride:stride] += gc[:, :, j, :]
            gx = gxp[:, :, pad:lp - pad] if pad else gxp
            grads.append((xt, gx[0] if squeeze else gx))
        if wt.requires_grad:
            gw = g2.reshape(-1, c_out).T @ cols2c.reshape(-1, c_in * k)
            grads.append((wt, gw.reshape(c_out, c_in, k)))
        if bt is not None and bt.requires_grad:
            grads.append((bt, gb.sum(axis=(0, 2))))
        return grads

    parents = (xt, wt) if bias is None else (xt, wt, bt)
    out = Tensor._make(val[0] if squeeze else val, parents, bwd)
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation. x: (C_in, H, W) or (B, C_in, H, W); weight: (C_out, C_in, KH, KW)."""
    c_out, c_in, kh, kw = weight.shape
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.shape[1] != c_in:
        raise ValueError(f"conv2d: channel mismatch {xd.shape[1]} vs {c_in}")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    b, _, hp, wp = xp.shape
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1

    s0, s1, s2, s3 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c_in, kh, kw, h_out, w_out),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride))
    cols2 = cols.transpose(0, 4, 5, 1, 2, 3).reshape(b, h_out * w_out, c_in * kh * kw)
    w2 = weight.data.reshape(c_out, -1).T
    val = cols2 @ w2                              # (B, HW, C_out)
    if bias is not None:
        val = val + bias.data
    val = val.transpose(0, 2, 1).reshape(b, c_out, h_out, w_out)

    xt, wt, bt = x, weight, bias
    cols2c = np.ascontiguousarray(cols2)

    def bwd(g):
        gb = g[None] if squeeze else g
        g2 = gb.reshape(b, c_out, h_out * w_out).transpose(0, 2, 1)
        grads = []
        if xt.requires_grad:
            gcols = (g2 @ w2.T).reshape(b, h_out, w_out, c_in, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + h_out * stride:stride, j:j + w_out * stride:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:hp - padding if padding else hp,
                     padding:wp - padding if padding else wp]
            grads.append((xt, gx[0] if squeeze else gx))
        if wt.requires_grad:
            gw = g2.reshape(-1, c_out).T @ cols2c.reshape(-1, c_in * kh * kw)
            grads.append((wt, gw.reshape(c_out, c_in, kh, kw)))
        if bt is not None and bt.requires_grad:
            grads.append((bt, gb.sum(axis=(0, 2, 3))))
        return grads

    parents = (xt, wt) if bias is None else (xt, wt, bt)
    out = Tensor._make(val[0] if squeeze else val, parents, bwd)
    return out


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Per-group normalization over (channels/groups, length); affine per channel.

    x: (C, L) or (B, C, L).
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    b, c, l = x.shape
    if c % groups != 0:
        raise ValueError(f"group_norm: {c} channels not divisible by {groups} groups")
    xg = x.reshape(b, groups, (c // groups) * l)
    mu = xg.mean(axis=2, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    norm = xc / (var + eps).sqrt()
    norm = norm.reshape(b, c, l)
    out = norm * gamma.reshape(1, c, 1) + beta.reshape(1, c, 1)
    return out.reshape(c, l) if squeeze else out


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention: softmax(Q K^T / sqrt(dk)) V.

    Shapes: q (..., Lq, Dk), k (..., Lk, Dk), v (..., Lk, Dv).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError("attention: query/key dim mismatch")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("attention: key/value length mismatch")
    dk = q.shape[-1]
    if dk <= 0:
        raise ValueError("attention: key dim must be positive")
    kt = k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)
    logits = (q @ kt) * (1.0 / np.sqrt(dk))
    return softmax(logits, axis=-1) @ v


def dropout(x: Tensor, rate: float, rng: np.random.Generator,
            inference: bool = False) -> Tensor:
    """Inverted dropout with an explicit RNG handle; identity at inference."""
    if inference or rate <= 0.0:
        return x
    if rate >= 1.0:
        return x * 0.0
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    return x * Tensor(keep / (1.0 - rate))
