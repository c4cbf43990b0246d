"""The 1D UNet denoiser with timestep modulation, self-attention and
cross-attention against the multi-modal condition tokens.

The latent (k, d) is treated channels-first as d channels over a length-k
sequence, zero-padded on the right to a multiple of 2^levels. Three levels with
channel multipliers 1, 2, 4: the first two downsample (stride-2 conv), the
third is the bottleneck; the up path mirrors with nearest-neighbor upsampling,
skip concatenation, and the same resblock + attention stack. Each resblock is
two Conv1D-GN-SiLU units with scale-shift timestep modulation after the first
GN, plus a 1x1 conv on the residual path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .autodiff import Tensor, conv1d, gelu, group_norm, silu, softmax
from .autodiff.tensor import concat, pad_axis
from .params import ParamStore, he_init


@dataclass(frozen=True)
class UNetConfig:
    k: int = 8
    d: int = 32
    base_channels: int = 64
    channel_mults: Tuple[int, ...] = (1, 2, 4)
    d_cond: int = 64
    heads: int = 4
    gn_groups: int = 8
    timesteps: int = 1000

    @property
    def levels(self) -> int:
        return len(self.channel_mults)

    @property
    def time_embed_dim(self) -> int:
        return 4 * self.base_channels

    @property
    def pad_multiple(self) -> int:
        return 2 ** self.levels

    def __post_init__(self):
        if self.base_channels % self.gn_groups:
            raise ValueError("base_channels must be divisible by gn_groups")
        for m in self.channel_mults:
            if (self.base_channels * m) % self.heads:
                raise ValueError("channels must be divisible by head count")


def sincos_features(t: np.ndarray, dim: int) -> np.ndarray:
    """Geometrically spaced sinusoid features of integer timesteps; (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).astype(np.float32)


class _Resblock:
    def __init__(self, cfg: UNetConfig, store: ParamStore, rng, prefix: str,
                 c_in: int, c_out: int):
        self.cfg = cfg
        self.c_out = c_out
        te = cfg.time_embed_dim
        self.w1 = store.add(f"{prefix}.conv1.w", he_init(rng, (c_out, c_in, 3), c_in * 3))
        self.b1 = store.add(f"{prefix}.conv1.b", np.zeros(c_out))
        self.g1 = store.add(f"{prefix}.gn1.gamma", np.ones(c_out))
        self.be1 = store.add(f"{prefix}.gn1.beta", np.zeros(c_out))
        # zero init: modulation starts as identity
        self.wm = store.add(f"{prefix}.mod.w", np.zeros((te, 2 * c_out)))
        self.bm = store.add(f"{prefix}.mod.b", np.zeros(2 * c_out))
        self.w2 = store.add(f"{prefix}.conv2.w", he_init(rng, (c_out, c_out, 3), c_out * 3))
        self.b2 = store.add(f"{prefix}.conv2.b", np.zeros(c_out))
        self.g2 = store.add(f"{prefix}.gn2.gamma", np.ones(c_out))
        self.be2 = store.add(f"{prefix}.gn2.beta", np.zeros(c_out))
        self.wr = store.add(f"{prefix}.res.w", he_init(rng, (c_out, c_in, 1), c_in))
        self.br = store.add(f"{prefix}.res.b", np.zeros(c_out))

    def __call__(self, h: Tensor, emb: Tensor) -> Tensor:
        g = self.cfg.gn_groups
        u = conv1d(h, self.w1, self.b1)
        u = group_norm(u, g, self.g1, self.be1)
        u = modulate(u, emb, self.wm, self.bm)
        u = silu(u)
        u = conv1d(u, self.w2, self.b2)
        u = group_norm(u, g, self.g2, self.be2)
        u = silu(u)
        return u + conv1d(h, self.wr, self.br, padding=0)


def modulate(h: Tensor, emb: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Scale-shift from the timestep embedding: h * (1 + beta) + gamma per channel.

    h: (B, C, L); emb: (B, TE); w: (TE, 2C).
    """
    c = h.shape[-2]
    if w.shape[-1] != 2 * c:
        raise ValueError("modulation projection width does not match channels")
    gb = emb @ w + b                       # (B, 2C)
    n = gb.ndim
    gamma = gb[..., :c].reshape(*gb.shape[:-1], c, 1)
    beta = gb[..., c:].reshape(*gb.shape[:-1], c, 1)
    return h * (beta + 1.0) + gamma


class _AttnStack:
    """Pre-norm self-attention, position-wise feed-forward, cross-attention."""

    def __init__(self, cfg: UNetConfig, store: ParamStore, rng, prefix: str, c: int):
        self.cfg = cfg
        self.c = c

        def lin(name, d_in, d_out, zero=False):
            w = store.add(f"{prefix}.{name}.w",
                          np.zeros((d_in, d_out)) if zero else he_init(rng, (d_in, d_out), d_in))
            b = store.add(f"{prefix}.{name}.b", np.zeros(d_out))
            return w, b

        def gn(name):
            g = store.add(f"{prefix}.{name}.gamma", np.ones(c))
            b = store.add(f"{prefix}.{name}.beta", np.zeros(c))
            return g, b

        # all projections start live (he init): with invisible keys excluded
        # from cross-attention there is no null-token noise for training to
        # silence, and a live output projection lets the condition readout
        # tune from step one instead of bootstrapping bilinearly from zero
        self.norm_sa = gn("norm_sa")
        self.sa_q = lin("sa.q", c, c)
        self.sa_k = lin("sa.k", c, c)
        self.sa_v = lin("sa.v", c, c)
        self.sa_o = lin("sa.o", c, c)
        self.norm_ff = gn("norm_ff")
        self.ff1 = lin("ff.1", c, c)
        self.ff2 = lin("ff.2", c, c)
        self.norm_ca = gn("norm_ca")
        self.ca_q = lin("ca.q", c, c)
        self.ca_k = lin("ca.k", self.cfg.d_cond, c)
        self.ca_v = lin("ca.v", self.cfg.d_cond, c)
        self.ca_o = lin("ca.o", c, c)

    def _heads_split(self, x: Tensor) -> Tensor:
        b, l, c = x.shape
        h = self.cfg.heads
        return x.reshape(b, l, h, c // h).transpose(0, 2, 1, 3)

    def _heads_join(self, x: Tensor) -> Tensor:
        b, h, l, dk = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, l, h * dk)

    def _mha(self, q: Tensor, k: Tensor, v: Tensor,
             key_visible=None) -> Tensor:
        q, k, v = map(self._heads_split, (q, k, v))
        dk = q.shape[-1]
        logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dk))
        if key_visible is not None:
            # exclude invisible keys; rows with no visible key contribute 0
            bias = np.where(key_visible, 0.0, -1e9).astype(np.float32)
            logits = logits + Tensor(bias[:, None, None, :])
        out = self._heads_join(softmax(logits, axis=-1) @ v)
        if key_visible is not None:
            keep = key_visible.any(axis=-1).astype(np.float32)
            out = out * Tensor(keep[:, None, None])
        return out

    def _prenorm(self, h: Tensor, gn_params) -> Tensor:
        gamma, beta = gn_params
        return group_norm(h, self.cfg.gn_groups, gamma, beta)

    def __call__(self, h: Tensor, cond_tokens: Tensor,
                 key_visible=None) -> Tensor:
        # h: (B, C, L); cond_tokens: (B, T, d_cond); key_visible: (B, T) bool
        x = self._prenorm(h, self.norm_sa).transpose(0, 2, 1)   # (B, L, C)
        q = x @ self.sa_q[0] + self.sa_q[1]
        k = x @ self.sa_k[0] + self.sa_k[1]
        v = x @ self.sa_v[0] + self.sa_v[1]
        sa = self._mha(q, k, v) @ self.sa_o[0] + self.sa_o[1]
        h = h + sa.transpose(0, 2, 1)

        x = self._prenorm(h, self.norm_ff).transpose(0, 2, 1)
        ff = gelu(x @ self.ff1[0] + self.ff1[1]) @ self.ff2[0] + self.ff2[1]
        h = h + ff.transpose(0, 2, 1)

        x = self._prenorm(h, self.norm_ca).transpose(0, 2, 1)
        q = x @ self.ca_q[0] + self.ca_q[1]
        k = cond_tokens @ self.ca_k[0] + self.ca_k[1]
        v = cond_tokens @ self.ca_v[0] + self.ca_v[1]
        ca = self._mha(q, k, v, key_visible=key_visible) @ self.ca_o[0] \
            + self.ca_o[1]
        return h + ca.transpose(0, 2, 1)


class Denoiser:
    """The full 1D UNet; owns a ParamStore slice under the prefix "unet"."""

    def __init__(self, cfg: UNetConfig, store: ParamStore,
                 rng: np.random.Generator, prefix: str = "unet"):
        self.cfg = cfg
        chans = [cfg.base_channels * m for m in cfg.channel_mults]
        c0, c1, c2 = chans
        te = cfg.time_embed_dim

        self.time_w1 = store.add(f"{prefix}.time.1.w",
                                 he_init(rng, (cfg.base_channels, te), cfg.base_channels))
        self.time_b1 = store.add(f"{prefix}.time.1.b", np.zeros(te))
        self.time_w2 = store.add(f"{prefix}.time.2.w", he_init(rng, (te, te), te))
        self.time_b2 = store.add(f"{prefix}.time.2.b", np.zeros(te))

        self.in_w = store.add(f"{prefix}.in.w", he_init(rng, (c0, cfg.d, 3), cfg.d * 3))
        self.in_b = store.add(f"{prefix}.in.b", np.zeros(c0))

        def level(name, c_in, c):
            return (_Resblock(cfg, store, rng, f"{prefix}.{name}.res1", c_in, c),
                    _Resblock(cfg, store, rng, f"{prefix}.{name}.res2", c, c),
                    _AttnStack(cfg, store, rng, f"{prefix}.{name}.attn", c))

        self.down0 = level("down0", c0, c0)
        self.ds0_w = store.add(f"{prefix}.ds0.w", he_init(rng, (c1, c0, 3), c0 * 3))
        self.ds0_b = store.add(f"{prefix}.ds0.b", np.zeros(c1))
        self.down1 = level("down1", c1, c1)
        self.ds1_w = store.add(f"{prefix}.ds1.w", he_init(rng, (c2, c1, 3), c1 * 3))
        self.ds1_b = store.add(f"{prefix}.ds1.b", np.zeros(c2))
        self.mid = level("mid", c2, c2)
        self.us1_w = store.add(f"{prefix}.us1.w", he_init(rng, (c1, c2, 3), c2 * 3))
        self.us1_b = store.add(f"{prefix}.us1.b", np.zeros(c1))
        self.up1 = level("up1", 2 * c1, c1)
        self.us0_w = store.add(f"{prefix}.us0.w", he_init(rng, (c0, c1, 3), c1 * 3))
        self.us0_b = store.add(f"{prefix}.us0.b", np.zeros(c0))
        self.up0 = level("up0", 2 * c0, c0)

        self.out_g = store.add(f"{prefix}.out.gamma", np.ones(c0))
        self.out_be = store.add(f"{prefix}.out.beta", np.zeros(c0))
        self.out_w = store.add(f"{prefix}.out.w", he_init(rng, (cfg.d, c0, 3), c0 * 3))
        self.out_b = store.add(f"{prefix}.out.b", np.zeros(cfg.d))

    # -- pieces ---------------------------------------------------------------

    def timestep_embed(self, t) -> Tensor:
        """Integer timestep(s) -> (B, time_embed_dim) embedding."""
        tarr = np.atleast_1d(np.asarray(t))
        if np.any(tarr < 0) or np.any(tarr >= self.cfg.timesteps):
            raise ValueError(f"timestep out of [0, {self.cfg.timesteps})")
        feats = Tensor(sincos_features(tarr, self.cfg.base_channels))
        h = gelu(feats @ self.time_w1 + self.time_b1)
        return h @ self.time_w2 + self.time_b2

    def _run_level(self, level, h: Tensor, emb: Tensor, cond: Tensor,
                   key_visible=None) -> Tensor:
        res1, res2, attn = level
        h = res1(h, emb)
        h = res2(h, emb)
        return attn(h, cond, key_visible=key_visible)

    # -- forward --------------------------------------------------------------

    def denoise(self, z_t, t, cond_tokens: Tensor, key_visible=None) -> Tensor:
        """Predict the v-target for noisy latents.

        z_t: (k, d) or (B, k, d); t: int or (B,); cond_tokens: (T, d_cond) or
        (B, T, d_cond); key_visible: optional (T,) or (B, T) bool selecting
        which condition tokens cross-attention may read (None = all).
        Returns the same latent shape as given.
        """
        cfg = self.cfg
        single = not isinstance(z_t, Tensor) and np.asarray(z_t).ndim == 2 \
            or isinstance(z_t, Tensor) and z_t.ndim == 2
        z = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t, dtype=np.float32))
        if not np.all(np.isfinite(z.data)):
            raise ValueError("denoise: non-finite input latent")
        if single:
            z = z.reshape(1, *z.shape)
        if isinstance(cond_tokens, Tensor) and cond_tokens.ndim == 2:
            cond_tokens = cond_tokens.reshape(1, *cond_tokens.shape)
        b, k, d = z.shape
        if d != cfg.d:
            raise ValueError(f"latent dim {d} != config d {cfg.d}")
        if cond_tokens.shape[-1] != cfg.d_cond:
            raise ValueError("condition token width != d_cond")
        if cond_tokens.shape[0] == 1 and b > 1:
            cond_tokens = Tensor(np.broadcast_to(
                cond_tokens.data, (b,) + cond_tokens.shape[1:]).copy()) \
                if not cond_tokens.requires_grad else cond_tokens
        if key_visible is not None:
            key_visible = np.atleast_2d(np.asarray(key_visible, dtype=bool))
            if key_visible.shape[-1] != cond_tokens.shape[-2]:
                raise ValueError("key_visible length != condition token count")
            if key_visible.shape[0] == 1 and b > 1:
                key_visible = np.broadcast_to(
                    key_visible, (b, key_visible.shape[1]))
        pad = (-k) % cfg.pad_multiple

        emb = self.timestep_embed(t)
        if emb.shape[0] == 1 and b > 1:
            emb = concat([emb] * b, axis=0)

        h = z.transpose(0, 2, 1)               # (B, d, k) channels-first
        if pad:
            h = pad_axis(h, 2, 0, pad)
        h = conv1d(h, self.in_w, self.in_b)

        h = self._run_level(self.down0, h, emb, cond_tokens, key_visible)
        skip0 = h
        h = conv1d(h, self.ds0_w, self.ds0_b, stride=2)
        h = self._run_level(self.down1, h, emb, cond_tokens, key_visible)
        skip1 = h
        h = conv1d(h, self.ds1_w, self.ds1_b, stride=2)
        h = self._run_level(self.mid, h, emb, cond_tokens, key_visible)

        h = conv1d(_nearest_upsample(h), self.us1_w, self.us1_b)
        h = concat([h, skip1], axis=1)
        h = self._run_level(self.up1, h, emb, cond_tokens, key_visible)
        h = conv1d(_nearest_upsample(h), self.us0_w, self.us0_b)
        h = concat([h, skip0], axis=1)
        h = self._run_level(self.up0, h, emb, cond_tokens, key_visible)

        h = silu(group_norm(h, cfg.gn_groups, self.out_g, self.out_be))
        h = conv1d(h, self.out_w, self.out_b)
        if pad:
            h = h[:, :, :k]
        out = h.transpose(0, 2, 1)             # (B, k, d)
        return out[0] if single else out


def _nearest_upsample(h: Tensor) -> Tensor:
    """Nearest-neighbor x2 along the sequence axis: (B, C, L) -> (B, C, 2L)."""
    b, c, l = h.shape
    return concat([h.reshape(b, c, l, 1)] * 2, axis=3).reshape(b, c, 2 * l)
