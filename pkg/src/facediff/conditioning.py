"""Condition embedding: attribute encoder, visual encoder, masking, null condition.

Attributes are quantized to 256 levels, sinusoidally encoded, and pushed through
a 5-layer ReLU MLP; masked slots are replaced by a learned per-slot mask token
before the MLP. RGB and segmentation share one visual encoder fed a 4-channel
raster where invalid pixels carry the fill value -1; a strided conv backbone
reduces the raster to a token grid and a 3-layer ReLU MLP projects to the
common condition width. Both token sets are concatenated after dropout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from . import toygen
from .autodiff import Tensor, conv2d, dropout, relu
from .autodiff.tensor import where
from .params import ParamStore, he_init
from .toygen import DatasetRecord, SEG_CLASSES

MASK_V = -1.0
QUANT_LEVELS = 256


@dataclass(frozen=True)
class CondConfig:
    n_attr: int = 8
    d_cond: int = 64
    image_size: int = 64
    dropout_rate: float = 0.1

    @property
    def grid(self) -> int:
        # three stride-2 stages
        return self.image_size // 8

    @property
    def n_vis_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def n_tokens(self) -> int:
        return self.n_attr + self.n_vis_tokens


@dataclass
class AttributeCondition:
    values: np.ndarray   # (n_attr,) floats in [0, 1]
    mask: np.ndarray     # (n_attr,) bool; True = masked slot

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise ValueError("attribute values/mask length mismatch")


@dataclass
class VisualCondition:
    rgb: np.ndarray        # (3, H, W) in [0, 1]
    seg: np.ndarray        # (H, W) int labels
    rgb_valid: np.ndarray  # (H, W) bool
    seg_valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        h, w = self.seg.shape
        if self.rgb.shape != (3, h, w) or self.rgb_valid.shape != (h, w) \
                or self.seg_valid.shape != (h, w):
            raise ValueError("visual condition rasters disagree on resolution")


@dataclass(frozen=True)
class MaskingPolicy:
    p_modality_mask: float = 0.9
    strokes: Tuple[int, int] = (1, 4)
    stroke_radius: Tuple[int, int] = (2, 8)
    stroke_length: Tuple[int, int] = (10, 40)
    p_class_drop: float = 0.3
    p_condition_drop: float = 0.2   # CFG null replacement, applied at train time
    # sparse-condition augmentation, off by default: drop a whole visual
    # channel, or keep only the pixels of one segmentation class valid;
    # class_keep_weights biases which class is kept (one weight per label,
    # renormalized over the classes present in the record; None = uniform)
    p_channel_drop: float = 0.0
    p_class_keep: float = 0.0
    class_keep_weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        for p in (self.p_modality_mask, self.p_class_drop, self.p_condition_drop,
                  self.p_channel_drop, self.p_class_keep):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


def _sinusoid_table(levels: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal code of integer levels; shape levels.shape + (dim,)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = levels[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).astype(np.float32)


def quantize(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats to integer levels 0..255."""
    return np.clip(np.floor(np.asarray(values) * QUANT_LEVELS), 0, QUANT_LEVELS - 1)


def _token_norm(tokens: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each token over the feature axis (no affine).

    Keeps the condition tokens at unit scale regardless of what the encoder
    weights do, so training cannot silence the conditioning pathway by
    shrinking encoder outputs toward a constant.
    """
    mu = tokens.mean(axis=-1, keepdims=True)
    c = tokens - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    return c / (var + eps).sqrt()


class AttributeEncoder:
    """Per-slot sinusoid (or mask token) + positional embedding + 5-layer ReLU MLP."""

    N_LAYERS = 5

    def __init__(self, cfg: CondConfig, store: ParamStore, rng: np.random.Generator,
                 prefix: str = "enc_a"):
        self.cfg = cfg
        d = cfg.d_cond
        self.mask_token = store.add(f"{prefix}.mask_token",
                                    rng.standard_normal((cfg.n_attr, d)) * 0.02)
        self.pos_embed = store.add(f"{prefix}.pos_embed",
                                   rng.standard_normal((cfg.n_attr, d)) * 0.02)
        self.layers = []
        for i in range(self.N_LAYERS):
            w = store.add(f"{prefix}.mlp{i}.w", he_init(rng, (d, d), d))
            b = store.add(f"{prefix}.mlp{i}.b", np.zeros(d))
            self.layers.append((w, b))

    def encode(self, values: np.ndarray, mask: np.ndarray,
               rng: Optional[np.random.Generator] = None) -> Tensor:
        """values (B, n_attr), mask (B, n_attr) -> tokens (B, n_attr, d_cond)."""
        values = np.atleast_2d(values)
        mask = np.atleast_2d(mask)
        if values.shape[1] != self.cfg.n_attr:
            raise ValueError(f"expected {self.cfg.n_attr} attributes, got {values.shape[1]}")
        sin = _sinusoid_table(quantize(values), self.cfg.d_cond)
        h = where(mask[..., None], self.mask_token, Tensor(sin))
        h = h + self.pos_embed
        for i, (w, b) in enumerate(self.layers):
            h = h @ w + b
            if i < self.N_LAYERS - 1:
                h = relu(h)
        return _token_norm(h)

    def encode_condition(self, cond: AttributeCondition) -> Tensor:
        return self.encode(cond.values[None], cond.mask[None])[0]


class VisualEncoder:
    """Strided conv backbone over the 4-channel raster, then a 3-layer ReLU MLP."""

    def __init__(self, cfg: CondConfig, store: ParamStore, rng: np.random.Generator,
                 prefix: str = "enc_v"):
        self.cfg = cfg
        d = cfg.d_cond
        chans = [4, max(8, d // 2), d, d]
        self.convs = []
        for i, (ci, co) in enumerate(zip(chans[:-1], chans[1:])):
            w = store.add(f"{prefix}.conv{i}.w", he_init(rng, (co, ci, 3, 3), ci * 9))
            b = store.add(f"{prefix}.conv{i}.b", np.zeros(co))
            self.convs.append((w, b))
        # one learned embedding per grid cell: the conv features alone do not
        # tell cross-attention where a token came from, and segmentation
        # conditioning is all about where
        self.pos_embed = store.add(f"{prefix}.pos_embed",
                                   rng.standard_normal((cfg.grid * cfg.grid, d)) * 0.02)
        self.mlp = []
        for i in range(3):
            w = store.add(f"{prefix}.mlp{i}.w", he_init(rng, (d, d), d))
            b = store.add(f"{prefix}.mlp{i}.b", np.zeros(d))
            self.mlp.append((w, b))

    def encode(self, raster: np.ndarray) -> Tensor:
        """raster (B, 4, H, W) -> tokens (B, n_vis_tokens, d_cond)."""
        raster = np.asarray(raster, dtype=np.float32)
        if raster.ndim == 3:
            raster = raster[None]
        if raster.shape[2] != self.cfg.image_size:
            raise ValueError(f"expected {self.cfg.image_size}px input, got {raster.shape[2]}")
        h = Tensor(raster)
        for w, b in self.convs:
            h = relu(conv2d(h, w, b, stride=2, padding=1))
        b_, c, gh, gw = h.shape
        tokens = h.reshape(b_, c, gh * gw).transpose(0, 2, 1)
        tokens = tokens + self.pos_embed
        for i, (w, b) in enumerate(self.mlp):
            tokens = tokens @ w + b
            if i < 2:
                tokens = relu(tokens)
        return _token_norm(tokens)

    def encode_condition(self, cond: VisualCondition) -> Tensor:
        return self.encode(visual_raster(cond)[None])[0]


def token_visibility(attrs, visuals, cfg: CondConfig) -> np.ndarray:
    """(B, n_attr + grid^2) bool: which condition tokens carry real content.

    Attribute tokens are visible where the slot is unmasked; a visual token
    is visible when any pixel of its grid cell is valid in either raster
    channel. Cross-attention keys are restricted to visible tokens, so the
    denoiser's conditioning pathway receives gradient only from examples
    that actually carry a condition.
    """
    g = cfg.grid
    cell = cfg.image_size // g
    out = np.zeros((len(attrs), cfg.n_attr + g * g), dtype=bool)
    for i, (a, v) in enumerate(zip(attrs, visuals)):
        out[i, :cfg.n_attr] = ~a.mask
        valid = v.rgb_valid | v.seg_valid
        out[i, cfg.n_attr:] = valid.reshape(g, cell, g, cell) \
            .any(axis=(1, 3)).ravel()
    return out


def visual_raster(cond: VisualCondition) -> np.ndarray:
    """Assemble the encoder input: RGB + normalized seg, invalid pixels = MASK_V."""
    h, w = cond.seg.shape
    out = np.empty((4, h, w), dtype=np.float32)
    out[:3] = np.where(cond.rgb_valid, cond.rgb, MASK_V)
    seg_norm = cond.seg.astype(np.float32) / (SEG_CLASSES - 1)
    out[3] = np.where(cond.seg_valid, seg_norm, MASK_V)
    return out


def brush_mask(shape: Tuple[int, int], policy: MaskingPolicy,
               rng: np.random.Generator) -> np.ndarray:
    """Union of random-walk brush strokes; True = masked pixel."""
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    n = rng.integers(policy.strokes[0], policy.strokes[1] + 1)
    for _ in range(n):
        radius = int(rng.integers(policy.stroke_radius[0], policy.stroke_radius[1] + 1))
        length = rng.integers(policy.stroke_length[0], policy.stroke_length[1] + 1)
        x = rng.uniform(0, w)
        y = rng.uniform(0, h)
        ang = rng.uniform(0, 2 * np.pi, size=length)
        px = np.clip(x + np.concatenate([[0.0], np.cumsum(np.cos(ang))]), 0, w - 1)
        py = np.clip(y + np.concatenate([[0.0], np.cumsum(np.sin(ang))]), 0, h - 1)
        # stamp only inside the stroke's bounding box
        x0 = max(int(px.min()) - radius, 0)
        x1 = min(int(px.max()) + radius + 1, w)
        y0 = max(int(py.min()) - radius, 0)
        y1 = min(int(py.max()) + radius + 1, h)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d2 = (xx[..., None] - px) ** 2 + (yy[..., None] - py) ** 2
        mask[y0:y1, x0:x1] |= (d2 <= radius * radius).any(axis=-1)
    return mask


def apply_masking(record: DatasetRecord, policy: MaskingPolicy,
                  rng: np.random.Generator) -> Tuple[AttributeCondition, VisualCondition]:
    """Training-time masking: per-modality blanket mask, brush strokes, class drop."""
    n_attr = record.attrs.shape[0]
    if rng.random() < policy.p_modality_mask:
        attr_mask = np.ones(n_attr, dtype=bool)
    else:
        # partial masks with a uniform visible-slot count so every subset
        # size - including the single-slot conditions used for editing - is
        # in-distribution at inference time
        n_visible = int(rng.integers(1, n_attr + 1))
        visible = rng.choice(n_attr, size=n_visible, replace=False)
        attr_mask = np.ones(n_attr, dtype=bool)
        attr_mask[visible] = False
    attr = AttributeCondition(values=record.attrs.copy(), mask=attr_mask)

    shape = record.seg.shape
    rgb_valid = np.ones(shape, dtype=bool)
    seg_valid = np.ones(shape, dtype=bool)
    if rng.random() < policy.p_modality_mask:
        rgb_valid &= ~brush_mask(shape, policy, rng)
    if rng.random() < policy.p_modality_mask:
        seg_valid &= ~brush_mask(shape, policy, rng)
        # class drop rides on the seg-masking event
        if rng.random() < policy.p_class_drop:
            present = np.unique(record.seg)
            cls = int(rng.choice(present))
            drop = record.seg == cls
            rgb_valid &= ~drop
            seg_valid &= ~drop
    # sparse-condition augmentation: inference-time conditions are often a
    # single channel (e.g. segmentation only) restricted to one region, so
    # training must visit those patterns too
    if rng.random() < policy.p_channel_drop:
        rgb_valid[:] = False
    if rng.random() < policy.p_channel_drop:
        seg_valid[:] = False
    if rng.random() < policy.p_class_keep:
        present = np.unique(record.seg)
        if policy.class_keep_weights is None:
            p = None
        else:
            w = np.array([policy.class_keep_weights[c] for c in present], dtype=float)
            p = w / w.sum()
        keep = record.seg == int(rng.choice(present, p=p))
        rgb_valid &= keep
        seg_valid &= keep
    vis = VisualCondition(rgb=record.image.copy(), seg=record.seg.copy(),
                          rgb_valid=rgb_valid, seg_valid=seg_valid)
    return attr, vis


def make_null(cfg: CondConfig) -> Tuple[AttributeCondition, VisualCondition]:
    """The null condition phi: everything masked."""
    s = cfg.image_size
    attr = AttributeCondition(values=np.zeros(cfg.n_attr),
                              mask=np.ones(cfg.n_attr, dtype=bool))
    vis = VisualCondition(rgb=np.zeros((3, s, s), dtype=np.float32),
                          seg=np.zeros((s, s), dtype=np.uint8),
                          rgb_valid=np.zeros((s, s), dtype=bool),
                          seg_valid=np.zeros((s, s), dtype=bool))
    return attr, vis


def condition_drop(attr: AttributeCondition, vis: VisualCondition, cfg: CondConfig,
                   policy: MaskingPolicy, rng: np.random.Generator
                   ) -> Tuple[AttributeCondition, VisualCondition]:
    """CFG training dropout: independently replace each condition by null."""
    null_attr, null_vis = make_null(cfg)
    if rng.random() < policy.p_condition_drop:
        attr = null_attr
    if rng.random() < policy.p_condition_drop:
        vis = null_vis
    return attr, vis


def assemble_condition(attr_tokens: Tensor, vis_tokens: Tensor, dropout_rate: float,
                       rng: Optional[np.random.Generator] = None,
                       inference: bool = False) -> Tensor:
    """Dropout each token set (training only), then concatenate along tokens."""
    if attr_tokens.shape[-1] != vis_tokens.shape[-1]:
        raise ValueError("attribute/visual token widths differ")
    if not inference and rng is None:
        raise ValueError("training-mode assembly needs an RNG handle")
    from .autodiff.tensor import concat
    a = dropout(attr_tokens, dropout_rate, rng, inference=inference)
    v = dropout(vis_tokens, dropout_rate, rng, inference=inference)
    return concat([a, v], axis=-2)
