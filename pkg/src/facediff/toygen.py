"""Frozen procedural face generator: the deterministic stand-in for a
pre-trained image GAN.

A latent (k, d) is decoded through a fixed random matrix into bounded scene
parameters (face geometry, colors, accessories), which are rasterized into a
64x64 RGB image plus a ground-truth segmentation map and attribute vector.
The same geometry drives a hard rasterizer (integer labels, used for dataset
generation and metrics) and a soft differentiable rasterizer (sigmoid region
memberships, used by the optimization baseline).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, no_grad
from .autodiff.tensor import maximum, minimum, stack, where

# segmentation classes
SEG_BACKGROUND = 0
SEG_SKIN = 1
SEG_HAIR = 2
SEG_EYES = 3
SEG_GLASSES = 4
SEG_CLOTHING = 5
SEG_CLASSES = 6
SEG_CLASS_NAMES = ["background", "skin", "hair", "eyes", "glasses", "clothing"]

ATTRIBUTE_NAMES = ["blonde_hair", "dark_hair", "glasses", "pale_skin",
                   "long_hair", "big_eyes", "wide_face", "hat"]

# fixed palette for regions without a color parameter
BG_COLOR = np.array([0.86, 0.88, 0.92])
CLOTHING_COLOR = np.array([0.22, 0.25, 0.45])
EYE_COLOR = np.array([0.05, 0.05, 0.08])
GLASSES_COLOR = np.array([0.12, 0.10, 0.10])
HAT_COLOR = np.array([0.62, 0.18, 0.18])

REFERENCE_FOV_DEG = 21.5
CAMERA_RADIUS = 2.7
_DECODE_GAIN = 1.6


@dataclass(frozen=True)
class ToyGenConfig:
    """Identifies a frozen generator; same config and seed decode identically forever."""
    k: int = 8
    d: int = 32
    image_size: int = 64
    n_attr: int = 8
    seed: int = 0
    frozen_zero_dims: int = 0  # trailing latent dims pinned to zero (padding semantics)

    def __post_init__(self):
        if min(self.k, self.d, self.image_size, self.n_attr) <= 0:
            raise ValueError("k, d, image_size, n_attr must be positive")
        if not 0 <= self.frozen_zero_dims < self.d:
            raise ValueError("frozen_zero_dims must be in [0, d)")


# (name, low, high); geometric entries are fractions of image_size
_PARAM_SPECS: List[Tuple[str, float, float, bool]] = [
    ("cx", 0.40, 0.60, True),
    ("cy", 0.38, 0.52, True),
    ("rx", 0.16, 0.26, True),
    ("ry", 0.20, 0.30, True),
    ("skin_r", 0.35, 0.95, False),
    ("skin_g", 0.30, 0.85, False),
    ("skin_b", 0.25, 0.80, False),
    ("hair_r", 0.05, 0.95, False),
    ("hair_g", 0.05, 0.95, False),
    ("hair_b", 0.05, 0.95, False),
    ("hair_length", 0.05, 0.45, True),
    ("eye_size", 0.02, 0.06, True),
    ("glasses", 0.0, 1.0, False),
    ("hat", 0.0, 1.0, False),
    ("clothing_height", 0.05, 0.25, True),
]
N_PARAMS = len(_PARAM_SPECS)


@dataclass
class ShapeParams:
    """Bounded scene parameters decoded from a latent; pixel units where geometric."""
    cx: float
    cy: float
    rx: float
    ry: float
    skin_color: np.ndarray
    hair_color: np.ndarray
    hair_length: float
    eye_size: float
    glasses: float
    hat: float
    clothing_height: float

    @staticmethod
    def from_vector(v: Sequence[float]) -> "ShapeParams":
        v = np.asarray(v, dtype=np.float64)
        return ShapeParams(cx=v[0], cy=v[1], rx=v[2], ry=v[3],
                           skin_color=v[4:7].copy(), hair_color=v[7:10].copy(),
                           hair_length=v[10], eye_size=v[11], glasses=v[12],
                           hat=v[13], clothing_height=v[14])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.cx, self.cy, self.rx, self.ry],
                               self.skin_color, self.hair_color,
                               [self.hair_length, self.eye_size, self.glasses,
                                self.hat, self.clothing_height]])


@dataclass(frozen=True)
class ViewParams:
    """2D-projected camera: fov scales, yaw/pitch translate, roll/radius fixed."""
    fov: float
    yaw: float
    pitch: float
    roll: float = 0.0
    radius: float = CAMERA_RADIUS

    def __post_init__(self):
        if not 18.0 <= self.fov <= 25.0:
            raise ValueError("fov out of [18, 25]")
        if abs(self.yaw) > 0.15 or abs(self.pitch) > 0.15:
            raise ValueError("yaw/pitch out of [-0.15, 0.15] rad")

    def to_vector(self) -> np.ndarray:
        return np.array([self.fov, self.yaw, self.pitch, self.roll, self.radius])

    @staticmethod
    def from_vector(v: Sequence[float]) -> "ViewParams":
        v = np.asarray(v, dtype=np.float64)
        return ViewParams(fov=float(v[0]), yaw=float(v[1]), pitch=float(v[2]),
                          roll=float(v[3]), radius=float(v[4]))


FRONTAL_VIEW = ViewParams(fov=REFERENCE_FOV_DEG, yaw=0.0, pitch=0.0)


@dataclass
class DatasetRecord:
    latent: np.ndarray          # (k, d) float32
    image: np.ndarray           # (3, H, W) float32 in [0, 1]
    seg: np.ndarray             # (H, W) uint8 labels 0..5
    attrs: np.ndarray           # (n_attr,) float32 in [0, 1]
    view: ViewParams


@dataclass
class NormStats:
    """Per-coordinate min/max over the training latents."""
    lo: np.ndarray              # (k, d)
    hi: np.ndarray              # (k, d)

    def __post_init__(self):
        if np.any(self.hi < self.lo):
            raise ValueError("NormStats requires hi >= lo elementwise")


def decode_matrix(cfg: ToyGenConfig) -> np.ndarray:
    """The frozen (N_PARAMS, k*d) decode matrix, fixed by cfg.seed."""
    rng = np.random.default_rng([int(cfg.seed), 0x70C7])
    return rng.standard_normal((N_PARAMS, cfg.k * cfg.d))


def _apply_frozen_dims(latent: np.ndarray, cfg: ToyGenConfig) -> np.ndarray:
    if cfg.frozen_zero_dims:
        latent = latent.copy()
        latent[:, cfg.d - cfg.frozen_zero_dims:] = 0.0
    return latent


def decode_params(latent: np.ndarray, cfg: ToyGenConfig) -> ShapeParams:
    """Deterministically decode a latent into bounded scene parameters."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != (cfg.k, cfg.d):
        raise ValueError(f"latent shape {latent.shape} != ({cfg.k}, {cfg.d})")
    latent = _apply_frozen_dims(latent, cfg)
    wg = decode_matrix(cfg)
    u = (wg @ latent.reshape(-1)) / math.sqrt(cfg.k * cfg.d) * _DECODE_GAIN
    sig = 1.0 / (1.0 + np.exp(-u))
    s = cfg.image_size
    vals = np.empty(N_PARAMS)
    for i, (_, lo, hi, geom) in enumerate(_PARAM_SPECS):
        scale = s if geom else 1.0
        vals[i] = (lo + (hi - lo) * sig[i]) * scale
    return ShapeParams.from_vector(vals)


def decode_params_t(latent: Tensor, cfg: ToyGenConfig) -> List[Tensor]:
    """Differentiable twin of decode_params; returns the 15 params as scalar Tensors."""
    if latent.shape != (cfg.k, cfg.d):
        raise ValueError(f"latent shape {latent.shape} != ({cfg.k}, {cfg.d})")
    wg = decode_matrix(cfg)
    if cfg.frozen_zero_dims:
        mask = np.ones((cfg.k, cfg.d))
        mask[:, cfg.d - cfg.frozen_zero_dims:] = 0.0
        latent = latent * Tensor(mask.astype(np.float64))
    flat = latent.reshape(cfg.k * cfg.d)
    u = Tensor(np.asarray(wg, dtype=flat.dtype)) @ flat
    u = u * (_DECODE_GAIN / math.sqrt(cfg.k * cfg.d))
    sig = u.sigmoid()
    s = cfg.image_size
    out = []
    for i, (_, lo, hi, geom) in enumerate(_PARAM_SPECS):
        scale = s if geom else 1.0
        out.append((sig[i] * ((hi - lo) * scale)) + lo * scale)
    return out


def sample_view(rng: np.random.Generator) -> ViewParams:
    """Camera draw: fov mixture 70/30 over [22,25]/[18,22] deg, frontal jitter."""
    if rng.random() < 0.7:
        fov = rng.uniform(22.0, 25.0)
    else:
        fov = rng.uniform(18.0, 22.0)
    yaw = rng.uniform(-0.15, 0.15)
    pitch = rng.uniform(-0.15, 0.15)
    return ViewParams(fov=fov, yaw=yaw, pitch=pitch)


def _view_to_scene(view: ViewParams, size: int):
    """Pixel grid -> scene coordinates under the 2D similarity camera proxy."""
    scale = math.tan(math.radians(REFERENCE_FOV_DEG) / 2.0) / \
        math.tan(math.radians(view.fov) / 2.0)
    tx = view.yaw * 0.6 * size
    ty = view.pitch * 0.6 * size
    px, py = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5)
    half = size / 2.0
    xs = (px - half - tx) / scale + half
    ys = (py - half - ty) / scale + half
    return xs, ys


def _tmax(a: Tensor, b: Tensor) -> Tensor:
    return where(a.data > b.data, a, b)


def _tmin(a: Tensor, b: Tensor) -> Tensor:
    return where(a.data < b.data, a, b)


def _region_distances(p: List[Tensor], xs: np.ndarray, ys: np.ndarray, size: int):
    """Signed distances (pixels, positive inside) per region, built on Tensor ops.

    `p` is the 15-element parameter list from decode_params_t (or constants).
    Returns a dict name -> Tensor of shape (H, W).
    """
    cx, cy, rx, ry = p[0], p[1], p[2], p[3]
    hair_len, eye, clothing_h = p[10], p[11], p[14]
    x = Tensor(xs)
    y = Tensor(ys)
    eps = 1e-6

    def ellipse(ecx, ecy, erx, ery):
        q = ((x - ecx) / erx) ** 2.0 + ((y - ecy) / ery) ** 2.0
        reff = (erx * ery).sqrt()
        return (1.0 - (q + eps).sqrt()) * reff

    def rect(rcx, rcy, hw, hh):
        dx = hw - (x - rcx).abs()
        dy = hh - (y - rcy).abs()
        return _tmin(dx, dy)

    face = ellipse(cx, cy, rx, ry)

    hair_top = ellipse(cx, cy - ry * 0.15, rx * 1.25, ry * 1.15)
    hair_side = rect(cx, cy + hair_len * 0.5, rx * 1.15, hair_len * 0.5)
    hair = _tmax(hair_top, hair_side)

    ey = cy - ry * 0.18
    eye_l = ellipse(cx - rx * 0.45, ey, eye, eye)
    eye_r = ellipse(cx + rx * 0.45, ey, eye, eye)
    eyes = _tmax(eye_l, eye_r)

    hh = minimum(maximum(eye * 1.2, 0.03 * size), 0.045 * size)
    glasses = rect(cx, ey, rx * 0.8, hh)

    hat = rect(cx, cy - ry * 0.95, rx * 1.2, ry * 0.40)

    clothing = y - (float(size) - clothing_h)

    return {"face": face, "hair": hair, "eyes": eyes,
            "glasses": glasses, "hat": hat, "clothing": clothing}


def render(params: ShapeParams, view: ViewParams, size: int,
           mode: str = "hard", tau: float = 0.5):
    """Rasterize a scene.

    hard mode: returns (image (3,H,W) float32, seg (H,W) uint8) with glasses/hat
    drawn only when their intensity exceeds 0.5.
    soft mode: returns a differentiable Tensor image when params are Tensors
    (see render_soft_t); with plain params it returns the numpy soft image.
    """
    if mode not in ("hard", "soft"):
        raise ValueError("mode must be 'hard' or 'soft'")
    if mode == "soft" and tau <= 0:
        raise ValueError("soft mode requires tau > 0")
    p = [Tensor(np.float64(v)) for v in params.to_vector()]
    with no_grad():
        if mode == "hard":
            return _render_hard(p, params, view, size)
        img = _render_soft(p, view, size, tau)
        seg = _render_hard(p, params, view, size)[1]
    return img.data.astype(np.float32), seg


def _render_hard(p, params: ShapeParams, view: ViewParams, size: int):
    xs, ys = _view_to_scene(view, size)
    sd = _region_distances(p, xs, ys, size)
    masks = {name: t.data > 0 for name, t in sd.items()}

    img = np.empty((3, size, size))
    img[:] = BG_COLOR[:, None, None]
    seg = np.full((size, size), SEG_BACKGROUND, dtype=np.uint8)

    layers = [
        ("clothing", CLOTHING_COLOR, SEG_CLOTHING, True),
        ("hair", params.hair_color, SEG_HAIR, True),
        ("face", params.skin_color, SEG_SKIN, True),
        ("eyes", EYE_COLOR, SEG_EYES, True),
        ("glasses", GLASSES_COLOR, SEG_GLASSES, params.glasses > 0.5),
        ("hat", HAT_COLOR, SEG_CLOTHING, params.hat > 0.5),
    ]
    for name, color, label, drawn in layers:
        if not drawn:
            continue
        m = masks[name]
        img[:, m] = np.asarray(color)[:, None]
        seg[m] = label
    return np.clip(img, 0.0, 1.0).astype(np.float32), seg


def _render_soft(p, view: ViewParams, size: int, tau: float) -> Tensor:
    xs, ys = _view_to_scene(view, size)
    sd = _region_distances(p, xs, ys, size)
    skin = p[4:7]
    hair = p[7:10]
    glasses_w, hat_w = p[12], p[13]

    def const_color(c):
        return [Tensor(np.float64(v)) for v in c]

    layers = [
        ("clothing", const_color(CLOTHING_COLOR), None),
        ("hair", hair, None),
        ("face", skin, None),
        ("eyes", const_color(EYE_COLOR), None),
        ("glasses", const_color(GLASSES_COLOR), glasses_w),
        ("hat", const_color(HAT_COLOR), hat_w),
    ]
    channels = [Tensor(np.full((size, size), BG_COLOR[c])) for c in range(3)]
    for name, color, weight in layers:
        m = (sd[name] * (1.0 / tau)).sigmoid()
        if weight is not None:
            m = m * weight
        keep = 1.0 - m
        channels = [ch * keep + m * color[c] for c, ch in enumerate(channels)]
    return stack(channels, axis=0)


def render_soft_t(latent: Tensor, view: ViewParams, cfg: ToyGenConfig,
                  tau: float = 0.5) -> Tensor:
    """Differentiable latent -> (3, H, W) soft image, for gradient-based inversion."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    p = decode_params_t(latent, cfg)
    return _render_soft(p, view, cfg.image_size, tau)


def attributes(params: ShapeParams, cfg: ToyGenConfig) -> np.ndarray:
    """Ground-truth attribute vector in [0, 1]; smooth functions of the params."""
    s = cfg.image_size
    hair = np.asarray(params.hair_color, dtype=np.float64)
    skin = np.asarray(params.skin_color, dtype=np.float64)
    lum = np.array([0.299, 0.587, 0.114])

    def unit(v, lo, hi):
        return float(np.clip((v - lo) / (hi - lo), 0.0, 1.0))

    yellow = np.array([1.0, 1.0, 0.0])
    vals = [
        float(np.exp(-2.0 * np.sum((hair - yellow) ** 2))),     # blonde_hair
        float(np.clip(1.0 - hair @ lum, 0.0, 1.0)),             # dark_hair
        float(params.glasses),                                  # glasses
        float(np.clip(skin @ lum, 0.0, 1.0)),                   # pale_skin
        unit(params.hair_length, 0.05 * s, 0.45 * s),           # long_hair
        unit(params.eye_size, 0.02 * s, 0.06 * s),              # big_eyes
        unit(params.rx, 0.16 * s, 0.26 * s),                    # wide_face
        float(params.hat),                                      # hat
    ]
    out = np.zeros(cfg.n_attr, dtype=np.float32)
    n = min(cfg.n_attr, len(vals))
    out[:n] = np.asarray(vals[:n], dtype=np.float32)
    return out


def attribute_names(cfg: ToyGenConfig) -> List[str]:
    names = list(ATTRIBUTE_NAMES[:cfg.n_attr])
    names += [f"reserved_{i}" for i in range(len(names), cfg.n_attr)]
    return names


def generate_record(index: int, cfg: ToyGenConfig, seed: int) -> DatasetRecord:
    """Record `index` of the dataset keyed by (seed, index); order-independent."""
    rng = np.random.default_rng([int(seed), int(index)])
    latent = rng.standard_normal((cfg.k, cfg.d))
    latent = _apply_frozen_dims(latent, cfg)
    view = sample_view(rng)
    params = decode_params(latent, cfg)
    image, seg = render(params, view, cfg.image_size, mode="hard")
    attrs = attributes(params, cfg)
    return DatasetRecord(latent=latent.astype(np.float32), image=image, seg=seg,
                         attrs=attrs, view=view)


def build_dataset(count: int, cfg: ToyGenConfig, seed: int) -> List[DatasetRecord]:
    if count <= 0:
        raise ValueError("count must be positive")
    return [generate_record(i, cfg, seed) for i in range(count)]


# -- latent normalization ------------------------------------------------------

_DEGENERATE_EPS = 1e-8


def fit_normalization(latents: Sequence[np.ndarray]) -> NormStats:
    if len(latents) < 2:
        raise ValueError("need at least 2 latents to fit normalization")
    arr = np.stack([np.asarray(x) for x in latents]).astype(np.float64)
    return NormStats(lo=arr.min(axis=0), hi=arr.max(axis=0))


def normalize(latent: np.ndarray, stats: NormStats) -> np.ndarray:
    """Affine [lo, hi] -> [-1, 1] per coordinate; degenerate coordinates map to 0."""
    span = stats.hi - stats.lo
    good = span >= _DEGENERATE_EPS
    out = np.zeros_like(latent, dtype=np.float64)
    np.divide(2.0 * (latent - stats.lo), span, out=out, where=good)
    out -= good * 1.0
    out[~good] = 0.0
    return out


def denormalize(latent: np.ndarray, stats: NormStats) -> np.ndarray:
    span = stats.hi - stats.lo
    return stats.lo + (np.asarray(latent) + 1.0) * 0.5 * span
