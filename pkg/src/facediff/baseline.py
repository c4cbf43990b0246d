"""Optimization-based inversion baseline.

Small attribute/segmentation predictor networks are trained on the toy dataset
and a latent is then optimized against reconstruction, attribute, and
segmentation objectives through the differentiable soft renderer. The
predictors double as the feature extractor used by the evaluation metrics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import toygen
from .autodiff import Parameter, Tensor, adam_step, conv2d, init_adam, relu, softmax
from .autodiff.tensor import no_grad
from .params import ParamStore, he_init
from .toygen import DatasetRecord, SEG_CLASSES, ToyGenConfig, ViewParams

LATENT_CLAMP = 3.0


@dataclass(frozen=True)
class BaselineConfig:
    lambda_attr: float = 1.0
    lambda_seg: float = 1.0
    lr: float = 0.05
    iterations: int = 400
    init: str = "mean"          # "zero" | "mean" | "random"
    tau: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.lambda_attr < 0 or self.lambda_seg < 0:
            raise ValueError("loss weights must be non-negative")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.init not in ("zero", "mean", "random"):
            raise ValueError("init mode must be zero, mean, or random")


@dataclass(frozen=True)
class PredictorTrainConfig:
    attr_steps: int = 800
    attr_batch: int = 32
    attr_lr: float = 2e-3
    seg_steps: int = 300
    seg_batch: int = 8
    seg_lr: float = 1e-3
    holdout: int = 128
    seed: int = 0


def _coord_grids(size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32) / (size - 1)
    return np.stack([xs, ys])


class Predictors:
    """Attribute regressor and segmentation classifier over rendered images.

    The attribute network's penultimate layer is exposed as an identity-proxy
    feature vector for the evaluation metrics.
    """

    FEAT_DIM = 128

    def __init__(self, gen: ToyGenConfig, seed: int = 0):
        self.gen = gen
        self.store = ParamStore()
        rng = np.random.default_rng([seed, 0xBA5E])
        s = self.store
        size = gen.image_size

        # attribute net: 3 stride-2 convs + 2-layer head
        chans = [3, 16, 32, 64]
        for i, (ci, co) in enumerate(zip(chans[:-1], chans[1:])):
            s.add(f"attr.conv{i}.w", he_init(rng, (co, ci, 3, 3), ci * 9))
            s.add(f"attr.conv{i}.b", np.zeros(co))
        flat = 64 * (size // 8) ** 2
        s.add("attr.fc1.w", he_init(rng, (flat, self.FEAT_DIM), flat))
        s.add("attr.fc1.b", np.zeros(self.FEAT_DIM))
        s.add("attr.fc2.w", he_init(rng, (self.FEAT_DIM, gen.n_attr), self.FEAT_DIM))
        s.add("attr.fc2.b", np.zeros(gen.n_attr))

        # seg net: coord-augmented encoder-decoder to per-pixel class logits
        s.add("seg.conv0.w", he_init(rng, (32, 5, 3, 3), 5 * 9))
        s.add("seg.conv0.b", np.zeros(32))
        s.add("seg.conv1.w", he_init(rng, (64, 32, 3, 3), 32 * 9))
        s.add("seg.conv1.b", np.zeros(64))
        s.add("seg.up0.w", he_init(rng, (32, 64, 3, 3), 64 * 9))
        s.add("seg.up0.b", np.zeros(32))
        s.add("seg.up1.w", he_init(rng, (SEG_CLASSES, 32 + 5, 3, 3), 37 * 9))
        s.add("seg.up1.b", np.zeros(SEG_CLASSES))

        self._coords = _coord_grids(size)
        self.trained = False

    # -- attribute branch ---------------------------------------------------

    def features(self, images) -> Tensor:
        """(B, 3, H, W) -> (B, FEAT_DIM) penultimate activations."""
        h = images if isinstance(images, Tensor) else Tensor(np.asarray(images,
                                                                        np.float32))
        if h.ndim == 3:
            h = h.reshape(1, *h.shape)
        s = self.store
        for i in range(3):
            h = relu(conv2d(h, s[f"attr.conv{i}.w"], s[f"attr.conv{i}.b"],
                            stride=2, padding=1))
        b = h.shape[0]
        h = h.reshape(b, -1)
        return relu(h @ s["attr.fc1.w"] + s["attr.fc1.b"])

    def predict_attrs(self, images) -> Tensor:
        """(B, 3, H, W) -> (B, n_attr) in (0, 1)."""
        s = self.store
        return (self.features(images) @ s["attr.fc2.w"] + s["attr.fc2.b"]).sigmoid()

    # -- segmentation branch ------------------------------------------------

    def seg_logits(self, images) -> Tensor:
        """(B, 3, H, W) -> (B, classes, H, W)."""
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images,
                                                                        np.float32))
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        b = x.shape[0]
        coords = Tensor(np.broadcast_to(self._coords, (b, 2) + self._coords.shape[1:])
                        .copy())
        from .autodiff.tensor import concat
        x5 = concat([x, coords], axis=1)
        s = self.store
        h = relu(conv2d(x5, s["seg.conv0.w"], s["seg.conv0.b"], stride=2, padding=1))
        h = relu(conv2d(h, s["seg.conv1.w"], s["seg.conv1.b"], stride=2, padding=1))
        h = _up2(h)
        h = relu(conv2d(h, s["seg.up0.w"], s["seg.up0.b"], stride=1, padding=1))
        h = _up2(h)
        h = concat([h, x5], axis=1)
        return conv2d(h, s["seg.up1.w"], s["seg.up1.b"], stride=1, padding=1)

    def seg_probs(self, images) -> Tensor:
        return softmax(self.seg_logits(images), axis=1)


def _up2(h: Tensor) -> Tensor:
    from .autodiff.tensor import concat
    b, c, hh, ww = h.shape
    h = concat([h.reshape(b, c, hh, 1, ww)] * 2, axis=3).reshape(b, c, 2 * hh, ww)
    h = concat([h.reshape(b, c, 2 * hh, ww, 1)] * 2, axis=4)
    return h.reshape(b, c, 2 * hh, 2 * ww)


def train_predictors(records: Sequence[DatasetRecord], gen: ToyGenConfig,
                     cfg: PredictorTrainConfig = PredictorTrainConfig()
                     ) -> Tuple[Predictors, Dict[str, float]]:
    """Fit both predictor networks; returns weights plus held-out metrics."""
    if len(records) < 1000:
        raise ValueError("predictor training needs at least 1,000 records")
    rng = np.random.default_rng([cfg.seed, 0x9ED])
    holdout = records[:cfg.holdout]
    train_set = records[cfg.holdout:]

    nets = Predictors(gen, seed=cfg.seed)
    attr_params = [p for p in nets.store if p.name.startswith("attr.")]
    seg_params = [p for p in nets.store if p.name.startswith("seg.")]

    adam = init_adam(attr_params)
    for _ in range(cfg.attr_steps):
        idx = rng.integers(0, len(train_set), size=cfg.attr_batch)
        batch = [train_set[i] for i in idx]
        images = np.stack([r.image for r in batch])
        attrs = np.stack([r.attrs for r in batch]).astype(np.float32)
        loss = ((nets.predict_attrs(images) - Tensor(attrs)) ** 2.0).mean()
        nets.store.zero_grad()
        loss.backward()
        adam_step(attr_params, adam, cfg.attr_lr)

    adam = init_adam(seg_params)
    for _ in range(cfg.seg_steps):
        idx = rng.integers(0, len(train_set), size=cfg.seg_batch)
        batch = [train_set[i] for i in idx]
        images = np.stack([r.image for r in batch])
        labels = np.stack([r.seg for r in batch]).astype(np.int64)
        probs = nets.seg_probs(images)
        onehot = np.eye(SEG_CLASSES, dtype=np.float32)[labels].transpose(0, 3, 1, 2)
        loss = -((probs + 1e-9).log() * Tensor(onehot)).sum() * (1.0 / labels.size)
        nets.store.zero_grad()
        loss.backward()
        adam_step(seg_params, adam, cfg.seg_lr)

    nets.trained = True
    metrics = evaluate_predictors(nets, holdout)
    return nets, metrics


def evaluate_predictors(nets: Predictors, records: Sequence[DatasetRecord]
                        ) -> Dict[str, float]:
    maes, accs = [], []
    with no_grad():
        for i in range(0, len(records), 16):
            chunk = records[i:i + 16]
            images = np.stack([r.image for r in chunk])
            attrs = np.stack([r.attrs for r in chunk])
            labels = np.stack([r.seg for r in chunk])
            pred_a = nets.predict_attrs(images).data
            maes.append(np.abs(pred_a - attrs).mean())
            pred_s = nets.seg_logits(images).data.argmax(axis=1)
            accs.append((pred_s == labels).mean())
    return {"attr_mae": float(np.mean(maes)), "pixel_acc": float(np.mean(accs))}


# --------------------------------------------------------------------------
# Latent optimization
# --------------------------------------------------------------------------

@dataclass
class InversionResult:
    latent: np.ndarray
    losses: List[float]
    seconds: float


def _init_latent(gen: ToyGenConfig, cfg: BaselineConfig,
                 mean_latent: Optional[np.ndarray]) -> np.ndarray:
    if cfg.init == "zero":
        return np.zeros((gen.k, gen.d))
    if cfg.init == "mean":
        if mean_latent is None:
            raise ValueError("mean init requires a dataset mean latent")
        return np.asarray(mean_latent, dtype=np.float64).copy()
    rng = np.random.default_rng([cfg.seed, 0x1A7])
    return rng.standard_normal((gen.k, gen.d))


def _optimize(loss_fn, x0: np.ndarray, cfg: BaselineConfig) -> InversionResult:
    lat = Parameter(x0.astype(np.float64), name="latent", dtype=np.float64)
    adam = init_adam([lat])
    losses: List[float] = []
    best = np.inf
    t0 = time.time()
    for _ in range(cfg.iterations):
        loss = loss_fn(lat)
        value = float(loss.item())
        losses.append(value)
        if value < best:
            best = value
        # absolute floor keeps near-zero losses from tripping the guard
        if best > 0 and value > 10.0 * best + 1e-4:
            raise RuntimeError(
                f"inversion diverged: loss {value:.4g} exceeds 10x best {best:.4g}")
        lat.grad = None
        loss.backward()
        if np.abs(lat.grad).max() < 1e-10:   # converged; Adam would still drift
            continue
        adam_step([lat], adam, cfg.lr)
        lat.data = np.clip(lat.data, -LATENT_CLAMP, LATENT_CLAMP)
    return InversionResult(latent=lat.data.copy(), losses=losses,
                           seconds=time.time() - t0)


def _rec_loss(lat: Tensor, target: np.ndarray, view: ViewParams,
              gen: ToyGenConfig, tau: float, mask: Optional[np.ndarray]) -> Tensor:
    img = toygen.render_soft_t(lat, view, gen, tau=tau)
    diff = (img - Tensor(target.astype(np.float64))) ** 2.0
    if mask is None:
        return diff.mean()
    m = mask.astype(np.float64)
    total = m.sum() * 3
    if total == 0:
        return (diff * Tensor(np.zeros_like(m))).sum()
    return (diff * Tensor(m)).sum() * (1.0 / total)


def invert(target: np.ndarray, view: ViewParams, gen: ToyGenConfig,
           cfg: BaselineConfig = BaselineConfig(),
           mask: Optional[np.ndarray] = None,
           mean_latent: Optional[np.ndarray] = None) -> InversionResult:
    """Reconstruct a latent whose soft render matches the target image (L2)."""
    x0 = _init_latent(gen, cfg, mean_latent)
    return _optimize(lambda lat: _rec_loss(lat, target, view, gen, cfg.tau, mask),
                     x0, cfg)


def multi_conditional_invert(gen: ToyGenConfig, view: ViewParams,
                             predictors: Predictors,
                             cfg: BaselineConfig = BaselineConfig(),
                             rgb: Optional[np.ndarray] = None,
                             rgb_mask: Optional[np.ndarray] = None,
                             seg: Optional[np.ndarray] = None,
                             seg_mask: Optional[np.ndarray] = None,
                             attrs: Optional[np.ndarray] = None,
                             attrs_mask: Optional[np.ndarray] = None,
                             mean_latent: Optional[np.ndarray] = None
                             ) -> InversionResult:
    """Optimize a latent against any subset of RGB / segmentation / attributes."""
    if rgb is None and seg is None and attrs is None:
        raise ValueError("at least one condition must be provided")
    size = gen.image_size
    if seg is not None:
        seg_onehot = np.eye(SEG_CLASSES, dtype=np.float64)[seg].transpose(2, 0, 1)
        seg_m = np.ones((size, size)) if seg_mask is None else seg_mask.astype(float)
        seg_total = max(seg_m.sum() * SEG_CLASSES, 1.0)

    def loss_fn(lat: Tensor) -> Tensor:
        img = toygen.render_soft_t(lat, view, gen, tau=cfg.tau)
        terms = []
        if rgb is not None:
            diff = (img - Tensor(rgb.astype(np.float64))) ** 2.0
            if rgb_mask is None:
                terms.append(diff.mean())
            else:
                m = rgb_mask.astype(np.float64)
                terms.append((diff * Tensor(m)).sum() * (1.0 / max(m.sum() * 3, 1.0)))
        if attrs is not None and cfg.lambda_attr > 0:
            pred = predictors.predict_attrs(img.reshape(1, *img.shape))
            d = (pred[0] - Tensor(attrs.astype(np.float64))) ** 2.0
            if attrs_mask is not None:
                d = d * Tensor(attrs_mask.astype(np.float64))
            terms.append(d.sum() * cfg.lambda_attr)
        if seg is not None and cfg.lambda_seg > 0:
            probs = predictors.seg_probs(img.reshape(1, *img.shape))[0]
            d = (probs - Tensor(seg_onehot)) ** 2.0
            terms.append((d * Tensor(seg_m)).sum() * (cfg.lambda_seg / seg_total))
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total

    x0 = _init_latent(gen, cfg, mean_latent)
    return _optimize(loss_fn, x0, cfg)
