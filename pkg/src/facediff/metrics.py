"""Evaluation metrics: PSNR, single-scale SSIM, mIoU, attribute L1 error, an
identity proxy from predictor features, a Fréchet distance over feature
statistics, and the two-regime evaluation suite comparing the diffusion
sampler against the optimization baseline.

The perceptual-feature stand-ins are deliberately modest: identity similarity
is the cosine between the attribute regressor's penultimate activations, and
the Fréchet statistics use a 32-dim slice of the same features ("toy-Fréchet",
never comparable to full-scale FID numbers). Attribute error and mIoU are
computed against generator ground truth and are exact.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import convolve

from . import baseline as bl
from . import diffusion as df
from . import toygen
from .autodiff.tensor import no_grad
from .conditioning import AttributeCondition, VisualCondition
from .toygen import DatasetRecord, SEG_CLASSES, ToyGenConfig

PSNR_CAP_DB = 99.0
FRECHET_FEAT_DIM = 32


# --------------------------------------------------------------------------
# Image metrics
# --------------------------------------------------------------------------

def psnr(a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Peak signal-to-noise ratio in dB for [0,1]-ranged images; capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr: shape mismatch")
    d2 = (a - b) ** 2
    if mask is not None:
        m = np.broadcast_to(mask, a.shape)
        if not m.any():
            raise ValueError("psnr: empty mask")
        mse = d2[m].mean()
    else:
        mse = d2.mean()
    if mse <= 0:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(1.0 / mse)), PSNR_CAP_DB)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Single-scale SSIM with a Gaussian window; inputs (H,W) or (C,H,W) in [0,1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("ssim: shape mismatch")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ValueError(f"ssim: image smaller than the {window}x{window} window")
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    w = _gaussian_window(window, sigma)
    vals = []
    for ch_a, ch_b in zip(a, b):
        mu_a = convolve(ch_a, w, mode="nearest")
        mu_b = convolve(ch_b, w, mode="nearest")
        var_a = convolve(ch_a * ch_a, w, mode="nearest") - mu_a ** 2
        var_b = convolve(ch_b * ch_b, w, mode="nearest") - mu_b ** 2
        cov = convolve(ch_a * ch_b, w, mode="nearest") - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        vals.append((num / den).mean())
    return float(np.mean(vals))


def miou(pred: np.ndarray, target: np.ndarray,
         classes: Optional[Sequence[int]] = None,
         mask: Optional[np.ndarray] = None) -> float:
    """Mean IoU over classes present in either map (within the valid region)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError("miou: shape mismatch")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    if not mask.any():
        raise ValueError("miou: empty valid region")
    p, t = pred[mask], target[mask]
    if classes is None:
        classes = np.union1d(np.unique(p), np.unique(t))
    ious = []
    for c in classes:
        pi, ti = p == c, t == c
        union = (pi | ti).sum()
        if union == 0:
            continue   # class absent from both maps
        ious.append((pi & ti).sum() / union)
    return float(np.mean(ious)) if ious else 1.0


def attr_error(target: np.ndarray, measured: np.ndarray,
               conditioned: Optional[np.ndarray] = None) -> float:
    """Mean L1 difference over the conditioned attribute slots (lower is better)."""
    target = np.asarray(target, dtype=np.float64)
    measured = np.asarray(measured, dtype=np.float64)
    if target.shape != measured.shape:
        raise ValueError("attr_error: length mismatch")
    if conditioned is None:
        conditioned = np.ones(target.shape, dtype=bool)
    if not np.any(conditioned):
        raise ValueError("attr_error: no conditioned slots")
    return float(np.abs(target - measured)[conditioned].mean())


# --------------------------------------------------------------------------
# Identity proxy and Fréchet distance
# --------------------------------------------------------------------------

def _render_for_features(latent: np.ndarray, gen: ToyGenConfig,
                         view=None) -> np.ndarray:
    view = toygen.FRONTAL_VIEW if view is None else view
    p = toygen.decode_params(latent, gen)
    img, _ = toygen.render(p, view, gen.image_size, mode="hard")
    return img


def id_similarity(latent_a: np.ndarray, latent_b: np.ndarray,
                  predictors: "bl.Predictors", gen: ToyGenConfig,
                  view=None) -> float:
    """Cosine similarity of predictor-feature embeddings of the two renders."""
    if not getattr(predictors, "trained", False):
        raise RuntimeError("id_similarity needs trained predictors")
    imgs = np.stack([_render_for_features(latent_a, gen, view),
                     _render_for_features(latent_b, gen, view)])
    with no_grad():
        f = predictors.features(imgs).data.astype(np.float64)
    na, nb = np.linalg.norm(f[0]), np.linalg.norm(f[1])
    return float(f[0] @ f[1] / max(na * nb, 1e-12))


def feature_distance(latent_a: np.ndarray, latent_b: np.ndarray,
                     predictors: "bl.Predictors", gen: ToyGenConfig,
                     view=None) -> float:
    """L2 distance between feature embeddings ("featdist"; not a perceptual metric)."""
    imgs = np.stack([_render_for_features(latent_a, gen, view),
                     _render_for_features(latent_b, gen, view)])
    with no_grad():
        f = predictors.features(imgs).data.astype(np.float64)
    return float(np.linalg.norm(f[0] - f[1]))


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError("covariance shape does not match mean")
        if np.abs(self.cov - self.cov.T).max() > 1e-8:
            raise ValueError("covariance not symmetric")
        if np.linalg.eigvalsh(self.cov).min() < -1e-8:
            raise ValueError("covariance not positive semi-definite")


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean/covariance of row-stacked feature vectors."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("need at least two feature vectors")
    mean = f.mean(axis=0)
    cov = np.cov(f, rowvar=False)
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean=mean, cov=np.atleast_2d(cov))


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """Wasserstein-2 distance between Gaussians via symmetric eigendecomposition."""
    if s1.mean.shape != s2.mean.shape:
        raise ValueError("frechet: dimension mismatch")
    diff = s1.mean - s2.mean
    # sqrt(S1) via eigh, then eigvals of sqrt(S1) S2 sqrt(S1)
    w1, v1 = np.linalg.eigh(s1.cov)
    w1 = np.clip(w1, 0.0, None)
    root1 = (v1 * np.sqrt(w1)) @ v1.T
    m = root1 @ s2.cov @ root1
    wm = np.linalg.eigvalsh(0.5 * (m + m.T))
    if wm.min() < -1e-6:
        raise ValueError(f"frechet: product matrix eigenvalue {wm.min():.3g} < -1e-6")
    wm = np.clip(wm, 0.0, None)
    val = diff @ diff + np.trace(s1.cov) + np.trace(s2.cov) - 2.0 * np.sqrt(wm).sum()
    return float(max(val, 0.0))


def frechet_features(latents: Sequence[np.ndarray], predictors: "bl.Predictors",
                     gen: ToyGenConfig, views=None) -> np.ndarray:
    """32-dim feature slice for toy-Fréchet statistics, one row per latent."""
    rows = []
    with no_grad():
        for i in range(0, len(latents), 32):
            chunk = latents[i:i + 32]
            imgs = np.stack([
                _render_for_features(l, gen, None if views is None else views[i + j])
                for j, l in enumerate(chunk)])
            rows.append(predictors.features(imgs).data[:, :FRECHET_FEAT_DIM])
    return np.concatenate(rows).astype(np.float64)


# --------------------------------------------------------------------------
# Evaluation suite
# --------------------------------------------------------------------------

@dataclass
class EvalReport:
    task: str
    method: str
    count: int
    per_sample: Dict[str, List[float]]
    seconds_per_sample: float

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("report needs at least one sample")
        for name, vals in self.per_sample.items():
            if len(vals) != self.count:
                raise ValueError(f"metric {name}: {len(vals)} values for "
                                 f"{self.count} samples")

    @property
    def means(self) -> Dict[str, float]:
        return {k: float(np.mean(v)) for k, v in self.per_sample.items()}

    def to_json(self) -> str:
        return json.dumps({"task": self.task, "method": self.method,
                           "count": self.count, "means": self.means,
                           "seconds_per_sample": self.seconds_per_sample,
                           "per_sample": self.per_sample,
                           "note": "attr_l1 lower is better"}, indent=2)


TASK_FACE_HAIR = "face-rgb+hair-seg+hair-attr"
TASK_HALVES = "half-rgb+half-seg"


def build_task_conditions(record: DatasetRecord, task: str
                          ) -> Tuple[AttributeCondition, VisualCondition]:
    """The two Table-style condition regimes over a ground-truth record."""
    size = record.seg.shape[0]
    n_attr = record.attrs.shape[0]
    if task == TASK_FACE_HAIR:
        face = np.isin(record.seg, [toygen.SEG_SKIN, toygen.SEG_EYES,
                                    toygen.SEG_GLASSES])
        hair = record.seg == toygen.SEG_HAIR
        mask = np.ones(n_attr, dtype=bool)
        mask[0] = False   # blonde_hair: the one hair-color attribute provided
        attr = AttributeCondition(values=record.attrs.copy(), mask=mask)
        vis = VisualCondition(rgb=record.image.copy(), seg=record.seg.copy(),
                              rgb_valid=face, seg_valid=hair)
        return attr, vis
    if task == TASK_HALVES:
        cols = np.arange(size)
        left = np.broadcast_to(cols < size // 2, (size, size)).copy()
        attr = AttributeCondition(values=np.zeros(n_attr, dtype=np.float32),
                                  mask=np.ones(n_attr, dtype=bool))
        vis = VisualCondition(rgb=record.image.copy(), seg=record.seg.copy(),
                              rgb_valid=left, seg_valid=~left)
        return attr, vis
    raise ValueError(f"unknown task {task!r}")


def _measure(latent: np.ndarray, record: DatasetRecord,
             attr: AttributeCondition, vis: VisualCondition,
             predictors: "bl.Predictors", gen: ToyGenConfig) -> Dict[str, float]:
    p = toygen.decode_params(latent.astype(np.float64), gen)
    img, seg = toygen.render(p, record.view, gen.image_size, mode="hard")
    out = {
        "psnr": psnr(img, record.image, mask=vis.rgb_valid),
        "ssim": ssim(img, record.image),
        "miou": miou(seg, record.seg, mask=vis.seg_valid),
        "featdist": feature_distance(latent, record.latent, predictors, gen,
                                     view=record.view),
        "id_sim": id_similarity(latent, record.latent, predictors, gen,
                                view=record.view),
    }
    if not attr.mask.all():
        out["attr_l1"] = attr_error(attr.values, toygen.attributes(p, gen),
                                    conditioned=~attr.mask)
    return out


def eval_suite(model: df.DiffusionModel, predictors: "bl.Predictors",
               records: Sequence[DatasetRecord], task: str, count: int,
               sample_cfg: Optional[df.SampleConfig] = None,
               baseline_cfg: Optional[bl.BaselineConfig] = None,
               mean_latent: Optional[np.ndarray] = None
               ) -> Tuple[EvalReport, EvalReport]:
    """Run both methods over `count` held-out records; returns (diffusion, baseline)."""
    if count > len(records):
        raise ValueError("not enough records for the requested count")
    if not getattr(predictors, "trained", False):
        raise RuntimeError("eval_suite needs trained predictors")
    gen = model.cfg.gen
    scfg = sample_cfg or df.SampleConfig(ddim_steps=50, omega_v=1.5, omega_a=1.5)
    bcfg = baseline_cfg or bl.BaselineConfig()
    if mean_latent is None:
        mean_latent = np.mean([r.latent for r in records], axis=0)

    rows_d: Dict[str, List[float]] = {}
    rows_b: Dict[str, List[float]] = {}
    time_d = time_b = 0.0
    for i in range(count):
        rec = records[i]
        attr, vis = build_task_conditions(rec, task)

        t0 = time.time()
        scfg_i = df.SampleConfig(ddim_steps=scfg.ddim_steps, eta=scfg.eta,
                                 omega_v=scfg.omega_v, omega_a=scfg.omega_a,
                                 seed=scfg.seed + i, count=1)
        lat_d = df.ddim_sample(model, scfg_i, attr, vis)[0]
        time_d += time.time() - t0

        t0 = time.time()
        res = bl.multi_conditional_invert(
            gen, rec.view, predictors, bcfg,
            rgb=rec.image, rgb_mask=vis.rgb_valid,
            seg=rec.seg, seg_mask=vis.seg_valid,
            attrs=None if attr.mask.all() else attr.values,
            attrs_mask=None if attr.mask.all() else ~attr.mask,
            mean_latent=mean_latent)
        time_b += time.time() - t0

        for rows, lat in ((rows_d, lat_d), (rows_b, res.latent)):
            for k, v in _measure(lat, rec, attr, vis, predictors, gen).items():
                rows.setdefault(k, []).append(v)

    return (EvalReport(task=task, method="diffusion", count=count,
                       per_sample=rows_d, seconds_per_sample=time_d / count),
            EvalReport(task=task, method="baseline", count=count,
                       per_sample=rows_b, seconds_per_sample=time_b / count))
