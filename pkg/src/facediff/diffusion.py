"""Diffusion engine: cosine noise schedule, v-parameterization, training loop
with masking + condition dropout, DDIM sampling with dual-weight guidance, and
two-stage reconstruction/editing.

Timestep convention: schedule tables are indexed by t in 1..T with the
conceptual alpha_bar(0) = 1; the denoiser's embedding receives the 0-based
index t-1.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import conditioning as cond_mod
from . import toygen
from .autodiff import Tensor, adam_step, init_adam, onecycle_lr, LrSchedule
from .autodiff.tensor import no_grad
from .conditioning import (AttributeCondition, CondConfig, MaskingPolicy,
                           VisualCondition, apply_masking, assemble_condition,
                           condition_drop, make_null, visual_raster)
from .denoiser import Denoiser, UNetConfig
from .params import ParamStore
from .toygen import DatasetRecord, NormStats, ToyGenConfig


# --------------------------------------------------------------------------
# Noise schedule
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray        # (T,) for t = 1..T
    alpha_bar: np.ndarray   # (T,) cumulative product of 1 - beta

    def __post_init__(self):
        if self.beta.shape != (self.T,) or self.alpha_bar.shape != (self.T,):
            raise ValueError("schedule tables must have length T")


def cosine_schedule(T: int, s: float = 0.008, beta_clip: float = 0.999) -> NoiseSchedule:
    """Squared-cosine alpha_bar with offset s; per-step beta clipped at beta_clip."""
    if T < 2:
        raise ValueError("schedule needs at least 2 steps")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
    ab = f / f[0]
    beta = 1.0 - ab[1:] / ab[:-1]
    beta = np.clip(beta, 1e-8, beta_clip)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def alpha_bar_at(sched: NoiseSchedule, t) -> np.ndarray:
    """alpha_bar for timestep(s) t in [0, T]; t = 0 gives exactly 1."""
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > sched.T):
        raise ValueError(f"timestep out of [0, {sched.T}]")
    table = np.concatenate([[1.0], sched.alpha_bar])
    return table[t]


def _coeffs(sched: NoiseSchedule, t, ndim: int) -> Tuple[np.ndarray, np.ndarray]:
    ab = alpha_bar_at(sched, t)
    shape = np.shape(ab) + (1,) * (ndim - np.ndim(ab))
    ab = np.reshape(ab, shape)
    return np.sqrt(ab), np.sqrt(1.0 - ab)


def q_sample(x0: np.ndarray, t, epsilon: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward process: x_t = sqrt(ab)*x0 + sqrt(1-ab)*eps."""
    if np.shape(x0) != np.shape(epsilon):
        raise ValueError("x0/epsilon shape mismatch")
    sa, sb = _coeffs(sched, t, np.ndim(x0))
    return sa * x0 + sb * epsilon


def v_target(x0: np.ndarray, epsilon: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    if np.shape(x0) != np.shape(epsilon):
        raise ValueError("x0/epsilon shape mismatch")
    sa, sb = _coeffs(sched, t, np.ndim(x0))
    return sa * epsilon - sb * x0


def x0_from_v(x_t, v, t, sched: NoiseSchedule):
    sa, sb = _coeffs(sched, t, np.ndim(x_t) if not isinstance(x_t, Tensor) else x_t.ndim)
    return sa * x_t - sb * v


def eps_from_v(x_t, v, t, sched: NoiseSchedule):
    sa, sb = _coeffs(sched, t, np.ndim(x_t) if not isinstance(x_t, Tensor) else x_t.ndim)
    return sb * x_t + sa * v


# --------------------------------------------------------------------------
# Model bundle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    gen: ToyGenConfig = field(default_factory=ToyGenConfig)
    cond: CondConfig = field(default_factory=CondConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    timesteps: int = 1000
    prediction: str = "v"   # "v" or "x0"
    schedule_s: float = 0.008
    schedule_beta_clip: float = 0.999

    def __post_init__(self):
        if self.prediction not in ("v", "x0"):
            raise ValueError("prediction mode must be 'v' or 'x0'")
        if self.unet.k != self.gen.k or self.unet.d != self.gen.d:
            raise ValueError("UNet latent shape must match generator latent shape")
        if self.cond.n_attr != self.gen.n_attr:
            raise ValueError("condition/attribute width mismatch")
        if self.unet.timesteps != self.timesteps:
            raise ValueError("UNet timestep range must equal schedule length")


class DiffusionModel:
    """Encoders + denoiser sharing one parameter store, plus latent statistics."""

    def __init__(self, cfg: ModelConfig, init_seed: int = 0):
        self.cfg = cfg
        self.store = ParamStore()
        rng = np.random.default_rng([init_seed, 0xD1FF])
        self.attr_encoder = cond_mod.AttributeEncoder(cfg.cond, self.store, rng)
        self.vis_encoder = cond_mod.VisualEncoder(cfg.cond, self.store, rng)
        self.denoiser = Denoiser(cfg.unet, self.store, rng)
        self.schedule = cosine_schedule(cfg.timesteps, s=cfg.schedule_s,
                                        beta_clip=cfg.schedule_beta_clip)
        self.norm: Optional[NormStats] = None
        self.train_steps_done = 0

    # -- conditions ---------------------------------------------------------

    def encode_conditions(self, attrs: Sequence[AttributeCondition],
                          visuals: Sequence[VisualCondition],
                          dropout_rng: Optional[np.random.Generator] = None,
                          inference: bool = True) -> Tensor:
        values = np.stack([a.values for a in attrs])
        masks = np.stack([a.mask for a in attrs])
        rasters = np.stack([visual_raster(v) for v in visuals])
        a_tok = self.attr_encoder.encode(values, masks)
        v_tok = self.vis_encoder.encode(rasters)
        return assemble_condition(a_tok, v_tok, self.cfg.cond.dropout_rate,
                                  rng=dropout_rng, inference=inference)

    def predict(self, z_t, t_idx, tokens: Tensor, visible=None) -> Tensor:
        """Raw network output ((B,)k,d); meaning set by cfg.prediction.

        visible: optional per-token key mask for cross-attention (see
        conditioning.token_visibility); None lets every token be read.
        """
        return self.denoiser.denoise(z_t, t_idx, tokens, key_visible=visible)

    def condition_visibility(self, attrs, visuals) -> np.ndarray:
        return cond_mod.token_visibility(attrs, visuals, self.cfg.cond)

    def to_x0_eps(self, z_t: np.ndarray, pred: np.ndarray, t):
        """Convert the network output into (x0_hat, eps_hat) at timestep t."""
        if self.cfg.prediction == "v":
            return (x0_from_v(z_t, pred, t, self.schedule),
                    eps_from_v(z_t, pred, t, self.schedule))
        sa, sb = _coeffs(self.schedule, t, np.ndim(z_t))
        eps = (z_t - sa * pred) / np.maximum(sb, 1e-8)
        return pred, eps

    def target(self, x0: np.ndarray, epsilon: np.ndarray, t) -> np.ndarray:
        if self.cfg.prediction == "v":
            return v_target(x0, epsilon, t, self.schedule)
        return x0

    def _require_trained(self):
        if self.norm is None:
            raise RuntimeError("model has no latent normalization statistics")


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch: int = 32
    max_lr: float = 1e-4
    warmup_frac: float = 0.1
    policy: MaskingPolicy = field(default_factory=MaskingPolicy)
    seed: int = 0
    log_every: int = 10
    # conditioning-path parameters (both encoders and every cross-attention
    # block) see gradient signal on only ~10% of examples because of the
    # masking recipe; a larger per-group learning rate compensates so
    # conditioning emerges within short training budgets
    cond_lr_mult: float = 10.0

    def __post_init__(self):
        if self.steps <= 0 or self.batch <= 0:
            raise ValueError("steps and batch must be positive")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ValueError("warmup fraction must lie in (0, 1)")
        if self.cond_lr_mult <= 0:
            raise ValueError("cond_lr_mult must be positive")


def prepare_batch(model: DiffusionModel, records: Sequence[DatasetRecord],
                  policy: MaskingPolicy, rng: np.random.Generator
                  ) -> Tuple[List[AttributeCondition], List[VisualCondition]]:
    """Masking then CFG null replacement, per record."""
    attrs, visuals = [], []
    for rec in records:
        a, v = apply_masking(rec, policy, rng)
        a, v = condition_drop(a, v, model.cfg.cond, policy, rng)
        attrs.append(a)
        visuals.append(v)
    return attrs, visuals


def _is_conditioning_param(name: str) -> bool:
    """Condition encoders plus every cross-attention projection in the UNet."""
    return name.startswith(("enc_a.", "enc_v.")) or ".attn.ca." in name


def training_step(model: DiffusionModel, records: Sequence[DatasetRecord],
                  tcfg: TrainConfig, adam, lr: float,
                  rng: np.random.Generator) -> float:
    """One optimization step; returns the scalar loss."""
    if model.norm is None:
        raise RuntimeError("fit normalization before training")
    sched = model.schedule
    attrs, visuals = prepare_batch(model, records, tcfg.policy, rng)
    tokens = model.encode_conditions(attrs, visuals, dropout_rng=rng, inference=False)

    x0 = np.stack([toygen.normalize(r.latent, model.norm) for r in records]) \
        .astype(np.float32)
    t = rng.integers(1, sched.T + 1, size=len(records))
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    z_t = q_sample(x0, t, eps, sched).astype(np.float32)
    target = model.target(x0, eps, t).astype(np.float32)

    visible = model.condition_visibility(attrs, visuals)
    pred = model.predict(z_t, t - 1, tokens, visible=visible)
    loss = ((pred - Tensor(target)) ** 2.0).mean()
    value = float(loss.item())
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite training loss: {value}")
    model.store.zero_grad()
    loss.backward()
    adam_step(model.store.all(), adam, lr,
              lr_scale=lambda name: tcfg.cond_lr_mult
              if _is_conditioning_param(name) else 1.0)
    return value


def train(model: DiffusionModel, records: Sequence[DatasetRecord], tcfg: TrainConfig,
          log: Optional[Callable[[str], None]] = None, adam=None,
          on_step: Optional[Callable[[int], None]] = None
          ) -> List[Tuple[int, float, float]]:
    """Training loop from model.train_steps_done + 1 up to tcfg.steps.

    Each step draws from its own RNG keyed by (seed, step), so resuming from a
    checkpoint (with its saved optimizer state) continues bit-identically.
    Returns [(step, loss, lr)] and emits `step,loss,lr` lines.
    """
    if model.norm is None:
        model.norm = toygen.fit_normalization([r.latent for r in records])
    if adam is None:
        adam = init_adam(model.store.all())
    lr_sched = LrSchedule(max_lr=tcfg.max_lr, total_steps=tcfg.steps,
                          warmup_steps=int(tcfg.steps * tcfg.warmup_frac),
                          floor_lr=tcfg.max_lr * 0.01)
    history = []
    for step in range(model.train_steps_done + 1, tcfg.steps + 1):
        rng = np.random.default_rng([tcfg.seed, 0x7EA1, step])
        idx = rng.integers(0, len(records), size=tcfg.batch)
        batch = [records[i] for i in idx]
        lr = onecycle_lr(step, lr_sched)
        loss = training_step(model, batch, tcfg, adam, lr, rng)
        model.train_steps_done = step
        if log is not None and (step % tcfg.log_every == 0 or step == 1
                                or step == tcfg.steps):
            log(f"{step},{loss:.6f},{lr:.8f}")
        history.append((step, loss, lr))
        if on_step is not None:
            on_step(step)
    return history


# --------------------------------------------------------------------------
# Guided sampling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleConfig:
    ddim_steps: int = 100
    eta: float = 0.0
    omega_v: float = 1.0
    omega_a: float = 1.0
    seed: int = 0
    noise_seed: Optional[int] = None   # per-step noise stream; defaults to seed
    count: int = 1

    def __post_init__(self):
        if self.ddim_steps < 1:
            raise ValueError("ddim_steps must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.omega_v < 0 or self.omega_a < 0:
            raise ValueError("guidance weights must be >= 0")
        if self.count < 1:
            raise ValueError("count must be >= 1")


@dataclass(frozen=True)
class EditPlan:
    reference: Tuple[AttributeCondition, VisualCondition]
    edit: Tuple[AttributeCondition, VisualCondition]
    t_rec: int
    sample: SampleConfig

    def __post_init__(self):
        if not 0 <= self.t_rec <= self.sample.ddim_steps:
            raise ValueError("t_rec must lie in [0, ddim_steps]")


def cfg_noise(model: DiffusionModel, z_t: np.ndarray, t: int,
              cond_v: VisualCondition, cond_a: AttributeCondition,
              omega_v: float, omega_a: float,
              _token_cache: Optional[Tuple[Tensor, np.ndarray]] = None
              ) -> np.ndarray:
    """Dual-weight guidance combining (null,null), (vis,null), (vis,attr)."""
    tokens, visible = _token_cache if _token_cache is not None \
        else guidance_tokens(model, cond_v, cond_a)
    single = z_t.ndim == 2
    zb = z_t[None] if single else z_t
    b = zb.shape[0]
    z3 = np.concatenate([zb, zb, zb], axis=0)
    tok3 = Tensor(np.concatenate([np.repeat(tokens.data[i:i + 1], b, axis=0)
                                  for i in range(3)], axis=0))
    vis3 = np.concatenate([np.repeat(visible[i:i + 1], b, axis=0)
                           for i in range(3)], axis=0)
    t3 = np.repeat(np.atleast_1d(t - 1), 3 * b) if np.ndim(t) == 0 \
        else np.concatenate([np.asarray(t) - 1] * 3)
    with no_grad():
        out = model.predict(z3, t3, tok3, visible=vis3).data
    v_nn, v_vn, v_va = out[:b], out[b:2 * b], out[2 * b:]
    v = v_nn + omega_v * (v_vn - v_nn) + omega_a * (v_va - v_vn)
    return v[0] if single else v


def guidance_tokens(model: DiffusionModel, cond_v: VisualCondition,
                    cond_a: AttributeCondition) -> Tuple[Tensor, np.ndarray]:
    """Token rows for the three guidance condition pairs: (null,null),
    (vis,null), (vis,attr). Returns tokens (3, T, d_cond) and the matching
    per-token key-visibility (3, T)."""
    null_a, null_v = make_null(model.cfg.cond)
    attrs = [null_a, null_a, cond_a]
    visuals = [null_v, cond_v, cond_v]
    with no_grad():
        tokens = model.encode_conditions(attrs, visuals, inference=True)
    return tokens, model.condition_visibility(attrs, visuals)


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Uniformly spaced decreasing timesteps from T down to 1."""
    return np.unique(np.linspace(T, 1, steps).round().astype(int))[::-1] \
        if steps > 1 else np.array([T])


def ddim_sample(model: DiffusionModel, scfg: SampleConfig,
                cond_a: AttributeCondition, cond_v: VisualCondition,
                _cond_switch: Optional[Tuple[int, AttributeCondition,
                                             VisualCondition]] = None) -> np.ndarray:
    """Guided DDIM sampler; returns (count, k, d) denormalized latents."""
    model._require_trained()
    cfg = model.cfg
    sched = model.schedule
    rng = np.random.default_rng([scfg.seed, 0xDD1])
    z = rng.standard_normal((scfg.count, cfg.gen.k, cfg.gen.d)).astype(np.float32)
    noise_rng = np.random.default_rng(
        [scfg.seed if scfg.noise_seed is None else scfg.noise_seed, 0xA0])

    ts = ddim_timesteps(sched.T, scfg.ddim_steps)
    tokens = guidance_tokens(model, cond_v, cond_a)
    switch_tokens = None
    if _cond_switch is not None:
        t_rec, edit_a, edit_v = _cond_switch
        switch_tokens = guidance_tokens(model, edit_v, edit_a)

    for i, t in enumerate(ts):
        tok = tokens
        if switch_tokens is not None and i >= _cond_switch[0]:
            tok = switch_tokens
        pred = cfg_noise(model, z, int(t), cond_v, cond_a,
                         scfg.omega_v, scfg.omega_a, _token_cache=tok)
        x0_hat, eps_hat = model.to_x0_eps(z, pred, int(t))
        t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
        ab_t = float(alpha_bar_at(sched, int(t)))
        ab_p = float(alpha_bar_at(sched, t_prev))
        sigma = scfg.eta * np.sqrt((1 - ab_p) / (1 - ab_t)) \
            * np.sqrt(max(1 - ab_t / ab_p, 0.0))
        noise = noise_rng.standard_normal(z.shape).astype(np.float32) \
            if sigma > 0 else 0.0
        z = (np.sqrt(ab_p) * x0_hat
             + np.sqrt(max(1 - ab_p - sigma ** 2, 0.0)) * eps_hat
             + sigma * noise).astype(np.float32)

    return np.stack([toygen.denormalize(zi, model.norm) for zi in z])


def edit(model: DiffusionModel, plan: EditPlan) -> np.ndarray:
    """Two-stage trajectory: reference conditions first, edit conditions after t_rec."""
    ref_a, ref_v = plan.reference
    edit_a, edit_v = plan.edit
    return ddim_sample(model, plan.sample, ref_a, ref_v,
                       _cond_switch=(plan.t_rec, edit_a, edit_v))
