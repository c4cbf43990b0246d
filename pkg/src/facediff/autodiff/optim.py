"""Adam optimizer (no weight decay) and the OneCycle learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from .tensor import Parameter


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the shared step counter."""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: Sequence[Parameter], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
    for p in params:
        state.m[p.name] = np.zeros_like(p.data)
        state.v[p.name] = np.zeros_like(p.data)
    return state


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float,
              lr_scale=None) -> None:
    """One bias-corrected Adam update in place; parameters with no gradient are skipped.

    lr_scale: optional callable name -> multiplier for per-group learning
    rates (1.0 when it returns None/1).
    """
    if lr <= 0:
        raise ValueError("adam_step: lr must be positive")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in params:
        if p.name not in state.m:
            raise KeyError(f"adam_step: uninitialized state for {p.name!r}")
        g = p.grad
        if g is None:
            continue
        g = g.astype(p.data.dtype, copy=False)
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        plr = lr if lr_scale is None else lr * float(lr_scale(p.name) or 1.0)
        p.data = p.data - plr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to max_lr, then cosine decay back to floor_lr."""
    max_lr: float
    total_steps: int
    warmup_steps: int
    floor_lr: float = 0.0

    def __post_init__(self):
        if self.max_lr <= 0 or self.total_steps <= 0:
            raise ValueError("max_lr and total_steps must be positive")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("warmup_steps must be in [0, total_steps)")
        if self.floor_lr < 0:
            raise ValueError("floor_lr must be non-negative")


def onecycle_lr(step: int, sched: LrSchedule) -> float:
    if not 0 <= step <= sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps}]")
    if sched.warmup_steps > 0 and step < sched.warmup_steps:
        frac = step / sched.warmup_steps
        return sched.floor_lr + (sched.max_lr - sched.floor_lr) * frac
    span = sched.total_steps - sched.warmup_steps
    frac = (step - sched.warmup_steps) / span
    cos = 0.5 * (1.0 + np.cos(np.pi * frac))
    return sched.floor_lr + (sched.max_lr - sched.floor_lr) * float(cos)
