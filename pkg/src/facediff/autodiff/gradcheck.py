"""Central finite-difference gradient checking (64-bit oracle)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[], Tensor], leaf: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar f() w.r.t. one leaf tensor."""
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(f: Callable[[], Tensor], leaves: Sequence[Tensor],
                    h: float = 1e-4, rel_tol: float = 1e-4,
                    abs_tol: float = 1e-6) -> None:
    """Assert analytic grads of scalar f() match central differences.

    Relative error where |grad| > 1e-6, absolute error otherwise. Leaves should
    hold float64 data; float32 differences are too noisy to trust.
    """
    for leaf in leaves:
        leaf.grad = None
    loss = f()
    loss.backward()
    for idx, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        numeric = numerical_grad(f, leaf, h=h)
        diff = np.abs(analytic - numeric)
        big = np.abs(numeric) > 1e-6
        rel = diff[big] / np.abs(numeric[big])
        name = getattr(leaf, "name", f"leaf{idx}")
        if big.any() and rel.max() > rel_tol:
            raise AssertionError(
                f"gradient mismatch for {name}: max rel err {rel.max():.3e} > {rel_tol}")
        if (~big).any() and diff[~big].max() > abs_tol:
            raise AssertionError(
                f"gradient mismatch for {name}: max abs err {diff[~big].max():.3e} > {abs_tol}")
