"""Central finite-difference checks for functions of tensors."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad_of


def numeric_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Estimate d f()/d t by perturbing ``t.data`` in place, one entry at a time."""
    g = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f().data)
        flat[i] = orig - eps
        down = float(f().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(num / den)


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Worst relative error between reverse-mode and finite-difference gradients.

    ``f`` must rebuild the graph from the current ``inputs`` on each call and
    return a scalar; inputs must be float64 with ``requires_grad`` set.
    """
    out = f()
    analytic = grad_of(out, inputs)
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        worst = max(worst, relative_error(ga, numeric_grad(f, t, eps)))
    return worst


def directional_error(f: Callable[[], Tensor], inputs: Sequence[Tensor], n_dirs: int = 3,
                      eps: float = 1e-6, rng: np.random.Generator | None = None) -> float:
    """Worst relative error of grad·v against a central difference along random unit v.

    Cheaper than ``check_gradients`` for blocks with thousands of parameters.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    analytic = grad_of(f(), inputs)
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [rng.normal(size=t.shape) for t in inputs]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]     # unit direction keeps the step size meaningful
        a = float(sum(np.vdot(g, d) for g, d in zip(analytic, dirs)))
        for t, d in zip(inputs, dirs):
            t.data += eps * d
        up = float(f().data)
        for t, d in zip(inputs, dirs):
            t.data -= 2 * eps * d
        down = float(f().data)
        for t, d in zip(inputs, dirs):
            t.data += eps * d
        n = (up - down) / (2 * eps)
        worst = max(worst, abs(a - n) / max(abs(a), abs(n), 1e-12))
    return worst
