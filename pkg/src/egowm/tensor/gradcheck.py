"""Central finite-difference verification of reverse-mode gradients.

All checks run in float64 with step 1e-5 and compare elementwise relative
error with denominator max(1, |g|). This is the independent oracle for the
hand-written backward passes; it never reuses the tape.
"""

from __future__ import annotations

import numpy as np

from .core import Parameter


def finite_difference(loss_fn, param: Parameter, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar loss wrt every element of ``param``."""
    base = param.data.copy()
    fd = np.zeros_like(base)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn().item()
        flat[i] = orig - step
        down = loss_fn().item()
        flat[i] = orig
        fd.reshape(-1)[i] = (up - down) / (2.0 * step)
    param.data[...] = base
    return fd


def check_gradients(
    loss_fn,
    params: list[Parameter],
    step: float = 1e-5,
    tol: float = 1e-4,
) -> float:
    """Backprop vs finite differences; returns the worst relative error.

    Raises AssertionError when any element exceeds ``tol``.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = finite_difference(loss_fn, p, step)
        denom = np.maximum(1.0, np.abs(numeric))
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
        if rel.size and rel.max() > tol:
            idx = np.unravel_index(int(rel.argmax()), rel.shape)
            raise AssertionError(
                f"gradient mismatch for {p.name}{list(idx)}: "
                f"analytic {analytic[idx]:.8g} vs numeric {numeric[idx]:.8g} "
                f"(rel {rel[idx]:.3g} > {tol})"
            )
    return worst
