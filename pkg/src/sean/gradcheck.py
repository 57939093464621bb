"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor

FD_STEP = 1e-5
REL_FLOOR = 1e-6


def _as_tensor(x) -> Tensor:
    return x.value if isinstance(x, Parameter) else x


def numerical_grad(f: Callable[[], Tensor], x: Tensor, indices=None, step: float = FD_STEP) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. entries of ``x`` (all, or the flat ``indices``)."""
    flat = x.data.reshape(-1)
    indices = range(flat.size) if indices is None else indices
    out = np.zeros(len(indices))
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + step
        up = f().item()
        flat[i] = orig - step
        down = f().item()
        flat[i] = orig
        out[k] = (up - down) / (2 * step)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over entries."""
    analytic, numeric = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor | Parameter],
    fraction: float = 1.0,
    rng: np.random.Generator | None = None,
    step: float = FD_STEP,
) -> float:
    """Max relative error between backprop and finite differences over ``inputs``.

    With ``fraction < 1`` a random subset (at least one entry per input) is probed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tensors = [_as_tensor(x) for x in inputs]
    for t in tensors:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1).copy()
        if fraction >= 1.0:
            idx = list(range(t.size))
        else:
            k = max(1, int(round(fraction * t.size)))
            idx = sorted(rng.choice(t.size, size=k, replace=False).tolist())
        numeric = numerical_grad(f, t, idx, step)
        worst = max(worst, relative_error(analytic[idx], numeric))
        t.grad = None
    return worst
