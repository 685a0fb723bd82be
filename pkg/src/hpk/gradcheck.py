"""Central finite-difference checks against the tape's analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numeric as nm
from .numeric import Tensor


@dataclass
class GradReport:
    name: str
    rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """‖a − b‖ / max(‖a‖, ‖b‖, floor) over the sampled entries."""
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def numeric_grad(loss_fn: Callable[[], Tensor], p: Tensor, flat_indices: Sequence[int],
                 h: float = 1e-5) -> np.ndarray:
    base = p.data.copy()
    out = np.empty(len(flat_indices))
    try:
        for n, i in enumerate(flat_indices):
            bumped = base.copy().reshape(-1)
            bumped[i] += h
            p.assign(bumped.reshape(base.shape))
            plus = loss_fn().item()
            bumped[i] -= 2 * h
            p.assign(bumped.reshape(base.shape))
            minus = loss_fn().item()
            out[n] = (plus - minus) / (2 * h)
    finally:
        p.assign(base)
    return out


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                    rng: np.random.Generator, entries: int = 4, h: float = 1e-5) -> list[GradReport]:
    """Compare tape gradients with central differences on sampled entries.

    ``loss_fn`` must rebuild the graph from the current parameter values
    on every call.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    # Roundoff in L(p ± h) runs to a few hundred ulps of |L| in deep graphs, so
    # differences cannot resolve gradients far below 1e-10·|L|/h. Smaller ones
    # (structurally zero, e.g. attention key biases) are judged against this.
    floor = max(1e-6, 1e-10 * abs(loss.item()) / h)
    nm.backward(loss)
    reports = []
    for name, p in params.items():
        idx = rng.choice(p.size, size=min(entries, p.size), replace=False)
        analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1)[idx]
        if p.grad is None:
            analytic = analytic[idx]
        numeric = numeric_grad(loss_fn, p, idx, h)
        reports.append(GradReport(name, relative_error(analytic, numeric, floor), analytic, numeric))
    return reports
