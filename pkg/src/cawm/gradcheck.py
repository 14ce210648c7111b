"""Central finite-difference checks against the tape's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradcheckResult:
    name: str
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-3
    kinks: dict[str, int] = field(default_factory=dict)   # probes skipped per tensor
    starved: list[str] = field(default_factory=list)      # tensors left with too few probes
    redraws: int = 0                                      # fresh test points drawn by the caller

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol and not self.starved


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / (||n|| + 1e-8)`` over the probed entries."""
    return float(np.linalg.norm(analytic - numeric) / (np.linalg.norm(numeric) + 1e-8))


def near_kink(f, h: float, rel: float = 1e-4) -> bool:
    """True when ``f`` sampled at ``x-2h, x-h, x, x+h, x+2h`` is not smooth.

    For a smooth function the four one-sided slopes change linearly, so their
    third difference is O(h^2 f'''). A ReLU/abs/max kink with slope jump J
    inside the window makes it at least J/3, while the central-difference
    error that kink could cause is at most J/2.
    """
    s = np.diff(np.asarray(f, dtype=np.float64)) / h
    third = np.abs(np.diff(s, n=2))
    return bool(np.max(third) > rel * np.max(np.abs(s)) + 1e-10)


def check_gradients(fn: Callable[[], Tensor], tensors: dict[str, Tensor], *, name: str = "",
                    h: float = 1e-3, max_probes: int = 16, seed: int = 0,
                    tol: float = 1e-3) -> GradcheckResult:
    """Compare d fn() / d t for each tensor in ``tensors``.

    ``fn`` must rebuild the graph from the live tensors on every call. Up to
    ``max_probes`` entries per tensor are probed, visited in a seeded random
    order. A probe with a kink within two steps is replaced by the next
    entry; a tensor that cannot supply ``min(size, max_probes) // 2`` smooth
    probes is reported as starved and fails the check.
    """
    rng = np.random.default_rng(seed)
    for t in tensors.values():
        t.grad = None
    loss = fn()
    loss.backward()
    result = GradcheckResult(name, tol=tol)
    for key, t in tensors.items():
        analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1).astype(np.float64)
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        want = min(t.size, max_probes)
        probes, numeric, skipped = [], [], 0
        with no_grad():
            mid = float(fn().data.sum())
            for i in rng.permutation(t.size):
                if len(probes) == want:
                    break
                orig = flat[i]
                vals = []
                for step in (-2, -1, 1, 2):
                    flat[i] = orig + step * h
                    vals.append(float(fn().data.sum()))
                flat[i] = orig
                if near_kink((vals[0], vals[1], mid, vals[2], vals[3]), h):
                    skipped += 1
                    continue
                probes.append(i)
                numeric.append((vals[2] - vals[1]) / (2 * h))
        if skipped:
            result.kinks[key] = skipped
        if len(probes) < max(want // 2, 1):
            result.starved.append(key)
        idx = np.array(probes, dtype=np.int64)
        result.errors[key] = relative_error(analytic[idx], np.array(numeric)) if probes else 0.0
    for t in tensors.values():
        t.grad = None
    return result
