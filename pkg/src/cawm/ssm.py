"""Selective state-space recurrence and the 2-D traversal orders built on it.

A token sequence ``x_t`` (channel width D) drives one diagonal state per
channel of size N::

    delta_t = softplus(W_delta x_t + delta_bias)        (D,)
    B_t, C_t = W_B x_t, W_C x_t                         (N,)
    A_bar = exp(delta A),  B_bar = (delta A)^-1 (exp(delta A) - 1) delta B
    h_t = A_bar h_{t-1} + B_bar x_t,   y_t = C_t h_t + D x_t

with ``A = -exp(a_log)`` so every ``A_bar`` entry lies in (0, 1).
"""

from __future__ import annotations

import contextlib
import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UsageError
from .nn import Linear, Module, param
from .tensor import (Tensor, _make, concat, exp, expm1_ratio, reshape, softplus, take,
                     transpose)


class ScanKind(enum.Enum):
    HORIZONTAL_BI = "horizontal"
    VERTICAL_BI = "vertical"
    DIAGONAL_BI = "diagonal"


@dataclass(frozen=True)
class ScanOrder:
    kind: ScanKind
    height: int
    width: int
    index: np.ndarray     # sequence position -> flat (row-major) cell index
    inverse: np.ndarray   # flat cell index -> sequence position

    def cells(self) -> list[tuple[int, int]]:
        return [divmod(int(i), self.width) for i in self.index]


def build_scan_order(kind: ScanKind, height: int, width: int) -> ScanOrder:
    """Forward traversal for ``kind``; the backward sweep is its reversal.

    Diagonal order walks anti-diagonals ``r + c = 0 .. H+W-2``, each by
    increasing row.
    """
    if height < 1 or width < 1:
        raise UsageError(f"scan order needs H, W >= 1, got {height}x{width}")
    grid = np.arange(height * width).reshape(height, width)
    if kind is ScanKind.HORIZONTAL_BI:
        index = grid.reshape(-1)
    elif kind is ScanKind.VERTICAL_BI:
        index = grid.T.reshape(-1)
    elif kind is ScanKind.DIAGONAL_BI:
        rows, cols = np.divmod(np.arange(height * width), width)
        index = np.lexsort((rows, rows + cols))
    else:
        raise UsageError(f"unknown scan kind {kind!r}")
    inverse = np.empty_like(index)
    inverse[index] = np.arange(index.size)
    return ScanOrder(kind, height, width, index, inverse)


# ---------------------------------------------------------------------------
# step accounting
# ---------------------------------------------------------------------------

class StepCounter:
    """Counts recurrence steps: one per token per swept sequence."""

    def __init__(self):
        self.steps = 0


_ACTIVE_COUNTERS: list[StepCounter] = []


@contextlib.contextmanager
def count_steps():
    """Yield a counter that tallies every recurrence step run inside the block."""
    counter = StepCounter()
    _ACTIVE_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTERS.remove(counter)


# ---------------------------------------------------------------------------
# discretisation and recurrence
# ---------------------------------------------------------------------------

def zoh_discretize(A, B, delta) -> tuple[Tensor, Tensor]:
    """Zero-order-hold discretisation, elementwise with broadcasting.

    Returns ``(exp(delta*A), phi(delta*A) * delta * B)`` where
    ``phi(z) = (exp(z) - 1) / z`` switches to its series for ``|z| < 1e-4``.
    """
    A = A if isinstance(A, Tensor) else Tensor(A)
    B = B if isinstance(B, Tensor) else Tensor(B, dtype=A.dtype)
    delta = delta if isinstance(delta, Tensor) else Tensor(delta, dtype=A.dtype)
    if np.any(delta.data <= 0):
        raise DomainError("zoh_discretize needs delta > 0")
    z = delta * A
    return exp(z), expm1_ratio(z) * delta * B


def linear_recurrence(a_bar: Tensor, bx: Tensor, c: Tensor) -> Tensor:
    """Run ``h_t = a_t * h_{t-1} + bx_t``, ``y_t = sum_n c_t[n] h_t[:, n]``.

    Shapes: ``a_bar``/``bx`` (S, L, D, N), ``c`` (S, L, N); returns (S, L, D).
    """
    a, u, cm = a_bar.data, bx.data, c.data
    s, length, d, n = u.shape
    for counter in _ACTIVE_COUNTERS:
        counter.steps += s * length
    hs = np.empty_like(u)
    h = np.zeros((s, d, n), dtype=u.dtype)
    for t in range(length):
        h = a[:, t] * h + u[:, t]
        hs[:, t] = h
    y = np.einsum("sldn,sln->sld", hs, cm)

    def back(g):
        term = g[..., None] * cm[:, :, None, :]
        gh = np.empty_like(hs)
        acc = np.zeros((s, d, n), dtype=u.dtype)
        for t in range(length - 1, -1, -1):
            if t + 1 < length:
                acc = term[:, t] + a[:, t + 1] * acc
            else:
                acc = term[:, t]
            gh[:, t] = acc
        h_prev = np.concatenate([np.zeros_like(hs[:, :1]), hs[:, :-1]], axis=1)
        ga = gh * h_prev
        gc = np.einsum("sld,sldn->sln", g, hs)
        return ga, gh, gc

    return _make(y, (a_bar, bx, c), back)


class SelectiveSSM(Module):
    """Input-dependent (delta, B, C) projections plus the diagonal A and skip D."""

    def __init__(self, channels: int, state_dim: int, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.state_dim = state_dim
        a_init = rng.uniform(math.log(0.5), math.log(4.0), size=(channels, state_dim))
        self.a_log = param(a_init)
        self.d_skip = param(np.ones(channels))
        self.proj_delta = Linear(channels, channels, rng, bias=False)
        # softplus(bias) = 0.1 at zero input
        self.delta_bias = param(np.full(channels, math.log(math.expm1(0.1))))
        self.proj_b = Linear(channels, state_dim, rng, bias=False)
        self.proj_c = Linear(channels, state_dim, rng, bias=False)

    def A(self) -> Tensor:
        return exp(self.a_log) * -1.0

    def recurrence(self, x_seq: Tensor) -> Tensor:
        """``x_seq`` (S, L, D) -> ``y`` (S, L, D)."""
        s, length, d = x_seq.shape
        if length == 0:
            return x_seq
        delta = softplus(self.proj_delta(x_seq) + self.delta_bias)
        bmat = self.proj_b(x_seq)
        cmat = self.proj_c(x_seq)
        a_bar, b_bar = zoh_discretize(self.A(), reshape(bmat, (s, length, 1, self.state_dim)),
                                      reshape(delta, (s, length, d, 1)))
        bx = b_bar * reshape(x_seq, (s, length, d, 1))
        y = linear_recurrence(a_bar, bx, cmat)
        return y + x_seq * self.d_skip

    def forward(self, x_seq: Tensor) -> Tensor:
        return self.recurrence(x_seq)


def ssm_recurrence(x_seq: Tensor, params: SelectiveSSM) -> Tensor:
    return params.recurrence(x_seq)


# ---------------------------------------------------------------------------
# 2-D scans
# ---------------------------------------------------------------------------

def _directional_scan(x: Tensor, ssm: SelectiveSSM, sweeps: list[np.ndarray]) -> Tensor:
    """Sweep (B, D, H, W) along each index order, sum the un-permuted outputs."""
    b, d, h, w = x.shape
    tokens = transpose(reshape(x, (b, d, h * w)), (0, 2, 1))  # (B, L, D)
    seqs = concat([take(tokens, idx, axis=1) for idx in sweeps], axis=0)
    y = ssm.recurrence(seqs)
    total = None
    for k, idx in enumerate(sweeps):
        inv = np.empty_like(idx)
        inv[idx] = np.arange(idx.size)
        part = take(y[k * b:(k + 1) * b], inv, axis=1)
        total = part if total is None else total + part
    return reshape(transpose(total, (0, 2, 1)), (b, d, h, w))


def scan_2d_regular(x: Tensor, ssm: SelectiveSSM) -> Tensor:
    """Four sweeps: row-major both ways and column-major both ways."""
    _, _, h, w = x.shape
    rows = build_scan_order(ScanKind.HORIZONTAL_BI, h, w).index
    cols = build_scan_order(ScanKind.VERTICAL_BI, h, w).index
    return _directional_scan(x, ssm, [rows, rows[::-1], cols, cols[::-1]])


SUBBAND_SCAN = {
    "lh": ScanKind.VERTICAL_BI,
    "hl": ScanKind.HORIZONTAL_BI,
    "hh": ScanKind.DIAGONAL_BI,
}


def freq_scan(x: Tensor, subband: str, ssm: SelectiveSSM) -> Tensor:
    """Two sweeps aligned with the subband's orientation (forward and reverse)."""
    key = subband.lower() if isinstance(subband, str) else subband
    if key not in SUBBAND_SCAN:
        raise UsageError(f"freq_scan: unknown subband {subband!r} (expected LH, HL or HH)")
    _, _, h, w = x.shape
    idx = build_scan_order(SUBBAND_SCAN[key], h, w).index
    return _directional_scan(x, ssm, [idx, idx[::-1]])
