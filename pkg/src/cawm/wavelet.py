"""One-level orthonormal 2-D Haar transform.

For each 2x2 block ``[[a, b], [c, d]]``::

    LL = (a + b + c + d) / 2      LH = (a + b - c - d) / 2
    HL = (a - b + c - d) / 2      HH = (a - b - c + d) / 2

LH is high-pass along the height axis (it picks up horizontal stripes, i.e.
vertical detail), HL is high-pass along the width axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError
from .tensor import Tensor, _make, getitem, pad

# sign pattern over (a, b, c, d) for each subband
_SIGNS = {
    "ll": (1, 1, 1, 1),
    "lh": (1, 1, -1, -1),
    "hl": (1, -1, 1, -1),
    "hh": (1, -1, -1, 1),
}
BANDS = ("ll", "lh", "hl", "hh")


@dataclass
class WaveletPack:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    original_hw: tuple[int, int]

    def bands(self) -> dict[str, Tensor]:
        return {"ll": self.ll, "lh": self.lh, "hl": self.hl, "hh": self.hh}

    @property
    def high(self) -> dict[str, Tensor]:
        return {"lh": self.lh, "hl": self.hl, "hh": self.hh}


def _corners(x: np.ndarray):
    return x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2]


def _band(x: Tensor, name: str) -> Tensor:
    sa, sb, sc, sd = _SIGNS[name]
    a, b, c, d = _corners(x.data)
    out = (sa * a + sb * b + sc * c + sd * d) * 0.5

    def back(g):
        gx = np.empty_like(x.data)
        half = g * 0.5
        gx[..., 0::2, 0::2] = sa * half
        gx[..., 0::2, 1::2] = sb * half
        gx[..., 1::2, 0::2] = sc * half
        gx[..., 1::2, 1::2] = sd * half
        return (gx,)

    return _make(out, (x,), back)


def dwt2(x: Tensor) -> WaveletPack:
    """Forward transform; odd height/width are zero-padded at the bottom/right."""
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise DegenerateInputError(f"dwt2 needs H, W >= 2, got {h}x{w}")
    if h % 2 or w % 2:
        x = pad(x, (0, h % 2, 0, w % 2))
    return WaveletPack(*(_band(x, name) for name in BANDS), original_hw=(h, w))


def _merge(ll: Tensor, lh: Tensor, hl: Tensor, hh: Tensor) -> Tensor:
    subs = (ll, lh, hl, hh)
    shape = ll.shape
    if any(s.shape != shape for s in subs):
        raise ConfigurationError(f"subband shapes differ: {[s.shape for s in subs]}")
    out = np.empty(shape[:-2] + (2 * shape[-2], 2 * shape[-1]), dtype=ll.dtype)
    L, V, Hh, D = (s.data for s in subs)
    out[..., 0::2, 0::2] = (L + V + Hh + D) * 0.5
    out[..., 0::2, 1::2] = (L + V - Hh - D) * 0.5
    out[..., 1::2, 0::2] = (L - V + Hh - D) * 0.5
    out[..., 1::2, 1::2] = (L - V - Hh + D) * 0.5

    def back(g):
        ga, gb, gc, gd = _corners(g)
        return ((ga + gb + gc + gd) * 0.5,
                (ga + gb - gc - gd) * 0.5,
                (ga - gb + gc - gd) * 0.5,
                (ga - gb - gc + gd) * 0.5)

    return _make(out, subs, back)


def idwt2(p: WaveletPack) -> Tensor:
    """Inverse transform, cropped back to ``p.original_hw``."""
    out = _merge(p.ll, p.lh, p.hl, p.hh)
    h, w = p.original_hw
    if out.shape[-2:] != (h, w):
        if h > out.shape[-2] or w > out.shape[-1]:
            raise ConfigurationError(f"original size {h}x{w} exceeds reconstruction {out.shape[-2:]}")
        out = getitem(out, (Ellipsis, slice(0, h), slice(0, w)))
    return out


def band_energies(x: np.ndarray) -> dict[str, float]:
    """Sum of squares per subband of a plain array (diagnostics)."""
    pack = dwt2(Tensor(np.asarray(x, dtype=np.float64)))
    return {k: float(np.sum(v.data ** 2)) for k, v in pack.bands().items()}


def high_band_fraction(x: np.ndarray) -> float:
    e = band_energies(x)
    total = sum(e.values())
    return 0.0 if total == 0 else (e["lh"] + e["hl"] + e["hh"]) / total
