"""Fusion quality metrics: SSIM, normalised mutual information and the
Xydeas-Petrovic edge-preservation score."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import convolve2d

from .losses import ssim as _ssim
from .tensor import Tensor, no_grad

# Xydeas-Petrovic sigmoid constants
_TG, _KG, _DG = 0.9994, -15.0, 0.5
_TA, _KA, _DA = 0.9879, -22.0, 0.8


@dataclass
class MetricReport:
    ssim: float
    q_mi: float
    q_abf: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def _chw(img) -> np.ndarray:
    a = np.asarray(img.data if isinstance(img, Tensor) else img, dtype=np.float64)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError(f"metrics take one image at a time, got batch {a.shape[0]}")
        a = a[0]
    if a.ndim == 2:
        a = a[None]
    return a


def luminance(img) -> np.ndarray:
    """BT.601 luma in [0, 1] as an (H, W) float array."""
    a = _chw(img)
    if a.shape[0] == 3:
        return 0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2]
    return a[0]


def to_uint8(gray: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(gray, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def mutual_information(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    """MI and the two marginal entropies (bits) of two uint8 images."""
    joint = np.zeros((256, 256))
    np.add.at(joint, (a.reshape(-1), b.reshape(-1)), 1.0)
    joint /= joint.sum()
    ha = _entropy(joint.sum(axis=1))
    hb = _entropy(joint.sum(axis=0))
    return ha + hb - _entropy(joint), ha, hb


def metric_q_mi(fused, vis, ir) -> float:
    """Sum over both sources of ``2 MI(F, S) / (H(F) + H(S))``; a pair with a
    zero-entropy image contributes 0."""
    f = to_uint8(luminance(fused))
    total = 0.0
    for src in (vis, ir):
        mi, hf, hs = mutual_information(f, to_uint8(luminance(src)))
        if hf > 0 and hs > 0:
            total += 2.0 * mi / (hf + hs)
    return total


_SOBEL_Y = np.array([[1, 2, 1], [0, 0, 0], [-1, -2, -1]], dtype=np.float64)
_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)


def _edges(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = convolve2d(gray, _SOBEL_X, mode="same")
    gy = convolve2d(gray, _SOBEL_Y, mode="same")
    strength = np.sqrt(gx * gx + gy * gy)
    with np.errstate(divide="ignore", invalid="ignore"):
        angle = np.where(gx == 0, math.pi / 2, np.arctan(gy / np.where(gx == 0, 1.0, gx)))
    return strength, angle


def _preservation(g_src, a_src, g_f, a_f) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(g_src > g_f, g_f / g_src, np.where(g_src == g_f, 1.0, g_src / g_f))
    ratio = np.nan_to_num(ratio)
    orient = 1.0 - np.abs(a_src - a_f) / (math.pi / 2)
    qg = _TG / (1.0 + np.exp(_KG * (ratio - _DG)))
    qa = _TA / (1.0 + np.exp(_KA * (orient - _DA)))
    return qg * qa


def metric_q_abf(fused, vis, ir) -> float:
    g_f, a_f = _edges(luminance(fused) * 255.0)
    g_a, a_a = _edges(luminance(vis) * 255.0)
    g_b, a_b = _edges(luminance(ir) * 255.0)
    den = float(np.sum(g_a + g_b))
    if den == 0:
        return 0.0
    num = np.sum(_preservation(g_a, a_a, g_f, a_f) * g_a + _preservation(g_b, a_b, g_f, a_f) * g_b)
    return float(num / den)


def metric_ssim(x, y) -> float:
    with no_grad():
        xa, ya = _chw(x)[None], _chw(y)[None]
        return float(_ssim(Tensor(xa), Tensor(ya)).data)


def evaluate(fused, vis_clean, ir) -> MetricReport:
    """SSIM against the clean visible image plus the two source-based scores."""
    return MetricReport(ssim=metric_ssim(fused, vis_clean),
                        q_mi=metric_q_mi(fused, vis_clean, ir),
                        q_abf=metric_q_abf(fused, vis_clean, ir))
