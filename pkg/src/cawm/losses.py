"""Training objectives. Every term compares the fused image against the clean
sources; ``ir`` is broadcast from one channel to three where needed."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import UsageError
from .nn import conv2d
from .tensor import Tensor, as_tensor, broadcast_to, maximum, mean, pad, relu, reshape, tabs
from .wavelet import dwt2

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossReport:
    wavelet: float
    intensity: float
    color: float
    perceptual: float
    gradient: float
    ssim: float
    total: float
    alpha: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def _same_shape(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise UsageError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _ir3(ir: Tensor, like: Tensor) -> Tensor:
    if ir.shape == like.shape:
        return ir
    if ir.shape[1] != 1 or ir.shape[2:] != like.shape[2:] or ir.shape[0] != like.shape[0]:
        raise UsageError(f"infrared {ir.shape} cannot broadcast to {like.shape}")
    return broadcast_to(ir, like.shape)


def l1(a: Tensor, b: Tensor) -> Tensor:
    return mean(tabs(a - b))


def wavelet_loss(fused: Tensor, vis: Tensor) -> Tensor:
    """L1 on LL plus the mean of the three detail-band L1s."""
    _same_shape(fused, vis, "wavelet_loss")
    pf, pv = dwt2(fused), dwt2(vis)
    high = l1(pf.lh, pv.lh) + l1(pf.hl, pv.hl) + l1(pf.hh, pv.hh)
    return l1(pf.ll, pv.ll) + high * (1.0 / 3.0)


def intensity_loss(fused: Tensor, vis: Tensor, ir: Tensor) -> Tensor:
    _same_shape(fused, vis, "intensity_loss")
    return l1(fused, maximum(vis, _ir3(ir, vis)))


# BT.601 full-range chroma
_CB = (-0.168736, -0.331264, 0.5)
_CR = (0.5, -0.418688, -0.081312)


def rgb_to_cbcr(x: Tensor) -> Tensor:
    if x.ndim != 4 or x.shape[1] != 3:
        raise UsageError(f"rgb_to_cbcr needs (B,3,H,W), got {x.shape}")
    w = np.array([[_CB, _CR]], dtype=x.dtype).reshape(2, 3, 1, 1)
    b = np.array([0.5, 0.5], dtype=x.dtype)
    return conv2d(x, Tensor(w), Tensor(b))


def color_loss(fused: Tensor, vis: Tensor) -> Tensor:
    _same_shape(fused, vis, "color_loss")
    return l1(rgb_to_cbcr(fused), rgb_to_cbcr(vis))


class RandomConvExtractor:
    """Frozen three-stage pyramid of seeded 3x3 stride-2 convs with ReLU."""

    def __init__(self, seed: int = 42, widths: Sequence[int] = (8, 16, 32), in_channels: int = 3):
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        cin = in_channels
        for cout in widths:
            bound = np.sqrt(6.0 / (cin * 9))
            self.weights.append(rng.uniform(-bound, bound, (cout, cin, 3, 3)))
            self.biases.append(rng.uniform(-0.1, 0.1, cout))
            cin = cout

    def __call__(self, x: Tensor) -> list[Tensor]:
        feats = []
        for w, b in zip(self.weights, self.biases):
            h, wd = x.shape[2:]
            # keep stride-2 tiling exact for odd sizes
            x = pad(x, (1, h % 2, 1, wd % 2), "edge")
            x = relu(conv2d(x, Tensor(w, dtype=x.dtype), Tensor(b, dtype=x.dtype), stride=2))
            feats.append(x)
        return feats


_DEFAULT_EXTRACTOR: RandomConvExtractor | None = None


def default_extractor() -> RandomConvExtractor:
    global _DEFAULT_EXTRACTOR
    if _DEFAULT_EXTRACTOR is None:
        _DEFAULT_EXTRACTOR = RandomConvExtractor(seed=42)
    return _DEFAULT_EXTRACTOR


def perceptual_loss(fused: Tensor, vis: Tensor,
                    extractor: Callable[[Tensor], Sequence[Tensor]] | None = None) -> Tensor:
    _same_shape(fused, vis, "perceptual_loss")
    extractor = extractor or default_extractor()
    ff, fv = extractor(fused), extractor(vis)
    total = None
    for a, b in zip(ff, fv):
        term = l1(a, b)
        total = term if total is None else total + term
    return total * (1.0 / len(ff))


def sobel_magnitude(x: Tensor) -> Tensor:
    """Per-channel ``|d/dx| + |d/dy|`` with 3x3 Sobel kernels, edge-replicated border."""
    b, c, h, w = x.shape
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=x.dtype)
    k = np.stack([kx, kx.T]).reshape(2, 1, 3, 3)
    flat = pad(reshape(x, (b * c, 1, h, w)), (1, 1, 1, 1), "edge")
    g = tabs(conv2d(flat, Tensor(k)))
    return reshape(g[:, 0:1] + g[:, 1:2], (b, c, h, w))


def gradient_loss(fused: Tensor, vis: Tensor, ir: Tensor) -> Tensor:
    _same_shape(fused, vis, "gradient_loss")
    target = maximum(sobel_magnitude(vis), sobel_magnitude(_ir3(ir, vis)))
    return l1(sobel_magnitude(fused), target)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_window_size(h: int, w: int) -> int:
    """11, or the largest odd size that fits inside an image smaller than that."""
    k = min(SSIM_WINDOW, h, w)
    return k if k % 2 else k - 1


def ssim(x: Tensor, y: Tensor) -> Tensor:
    """Mean SSIM over valid Gaussian windows (sigma 1.5, 11x11 unless the
    image is smaller), all channels and batch items."""
    x, y = as_tensor(x), as_tensor(y, like=as_tensor(x))
    _same_shape(x, y, "ssim")
    b, c, h, w = x.shape
    if h < 1 or w < 1:
        raise UsageError(f"ssim needs a non-empty image, got {h}x{w}")
    k = ssim_window_size(h, w)
    win = Tensor(gaussian_window(k).reshape(1, 1, k, k), dtype=x.dtype)
    xs, ys = reshape(x, (b * c, 1, h, w)), reshape(y, (b * c, 1, h, w))

    def blur(t):
        return conv2d(t, win)

    mx, my = blur(xs), blur(ys)
    sxx = blur(xs * xs) - mx * mx
    syy = blur(ys * ys) - my * my
    sxy = blur(xs * ys) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return mean(num / den)


def ssim_loss(fused: Tensor, vis: Tensor, ir: Tensor) -> Tensor:
    _same_shape(fused, vis, "ssim_loss")
    return 1.0 - (ssim(fused, vis) + ssim(fused, _ir3(ir, vis))) * 0.5


def total_loss(fused: Tensor, vis: Tensor, ir: Tensor, alpha: Tensor,
               extractor=None) -> tuple[Tensor, LossReport]:
    """``alpha * wavelet + color + perceptual + gradient + intensity + ssim``."""
    alpha = as_tensor(alpha, like=fused)
    terms = {
        "wavelet": wavelet_loss(fused, vis),
        "intensity": intensity_loss(fused, vis, ir),
        "color": color_loss(fused, vis),
        "perceptual": perceptual_loss(fused, vis, extractor),
        "gradient": gradient_loss(fused, vis, ir),
        "ssim": ssim_loss(fused, vis, ir),
    }
    total = reshape(alpha, ()) * terms["wavelet"]
    for key in ("color", "perceptual", "gradient", "intensity", "ssim"):
        total = total + terms[key]
    report = LossReport(**{k: float(v.data) for k, v in terms.items()},
                        total=float(total.data), alpha=float(alpha.data.reshape(-1)[0]))
    return total, report
