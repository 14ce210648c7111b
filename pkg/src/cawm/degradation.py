"""Parametric haze, rain and snow, plus a procedural scene/IR generator used to
build desk-scale training and evaluation triples.

All generators work on (B, C, H, W) images in [0, 1] and are deterministic in
their seed. The infrared image is never degraded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.ndimage import convolve, gaussian_filter

from .errors import UsageError
from .tensor import Tensor

KINDS = ("haze", "rain", "snow")
ATMOSPHERIC_LIGHT = 0.9
RAIN_ANGLE_RANGE = (60.0, 120.0)   # degrees, 90 = straight down
RAIN_LENGTH_RANGE = (3, 5)         # streak length in pixels
SNOW_RADII = (1, 2, 3)

# distinct stream ids so one seed drives independent fields per kind
_STREAM = {"haze": 11, "rain": 23, "snow": 37, "scene": 51}


def _rng(seed: int, kind: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), _STREAM[kind]])


def _array(img) -> np.ndarray:
    a = np.array(img.data if isinstance(img, Tensor) else img, dtype=np.float64)
    if a.ndim != 4:
        raise UsageError(f"degradation expects (B,C,H,W) images, got shape {a.shape}")
    return a


def _check_severity(severity: float, kind: str) -> float:
    s = float(severity)
    if not 0.0 <= s <= 1.0:
        raise UsageError(f"{kind} severity must lie in [0, 1], got {severity}")
    return s


@dataclass(frozen=True)
class DegradationSpec:
    """Kinds to apply, each with its own severity, and the shared seed."""

    severity: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.severity:
            raise UsageError("degradation spec needs at least one kind")
        for kind, s in self.severity.items():
            if kind not in KINDS:
                raise UsageError(f"unknown degradation kind {kind!r}; choose from {KINDS}")
            _check_severity(s, kind)

    @classmethod
    def of(cls, kinds, severity: float = 0.5, seed: int = 0) -> "DegradationSpec":
        return cls({k: float(severity) for k in kinds}, int(seed))

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(k for k in KINDS if k in self.severity)

    def to_dict(self) -> dict:
        return {"severity": dict(self.severity), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DegradationSpec":
        return cls(dict(d["severity"]), int(d.get("seed", 0)))


def depth_ramp(h: int, w: int, seed: int) -> np.ndarray:
    """Smooth depth in [0, 1]: far at the top, a seeded tilt and a gentle bump."""
    rng = _rng(seed, "haze")
    y = np.linspace(1.0, 0.0, h)[:, None]
    x = np.linspace(-1.0, 1.0, w)[None, :]
    tilt = rng.uniform(-0.25, 0.25)
    cy, cx = rng.uniform(0.2, 0.8), rng.uniform(-0.5, 0.5)
    bump = 0.15 * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / 0.2)
    d = y + tilt * x + bump
    d -= d.min()
    return d / max(d.max(), 1e-12)


def haze_beta(severity: float) -> float:
    return 0.5 + 2.0 * severity


def apply_haze(img, severity: float, seed: int = 0, depth: np.ndarray | None = None) -> Tensor:
    """``I = J t + A (1 - t)`` with ``t = exp(-beta d)``. Pass ``depth`` to
    override the synthetic ramp."""
    severity = _check_severity(severity, "haze")
    j = _array(img)
    d = depth_ramp(*j.shape[2:], seed) if depth is None else np.asarray(depth, dtype=np.float64)
    t = np.exp(-haze_beta(severity) * d)
    return Tensor(j * t + ATMOSPHERIC_LIGHT * (1.0 - t))


def streak_kernel(angle_deg: float, length: int) -> np.ndarray:
    """One-pixel-wide line, one tap per row, brightest at the leading (lower)
    end and fading toward the tail."""
    half = length // 2
    k = np.zeros((2 * half + 1, 2 * half + 1))
    slope = np.cos(np.deg2rad(angle_deg)) / np.sin(np.deg2rad(angle_deg))  # dx per row
    for i, dy in enumerate(range(-half, -half + length)):
        dx = int(np.round(dy * slope))
        k[dy + half, dx + half] = 0.4 + 0.6 * i / max(length - 1, 1)
    return k


def rain_layer(h: int, w: int, severity: float, seed: int) -> np.ndarray:
    rng = _rng(seed, "rain")
    angle = rng.uniform(*RAIN_ANGLE_RANGE)
    length = int(rng.integers(RAIN_LENGTH_RANGE[0], RAIN_LENGTH_RANGE[1] + 1))
    density = 0.01 + 0.02 * severity
    drops = (rng.random((h, w)) < density) * rng.uniform(0.6, 1.0, (h, w))
    return severity * convolve(drops, streak_kernel(angle, length), mode="constant")


def apply_rain(img, severity: float, seed: int = 0) -> Tensor:
    """Additive bright streaks: sparse seeded drops smeared by an oriented line."""
    severity = _check_severity(severity, "rain")
    j = _array(img)
    if severity == 0:
        return Tensor(j)
    layer = rain_layer(j.shape[2], j.shape[3], severity, seed)
    return Tensor(np.clip(j + layer, 0.0, 1.0))


def disc(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2 <= radius * radius).astype(np.float64)


def snow_layer(h: int, w: int, severity: float, seed: int) -> np.ndarray:
    rng = _rng(seed, "snow")
    density = 0.012 * severity
    centres = rng.random((h, w)) < density
    radius = rng.choice(SNOW_RADII, size=(h, w))
    level = rng.uniform(0.7, 1.0, (h, w))
    layer = np.zeros((h, w))
    for r in SNOW_RADII:
        layer += convolve(centres * (radius == r) * level, disc(r), mode="constant")
    return layer


def apply_snow(img, severity: float, seed: int = 0) -> Tensor:
    """Additive bright discs of radius 1 to 3 px; density scales with severity."""
    severity = _check_severity(severity, "snow")
    j = _array(img)
    if severity == 0:
        return Tensor(j)
    layer = snow_layer(j.shape[2], j.shape[3], severity, seed)
    return Tensor(np.clip(j + layer, 0.0, 1.0))


_APPLY = {"haze": apply_haze, "rain": apply_rain, "snow": apply_snow}


def apply_compound(img, spec: DegradationSpec) -> Tensor:
    """Haze first, then rain, then snow, all driven by ``spec.seed``.

    A kind listed at severity 0 is switched off. This matters for haze, whose
    single op still veils the image at severity 0.
    """
    if not isinstance(spec, DegradationSpec) or not spec.severity:
        raise UsageError("apply_compound needs a non-empty DegradationSpec")
    out = img
    for kind in spec.kinds:
        if spec.severity[kind] == 0:
            continue
        out = _APPLY[kind](out, spec.severity[kind], spec.seed)
    return Tensor(_array(out))


def synthetic_scene(h: int, w: int, seed: int) -> tuple[Tensor, Tensor]:
    """A clean RGB scene and its infrared counterpart, both (1, C, H, W).

    The scene is a sky-to-ground gradient with a few flat-shaded rectangles
    and ellipses. The IR image is blurred luminance plus warm Gaussian blobs
    centred on some of the objects.
    """
    rng = _rng(seed, "scene")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    v = yy / max(h - 1, 1)
    sky, ground = rng.uniform(0.45, 0.9, 3), rng.uniform(0.1, 0.45, 3)
    rgb = sky[:, None, None] * (1 - v) + ground[:, None, None] * v
    heat = np.zeros((h, w))
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.06, 0.25) * h, rng.uniform(0.06, 0.25) * w
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        rgb[:, mask] = rng.uniform(0.05, 0.95, 3)[:, None]
        if rng.random() < 0.6:
            heat += rng.uniform(0.4, 0.8) * np.exp(-(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2))
    rgb += rng.normal(0.0, 0.015, rgb.shape)
    rgb = np.clip(rgb, 0.0, 1.0)
    lum = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
    ir = np.clip(0.45 * gaussian_filter(lum, 1.0) + heat, 0.0, 1.0)
    return Tensor(rgb[None]), Tensor(ir[None, None])
