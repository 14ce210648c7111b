"""Triple datasets on disk: one sub-directory per pair holding
``clean_vi.png``, ``degraded_vi.png`` and ``ir.png``."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .degradation import DegradationSpec, apply_compound, synthetic_scene
from .imageio import load_png, save_png
from .tensor import Tensor

FILES = ("clean_vi.png", "degraded_vi.png", "ir.png")


@dataclass
class Triple:
    name: str
    clean_vi: Tensor
    degraded_vi: Tensor
    ir: Tensor


def pair_seed(seed: int, index: int) -> int:
    return int(np.random.default_rng([int(seed), int(index)]).integers(2 ** 31))


def make_triple(index: int, size: int, spec: DegradationSpec) -> Triple:
    s = pair_seed(spec.seed, index)
    clean, ir = synthetic_scene(size, size, s)
    deg = apply_compound(clean, DegradationSpec(dict(spec.severity), s))
    return Triple(f"pair_{index:04d}", clean, deg, ir)


def make_triples(n: int, size: int, spec: DegradationSpec) -> list[Triple]:
    return [make_triple(i, size, spec) for i in range(n)]


def write_triples(out_dir, triples: list[Triple]) -> list[Path]:
    out = Path(out_dir)
    dirs = []
    for t in triples:
        d = out / t.name
        d.mkdir(parents=True, exist_ok=True)
        for fname, img in zip(FILES, (t.clean_vi, t.degraded_vi, t.ir)):
            save_png(img, d / fname)
        dirs.append(d)
    return dirs


def load_triples(data_dir) -> list[Triple]:
    """Every sub-directory with all three files, sorted by name."""
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist")
    triples = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        paths = [d / f for f in FILES]
        missing = [p for p in paths if not p.is_file()]
        if missing:
            raise FileNotFoundError(f"{missing[0]} is missing")
        clean, deg, ir = (load_png(p) for p in paths)
        triples.append(Triple(d.name, clean, deg, ir))
    if not triples:
        raise FileNotFoundError(f"no image triples under {root}")
    return triples
