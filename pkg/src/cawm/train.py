"""Run configuration and the training loop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Triple, load_triples, make_triples
from .degradation import KINDS, DegradationSpec
from .errors import CawmError, ConfigFileError
from .imageio import quantize
from .losses import LossReport, total_loss
from .network import CAWMNet, NetConfig, save_checkpoint
from .optim import AdamState, adam_step
from .tensor import Tensor, getitem

ALPHA_INIT = 0.5
CHECKPOINT_NAME = "checkpoint.cawm"
LOG_NAME = "train_log.jsonl"


@dataclass
class RunConfig:
    """Everything that determines a training run.

    ``crop_schedule`` is a list of ``(from_step, crop_size)``; the crop used at
    step ``s`` (1-based) is the one with the largest ``from_step <= s``. When
    ``data_dir`` is unset, ``n_pairs`` synthetic pairs of ``image_size`` are
    generated from ``kinds``/``severity``/``seed``.
    """

    preset: str = "tiny"
    seed: int = 0
    lr: float = 1e-4
    steps: int = 300
    crop_schedule: list[tuple[int, int]] = field(default_factory=lambda: [(1, 32)])
    data_dir: str | None = None
    out_dir: str = "run"
    kinds: list[str] = field(default_factory=lambda: ["haze", "rain"])
    severity: float = 0.5
    n_pairs: int = 1
    image_size: int = 32

    def validate(self) -> None:
        if self.preset not in ("tiny", "paper"):
            raise ConfigFileError(f"preset must be 'tiny' or 'paper', got {self.preset!r}", "preset")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigFileError(f"seed must be an integer, got {self.seed!r}", "seed")
        if not (isinstance(self.lr, (int, float)) and math.isfinite(self.lr) and self.lr > 0):
            raise ConfigFileError(f"lr must be a positive number, got {self.lr!r}", "lr")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigFileError(f"steps must be a positive integer, got {self.steps!r}", "steps")
        if not self.crop_schedule:
            raise ConfigFileError("crop_schedule must not be empty", "crop_schedule")
        for entry in self.crop_schedule:
            try:
                start, size = entry
            except (TypeError, ValueError):
                raise ConfigFileError(f"crop_schedule entry {entry!r} is not a pair",
                                      "crop_schedule") from None
            if not (isinstance(start, int) and isinstance(size, int)) or size < 16 or size % 2:
                raise ConfigFileError(
                    f"crop sizes must be even integers >= 16, got {entry!r}", "crop_schedule")
        bad = [k for k in self.kinds if k not in KINDS]
        if not self.kinds or bad:
            raise ConfigFileError(f"kinds must be a non-empty subset of {KINDS}, got {self.kinds!r}",
                                  "kinds")
        if not (isinstance(self.severity, (int, float)) and 0 <= self.severity <= 1):
            raise ConfigFileError(f"severity must lie in [0, 1], got {self.severity!r}", "severity")
        if not isinstance(self.n_pairs, int) or self.n_pairs < 1:
            raise ConfigFileError(f"n_pairs must be a positive integer, got {self.n_pairs!r}",
                                  "n_pairs")
        if not isinstance(self.image_size, int) or self.image_size < 16 or self.image_size % 2:
            raise ConfigFileError(f"image_size must be an even integer >= 16, got "
                                  f"{self.image_size!r}", "image_size")

    @property
    def degradation(self) -> DegradationSpec:
        return DegradationSpec.of(self.kinds, self.severity, self.seed)

    def crop_at(self, step: int) -> int:
        size = self.crop_schedule[0][1]
        for start, s in sorted(self.crop_schedule):
            if start <= step:
                size = s
        return size

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["crop_schedule"] = [list(e) for e in self.crop_schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigFileError("config must be a flat key/value object")
        known = set(cls.__dataclass_fields__)
        for key in d:
            if key not in known:
                raise ConfigFileError(f"unknown config key {key!r}", key)
        cfg = cls(**d)
        cfg.crop_schedule = [tuple(e) if isinstance(e, (list, tuple)) else e
                             for e in cfg.crop_schedule]
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file {path} does not exist")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigFileError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(d)


@dataclass
class TrainResult:
    net: CAWMNet
    alpha: float
    records: list[dict]
    checkpoint: Path | None


def _as_f32(t: Tensor) -> Tensor:
    return Tensor(np.asarray(t.data, dtype=np.float32))


def _quantized(t: Tensor) -> Tensor:
    # the in-memory path sees exactly what a PNG round trip would give
    return Tensor(quantize(t.data).astype(np.float32) / np.float32(255.0))


def training_pairs(cfg: RunConfig) -> list[Triple]:
    if cfg.data_dir is not None:
        triples = load_triples(cfg.data_dir)
    else:
        triples = [Triple(t.name, _quantized(t.clean_vi), _quantized(t.degraded_vi), _quantized(t.ir))
                   for t in make_triples(cfg.n_pairs, cfg.image_size, cfg.degradation)]
    return [Triple(t.name, _as_f32(t.clean_vi), _as_f32(t.degraded_vi), _as_f32(t.ir))
            for t in triples]


def _crop(t: Triple, size: int, rng: np.random.Generator) -> Triple:
    h, w = t.clean_vi.shape[2:]
    ch, cw = min(size, h), min(size, w)
    y = int(rng.integers(0, h - ch + 1))
    x = int(rng.integers(0, w - cw + 1))
    idx = (Ellipsis, slice(y, y + ch), slice(x, x + cw))
    return Triple(t.name, getitem(t.clean_vi, idx), getitem(t.degraded_vi, idx), getitem(t.ir, idx))


def record(step: int, report: LossReport, alpha_grad: float) -> dict:
    return {"step": step, **report.to_dict(), "alpha_grad": alpha_grad}


def train(cfg: RunConfig, pairs: list[Triple] | None = None, *, write: bool = True,
          on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """forward -> total loss -> backward -> Adam, one pair per step.

    Writes ``train_log.jsonl`` (one JSON record per step) and the final
    checkpoint into ``cfg.out_dir`` when ``write`` is set.
    """
    cfg.validate()
    pairs = training_pairs(cfg) if pairs is None else pairs
    net = CAWMNet(NetConfig.preset(cfg.preset), seed=cfg.seed)
    alpha = Tensor(np.array([ALPHA_INIT], dtype=np.float32), requires_grad=True, name="alpha")
    params = dict(net.param_store())
    params["alpha"] = alpha
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 7])
    out = Path(cfg.out_dir)
    log = None
    if write:
        out.mkdir(parents=True, exist_ok=True)
        log = (out / LOG_NAME).open("w")
    records = []
    try:
        for step in range(1, cfg.steps + 1):
            pair = _crop(pairs[int(rng.integers(len(pairs)))], cfg.crop_at(step), rng)
            fused = net(pair.degraded_vi, pair.ir)
            loss, report = total_loss(fused, pair.clean_vi, pair.ir, alpha)
            loss.backward()
            rec = record(step, report, float(alpha.grad.reshape(-1)[0]))
            if not math.isfinite(rec["total"]):
                raise CawmError(f"non-finite loss at step {step}")
            adam_step(params, state)
            records.append(rec)
            if log is not None:
                log.write(json.dumps(rec) + "\n")
            if on_step is not None:
                on_step(rec)
    finally:
        if log is not None:
            log.close()
    ckpt = None
    alpha_value = float(alpha.data.reshape(-1)[0])
    if write:
        ckpt = out / CHECKPOINT_NAME
        save_checkpoint(ckpt, net.param_store(), net.cfg, alpha_value)
    return TrainResult(net, alpha_value, records, ckpt)


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
