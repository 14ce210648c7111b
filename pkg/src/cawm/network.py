"""Wavelet state-space blocks, the U-Net backbone and checkpoint I/O."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .blocks import CDSM, CFIM, EMBED_DIM, WAPM, ChannelAttention, WeatherEmbedding, WeatherGate
from .errors import CheckpointMismatchError, ConfigurationError, CorruptCheckpointError
from .nn import Conv2d, ConvTranspose2x2, LayerNorm, Module, Scale
from .ssm import SelectiveSSM, freq_scan, scan_2d_regular
from .tensor import Tensor, getitem, pad, sigmoid
from .wavelet import WaveletPack, dwt2, idwt2

ATTN_REDUCTION = 4


@dataclass
class NetConfig:
    block_counts: list[int] = field(default_factory=lambda: [1, 1, 1])
    base_channels: int = 8
    channel_schedule: list[int] = field(default_factory=lambda: [8, 16, 8])
    ssm_state_dim: int = 2
    cdsm_depth: int = 3
    embed_dim: int = EMBED_DIM

    @classmethod
    def tiny(cls) -> "NetConfig":
        return cls()

    @classmethod
    def paper(cls) -> "NetConfig":
        return cls(block_counts=[8, 10, 10, 12, 10, 10, 8], base_channels=48,
                   channel_schedule=[48, 96, 192, 384, 192, 96, 48], ssm_state_dim=16)

    @classmethod
    def preset(cls, name: str) -> "NetConfig":
        presets = {"tiny": cls.tiny, "paper": cls.paper}
        if name not in presets:
            raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(presets)}")
        return presets[name]()

    @property
    def levels(self) -> int:
        return len(self.block_counts)

    @property
    def depth(self) -> int:
        """Number of down-sampling steps."""
        return self.levels // 2

    @property
    def size_multiple(self) -> int:
        # every level below the deepest still has to split once more in its DWT
        return 2 ** (self.depth + 1)

    def validate(self) -> None:
        counts, chans = self.block_counts, self.channel_schedule
        if len(counts) % 2 == 0 or not counts:
            raise ConfigurationError(f"block_counts must have odd length, got {counts}")
        if any(c < 1 for c in counts):
            raise ConfigurationError(f"block_counts must be positive, got {counts}")
        if len(chans) != len(counts):
            raise ConfigurationError("channel_schedule and block_counts differ in length")
        if chans != chans[::-1]:
            raise ConfigurationError(f"channel_schedule must be symmetric, got {chans}")
        mid = len(chans) // 2
        if any(chans[i] > chans[i + 1] for i in range(mid)):
            raise ConfigurationError(f"channel_schedule must rise to its peak, got {chans}")
        if chans[0] != self.base_channels:
            raise ConfigurationError(
                f"channel_schedule[0]={chans[0]} must equal base_channels={self.base_channels}")
        if any(c % ATTN_REDUCTION for c in chans):
            raise ConfigurationError(f"channel widths must be multiples of {ATTN_REDUCTION}")
        if self.ssm_state_dim < 1 or self.cdsm_depth < 1:
            raise ConfigurationError("ssm_state_dim and cdsm_depth must be >= 1")
        if self.embed_dim != EMBED_DIM:
            raise ConfigurationError(f"embed_dim is fixed at {EMBED_DIM}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown NetConfig key {sorted(unknown)[0]!r}")
        return cls(**d)


class HighBandBranch(Module):
    """Freq-aligned scan with its own SSM, then conv refinement and channel attention."""

    def __init__(self, subband: str, channels: int, state_dim: int, rng: np.random.Generator):
        super().__init__()
        self.subband = subband
        self.norm_in = LayerNorm(channels)
        self.ssm = SelectiveSSM(channels, state_dim, rng)
        self.skip_scan = Scale(1.0)
        self.norm_mid = LayerNorm(channels)
        self.conv = Conv2d(channels, channels, 3, rng)
        self.skip_res = Scale(1.0)
        self.attn = ChannelAttention(channels, ATTN_REDUCTION, rng)

    def forward(self, band: Tensor) -> Tensor:
        f = self.norm_in(band)
        attn = self.skip_scan(f) + freq_scan(f, self.subband, self.ssm)
        return self.attn(self.conv(self.norm_mid(attn)) + self.skip_res(attn))


class WSSB(Module):
    """DWT -> per-band state-space scans -> IDWT -> CDSM -> weather gate."""

    def __init__(self, channels: int, state_dim: int, rng: np.random.Generator,
                 cdsm_depth: int = 3, embed_dim: int = EMBED_DIM):
        super().__init__()
        self.norm_ll = LayerNorm(channels)
        self.ssm_ll = SelectiveSSM(channels, state_dim, rng)
        self.skip_ll = Scale(1.0)
        self.lh = HighBandBranch("lh", channels, state_dim, rng)
        self.hl = HighBandBranch("hl", channels, state_dim, rng)
        self.hh = HighBandBranch("hh", channels, state_dim, rng)
        self.cdsm = CDSM(channels, rng, depth=cdsm_depth, reduction=ATTN_REDUCTION)
        self.gate = WeatherGate(channels, rng, embed_dim)

    def forward(self, x: Tensor, emb: WeatherEmbedding) -> Tensor:
        p = dwt2(x)
        f_ll = self.norm_ll(p.ll)
        ll = self.skip_ll(f_ll) + scan_2d_regular(f_ll, self.ssm_ll)
        out = idwt2(WaveletPack(ll, self.lh(p.lh), self.hl(p.hl), self.hh(p.hh), p.original_hw))
        return self.gate(self.cdsm(out), emb)


def wssb_forward(x: Tensor, emb: WeatherEmbedding, params: WSSB) -> Tensor:
    return params(x, emb)


class CAWMNet(Module):
    """WAPM -> CFIM -> U-Net of WSSBs -> sigmoid RGB head."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        chans = cfg.channel_schedule
        self.wapm = WAPM(rng, channels=cfg.embed_dim, embed_dim=cfg.embed_dim)
        self.ir_lift = Conv2d(1, 3, 1, rng)
        self.cfim = CFIM(3, cfg.base_channels, rng)
        self.stages = [Stage(chans[i], cfg.block_counts[i], cfg, rng) for i in range(cfg.levels)]
        self.downs = [Downsample(chans[i], chans[i + 1], rng) for i in range(cfg.depth)]
        self.ups = [ConvTranspose2x2(chans[i - 1], chans[i], rng)
                    for i in range(cfg.depth + 1, cfg.levels)]
        self.head = Conv2d(chans[-1], 3, 3, rng)

    def forward(self, vi: Tensor, ir: Tensor) -> Tensor:
        if vi.ndim != 4 or vi.shape[1] != 3 or ir.ndim != 4 or ir.shape[1] != 1:
            raise ConfigurationError(f"expected (B,3,H,W) and (B,1,H,W), got {vi.shape}, {ir.shape}")
        if vi.shape[0] != ir.shape[0] or vi.shape[2:] != ir.shape[2:]:
            raise ConfigurationError(f"visible {vi.shape} and infrared {ir.shape} disagree")
        h, w = vi.shape[2:]
        if h == 0 or w == 0:
            raise ConfigurationError("zero-sized input")
        m = self.cfg.size_multiple
        ph, pw = (-h) % m, (-w) % m
        if ph or pw:
            mode = "reflect" if ph < h and pw < w else "edge"
            vi, ir = pad(vi, (0, ph, 0, pw), mode), pad(ir, (0, ph, 0, pw), mode)

        wap = self.wapm(vi)
        emb = wap.embedding
        x = self.cfim(self.ir_lift(ir), wap.vi_out).fused
        skips = []
        for i in range(self.cfg.depth):
            x = self.stages[i](x, emb)
            skips.append(x)
            x = self.downs[i](x)
        x = self.stages[self.cfg.depth](x, emb)
        for j, up in enumerate(self.ups):
            x = up(x) + skips.pop()
            x = self.stages[self.cfg.depth + 1 + j](x, emb)
        out = sigmoid(self.head(x))
        if ph or pw:
            out = getitem(out, (Ellipsis, slice(0, h), slice(0, w)))
        return out


class Downsample(Module):
    """3x3 stride-2 conv; one row/column of zeros on top/left halves even sizes exactly."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(cin, cout, 3, rng, stride=2, padding=0)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(pad(x, (1, 0, 1, 0)))


class Stage(Module):
    def __init__(self, channels: int, count: int, cfg: NetConfig, rng: np.random.Generator):
        super().__init__()
        self.blocks = [WSSB(channels, cfg.ssm_state_dim, rng, cfg.cdsm_depth, cfg.embed_dim)
                       for _ in range(count)]

    def forward(self, x: Tensor, emb: WeatherEmbedding) -> Tensor:
        for blk in self.blocks:
            x = blk(x, emb)
        return x


def cawm_forward(vi_degraded: Tensor, ir: Tensor, params: CAWMNet) -> Tensor:
    return params(vi_degraded, ir)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
#
# layout (little-endian):
#   b"CAWM1" | u32 len | config JSON | f64 alpha | u32 count |
#   count x ( u16 len | name | u8 ndim | ndim x u32 | float32 data )

MAGIC = b"CAWM1"


def save_checkpoint(path, params: dict[str, Tensor], cfg: NetConfig, alpha: float) -> None:
    chunks = [MAGIC]
    cfg_bytes = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    chunks += [struct.pack("<I", len(cfg_bytes)), cfg_bytes]
    chunks.append(struct.pack("<d", float(alpha)))
    chunks.append(struct.pack("<I", len(params)))
    for name, t in params.items():
        data = np.ascontiguousarray(t.data if isinstance(t, Tensor) else t, dtype="<f4")
        nb = name.encode()
        chunks += [struct.pack("<H", len(nb)), nb, struct.pack("<B", data.ndim),
                   struct.pack(f"<{data.ndim}I", *data.shape), data.tobytes()]
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError(f"truncated checkpoint while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], NetConfig, float]:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CorruptCheckpointError(f"bad magic {magic!r} (expected {MAGIC!r})")
    (n,) = r.unpack("<I", "config length")
    try:
        cfg = NetConfig.from_dict(json.loads(r.take(n, "config").decode()))
    except (ValueError, TypeError, ConfigurationError) as exc:
        raise CorruptCheckpointError(f"unreadable embedded config: {exc}") from None
    (alpha,) = r.unpack("<d", "alpha")
    (count,) = r.unpack("<I", "entry count")
    params: dict[str, np.ndarray] = {}
    name = "<entry 0>"
    for k in range(count):
        name = f"<entry {k}>"
        (nlen,) = r.unpack("<H", f"name length of {name}")
        name = r.take(nlen, f"name of {name}").decode(errors="replace")
        (ndim,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}")
        size = int(np.prod(shape, dtype=np.int64))
        raw = r.take(4 * size, f"data of {name}")
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.buf):
        raise CorruptCheckpointError(f"{len(r.buf) - r.pos} trailing bytes after {name}")
    return params, cfg, float(alpha)


def load_model(path) -> tuple[CAWMNet, float]:
    """Rebuild a :class:`CAWMNet` from a checkpoint and return it with alpha."""
    params, cfg, alpha = load_checkpoint(path)
    net = CAWMNet(cfg)
    store = net.param_store()
    for name, p in store.items():
        if name not in params:
            raise CheckpointMismatchError(f"checkpoint lacks parameter {name!r}")
        if params[name].shape != p.shape:
            raise CheckpointMismatchError(
                f"parameter {name!r} has shape {params[name].shape}, expected {p.shape}")
        p.data = params[name].copy()
    extra = set(params) - set(store)
    if extra:
        raise CheckpointMismatchError(f"unexpected parameter {sorted(extra)[0]!r} in checkpoint")
    return net, alpha
