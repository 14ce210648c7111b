"""Weather-aware preprocessing, cross-modal interaction, channel attention,
the common-degradation residual stack and the weather-conditioned gate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .nn import Conv2d, Linear, Module, avg_pool_channelwise, global_avg_pool, global_max_pool, \
    max_pool_channelwise
from .tensor import Tensor, concat, relu, reshape, sigmoid, softmax

EMBED_DIM = 48


@dataclass
class WeatherEmbedding:
    vec: Tensor  # (B, 48)


@dataclass
class WapmOutput:
    vi_out: Tensor
    embedding: WeatherEmbedding
    attention: Tensor  # (B, C, 1, 1) channel weights applied to the features


@dataclass
class CfimOutput:
    fused: Tensor
    spatial_attention: tuple[Tensor, Tensor]   # (A_vi^ap, A_ir^mp), each (B,1,H,W)
    channel_attention: tuple[Tensor, Tensor]   # (A_ir^gmp, A_vi^gmp), each (B,C/2,1,1)


class ChannelAttention(Module):
    """Squeeze-and-excitation gate: GAP -> 1x1 -> ReLU -> 1x1 -> Sigmoid."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ConfigurationError(
                f"channel attention: {channels} channels not divisible by reduction {reduction}")
        hidden = channels // reduction
        self.squeeze = Conv2d(channels, hidden, 1, rng)
        self.excite = Conv2d(hidden, channels, 1, rng)

    def weights(self, x: Tensor) -> Tensor:
        return sigmoid(self.excite(relu(self.squeeze(global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        return x * self.weights(x)


def channel_attention(x: Tensor, params: ChannelAttention) -> Tensor:
    return params(x)


class WAPM(Module):
    """Two conv+ReLU layers, channel re-weighting, a 1x1 head back to RGB and
    a pooled two-layer projection to the weather embedding."""

    def __init__(self, rng: np.random.Generator, channels: int = EMBED_DIM,
                 embed_dim: int = EMBED_DIM, reduction: int = 4):
        super().__init__()
        self.conv1 = Conv2d(3, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        self.attn = ChannelAttention(channels, reduction, rng)
        self.to_rgb = Conv2d(channels, 3, 1, rng)
        self.embed1 = Conv2d(channels, embed_dim, 1, rng)
        self.embed2 = Conv2d(embed_dim, embed_dim, 1, rng)
        self.embed_dim = embed_dim

    def forward(self, vi: Tensor) -> WapmOutput:
        if vi.ndim != 4 or vi.shape[1] != 3:
            raise ConfigurationError(f"WAPM expects (B,3,H,W) input, got {vi.shape}")
        feat = relu(self.conv2(relu(self.conv1(vi))))
        atten = self.attn.weights(feat)
        enhanced = feat * atten
        emb = self.embed2(relu(self.embed1(global_avg_pool(enhanced))))
        vec = reshape(emb, (vi.shape[0], self.embed_dim))
        return WapmOutput(self.to_rgb(enhanced), WeatherEmbedding(vec), atten)


def wapm_forward(vi: Tensor, params: WAPM) -> WapmOutput:
    return params(vi)


class CFIM(Module):
    """Cross-gated IR/VI interaction.

    ``width`` is the channel count after the per-modality 1x1 convs; each
    modality contributes ``width // 2`` output channels, so the concatenated
    result has ``width`` channels.
    """

    def __init__(self, in_channels: int, width: int, rng: np.random.Generator):
        super().__init__()
        if width % 2:
            raise ConfigurationError(f"CFIM width must be even to split in halves, got {width}")
        half = width // 2
        self.half = half
        self.ir_in = Conv2d(in_channels, width, 1, rng)
        self.vi_in = Conv2d(in_channels, width, 1, rng)
        self.ir_to_vi = Conv2d(1, 1, 7, rng)    # saliency of P_ir^mp gates VI
        self.vi_to_ir = Conv2d(1, 1, 7, rng)    # texture of P_vi^ap gates IR
        self.ir_global = Conv2d(half, half, 1, rng)
        self.vi_global = Conv2d(half, half, 1, rng)

    def forward(self, ir: Tensor, vi: Tensor) -> CfimOutput:
        if ir.shape != vi.shape:
            raise ConfigurationError(f"CFIM inputs differ in shape: {ir.shape} vs {vi.shape}")
        f_ir = self.ir_in(ir)
        f_vi = self.vi_in(vi)
        h = self.half
        ir_mp, ir_gmp = f_ir[:, :h], f_ir[:, h:]
        vi_ap, vi_gap = f_vi[:, :h], f_vi[:, h:]

        a_vi_ap = softmax(relu(self.ir_to_vi(max_pool_channelwise(ir_mp))), axis=(2, 3))
        a_ir_mp = softmax(relu(self.vi_to_ir(avg_pool_channelwise(vi_ap))), axis=(2, 3))
        a_ir_gmp = softmax(relu(self.ir_global(global_max_pool(ir_gmp))), axis=1)
        a_vi_gmp = softmax(relu(self.vi_global(global_avg_pool(vi_gap))), axis=1)

        ir_out = (a_ir_mp * ir_mp) * a_ir_gmp
        vi_out = (a_vi_ap * vi_ap) * a_vi_gmp
        return CfimOutput(concat([ir_out, vi_out], axis=1), (a_vi_ap, a_ir_mp), (a_ir_gmp, a_vi_gmp))


def cfim_forward(ir: Tensor, vi: Tensor, params: CFIM) -> CfimOutput:
    return params(ir, vi)


class ResidualUnit(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(relu(self.conv1(x))) + x


class CDSM(Module):
    """Conv, ``depth`` residual units, conv, channel attention, global residual."""

    def __init__(self, channels: int, rng: np.random.Generator, depth: int = 3, reduction: int = 4):
        super().__init__()
        if depth < 1:
            raise ConfigurationError(f"CDSM depth must be >= 1, got {depth}")
        self.conv_in = Conv2d(channels, channels, 3, rng)
        self.units = [ResidualUnit(channels, rng) for _ in range(depth)]
        self.conv_mid = Conv2d(channels, channels, 3, rng)
        self.attn = ChannelAttention(channels, reduction, rng)

    def forward(self, a: Tensor) -> Tensor:
        x = self.conv_in(a)
        for unit in self.units:
            x = unit(x)
        mid = self.conv_mid(x)
        return self.attn(mid) + a

    def zero_(self) -> "CDSM":
        for p in self.parameters():
            p.data[...] = 0
        return self


def cdsm_forward(a: Tensor, params: CDSM) -> Tensor:
    return params(a)


class WeatherGate(Module):
    """Channel calibration from pooled features and the projected embedding."""

    def __init__(self, channels: int, rng: np.random.Generator, embed_dim: int = EMBED_DIM):
        super().__init__()
        self.embed_dim = embed_dim
        self.embed_proj = Linear(embed_dim, channels, rng)
        self.fc1 = Linear(2 * channels, channels, rng)
        self.fc2 = Linear(channels, channels, rng)

    def weights(self, x: Tensor, emb: WeatherEmbedding) -> Tensor:
        vec = emb.vec if isinstance(emb, WeatherEmbedding) else emb
        if vec.ndim != 2 or vec.shape[1] != self.embed_dim:
            raise ConfigurationError(
                f"weather embedding must be (B,{self.embed_dim}), got {vec.shape}")
        b, c = x.shape[:2]
        pooled = reshape(global_avg_pool(x), (b, c))
        desc = concat([pooled, self.embed_proj(vec)], axis=1)
        return sigmoid(self.fc2(relu(self.fc1(desc))))

    def forward(self, x: Tensor, emb: WeatherEmbedding) -> Tensor:
        b, c = x.shape[:2]
        return x * reshape(self.weights(x, emb), (b, c, 1, 1))


def weather_gate(x_refined: Tensor, emb: WeatherEmbedding, params: WeatherGate) -> Tensor:
    return params(x_refined, emb)
