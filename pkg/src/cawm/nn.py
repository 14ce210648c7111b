"""Convolution, pooling, normalisation and a small module system."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError
from .tensor import Tensor, _make, amax, mean, reshape, sqrt, tsum

# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    span = n + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"conv does not tile: size {n}, kernel {k}, stride {stride}, padding {padding}")
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` (B,Cin,H,W) with ``w`` (Cout,Cin,k,k)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ConfigurationError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    bsz, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise ConfigurationError(f"conv2d channel mismatch: input {cin}, weight {wcin}")
    if kh != kw:
        raise ConfigurationError(f"conv2d needs square kernels, got {kh}x{kw}")
    if padding < 0 or stride < 1:
        raise ConfigurationError(f"bad stride/padding {stride}/{padding}")
    if b is not None and b.shape != (cout,):
        raise ConfigurationError(f"bias shape {b.shape} != ({cout},)")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # win: (B, Cin, Ho, Wo, k, k)
    out = np.tensordot(win, w.data, axes=((1, 4, 5), (1, 2, 3)))  # (B, Ho, Wo, Cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)

    def back(g):
        gw = np.tensordot(g, win, axes=((0, 2, 3), (0, 2, 3)))  # (Cout, Cin, k, k)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.einsum("bohw,oc->bchw", g, w.data[:, :, i, j], optimize=True)
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib
        gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, back)


def conv_transpose2x2(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-2, kernel-2 transposed convolution; ``w`` is (Cin,Cout,2,2)."""
    bsz, cin, h, wd = x.shape
    if w.shape[0] != cin or w.shape[2:] != (2, 2):
        raise ConfigurationError(f"transposed conv weight {w.shape} incompatible with {x.shape}")
    cout = w.shape[1]
    out = np.einsum("bchw,cdij->bdhiwj", x.data, w.data, optimize=True).reshape(bsz, cout, 2 * h, 2 * wd)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)

    def back(g):
        g6 = g.reshape(bsz, cout, h, 2, wd, 2)
        gx = np.einsum("bdhiwj,cdij->bchw", g6, w.data, optimize=True)
        gw = np.einsum("bchw,bdhiwj->cdij", x.data, g6, optimize=True)
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, back)


# ---------------------------------------------------------------------------
# pooling and normalisation
# ---------------------------------------------------------------------------

def _check_nonempty(x: Tensor):
    if x.size == 0:
        raise ConfigurationError(f"empty tensor {x.shape}")


def max_pool_channelwise(x: Tensor) -> Tensor:
    _check_nonempty(x)
    return amax(x, axis=1, keepdims=True)


def avg_pool_channelwise(x: Tensor) -> Tensor:
    _check_nonempty(x)
    return mean(x, axis=1, keepdims=True)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_nonempty(x)
    return mean(x, axis=(2, 3), keepdims=True)


def global_max_pool(x: Tensor) -> Tensor:
    _check_nonempty(x)
    b, c, h, w = x.shape
    return reshape(amax(reshape(x, (b, c, h * w)), axis=2), (b, c, 1, 1))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the channel axis at every spatial location."""
    c = x.shape[1]
    if c == 0:
        raise ConfigurationError("layer_norm over zero channels")
    mu = mean(x, axis=1, keepdims=True)
    centred = x - mu
    var = mean(centred * centred, axis=1, keepdims=True)
    xhat = centred / sqrt(var + eps)
    shape = (1, c) + (1,) * (x.ndim - 2)
    return xhat * reshape(gamma, shape) + reshape(beta, shape)


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------

class Module:
    """Attribute-registered parameters and children, in insertion order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._children[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_store(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (used to run 64-bit gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(data, name=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True, name=name)


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)); keeps activations from growing
    through stacks of convs that are not followed by a ReLU."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = param(fan_in_uniform(rng, (cout, cin, k, k), cin * k * k))
        self.bias = param(fan_in_uniform(rng, cout, cin * k * k)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2x2(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.weight = param(fan_in_uniform(rng, (cin, cout, 2, 2), cout * 4))
        self.bias = param(fan_in_uniform(rng, cout, cout * 4))

    def forward(self, x: Tensor) -> Tensor:
        return conv_transpose2x2(x, self.weight, self.bias)


class Linear(Module):
    """``y = x @ W^T + b`` over the last axis."""

    def __init__(self, fin: int, fout: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = param(fan_in_uniform(rng, (fout, fin), fin))
        self.bias = param(fan_in_uniform(rng, fout, fin)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight.transpose()
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, c: int):
        super().__init__()
        self.gamma = param(np.ones(c))
        self.beta = param(np.zeros(c))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class Scale(Module):
    """A single learnable scalar multiplier."""

    def __init__(self, init: float = 1.0):
        super().__init__()
        self.value = param(np.array([init]))

    def forward(self, x: Tensor) -> Tensor:
        return x * reshape(self.value, (1,) * x.ndim)


__all__ = [
    "Conv2d", "ConvTranspose2x2", "LayerNorm", "Linear", "Module", "Scale",
    "avg_pool_channelwise", "conv2d", "conv_output_size", "conv_transpose2x2",
    "global_avg_pool", "global_max_pool", "fan_in_uniform", "layer_norm",
    "max_pool_channelwise", "param", "tsum",
]
