"""Rank-4 tensors and the reference convolution.

Tensors are plain ``numpy.ndarray`` values of dtype float64 laid out as
(batch, channel, height, width) in C order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

DTYPE = np.float64


def tensor_create(shape, fill=0.0) -> np.ndarray:
    """Build an (n, c, h, w) float64 tensor from a scalar or a flat value list."""
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4 or any(d < 1 for d in shape):
        raise ShapeError(f"tensor shape must be 4 positive dims, got {shape}")
    if np.isscalar(fill):
        return np.full(shape, fill, dtype=DTYPE)
    values = np.asarray(fill, dtype=DTYPE).ravel()
    if values.size != int(np.prod(shape)):
        raise ShapeError(f"{values.size} values do not fill shape {shape}")
    return values.reshape(shape).copy()


def as_tensor4(x, name="input") -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n, c, h, w), got shape {x.shape}")
    return x


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    dilation: int = 1
    padding: int | None = None

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel size must be odd and positive, got {self.kernel}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        if self.padding is None:
            object.__setattr__(self, "padding", self.same_padding)
        if self.padding < 0:
            raise ConfigError("padding must be nonnegative")

    @property
    def same_padding(self) -> int:
        return self.dilation * (self.kernel - 1) // 2

    @property
    def span(self) -> int:
        """Side length of the dilated kernel footprint."""
        return self.dilation * (self.kernel - 1) + 1

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        return h + 2 * self.padding - self.span + 1, w + 2 * self.padding - self.span + 1

    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)


def check_conv_args(x, weights, bias, spec: ConvSpec):
    x = as_tensor4(x)
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, conv expects {spec.in_channels}")
    if tuple(weights.shape) != spec.weight_shape():
        raise ShapeError(f"weight shape {tuple(weights.shape)} != {spec.weight_shape()}")
    if np.shape(bias) != (spec.out_channels,):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({spec.out_channels},)")
    ho, wo = spec.output_size(x.shape[2], x.shape[3])
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} too small for kernel span {spec.span}")
    return x, ho, wo


def conv2d_naive(x, weights, bias, spec: ConvSpec) -> np.ndarray:
    """Direct-loop dilated convolution with zero padding.

    Deliberately scalar and slow: this is the oracle the im2col path is
    checked against.
    """
    x, ho, wo = check_conv_args(x, weights, bias, spec)
    n, c_in, h, w = x.shape
    p, r, k = spec.padding, spec.dilation, spec.kernel
    out = np.empty((n, spec.out_channels, ho, wo), dtype=DTYPE)
    for b in range(n):
        for o in range(spec.out_channels):
            for i in range(ho):
                for j in range(wo):
                    acc = float(bias[o])
                    for c in range(c_in):
                        for u in range(k):
                            row = i + r * u - p
                            if row < 0 or row >= h:
                                continue
                            for v in range(k):
                                col = j + r * v - p
                                if 0 <= col < w:
                                    acc += x[b, c, row, col] * weights[o, c, u, v]
                    out[b, o, i, j] = acc
    return out


def dilate_kernel(weights: np.ndarray, dilation: int) -> np.ndarray:
    """Expand a (o, c, K, K) kernel to its dense (r(K-1)+1)^2 footprint with zeros between taps."""
    o, c, k, _ = weights.shape
    span = dilation * (k - 1) + 1
    dense = np.zeros((o, c, span, span), dtype=weights.dtype)
    dense[:, :, ::dilation, ::dilation] = weights
    return dense
