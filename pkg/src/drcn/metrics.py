"""PSNR on the 8-bit grid."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import quantize
from .errors import ShapeError


@dataclass(frozen=True)
class PsnrResult:
    psnr_db: float
    mse: float
    peak: float = 255.0


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b, peak: float = 255.0) -> PsnrResult:
    """PSNR of two [0, 1] images after quantizing both to 8 bits.

    Identical images give ``math.inf``.
    """
    err = mse(quantize(a), quantize(b))
    if err == 0.0:
        return PsnrResult(math.inf, 0.0, peak)
    return PsnrResult(10.0 * math.log10(peak * peak / err), err, peak)


def mean_psnr(values) -> float:
    """Dataset PSNR: arithmetic mean of per-image values, not pooled MSE."""
    values = [v.psnr_db if isinstance(v, PsnrResult) else float(v) for v in values]
    if not values:
        raise ValueError("no PSNR values to average")
    return float(np.mean(values))
