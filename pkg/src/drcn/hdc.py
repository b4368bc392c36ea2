"""Hybrid dilated convolution checks and receptive-field arithmetic."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DilationPattern:
    rates: tuple[int, ...]
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(int(r) for r in self.rates))
        if not self.rates:
            raise ValueError("dilation pattern needs at least one rate")
        if any(r < 1 for r in self.rates):
            raise ValueError(f"dilation rates must be >= 1, got {list(self.rates)}")
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and >= 3, got {self.kernel}")


@dataclass(frozen=True)
class HdcReport:
    gaps: tuple[int, ...]
    valid: bool
    failing_index: int | None = None

    @property
    def checked_gap(self) -> int:
        """M_2 for patterns of two or more layers, else M_1."""
        return self.gaps[1] if len(self.gaps) >= 2 else self.gaps[0]


def _pattern(pattern, kernel):
    if isinstance(pattern, DilationPattern):
        return pattern
    return DilationPattern(tuple(pattern), kernel)


def hdc_max_gap(pattern, kernel: int = 3) -> list[int]:
    """Maximum distance between nonzero taps, M_1..M_n, computed top-down.

    M_n = r_n and M_i = max(M_{i+1} - 2 r_i, 2 r_i - M_{i+1}, r_i).
    """
    pat = _pattern(pattern, kernel)
    rates = pat.rates
    gaps = [0] * len(rates)
    gaps[-1] = rates[-1]
    for i in range(len(rates) - 2, -1, -1):
        nxt, r = gaps[i + 1], rates[i]
        gaps[i] = max(nxt - 2 * r, 2 * r - nxt, r)
    return gaps


def hdc_validate(pattern, kernel: int = 3) -> HdcReport:
    """Valid when M_2 <= K (for a single layer, when r_1 <= K)."""
    pat = _pattern(pattern, kernel)
    gaps = tuple(hdc_max_gap(pat))
    idx = 1 if len(gaps) >= 2 else 0
    ok = gaps[idx] <= pat.kernel
    return HdcReport(gaps, ok, None if ok else idx)


def receptive_field(layers) -> int:
    """Side of the input square seen by one output pixel of a stride-1 stack.

    ``layers`` is a sequence of (kernel, dilation) pairs.
    """
    layers = list(layers)
    if not layers:
        raise ValueError("receptive field of an empty stack is undefined")
    rf = 1
    for k, r in layers:
        if k < 1 or k % 2 == 0 or r < 1:
            raise ValueError(f"bad layer (kernel={k}, dilation={r})")
        rf += (k - 1) * r
    return rf
