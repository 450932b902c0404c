"""Software emulation of IEEE binary16 storage.

Values live in float64 but are snapped to the binary16 grid (1 sign, 5
exponent, 10 mantissa bits; round-to-nearest-even; subnormals kept).
Instead of overflowing to infinity, out-of-range finite values saturate at
the largest finite half (65504).  NaN propagates.
"""

from __future__ import annotations

import numpy as np

__all__ = ["HALF_MAX", "HALF_MIN_SUBNORMAL", "half_round", "half_ulp"]

HALF_MAX = 65504.0
HALF_MIN_SUBNORMAL = 2.0 ** -24


def _round_real(x: np.ndarray) -> np.ndarray:
    clipped = np.clip(x, -HALF_MAX, HALF_MAX)  # saturating overflow; NaN passes through
    return clipped.astype(np.float16).astype(np.float64)


def half_round(x):
    """Round to the nearest binary16 value (ties to even), saturating at +-65504.

    Accepts scalars or arrays, real or complex; complex parts are rounded
    independently.  Idempotent on its own outputs.
    """
    arr = np.asarray(x, dtype=np.complex128 if np.iscomplexobj(x) else np.float64)
    if np.iscomplexobj(arr):
        out = _round_real(arr.real) + 1j * _round_real(arr.imag)
    else:
        out = _round_real(arr)
    if np.isscalar(x) or np.ndim(x) == 0:
        return complex(out) if np.iscomplexobj(arr) else float(out)
    return out


def half_ulp(x: float) -> float:
    """Spacing of the binary16 grid at (finite) x."""
    h = np.float16(np.clip(x, -HALF_MAX, HALF_MAX))
    return float(np.spacing(np.abs(h)))
