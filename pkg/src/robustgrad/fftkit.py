"""Iterative radix-2 DFT, always in full float64/complex128 precision.

Forward transform X[k] = sum_j x[j] w^(-jk), inverse x[j] = (1/n) sum_k
X[k] w^(jk); both operate along one axis of a batched array.  Length must be
a power of two.  No external FFT dependency and no precision emulation here:
mixed-precision runs keep their transforms in full precision.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["is_power_of_two", "fft", "ifft", "fft2", "ifft2"]


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=32)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _transform(x: np.ndarray, axis: int, sign: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[axis]
    if not is_power_of_two(n):
        raise ValueError(f"transform length {n} is not a power of two")
    a = np.moveaxis(x, axis, -1).copy()
    a = a[..., _bit_reversal(n)]
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        shaped = a.reshape(a.shape[:-1] + (n // m, m))
        hi = shaped[..., half:] * tw
        lo = shaped[..., :half].copy()
        shaped[..., :half] = lo + hi
        shaped[..., half:] = lo - hi
        m *= 2
    return np.moveaxis(a, -1, axis)


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return _transform(x, axis, sign=-1.0)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    n = np.asarray(x).shape[axis]
    return _transform(x, axis, sign=1.0) / n


def fft2(x: np.ndarray, axes: tuple[int, int] = (-2, -1)) -> np.ndarray:
    return fft(fft(x, axis=axes[0]), axis=axes[1])


def ifft2(x: np.ndarray, axes: tuple[int, int] = (-2, -1)) -> np.ndarray:
    return ifft(ifft(x, axis=axes[0]), axis=axes[1])
