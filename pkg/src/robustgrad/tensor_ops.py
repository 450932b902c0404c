"""Dense N-way tensor arithmetic: unfolding, mode products, norms, stable rank.

Tensors are plain numpy arrays in row-major (C) layout, real float64 or
complex128.  A matrix is the order-2 case and needs no special handling.

The mode-k unfolding follows the fiber convention

    (T_(k))[i_k, j] = T[i_1, ..., i_d],
    j = sum_{m != k} i_m * prod_{n < m, n != k} I_n      (0-based),

i.e. among the remaining modes the *lowest* mode index varies fastest.
On C-ordered data this is ``reshape(moveaxis(t, k, 0), (I_k, -1), order="F")``,
locked by a hand-evaluated 2x2x2 example in the tests.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "unfold",
    "fold",
    "mode_product",
    "inner",
    "fro_norm",
    "mode_spectral_norm",
    "stable_rank",
    "multilinear_stable_rank",
    "outer",
]

# Power iteration settings for mode_spectral_norm.
_POWER_TOL = 1e-10
_POWER_MAX_ITERS = 1000
_POWER_SEED = 0x5EED


def _check_mode(t: np.ndarray, k: int) -> None:
    if not 0 <= k < t.ndim:
        raise ValueError(f"mode {k} out of range for order-{t.ndim} tensor")


def unfold(t: np.ndarray, k: int) -> np.ndarray:
    """Mode-k unfolding: arrange the mode-k fibers as columns of an I_k x (N/I_k) matrix.

    Modes are 0-based.  The result is a copy (the fiber layout is not a
    contiguous view of C-ordered data).
    """
    t = np.asarray(t)
    _check_mode(t, k)
    return np.reshape(np.moveaxis(t, k, 0), (t.shape[k], -1), order="F")


def fold(m: np.ndarray, k: int, shape: tuple[int, ...]) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild the tensor of `shape` from its mode-k unfolding."""
    m = np.asarray(m)
    shape = tuple(int(s) for s in shape)
    if not 0 <= k < len(shape):
        raise ValueError(f"mode {k} out of range for shape {shape}")
    n_rest = 1
    for i, s in enumerate(shape):
        if i != k:
            n_rest *= s
    if m.ndim != 2 or m.shape != (shape[k], n_rest):
        raise ValueError(f"unfolding shape {m.shape} inconsistent with shape {shape}, mode {k}")
    moved = (shape[k],) + tuple(s for i, s in enumerate(shape) if i != k)
    return np.ascontiguousarray(np.moveaxis(np.reshape(m, moved, order="F"), 0, k))


def mode_product(t: np.ndarray, u: np.ndarray, k: int) -> np.ndarray:
    """Mode-k product t x_k u: contract u (J x I_k) against mode k of t.

    Satisfies (t x_k u)_(k) = u @ t_(k).
    """
    t = np.asarray(t)
    u = np.asarray(u)
    _check_mode(t, k)
    if u.ndim != 2 or u.shape[1] != t.shape[k]:
        raise ValueError(f"matrix {u.shape} cannot act on mode {k} of shape {t.shape}")
    out = np.tensordot(u, t, axes=([1], [k]))  # mode k moved to front
    return np.ascontiguousarray(np.moveaxis(out, 0, k))


def inner(a: np.ndarray, b: np.ndarray):
    """Tensor inner product <a, b> = sum a * conj(b)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    val = np.vdot(b, a)  # vdot conjugates its first argument
    if not (np.iscomplexobj(a) or np.iscomplexobj(b)):
        return float(val.real)
    return complex(val)


def fro_norm(t: np.ndarray) -> float:
    """Frobenius norm sqrt(<t, t>)."""
    return float(np.linalg.norm(np.asarray(t).ravel()))


def outer(vectors: list[np.ndarray]) -> np.ndarray:
    """Rank-1 tensor v1 o v2 o ... o vd from a list of vectors."""
    if len(vectors) == 0:
        raise ValueError("outer product needs at least one vector")
    out = np.asarray(vectors[0])
    if out.ndim != 1:
        raise ValueError("outer expects 1-d vectors")
    for v in vectors[1:]:
        v = np.asarray(v)
        if v.ndim != 1:
            raise ValueError("outer expects 1-d vectors")
        out = np.multiply.outer(out, v)
    return out


def mode_spectral_norm(t: np.ndarray, k: int) -> float:
    """Largest singular value of the mode-k unfolding.

    Power iteration on the Gram matrix t_(k) t_(k)^H with a deterministic
    seeded start, converged on the Rayleigh quotient to 1e-10 relative
    (max 1000 iterations, one seeded restart on stagnation).
    """
    t = np.asarray(t)
    _check_mode(t, k)
    a = unfold(t, k)
    if not np.any(a):
        return 0.0
    gram = a @ a.conj().T  # I_k x I_k, Hermitian PSD
    n = gram.shape[0]
    if n == 1:
        return float(np.sqrt(gram[0, 0].real))

    def iterate(x: np.ndarray) -> float:
        lam = 0.0
        for _ in range(_POWER_MAX_ITERS):
            y = gram @ x
            ny = np.linalg.norm(y)
            if ny == 0.0:
                return 0.0
            x = y / ny
            lam_new = float((x.conj() @ (gram @ x)).real)
            if abs(lam_new - lam) <= _POWER_TOL * max(lam_new, 1e-300):
                return lam_new
            lam = lam_new
        return -lam  # negative flags stagnation

    rng = np.random.default_rng(_POWER_SEED)
    x0 = rng.standard_normal(n)
    if np.iscomplexobj(gram):
        x0 = x0 + 1j * rng.standard_normal(n)
    lam = iterate(x0 / np.linalg.norm(x0))
    if lam < 0.0:
        x1 = rng.standard_normal(n)
        if np.iscomplexobj(gram):
            x1 = x1 + 1j * rng.standard_normal(n)
        lam2 = iterate(x1 / np.linalg.norm(x1))
        lam = max(-lam, abs(lam2))
    return float(np.sqrt(max(lam, 0.0)))


def stable_rank(t: np.ndarray, k: int) -> float:
    """Mode-k stable rank ||t||_F^2 / ||t_(k)||_2^2; in [1, rank(t_(k))]."""
    t = np.asarray(t)
    _check_mode(t, k)
    f = fro_norm(t)
    if f == 0.0:
        raise ValueError("stable rank is undefined for the zero tensor")
    s = mode_spectral_norm(t, k)
    return float((f * f) / (s * s))


def multilinear_stable_rank(t: np.ndarray) -> float:
    """Minimum of the mode-wise stable ranks."""
    t = np.asarray(t)
    return min(stable_rank(t, k) for k in range(t.ndim))
