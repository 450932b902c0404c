"""Truncated SVD and Tucker decomposition via higher-order orthogonal iteration.

The truncated SVD has two paths: a deterministic dense factorization when the
smaller matrix side is at most ``DENSE_SIDE_LIMIT``, and seeded randomized
subspace iteration above that.  Both apply the same phase convention (the
largest-magnitude entry of each left singular vector is rotated to be real
positive) so factor comparisons are deterministic.

HOOI alternates per-mode truncated SVDs of the partially projected tensor,
which makes the Tucker reconstruction error non-increasing sweep to sweep.
A mode requested at full rank gets the identity factor: any unitary is
optimal there, and the identity keeps the compressed space axis-aligned so
full-budget runs degenerate exactly to their uncompressed counterparts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_ops import fro_norm, mode_product, unfold

__all__ = [
    "SvdResult",
    "TuckerFactors",
    "truncated_svd",
    "hosvd_init",
    "hooi",
    "tucker_compress",
    "tucker_expand",
    "subspace_distance",
]

DENSE_SIDE_LIMIT = 256
_SUBSPACE_OVERSAMPLE = 8
_SUBSPACE_MAX_ITERS = 60
_SUBSPACE_TOL = 1e-12


@dataclass
class SvdResult:
    """Rank-r factorization U @ diag(S) @ V^H with orthonormal U (m x r), V (n x r)."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.conj().T


@dataclass
class TuckerFactors:
    """Per-mode orthonormal factor matrices U^(n) of shape I_n x r_n."""

    factors: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        for n, u in enumerate(self.factors):
            if u.ndim != 2:
                raise ValueError(f"factor {n} is not a matrix")
            rows, cols = u.shape
            if not 1 <= cols <= rows:
                raise ValueError(f"factor {n} has invalid rank {cols} for dim {rows}")
            gram = u.conj().T @ u
            if fro_norm(gram - np.eye(cols)) > 1e-10:
                raise ValueError(f"factor {n} columns are not orthonormal")

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(u.shape[1] for u in self.factors)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.factors)


def _fix_phases(u: np.ndarray, v: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray | None]:
    """Rotate each column so its largest-magnitude entry in u is real positive."""
    u = u.copy()
    v = None if v is None else v.copy()
    for i in range(u.shape[1]):
        j = int(np.argmax(np.abs(u[:, i])))
        c = u[j, i]
        if c == 0:
            continue
        a = np.conj(c) / abs(c) if np.iscomplexobj(u) else (1.0 if c > 0 else -1.0)
        u[:, i] *= a
        if v is not None:
            v[:, i] *= a
    return u, v


def _dense_svd(m: np.ndarray, r: int) -> SvdResult:
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    u, v = _fix_phases(u[:, :r], vh[:r, :].conj().T)
    return SvdResult(U=u, S=s[:r].copy(), V=v)


def _subspace_svd(m: np.ndarray, r: int, seed: int) -> SvdResult:
    """Seeded block subspace iteration for the top-r triplet of a large matrix."""
    rows, cols = m.shape
    transposed = rows > cols
    a = m.conj().T if transposed else m  # rows <= cols
    k = min(r + _SUBSPACE_OVERSAMPLE, a.shape[0])
    rng = np.random.default_rng(seed)
    block = rng.standard_normal((a.shape[0], k))
    if np.iscomplexobj(a):
        block = block + 1j * rng.standard_normal((a.shape[0], k))
    q, _ = np.linalg.qr(block)
    s_prev = np.zeros(r)
    for _ in range(_SUBSPACE_MAX_ITERS):
        q, _ = np.linalg.qr(a @ (a.conj().T @ q))
        b = q.conj().T @ a
        s_now = np.linalg.svd(b, compute_uv=False)[:r]
        if np.all(np.abs(s_now - s_prev) <= _SUBSPACE_TOL * np.maximum(s_now, 1e-300)):
            break
        s_prev = s_now
    b = q.conj().T @ a
    ub, s, vh = np.linalg.svd(b, full_matrices=False)
    u = q @ ub[:, :r]
    v = vh[:r, :].conj().T
    if transposed:
        u, v = v, u
    u, v = _fix_phases(u, v)
    return SvdResult(U=u, S=s[:r].copy(), V=v)


def truncated_svd(m: np.ndarray, r: int, seed: int = 0) -> SvdResult:
    """Best rank-r factorization of a matrix.

    Deterministic dense path when min(rows, cols) <= DENSE_SIDE_LIMIT,
    seeded subspace iteration otherwise.
    """
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("truncated_svd expects a matrix")
    if not 1 <= r <= min(m.shape):
        raise ValueError(f"rank {r} out of range for shape {m.shape}")
    if min(m.shape) <= DENSE_SIDE_LIMIT:
        return _dense_svd(m, r)
    return _subspace_svd(m, r, seed)


def _check_ranks(shape: tuple[int, ...], ranks: tuple[int, ...]) -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(shape):
        raise ValueError(f"{len(ranks)} ranks for order-{len(shape)} tensor")
    for n, (r, s) in enumerate(zip(ranks, shape)):
        if not 1 <= r <= s:
            raise ValueError(f"rank {r} out of range for mode {n} (dim {s})")
    return ranks


def _mode_factor(t: np.ndarray, n: int, r: int, seed: int) -> np.ndarray:
    if r == t.shape[n]:
        eye = np.eye(r)
        return eye.astype(t.dtype) if np.iscomplexobj(t) else eye
    return truncated_svd(unfold(t, n), r, seed=seed).U


def hosvd_init(t: np.ndarray, ranks: tuple[int, ...], seed: int = 0) -> TuckerFactors:
    """Per-mode truncated SVDs of the mode-n unfoldings (HOSVD initialization)."""
    t = np.asarray(t)
    ranks = _check_ranks(t.shape, ranks)
    return TuckerFactors([_mode_factor(t, n, r, seed) for n, r in enumerate(ranks)])


def _project_other_modes(t: np.ndarray, factors: list[np.ndarray], skip: int) -> np.ndarray:
    out = t
    for m, u in enumerate(factors):
        if m != skip:
            out = mode_product(out, u.conj().T, m)
    return out


def tucker_compress(g: np.ndarray, f: TuckerFactors) -> np.ndarray:
    """Core-shaped compression g x_1 U1^H ... x_d Ud^H."""
    g = np.asarray(g)
    if g.shape != f.shape:
        raise ValueError(f"tensor shape {g.shape} does not match factors {f.shape}")
    out = g
    for n, u in enumerate(f.factors):
        out = mode_product(out, u.conj().T, n)
    return out


def tucker_expand(core: np.ndarray, f: TuckerFactors) -> np.ndarray:
    """Full-shape expansion core x_1 U1 ... x_d Ud."""
    core = np.asarray(core)
    if core.shape != f.ranks:
        raise ValueError(f"core shape {core.shape} does not match ranks {f.ranks}")
    out = core
    for n, u in enumerate(f.factors):
        out = mode_product(out, u, n)
    return out


def _recon_error(t: np.ndarray, factors: TuckerFactors, t_norm: float) -> float:
    if t_norm == 0.0:
        return 0.0
    recon = tucker_expand(tucker_compress(t, factors), factors)
    return fro_norm(t - recon) / t_norm


def hooi(
    t: np.ndarray,
    ranks: tuple[int, ...],
    max_sweeps: int = 10,
    tol: float = 1e-6,
    warm: TuckerFactors | None = None,
    seed: int = 0,
) -> TuckerFactors:
    """Higher-order orthogonal iteration.

    Starting from `warm` factors (or HOSVD), each sweep refits every mode's
    factor to the top-r_n left singular subspace of the partially projected
    tensor.  Stops when the relative reconstruction-error improvement drops
    below `tol` or after `max_sweeps` sweeps.
    """
    t = np.asarray(t)
    ranks = _check_ranks(t.shape, ranks)
    if warm is not None:
        if warm.shape != t.shape or warm.ranks != ranks:
            raise ValueError("warm factors are not shape-compatible")
        factors = [u.copy() for u in warm.factors]
    else:
        factors = list(hosvd_init(t, ranks, seed=seed).factors)

    t_norm = fro_norm(t)
    err = _recon_error(t, TuckerFactors(list(factors)), t_norm)
    for _ in range(max_sweeps):
        for n, r in enumerate(ranks):
            projected = _project_other_modes(t, factors, skip=n)
            factors[n] = _mode_factor(projected, n, r, seed)
        new_err = _recon_error(t, TuckerFactors(list(factors)), t_norm)
        improvement = err - new_err
        err = new_err
        if improvement < tol * max(err, 1e-15):
            break
    return TuckerFactors(factors)


def subspace_distance(u: np.ndarray, v: np.ndarray) -> float:
    """sin of the largest principal angle between the column spaces of u and v.

    Computed as the spectral norm of the orthogonal-projector difference,
    which stays at roundoff level for identical subspaces (no sqrt(1 - s^2)
    cancellation).
    """
    qu, _ = np.linalg.qr(u)
    qv, _ = np.linalg.qr(v)
    diff = qu @ qu.conj().T - qv @ qv.conj().T
    return float(np.linalg.svd(diff, compute_uv=False)[0])
