"""Sparse index selection, COO extraction, scatter-add, structured masks.

Unstructured index sets are stored as flat row-major offsets (one u64 per
entry), sorted ascending and duplicate-free: k offsets plus k values is the
whole memory footprint, and scatter is O(1) per entry.  Structured masks
hold one sorted index list per mode and select the Cartesian-product block.

Ties in top-k are broken toward the lexicographically smaller multi-index,
which for row-major offsets is simply the smaller offset.  randk and probk
share one sequential without-replacement sampler (probk renormalizes by the
max weight first), so equal magnitudes reduce probk to randk draw for draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, prod

import numpy as np

from .tensor_ops import unfold

__all__ = [
    "IndexSet",
    "SparseTensor",
    "select_indices",
    "extract",
    "scatter_add",
    "dense",
    "structured_mask",
    "restrict",
    "back_project",
]

STRATEGIES = ("topk", "randk", "probk")


@dataclass
class IndexSet:
    """Either k flat offsets (unstructured) or per-mode index lists (structured)."""

    kind: str
    shape: tuple[int, ...]
    offsets: np.ndarray | None = None
    mode_indices: list[np.ndarray] | None = None

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        size = prod(self.shape)
        if self.kind == "unstructured":
            if self.offsets is None:
                raise ValueError("unstructured IndexSet needs offsets")
            off = np.asarray(self.offsets, dtype=np.int64)
            if off.ndim != 1 or off.size == 0:
                raise ValueError("offsets must be a nonempty 1-d array")
            if off.min() < 0 or off.max() >= size:
                raise ValueError("offset out of bounds")
            if np.any(np.diff(off) <= 0):
                raise ValueError("offsets must be sorted and duplicate-free")
            self.offsets = off
        elif self.kind == "structured":
            if self.mode_indices is None or len(self.mode_indices) != len(self.shape):
                raise ValueError("structured IndexSet needs one index list per mode")
            cleaned = []
            for n, idx in enumerate(self.mode_indices):
                idx = np.asarray(idx, dtype=np.int64)
                if idx.ndim != 1 or idx.size == 0:
                    raise ValueError(f"mode {n} index list must be nonempty")
                if idx.min() < 0 or idx.max() >= self.shape[n]:
                    raise ValueError(f"mode {n} index out of bounds")
                if idx.size > 1 and np.any(np.diff(idx) <= 0):
                    raise ValueError(f"mode {n} indices must be sorted and duplicate-free")
                cleaned.append(idx)
            self.mode_indices = cleaned
        else:
            raise ValueError(f"unknown IndexSet kind {self.kind!r}")

    @property
    def count(self) -> int:
        if self.kind == "unstructured":
            return int(self.offsets.size)
        return int(prod(idx.size for idx in self.mode_indices))

    def block_shape(self) -> tuple[int, ...]:
        if self.kind != "structured":
            raise ValueError("block_shape is only defined for structured masks")
        return tuple(int(idx.size) for idx in self.mode_indices)


@dataclass
class SparseTensor:
    """COO tensor on a fixed unstructured index set."""

    shape: tuple[int, ...]
    indices: IndexSet
    values: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if self.indices.kind != "unstructured":
            raise ValueError("SparseTensor requires an unstructured IndexSet")
        if self.indices.shape != self.shape:
            raise ValueError("IndexSet shape does not match tensor shape")
        self.values = np.asarray(self.values)
        if self.values.shape != (self.indices.count,):
            raise ValueError("values must align with indices")

    @property
    def nnz(self) -> int:
        return int(self.values.size)


def _sequential_sample(weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k weighted draws without replacement, renormalizing after each draw.

    Weights are scaled by their maximum first so equal-magnitude inputs hit
    the exact float path of uniform weights.
    """
    w = np.asarray(weights, dtype=np.float64).copy()
    if w.size < k:
        raise ValueError("cannot draw more indices than exist")
    wmax = w.max()
    w = np.ones_like(w) if wmax == 0.0 else w / wmax
    chosen = np.empty(k, dtype=np.int64)
    for i in range(k):
        total = w.sum()
        if total <= 0.0:  # remaining weights all zero: fall back to uniform
            w[w == 0.0] = 1.0
            for j in chosen[:i]:
                w[j] = 0.0
            total = w.sum()
        cum = np.cumsum(w)
        j = int(np.searchsorted(cum, rng.random() * total, side="right"))
        j = min(j, w.size - 1)
        while w[j] == 0.0:  # guard against landing on an exhausted slot
            j = (j + 1) % w.size
        chosen[i] = j
        w[j] = 0.0
    return chosen


def select_indices(g: np.ndarray, rho: float, strategy: str, seed: int = 0) -> IndexSet:
    """Pick k = ceil(rho * numel) flat indices from g by the given strategy."""
    g = np.asarray(g)
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"density {rho} outside (0, 1]")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    size = g.size
    k = ceil(rho * size)
    mag = np.abs(g).ravel()
    if strategy == "topk":
        # stable sort on descending magnitude keeps lexicographic order on ties
        order = np.argsort(-mag, kind="stable")
        chosen = order[:k]
    else:
        rng = np.random.default_rng(seed)
        weights = np.ones(size) if strategy == "randk" else mag
        chosen = _sequential_sample(weights, k, rng)
    return IndexSet(kind="unstructured", shape=g.shape, offsets=np.sort(chosen))


def extract(g: np.ndarray, omega: IndexSet) -> SparseTensor:
    """Read the current values of g at the fixed index set."""
    g = np.asarray(g)
    if omega.kind != "unstructured":
        raise ValueError("extract expects an unstructured IndexSet")
    if omega.shape != g.shape:
        raise ValueError(f"index set shape {omega.shape} does not match tensor {g.shape}")
    values = g.reshape(-1)[omega.offsets].copy()
    return SparseTensor(shape=g.shape, indices=omega, values=values)


def scatter_add(dest: np.ndarray, s: SparseTensor, scale=1.0) -> np.ndarray:
    """dest[idx] += scale * value in place; untouched entries keep their bytes."""
    if dest.shape != s.shape:
        raise ValueError(f"destination shape {dest.shape} does not match sparse {s.shape}")
    dest.reshape(-1)[s.indices.offsets] += scale * s.values
    return dest


def dense(s: SparseTensor) -> np.ndarray:
    """Materialize the COO tensor (helper for residuals and tests)."""
    out = np.zeros(s.shape, dtype=s.values.dtype)
    return scatter_add(out, s, 1.0)


def structured_mask(
    g: np.ndarray, counts: tuple[int, ...], strategy: str, seed: int = 0
) -> IndexSet:
    """Per-mode slice selection: top slice norms, norm-proportional, or uniform."""
    g = np.asarray(g)
    counts = tuple(int(c) for c in counts)
    if len(counts) != g.ndim:
        raise ValueError(f"{len(counts)} counts for order-{g.ndim} tensor")
    for n, (c, s) in enumerate(zip(counts, g.shape)):
        if not 1 <= c <= s:
            raise ValueError(f"count {c} out of range for mode {n} (dim {s})")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    rng = np.random.default_rng(seed)
    mode_indices = []
    for n, c in enumerate(counts):
        norms = np.linalg.norm(unfold(g, n), axis=1)
        if strategy == "topk":
            order = np.argsort(-norms, kind="stable")
            chosen = order[:c]
        else:
            weights = np.ones(norms.size) if strategy == "randk" else norms
            chosen = _sequential_sample(weights, c, rng)
        mode_indices.append(np.sort(chosen))
    return IndexSet(kind="structured", shape=g.shape, mode_indices=mode_indices)


def restrict(g: np.ndarray, mask: IndexSet) -> np.ndarray:
    """Extract the Cartesian-product block selected by a structured mask."""
    g = np.asarray(g)
    if mask.kind != "structured":
        raise ValueError("restrict expects a structured IndexSet")
    if mask.shape != g.shape:
        raise ValueError(f"mask shape {mask.shape} does not match tensor {g.shape}")
    return g[np.ix_(*mask.mode_indices)].copy()


def back_project(block: np.ndarray, mask: IndexSet) -> np.ndarray:
    """Zero-filled full tensor with the block restored at its original positions."""
    block = np.asarray(block)
    if mask.kind != "structured":
        raise ValueError("back_project expects a structured IndexSet")
    if block.shape != mask.block_shape():
        raise ValueError(f"block shape {block.shape} does not match mask {mask.block_shape()}")
    out = np.zeros(mask.shape, dtype=block.dtype)
    out[np.ix_(*mask.mode_indices)] = block
    return out
