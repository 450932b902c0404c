"""Memory-compressed Adam on tensor weights via low-rank plus sparse gradients.

Each step decomposes the (negated) gradient into a sparse part and/or a
Tucker low-rank part, runs Adam independently in each compressed space, and
reconstructs the weight update as

    dW = alpha * expand(lowrank Adam direction)   then
    dW[Omega] += lam * sparse Adam direction      (scatter, no second buffer)
    W <- W + lr * dW.

The composition order decides which branch reads the full gradient and which
reads the residual; the index set and factor matrices are refreshed only
every `refresh_period` steps and reused in between.  The public API takes the
raw loss gradient and negates internally, so every variant descends.

Matrix-projected baselines (single-sided SVD projection of a matricized
gradient) and dense Adam share the same Adam core so full-budget
configurations degenerate to dense Adam exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from math import ceil, prod
from pathlib import Path

import numpy as np

from .decompose import TuckerFactors, hooi, truncated_svd, tucker_compress, tucker_expand
from .halfprec import half_round
from .sparsify import (
    IndexSet,
    SparseTensor,
    back_project,
    extract,
    restrict,
    scatter_add,
    select_indices,
    structured_mask,
)
from . import tgrd_io

__all__ = [
    "ORDERS",
    "PRECISIONS",
    "OptimizerConfig",
    "MomentPair",
    "RobustState",
    "GaloreState",
    "DenseAdamState",
    "adam_update",
    "robust_step",
    "lowrank_only_step",
    "sparse_only_step",
    "galore_step",
    "dense_adam_step",
    "moment_element_count",
    "moment_scalar_count",
    "ranks_from_ratio",
    "save_checkpoint",
    "load_checkpoint",
]

ORDERS = ("us_lr", "lr_us", "ss_lr", "lr_ss", "lr_plus_us", "lr_only", "sparse_only")
PRECISIONS = ("full", "mixed1", "mixed2")
_SPARSE_ORDERS = ("us_lr", "lr_us", "ss_lr", "lr_ss", "lr_plus_us", "sparse_only")
_LOWRANK_ORDERS = ("us_lr", "lr_us", "ss_lr", "lr_ss", "lr_plus_us", "lr_only")
_STRUCTURED_ORDERS = ("ss_lr", "lr_ss")


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    alpha: float = 1.0
    lam: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ranks: tuple[int, ...] | None = None
    density: float = 0.05
    strategy: str = "topk"
    order: str = "us_lr"
    refresh_period: int = 500
    precision: str = "full"
    structured_counts: tuple[int, ...] | None = None
    sparse_kind: str = "unstructured"  # only consulted by sparse_only
    weight_decay: float = 0.0
    reset_moments_on_refresh: bool = False
    hooi_sweeps: int = 10
    hooi_tol: float = 1e-6
    matricize_dim: int = 1  # matrix baseline: first d axes become rows
    matrix_rank: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ValueError(f"unknown order {self.order!r}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"unknown precision {self.precision!r}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("decay rates must lie in (0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.refresh_period < 1:
            raise ValueError("refresh period must be >= 1")
        if self.order in _SPARSE_ORDERS and not 0.0 < self.density <= 1.0:
            raise ValueError(f"density {self.density} outside (0, 1]")
        if self.sparse_kind not in ("unstructured", "structured"):
            raise ValueError(f"unknown sparse kind {self.sparse_kind!r}")


@dataclass
class MomentPair:
    """First moment (gradient-typed) and second moment (real, entrywise >= 0)."""

    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape: tuple[int, ...], complex_values: bool) -> "MomentPair":
        dtype = np.complex128 if complex_values else np.float64
        return cls(m=np.zeros(shape, dtype=dtype), v=np.zeros(shape, dtype=np.float64))


@dataclass
class RobustState:
    """Step counter, live index set / factors, and per-branch moments."""

    t: int = 0
    omega: IndexSet | None = None
    factors: TuckerFactors | None = None
    sparse_moments: MomentPair | None = None
    lowrank_moments: MomentPair | None = None


@dataclass
class GaloreState:
    t: int = 0
    projector: np.ndarray | None = None
    moments: MomentPair | None = None


@dataclass
class DenseAdamState:
    t: int = 0
    moments: MomentPair | None = None


def adam_update(g_hat: np.ndarray, moments: MomentPair, beta1: float, beta2: float,
                eps: float, t: int) -> np.ndarray:
    """One Adam direction in a compressed space; mutates the moments in place.

    V accumulates g * conj(g), which is real also for complex gradients; the
    bias-corrected direction is M-hat / (sqrt(V-hat) + eps) with t >= 1.
    """
    if t < 1:
        raise ValueError("Adam step count must be >= 1")
    if moments.m.shape != g_hat.shape:
        raise ValueError(f"moment shape {moments.m.shape} does not match gradient {g_hat.shape}")
    moments.m *= beta1
    moments.m += (1.0 - beta1) * g_hat
    moments.v *= beta2
    moments.v += (1.0 - beta2) * (g_hat * np.conj(g_hat)).real
    m_hat = moments.m / (1.0 - beta1 ** t)
    v_hat = moments.v / (1.0 - beta2 ** t)
    return m_hat / (np.sqrt(v_hat) + eps)


def ranks_from_ratio(ratio: float, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-mode ranks whose core keeps roughly `ratio` of the elements."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"rank ratio {ratio} outside (0, 1]")
    frac = ratio ** (1.0 / len(shape))
    return tuple(min(s, max(1, round(frac * s))) for s in shape)


def _structured_counts(cfg: OptimizerConfig, shape: tuple[int, ...]) -> tuple[int, ...]:
    if cfg.structured_counts is not None:
        return cfg.structured_counts
    # match the unstructured budget: the block keeps ~density of all entries
    frac = cfg.density ** (1.0 / len(shape))
    return tuple(min(s, max(1, ceil(frac * s))) for s in shape)


def _needs_sparse(cfg: OptimizerConfig) -> bool:
    return cfg.order in _SPARSE_ORDERS


def _needs_lowrank(cfg: OptimizerConfig) -> bool:
    return cfg.order in _LOWRANK_ORDERS


def _uses_structured(cfg: OptimizerConfig) -> bool:
    return cfg.order in _STRUCTURED_ORDERS or (
        cfg.order == "sparse_only" and cfg.sparse_kind == "structured"
    )


def _sparse_pick(g: np.ndarray, cfg: OptimizerConfig, seed: int) -> IndexSet:
    if _uses_structured(cfg):
        return structured_mask(g, _structured_counts(cfg, g.shape), cfg.strategy, seed=seed)
    return select_indices(g, cfg.density, cfg.strategy, seed=seed)


def _sparse_values(g: np.ndarray, omega: IndexSet):
    if omega.kind == "structured":
        return restrict(g, omega)
    return extract(g, omega)


def _subtract_sparse(g: np.ndarray, omega: IndexSet, values) -> np.ndarray:
    """Residual g minus the sparse part, reusing a single buffer."""
    residual = g.copy()
    if omega.kind == "structured":
        residual[np.ix_(*omega.mode_indices)] -= values
    else:
        scatter_add(residual, values, -1.0)
    return residual


def _fit_factors(g: np.ndarray, cfg: OptimizerConfig, state: RobustState) -> TuckerFactors:
    if cfg.ranks is None:
        raise ValueError(f"order {cfg.order!r} needs Tucker ranks")
    warm = state.factors
    if warm is not None and (warm.shape != g.shape or warm.ranks != tuple(cfg.ranks)):
        warm = None
    return hooi(g, tuple(cfg.ranks), max_sweeps=cfg.hooi_sweeps, tol=cfg.hooi_tol,
                warm=warm, seed=cfg.seed)


def _refresh(g: np.ndarray, cfg: OptimizerConfig, state: RobustState) -> None:
    seed = cfg.seed + state.t
    if cfg.order in ("us_lr", "ss_lr"):
        state.omega = _sparse_pick(g, cfg, seed)
        values = _sparse_values(g, state.omega)
        state.factors = _fit_factors(_subtract_sparse(g, state.omega, values), cfg, state)
    elif cfg.order in ("lr_us", "lr_ss"):
        state.factors = _fit_factors(g, cfg, state)
        residual = g - tucker_expand(tucker_compress(g, state.factors), state.factors)
        state.omega = _sparse_pick(residual, cfg, seed)
    elif cfg.order == "lr_plus_us":
        state.omega = _sparse_pick(g, cfg, seed)
        state.factors = _fit_factors(g, cfg, state)
    elif cfg.order == "lr_only":
        state.factors = _fit_factors(g, cfg, state)
    elif cfg.order == "sparse_only":
        state.omega = _sparse_pick(g, cfg, seed)
    if cfg.reset_moments_on_refresh:
        state.sparse_moments = None
        state.lowrank_moments = None


def _ensure_moments(state: RobustState, cfg: OptimizerConfig, g: np.ndarray) -> None:
    complex_values = np.iscomplexobj(g)
    if _needs_sparse(cfg) and state.sparse_moments is None:
        if state.omega.kind == "structured":
            shape = state.omega.block_shape()
        else:
            shape = (state.omega.count,)
        state.sparse_moments = MomentPair.zeros(shape, complex_values)
    if _needs_lowrank(cfg) and state.lowrank_moments is None:
        state.lowrank_moments = MomentPair.zeros(state.factors.ranks, complex_values)


def _quantize_moments(pair: MomentPair | None) -> None:
    if pair is not None:
        pair.m = half_round(pair.m)
        pair.v = half_round(pair.v)


def robust_step(w: np.ndarray, grad: np.ndarray, state: RobustState,
                cfg: OptimizerConfig) -> np.ndarray:
    """One optimizer step; returns the updated weights and mutates `state`."""
    if w.shape != grad.shape:
        raise ValueError(f"weight shape {w.shape} does not match gradient {grad.shape}")
    if cfg.precision in ("mixed1", "mixed2"):
        grad = half_round(grad)
    g = -np.asarray(grad)

    if state.t % cfg.refresh_period == 0:
        _refresh(g, cfg, state)
    _ensure_moments(state, cfg, g)
    t_adam = state.t + 1

    sparse_dir = None
    lowrank_dir = None
    if cfg.order in ("us_lr", "ss_lr"):
        values = _sparse_values(g, state.omega)
        raw = values.values if isinstance(values, SparseTensor) else values
        residual = _subtract_sparse(g, state.omega, values)
        sparse_dir = adam_update(raw, state.sparse_moments, cfg.beta1, cfg.beta2, cfg.eps, t_adam)
        core = tucker_compress(residual, state.factors)
        lowrank_dir = adam_update(core, state.lowrank_moments, cfg.beta1, cfg.beta2, cfg.eps, t_adam)
    elif cfg.order in ("lr_us", "lr_ss"):
        core = tucker_compress(g, state.factors)
        residual = g - tucker_expand(core, state.factors)
        lowrank_dir = adam_update(core, state.lowrank_moments, cfg.beta1, cfg.beta2, cfg.eps, t_adam)
        values = _sparse_values(residual, state.omega)
        raw = values.values if isinstance(values, SparseTensor) else values
        sparse_dir = adam_update(raw, state.sparse_moments, cfg.beta1, cfg.beta2, cfg.eps, t_adam)
    elif cfg.order == "lr_plus_us":
        values = _sparse_values(g, state.omega)
        raw = values.values if isinstance(values, SparseTensor) else values
        sparse_dir = adam_update(raw, state.sparse_moments, cfg.beta1, cfg.beta2, cfg.eps, t_adam)
        core = tucker_compress(g, state.factors)
        lowrank_dir = adam_update(core, state.lowrank_moments, cfg.beta1, cfg.beta2, cfg.eps, t_adam)
    elif cfg.order == "lr_only":
        core = tucker_compress(g, state.factors)
        lowrank_dir = adam_update(core, state.lowrank_moments, cfg.beta1, cfg.beta2, cfg.eps, t_adam)
    elif cfg.order == "sparse_only":
        values = _sparse_values(g, state.omega)
        raw = values.values if isinstance(values, SparseTensor) else values
        sparse_dir = adam_update(raw, state.sparse_moments, cfg.beta1, cfg.beta2, cfg.eps, t_adam)

    # low-rank part first, sparse values scattered into the same buffer
    if lowrank_dir is not None:
        delta = cfg.alpha * tucker_expand(lowrank_dir, state.factors)
    else:
        delta = np.zeros_like(g)
    if sparse_dir is not None:
        if state.omega.kind == "structured":
            delta[np.ix_(*state.omega.mode_indices)] += cfg.lam * sparse_dir
        else:
            sp = SparseTensor(shape=g.shape, indices=state.omega, values=sparse_dir)
            scatter_add(delta, sp, cfg.lam)

    if cfg.weight_decay:
        w = (1.0 - cfg.lr * cfg.weight_decay) * w
    w = w + cfg.lr * delta
    if cfg.precision in ("mixed1", "mixed2"):
        w = half_round(w)
    if cfg.precision == "mixed2":
        _quantize_moments(state.sparse_moments)
        _quantize_moments(state.lowrank_moments)
    state.t += 1
    return w


def lowrank_only_step(w, grad, state: RobustState, cfg: OptimizerConfig):
    """Degenerate order that skips the sparse branch (lam is ignored)."""
    if cfg.order != "lr_only":
        cfg = replace(cfg, order="lr_only")
    return robust_step(w, grad, state, cfg)


def sparse_only_step(w, grad, state: RobustState, cfg: OptimizerConfig):
    """Degenerate order that skips the low-rank branch (alpha is ignored)."""
    if cfg.order != "sparse_only":
        cfg = replace(cfg, order="sparse_only")
    return robust_step(w, grad, state, cfg)


def _matricize(g: np.ndarray, d: int) -> np.ndarray:
    if g.ndim == 1:
        return g.reshape(1, -1)
    if g.ndim == 2:
        return g
    if not 1 <= d < g.ndim:
        raise ValueError(f"matricization dim {d} out of range for order-{g.ndim} tensor")
    return g.reshape(prod(g.shape[:d]), -1)


def galore_step(w: np.ndarray, grad: np.ndarray, state: GaloreState,
                cfg: OptimizerConfig) -> np.ndarray:
    """Matrix baseline: single-sided SVD projection of the matricized gradient.

    The gradient tensor is reshaped so its first `matricize_dim` axes form the
    rows; every `refresh_period` steps the projector is refit to the top
    `matrix_rank` left singular vectors, and Adam runs on the (r x cols)
    projected matrix.  At full row rank the projector is the identity.
    """
    if w.shape != grad.shape:
        raise ValueError(f"weight shape {w.shape} does not match gradient {grad.shape}")
    if cfg.matrix_rank is None:
        raise ValueError("matrix baseline needs matrix_rank")
    if cfg.precision in ("mixed1", "mixed2"):
        grad = half_round(grad)
    g = -np.asarray(grad)
    g_mat = _matricize(g, cfg.matricize_dim)
    r = cfg.matrix_rank
    if not 1 <= r <= min(g_mat.shape):
        raise ValueError(f"matrix rank {r} exceeds matricization {g_mat.shape}")

    if state.t % cfg.refresh_period == 0:
        if r == g_mat.shape[0]:
            eye = np.eye(r)
            state.projector = eye.astype(g.dtype) if np.iscomplexobj(g) else eye
        else:
            state.projector = truncated_svd(g_mat, r, seed=cfg.seed).U
    if state.moments is None:
        state.moments = MomentPair.zeros((r, g_mat.shape[1]), np.iscomplexobj(g))

    projected = state.projector.conj().T @ g_mat
    direction = adam_update(projected, state.moments, cfg.beta1, cfg.beta2, cfg.eps, state.t + 1)
    delta = (cfg.alpha * (state.projector @ direction)).reshape(g.shape)

    if cfg.weight_decay:
        w = (1.0 - cfg.lr * cfg.weight_decay) * w
    w = w + cfg.lr * delta
    if cfg.precision in ("mixed1", "mixed2"):
        w = half_round(w)
    if cfg.precision == "mixed2":
        _quantize_moments(state.moments)
    state.t += 1
    return w


def dense_adam_step(w: np.ndarray, grad: np.ndarray, state: DenseAdamState,
                    cfg: OptimizerConfig) -> np.ndarray:
    """Uncompressed Adam baseline sharing the same update core."""
    if w.shape != grad.shape:
        raise ValueError(f"weight shape {w.shape} does not match gradient {grad.shape}")
    if cfg.precision in ("mixed1", "mixed2"):
        grad = half_round(grad)
    g = -np.asarray(grad)
    if state.moments is None:
        state.moments = MomentPair.zeros(g.shape, np.iscomplexobj(g))
    direction = adam_update(g, state.moments, cfg.beta1, cfg.beta2, cfg.eps, state.t + 1)
    if cfg.weight_decay:
        w = (1.0 - cfg.lr * cfg.weight_decay) * w
    w = w + cfg.lr * direction
    if cfg.precision in ("mixed1", "mixed2"):
        w = half_round(w)
    if cfg.precision == "mixed2":
        _quantize_moments(state.moments)
    state.t += 1
    return w


def _pair_elements(pair: MomentPair | None) -> int:
    if pair is None:
        return 0
    return int(pair.m.size + pair.v.size)


def moment_element_count(state) -> int:
    """Total stored moment entries (complex entries count once)."""
    if isinstance(state, RobustState):
        return _pair_elements(state.sparse_moments) + _pair_elements(state.lowrank_moments)
    return _pair_elements(state.moments)


def _pair_scalars(pair: MomentPair | None) -> int:
    if pair is None:
        return 0
    m_scalars = pair.m.size * (2 if np.iscomplexobj(pair.m) else 1)
    return int(m_scalars + pair.v.size)


def moment_scalar_count(state) -> int:
    """Total stored moment scalars (complex first moments count twice)."""
    if isinstance(state, RobustState):
        return _pair_scalars(state.sparse_moments) + _pair_scalars(state.lowrank_moments)
    return _pair_scalars(state.moments)


def _cfg_to_dict(cfg: OptimizerConfig) -> dict:
    out = {}
    for key, value in vars(cfg).items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def _cfg_from_dict(data: dict) -> OptimizerConfig:
    kwargs = dict(data)
    for key in ("ranks", "structured_counts"):
        if kwargs.get(key) is not None:
            kwargs[key] = tuple(kwargs[key])
    return OptimizerConfig(**kwargs)


def save_checkpoint(directory, state: RobustState, cfg: OptimizerConfig) -> None:
    """Write factors/moments as TGRD files plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"config": _cfg_to_dict(cfg), "t": state.t, "tensors": {}}
    if state.omega is not None:
        if state.omega.kind == "unstructured":
            manifest["omega"] = {"kind": "unstructured", "shape": list(state.omega.shape),
                                 "offsets": state.omega.offsets.tolist()}
        else:
            manifest["omega"] = {"kind": "structured", "shape": list(state.omega.shape),
                                 "mode_indices": [idx.tolist() for idx in state.omega.mode_indices]}
    if state.factors is not None:
        names = []
        for n, u in enumerate(state.factors.factors):
            name = f"factor_{n}.tgrd"
            tgrd_io.write_dense(directory / name, u)
            names.append(name)
        manifest["tensors"]["factors"] = names
    for label, pair in (("sparse", state.sparse_moments), ("lowrank", state.lowrank_moments)):
        if pair is not None:
            tgrd_io.write_dense(directory / f"{label}_m.tgrd", pair.m)
            tgrd_io.write_dense(directory / f"{label}_v.tgrd", pair.v)
            manifest["tensors"][label] = [f"{label}_m.tgrd", f"{label}_v.tgrd"]
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(directory) -> tuple[RobustState, OptimizerConfig]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    cfg = _cfg_from_dict(manifest["config"])
    state = RobustState(t=int(manifest["t"]))
    omega = manifest.get("omega")
    if omega is not None:
        if omega["kind"] == "unstructured":
            state.omega = IndexSet(kind="unstructured", shape=tuple(omega["shape"]),
                                   offsets=np.asarray(omega["offsets"], dtype=np.int64))
        else:
            state.omega = IndexSet(kind="structured", shape=tuple(omega["shape"]),
                                   mode_indices=[np.asarray(ix, dtype=np.int64)
                                                 for ix in omega["mode_indices"]])
    names = manifest["tensors"].get("factors")
    if names:
        state.factors = TuckerFactors([tgrd_io.read_dense(directory / n) for n in names])
    for label, attr in (("sparse", "sparse_moments"), ("lowrank", "lowrank_moments")):
        files = manifest["tensors"].get(label)
        if files:
            pair = MomentPair(m=tgrd_io.read_dense(directory / files[0]),
                              v=tgrd_io.read_dense(directory / files[1]))
            setattr(state, attr, pair)
    return state, cfg
