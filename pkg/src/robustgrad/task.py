"""Synthetic spectral-operator regression with hand-derived gradients.

The model applies a learnable complex multiplier to the lowest retained
Fourier modes of the input field:

    y = IDFT( R . truncate(DFT(x)) ),

which is linear in the weight tensor R (shape c_in x c_out x m for a 1-d
grid, c_in x c_out x m x m for 2-d).  Inputs are seeded Gaussian random
fields with a configurable power-law spectrum; targets come from a hidden
multiplier R*, optionally contaminated with planted spikes so gradients
carry outliers.  The loss is the mean per-sample relative L2 error, and its
gradient is computed analytically through the adjoint of the forward chain
(fft adjoint = n * ifft, truncation adjoint = zero padding).

Gradients use the steepest-descent convention for real losses of complex
weights: loss(R + d) ~ loss(R) + Re<g, d>, so real and imaginary parts are
independently checkable with central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .fftkit import fft, fft2, ifft, ifft2, is_power_of_two

__all__ = [
    "SpectralTask",
    "Dataset",
    "generate_task",
    "LinearSpectralModel",
    "TwoLayerSpectralModel",
    "relative_l2",
    "h1_relative",
]


@dataclass
class SpectralTask:
    grid: int = 64
    c_in: int = 8
    c_out: int = 8
    modes: int = 16
    dim: int = 1  # grid dimension: 1 or 2
    n_train: int = 512
    n_test: int = 128
    noise: float = 0.0
    spectrum_decay: float = 2.0
    channel_rank: int | None = None  # restrict inputs to this many channel directions
    target_kind: str = "smooth"  # smooth | spiky
    target_ranks: tuple[int, ...] | None = None
    spike_count: int = 8
    spike_scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not is_power_of_two(self.grid) or self.grid > 256:
            raise ValueError("grid size must be a power of two <= 256")
        if not 1 <= self.modes <= self.grid // 2:
            raise ValueError("retained modes must satisfy 1 <= m <= n/2")
        if self.dim not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if self.target_kind not in ("smooth", "spiky"):
            raise ValueError(f"unknown target kind {self.target_kind!r}")
        if self.channel_rank is not None and not 1 <= self.channel_rank <= self.c_in:
            raise ValueError("channel rank out of range")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.dim == 1:
            return (self.c_in, self.c_out, self.modes)
        return (self.c_in, self.c_out, self.modes, self.modes)

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["target_ranks"] is not None:
            out["target_ranks"] = list(out["target_ranks"])
        return out


@dataclass
class Dataset:
    task: SpectralTask
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    r_star: np.ndarray


def _mode_spectrum(task: SpectralTask) -> np.ndarray:
    """Per-mode field variance S(k) = (1 + k_eff)^(-decay), k_eff symmetric."""
    n = task.grid
    k = np.arange(n)
    k_eff = np.minimum(k, n - k)
    spec = (1.0 + k_eff.astype(np.float64)) ** (-task.spectrum_decay)
    if task.dim == 1:
        return spec
    return np.outer(spec, spec)


def _random_fields(task: SpectralTask, count: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded Gaussian random fields, one per (sample, channel)."""
    n = task.grid
    spec = _mode_spectrum(task)
    if task.dim == 1:
        shape = (count, task.c_in, n)
        coeff = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        xhat = coeff * np.sqrt(spec)
        fields = ifft(xhat, axis=-1) * np.sqrt(n)
    else:
        shape = (count, task.c_in, n, n)
        coeff = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        xhat = coeff * np.sqrt(spec)
        fields = ifft2(xhat) * n
    if task.channel_rank is not None:
        # inputs become combinations of channel_rank separable basis fields,
        # so gradients are rank-deficient along the input-channel mode
        r = task.channel_rank
        basis = rng.standard_normal((task.c_in, r)) + 1j * rng.standard_normal((task.c_in, r))
        basis, _ = np.linalg.qr(basis)
        fields = np.einsum("cr,sr...->sc...", basis, fields[:, :r])
    return fields


def _random_target(task: SpectralTask, rng: np.random.Generator) -> np.ndarray:
    shape = task.weight_shape
    ranks = task.target_ranks
    if ranks is None:
        ranks = tuple(max(1, s // 4) for s in shape)
    core_shape = tuple(min(r, s) for r, s in zip(ranks, shape))
    core = rng.standard_normal(core_shape) + 1j * rng.standard_normal(core_shape)
    r_star = core
    for n_mode, (dim, r) in enumerate(zip(shape, core_shape)):
        q = rng.standard_normal((dim, r)) + 1j * rng.standard_normal((dim, r))
        q, _ = np.linalg.qr(q)
        r_star = np.tensordot(q, r_star, axes=([1], [n_mode]))
        r_star = np.moveaxis(r_star, 0, n_mode)
    r_star = np.ascontiguousarray(r_star)  # flat views below must alias it
    r_star /= max(np.abs(r_star).max(), 1e-12)
    if task.target_kind == "spiky":
        rms = float(np.sqrt(np.mean(np.abs(r_star) ** 2)))
        flat = r_star.reshape(-1)
        picks = rng.choice(flat.size, size=min(task.spike_count, flat.size), replace=False)
        phases = np.exp(2j * np.pi * rng.random(picks.size))
        flat[picks] = task.spike_scale * rms * phases
    return r_star


def generate_task(task: SpectralTask) -> Dataset:
    """Deterministic dataset from the task seed with a fixed train/test split."""
    rng = np.random.default_rng(task.seed)
    r_star = _random_target(task, rng)
    model = LinearSpectralModel(task)
    x_all = _random_fields(task, task.n_train + task.n_test, rng)
    y_all = model.forward(r_star, x_all)
    if task.noise > 0.0:
        scale = task.noise * np.sqrt(np.mean(np.abs(y_all) ** 2))
        y_all = y_all + scale * (
            rng.standard_normal(y_all.shape) + 1j * rng.standard_normal(y_all.shape)
        ) / np.sqrt(2.0)
    return Dataset(
        task=task,
        x_train=x_all[: task.n_train],
        y_train=y_all[: task.n_train],
        x_test=x_all[task.n_train:],
        y_test=y_all[task.n_train:],
        r_star=r_star,
    )


def relative_l2(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean per-sample ||pred - target|| / ||target||."""
    flat_p = pred.reshape(pred.shape[0], -1)
    flat_t = target.reshape(target.shape[0], -1)
    num = np.linalg.norm(flat_p - flat_t, axis=1)
    den = np.linalg.norm(flat_t, axis=1)
    den = np.where(den == 0.0, 1.0, den)
    return float(np.mean(num / den))


def h1_relative(pred: np.ndarray, target: np.ndarray, grid: int, dim: int) -> float:
    """Relative Sobolev H1 error via spectral differentiation (optional metric)."""
    k = np.arange(grid)
    k = np.minimum(k, grid - k).astype(np.float64)
    if dim == 1:
        wt = np.sqrt(1.0 + k**2)
        ph = fft(pred, axis=-1) * wt
        th = fft(target, axis=-1) * wt
    else:
        wt = np.sqrt(1.0 + k[:, None] ** 2 + k[None, :] ** 2)
        ph = fft2(pred) * wt
        th = fft2(target) * wt
    return relative_l2(ph, th)


@dataclass
class SpectralCache:
    """Precomputed input/target spectra for the linear model.

    Because the layer is diagonal in Fourier space, the relative L2 loss and
    its gradient are computable from the retained input modes, the retained
    target modes, and the target's out-of-band energy (Parseval), with no
    transforms in the training loop.
    """

    xm: np.ndarray
    tm: np.ndarray
    tail_sq: np.ndarray
    t_norm: np.ndarray
    n_grid: int


class LinearSpectralModel:
    """Single spectral multiplier layer; loss gradients are closed-form."""

    def __init__(self, task: SpectralTask):
        self.task = task

    def _spectra(self, x: np.ndarray) -> np.ndarray:
        m = self.task.modes
        if self.task.dim == 1:
            return fft(x, axis=-1)[..., :m]
        return fft2(x)[..., :m, :m]

    def forward(self, r: np.ndarray, x: np.ndarray) -> np.ndarray:
        task = self.task
        xm = self._spectra(x)
        if task.dim == 1:
            ym = np.einsum("sik,iok->sok", xm, r)
            yhat = np.zeros((x.shape[0], task.c_out, task.grid), dtype=np.complex128)
            yhat[..., : task.modes] = ym
            return ifft(yhat, axis=-1)
        ym = np.einsum("sikl,iokl->sokl", xm, r)
        yhat = np.zeros((x.shape[0], task.c_out, task.grid, task.grid), dtype=np.complex128)
        yhat[..., : task.modes, : task.modes] = ym
        return ifft2(yhat)

    def loss(self, r: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return relative_l2(self.forward(r, x), y)

    def loss_and_grad(self, r: np.ndarray, x: np.ndarray, y: np.ndarray):
        """Relative-L2 loss and its steepest-descent gradient w.r.t. conj-linear R."""
        task = self.task
        n_samples = x.shape[0]
        xm = self._spectra(x)
        pred = self.forward(r, x)
        err = pred - y
        flat_e = err.reshape(n_samples, -1)
        flat_t = y.reshape(n_samples, -1)
        e_norm = np.linalg.norm(flat_e, axis=1)
        t_norm = np.linalg.norm(flat_t, axis=1)
        t_norm = np.where(t_norm == 0.0, 1.0, t_norm)
        loss = float(np.mean(e_norm / t_norm))

        weights = 1.0 / (np.maximum(e_norm, 1e-300) * t_norm * n_samples)
        weights = np.where(e_norm == 0.0, 0.0, weights)
        if task.dim == 1:
            ehat = fft(err, axis=-1)[..., : task.modes] / task.grid  # adjoint of ifft
            grad = np.einsum("s,sik,sok->iok", weights, np.conj(xm), ehat)
        else:
            ehat = fft2(err)[..., : task.modes, : task.modes] / task.grid**2
            grad = np.einsum("s,sikl,sokl->iokl", weights, np.conj(xm), ehat)
        return loss, grad

    def build_cache(self, x: np.ndarray, y: np.ndarray) -> SpectralCache:
        task = self.task
        n_grid = task.grid if task.dim == 1 else task.grid**2
        xm = self._spectra(x)
        if task.dim == 1:
            yhat = fft(y, axis=-1)
            tm = yhat[..., : task.modes].copy()
        else:
            yhat = fft2(y)
            tm = yhat[..., : task.modes, : task.modes].copy()
        total_sq = np.sum(np.abs(yhat.reshape(y.shape[0], -1)) ** 2, axis=1)
        kept_sq = np.sum(np.abs(tm.reshape(y.shape[0], -1)) ** 2, axis=1)
        tail_sq = np.maximum(total_sq - kept_sq, 0.0)
        t_norm = np.linalg.norm(y.reshape(y.shape[0], -1), axis=1)
        t_norm = np.where(t_norm == 0.0, 1.0, t_norm)
        return SpectralCache(xm=xm, tm=tm, tail_sq=tail_sq, t_norm=t_norm, n_grid=n_grid)

    def _cached_errors(self, r: np.ndarray, cache: SpectralCache, idx):
        xm = cache.xm if idx is None else cache.xm[idx]
        tm = cache.tm if idx is None else cache.tm[idx]
        tail = cache.tail_sq if idx is None else cache.tail_sq[idx]
        tnorm = cache.t_norm if idx is None else cache.t_norm[idx]
        if self.task.dim == 1:
            ym = np.einsum("sik,iok->sok", xm, r)
        else:
            ym = np.einsum("sikl,iokl->sokl", xm, r)
        em = ym - tm
        em_sq = np.sum(np.abs(em.reshape(em.shape[0], -1)) ** 2, axis=1)
        e_norm = np.sqrt((em_sq + tail) / cache.n_grid)  # Parseval
        return xm, em, e_norm, tnorm

    def cached_loss(self, r: np.ndarray, cache: SpectralCache, idx=None) -> float:
        _, _, e_norm, t_norm = self._cached_errors(r, cache, idx)
        return float(np.mean(e_norm / t_norm))

    def cached_loss_and_grad(self, r: np.ndarray, cache: SpectralCache, idx=None):
        """Same values as loss_and_grad, computed without any transforms."""
        xm, em, e_norm, t_norm = self._cached_errors(r, cache, idx)
        n_samples = em.shape[0]
        loss = float(np.mean(e_norm / t_norm))
        weights = np.where(
            e_norm == 0.0, 0.0,
            1.0 / (np.maximum(e_norm, 1e-300) * t_norm * n_samples * cache.n_grid),
        )
        if self.task.dim == 1:
            grad = np.einsum("s,sik,sok->iok", weights, np.conj(xm), em)
        else:
            grad = np.einsum("s,sikl,sokl->iokl", weights, np.conj(xm), em)
        return loss, grad


def _sep_tanh(z: np.ndarray) -> np.ndarray:
    return np.tanh(z.real) + 1j * np.tanh(z.imag)


def _sep_tanh_backward(z: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    dre = (1.0 - np.tanh(z.real) ** 2) * cotangent.real
    dim = (1.0 - np.tanh(z.imag) ** 2) * cotangent.imag
    return dre + 1j * dim


class TwoLayerSpectralModel:
    """Two spectral layers with a separable tanh nonlinearity in between.

    The hidden width equals c_out; both multipliers share the weight shape of
    the linear model.  The backward pass chains the adjoints by hand (the
    nonlinearity acts independently on real and imaginary parts).
    """

    def __init__(self, task: SpectralTask):
        self.task = task

    def _fft_m(self, v: np.ndarray) -> np.ndarray:
        m = self.task.modes
        if self.task.dim == 1:
            return fft(v, axis=-1)[..., :m]
        return fft2(v)[..., :m, :m]

    def _ifft_pad(self, vm: np.ndarray) -> np.ndarray:
        task = self.task
        n = task.grid
        if task.dim == 1:
            full = np.zeros(vm.shape[:-1] + (n,), dtype=np.complex128)
            full[..., : task.modes] = vm
            return ifft(full, axis=-1)
        full = np.zeros(vm.shape[:-2] + (n, n), dtype=np.complex128)
        full[..., : task.modes, : task.modes] = vm
        return ifft2(full)

    def _contract(self, r: np.ndarray, vm: np.ndarray) -> np.ndarray:
        if self.task.dim == 1:
            return np.einsum("sik,iok->sok", vm, r)
        return np.einsum("sikl,iokl->sokl", vm, r)

    def forward(self, r1: np.ndarray, r2: np.ndarray, x: np.ndarray) -> np.ndarray:
        hidden = self._ifft_pad(self._contract(r1, self._fft_m(x)))
        return self._ifft_pad(self._contract(r2, self._fft_m(_sep_tanh(hidden))))

    def loss(self, r1, r2, x, y) -> float:
        return relative_l2(self.forward(r1, r2, x), y)

    def loss_and_grad(self, r1: np.ndarray, r2: np.ndarray, x: np.ndarray, y: np.ndarray):
        task = self.task
        n, m = task.grid, task.modes
        n_samples = x.shape[0]
        scale = n if task.dim == 1 else n * n

        xm = self._fft_m(x)
        pre = self._contract(r1, xm)
        hidden = self._ifft_pad(pre)
        act = _sep_tanh(hidden)
        am = self._fft_m(act)
        pred = self._ifft_pad(self._contract(r2, am))

        err = pred - y
        flat_e = err.reshape(n_samples, -1)
        flat_t = y.reshape(n_samples, -1)
        e_norm = np.linalg.norm(flat_e, axis=1)
        t_norm = np.linalg.norm(flat_t, axis=1)
        t_norm = np.where(t_norm == 0.0, 1.0, t_norm)
        loss = float(np.mean(e_norm / t_norm))
        weights = np.where(e_norm == 0.0, 0.0,
                           1.0 / (np.maximum(e_norm, 1e-300) * t_norm * n_samples))

        # cotangent at the output, pulled through the last ifft+pad
        wexp = weights.reshape((-1,) + (1,) * (err.ndim - 1))
        cot_out = wexp * err
        if task.dim == 1:
            cot_ym2 = fft(cot_out, axis=-1)[..., :m] / scale
            g2 = np.einsum("sik,sok->iok", np.conj(am), cot_ym2)
            cot_am = np.einsum("iok,sok->sik", np.conj(r2), cot_ym2)
        else:
            cot_ym2 = fft2(cot_out)[..., :m, :m] / scale
            g2 = np.einsum("sikl,sokl->iokl", np.conj(am), cot_ym2)
            cot_am = np.einsum("iokl,sokl->sikl", np.conj(r2), cot_ym2)
        # adjoint of (crop o fft): pad then scale * ifft
        if task.dim == 1:
            padded = np.zeros(cot_am.shape[:-1] + (n,), dtype=np.complex128)
            padded[..., :m] = cot_am
            cot_act = ifft(padded, axis=-1) * scale
        else:
            padded = np.zeros(cot_am.shape[:-2] + (n, n), dtype=np.complex128)
            padded[..., :m, :m] = cot_am
            cot_act = ifft2(padded) * scale
        cot_hidden = _sep_tanh_backward(hidden, cot_act)
        if task.dim == 1:
            cot_pre = fft(cot_hidden, axis=-1)[..., :m] / scale  # adjoint of pad o ifft
            g1 = np.einsum("sik,sok->iok", np.conj(xm), cot_pre)
        else:
            cot_pre = fft2(cot_hidden)[..., :m, :m] / scale
            g1 = np.einsum("sikl,sokl->iokl", np.conj(xm), cot_pre)
        return loss, g1, g2
