"""Demixing-filter estimation, Wiener post-filtering and the full extraction loop.

Observations are STFT arrays ``x`` of shape ``(I, J, M)``; demixing systems are
``(I, M, M)`` arrays ``W`` with ``y_ij = W_i^H x_ij``. Column 0 of ``W_i``
extracts the target, columns 1..M-1 span the noise subspace.
"""

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import model as mdl
from .errors import NumericalWarning, SingularMatrixError, UsageError
from .linalg import MAX_CONDITION, batched_gevd, hermitian_eig

__all__ = [
    "NoisyIlrmaConfig",
    "TraceEntry",
    "ExtractionResult",
    "build_covariances",
    "update_demixing",
    "init_demixing",
    "separate",
    "stationarity_residuals",
    "wiener_extract",
    "run_noisy_ilrma",
]


@dataclass(frozen=True)
class NoisyIlrmaConfig:
    """Settings of :func:`run_noisy_ilrma`.

    ``switch_iter=None`` keeps the NMF model for the whole run. ``beta`` of the
    inverse-gamma prior is ``beta_scale * mean(|y_1|^2)`` at the switch.
    """

    n_basis: int = 3
    n_iter: int = 50
    schedule_ratio: int = 10
    switch_iter: Optional[int] = 4
    alpha: float = 1.1
    beta_scale: float = 1e-3
    eps: float = mdl.EPS
    seed: int = 0

    def __post_init__(self):
        if self.n_basis < 1:
            raise UsageError("n_basis must be >= 1")
        if self.n_iter < 0:
            raise UsageError("n_iter must be >= 0")
        if self.schedule_ratio < 1:
            raise UsageError("schedule_ratio must be >= 1")
        if self.switch_iter is not None and self.switch_iter < 0:
            raise UsageError("switch_iter must be >= 0 or None")
        if not (self.alpha > 0 and self.beta_scale > 0 and self.eps > 0):
            raise UsageError("alpha, beta_scale and eps must be positive")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    cost: float
    wall_time: float
    objective: str  # "nll" before switching, "map" after


@dataclass
class ExtractionResult:
    """Wiener-filtered target image ``(I, J, M)`` and the optimization trace."""

    extracted: np.ndarray
    trace: List[TraceEntry] = field(default_factory=list)
    demixing: Optional[np.ndarray] = None
    model: object = None
    lam: Optional[np.ndarray] = None
    switched_at: Optional[int] = None


def _check_observation(x):
    x = np.asarray(x)
    if x.ndim != 3:
        raise UsageError(f"observation must be (I, J, M), got shape {x.shape}")
    if x.shape[1] == 0:
        raise UsageError("observation has no frames")
    return x.astype(np.complex128, copy=False)


def _hermitize(g):
    return 0.5 * (g + np.swapaxes(g.conj(), -1, -2))


def _weighted_cov(xt, weights):
    # xt: (I, M, J); weights: (I, J)
    return _hermitize((xt * weights[:, None, :]) @ np.swapaxes(xt.conj(), -1, -2))


def build_covariances(x, source_model, lam):
    """Weighted covariances ``G_s`` and ``G_n``, each ``(I, M, M)``.

    ``G_s = sum_j x x^H / (r_s + lam r_n) / J`` and ``G_n = sum_j x x^H / r_n / J``.
    """
    x = _check_observation(x)
    r_s, r_n = source_model.variances()
    n_frames = x.shape[1]
    if r_s.shape != x.shape[:2]:
        raise UsageError(f"variance shape {r_s.shape} does not match observation {x.shape[:2]}")
    xt = np.swapaxes(x, 1, 2)
    c = r_s + r_n * np.asarray(lam)[:, None]
    return _weighted_cov(xt, 1.0 / (c * n_frames)), _weighted_cov(xt, 1.0 / (r_n * n_frames))


def update_demixing(g_s, g_n, current):
    """Simultaneous update of all demixing columns from the pencil ``(G_n, G_s)``.

    The eigenvector with the largest generalized eigenvalue, scaled to unit
    ``G_s``-norm, becomes the target filter; the remaining eigenvectors,
    scaled to unit ``G_n``-norm, become the noise filters. Bins whose ``G_s``
    is not positive definite keep their previous filters.

    Returns:
        ``(W, failed)`` with ``failed`` a boolean mask over frequency bins.
    """
    values, h, ok = batched_gevd(g_n, g_s)
    w = np.array(current, dtype=np.complex128, copy=True)
    if np.any(ok):
        h_ok = h[ok]
        norm_s = np.real(np.einsum("imk,imn,ink->ik", h_ok.conj(), g_s[ok], h_ok))
        norm_n = np.real(np.einsum("imk,imn,ink->ik", h_ok.conj(), g_n[ok], h_ok))
        scale = np.concatenate([norm_s[:, :1], norm_n[:, 1:]], axis=1)
        w[ok] = h_ok / np.sqrt(scale)[:, None, :]
    failed = ~ok
    if np.any(failed):
        warnings.warn(
            f"singular pencil at {int(failed.sum())} frequency bin(s); previous filters kept",
            NumericalWarning,
            stacklevel=2,
        )
    return w, failed


def stationarity_residuals(g_s, g_n, w):
    """Residuals of the four stationarity conditions per bin, shape ``(I, 4)``.

    Columns: ``|w_s^H G_s w_s - 1|``, ``||W_n^H G_s w_s||``, ``||w_s^H G_n W_n||``,
    ``||W_n^H G_n W_n - I||_F``.
    """
    ws = w[:, :, 0]
    wn = w[:, :, 1:]
    gs_ws = g_s @ ws[..., None]
    r1 = np.abs(np.einsum("im,im->i", ws.conj(), gs_ws[..., 0]) - 1.0)
    r2 = np.linalg.norm(np.swapaxes(wn.conj(), 1, 2) @ gs_ws, axis=(1, 2))
    r3 = np.linalg.norm(ws.conj()[:, None, :] @ g_n @ wn, axis=(1, 2))
    eye = np.eye(w.shape[-1] - 1)
    r4 = np.linalg.norm(np.swapaxes(wn.conj(), 1, 2) @ g_n @ wn - eye, axis=(1, 2))
    return np.stack([r1, r2, r3, r4], axis=1)


def init_demixing(x, floor=1e-12):
    """Whitening initialization ``w_m = u_m / sqrt(d_m)`` from the sample covariance.

    Eigenvalues are sorted descending (``d_1`` largest) and floored at
    ``floor * trace``. Bins with an all-zero covariance get the identity.
    """
    x = _check_observation(x)
    n_bins, n_frames, m = x.shape
    if n_frames < m:
        warnings.warn(f"only {n_frames} frames for {m} channels", NumericalWarning, stacklevel=2)
    xt = np.swapaxes(x, 1, 2)
    cov = _weighted_cov(xt, np.full((n_bins, n_frames), 1.0 / n_frames))
    trace = np.real(np.trace(cov, axis1=1, axis2=2))
    w = np.tile(np.eye(m, dtype=np.complex128), (n_bins, 1, 1))
    live = trace > 0
    if np.any(~live):
        warnings.warn(
            f"zero covariance at {int((~live).sum())} bin(s); identity used", NumericalWarning, stacklevel=2
        )
    if np.any(live):
        eig = hermitian_eig(cov[live])
        d = np.maximum(eig.eigenvalues, floor * trace[live, None])
        w[live] = eig.eigenvectors / np.sqrt(d)[:, None, :]
    return w


def separate(x, w):
    """``y_ij = W_i^H x_ij`` and the powers ``|y_1|^2``, ``sum_{n>=2} |y_n|^2``."""
    x = _check_observation(x)
    if w.shape != (x.shape[0], x.shape[2], x.shape[2]):
        raise UsageError(f"demixing shape {w.shape} does not match observation {x.shape}")
    y = np.einsum("imn,ijm->ijn", w.conj(), x)
    power = y.real**2 + y.imag**2
    return mdl.SeparatedPowers(power[..., 0], power[..., 1:].sum(axis=-1), x.shape[2]), y


def _projection_back(w):
    """First column of ``(W_i^H)^{-1}``; ill-conditioned bins fall back to ``e_1``."""
    n_bins, m, _ = w.shape
    a = np.zeros((n_bins, m), dtype=np.complex128)
    a[:, 0] = 1.0
    cond = np.linalg.cond(w)
    good = np.isfinite(cond) & (cond < MAX_CONDITION)
    if np.any(good):
        e1 = np.zeros((int(good.sum()), m, 1), dtype=np.complex128)
        e1[:, 0] = 1.0
        a[good] = np.linalg.solve(np.swapaxes(w[good].conj(), 1, 2), e1)[..., 0]
    if np.any(~good):
        warnings.warn(
            f"singular demixing matrix at {int((~good).sum())} bin(s); projection back skipped",
            NumericalWarning,
            stacklevel=3,
        )
    return a


def wiener_extract(x, w, source_model, lam):
    """Multichannel Wiener estimate of the target image.

    ``s_ij = a_i * r_s / (r_s + lam_i r_n) * w_s^H x_ij`` with
    ``a_i = (W_i^H)^{-1} e_1``.
    """
    x = _check_observation(x)
    r_s, r_n = source_model.variances()
    gain = r_s / (r_s + r_n * np.asarray(lam)[:, None])
    linear = np.einsum("im,ijm->ij", w[:, :, 0].conj(), x)
    a = _projection_back(w)
    extracted = a[:, None, :] * (gain * linear)[..., None]
    return ExtractionResult(extracted=extracted, demixing=w, model=source_model, lam=np.asarray(lam))


def _logdets(w):
    sign, logdet = np.linalg.slogdet(w)
    return np.where(sign == 0, -np.inf, logdet)


def run_noisy_ilrma(
    x,
    config=None,
    callback: Optional[Callable] = None,
    on_demixing_update: Optional[Callable] = None,
):
    """Extract the dominant point source from a diffuse-noise mixture.

    Each outer iteration performs one demixing update followed by
    ``schedule_ratio`` sweeps of the NMF updates. After ``switch_iter``
    iterations the demixing matrices are frozen and the NMF model is replaced
    by free variances (seeded from the current NMF values) with an
    inverse-gamma prior on the target.

    Args:
        x: observation ``(I, J, M)`` with ``M >= 2``.
        config: :class:`NoisyIlrmaConfig`.
        callback: optional ``callback(iteration, w, model, lam)`` called after
            every outer iteration (and once for iteration 0). Time spent in it
            is excluded from the trace's wall time.
        on_demixing_update: optional ``hook(iteration, g_s, g_n, w, failed)``
            called right after every demixing update (untimed as well). Its
            arguments live in the whitened coordinates the loop works in;
            ``W0 @ w`` with ``W0 = init_demixing(x)`` maps back.

    Returns:
        :class:`ExtractionResult` with the Wiener output of the final state.
    """
    config = config or NoisyIlrmaConfig()
    x = _check_observation(x)
    n_bins, n_frames, m = x.shape
    if m < 2:
        raise UsageError("at least two channels are required")
    if not np.all(np.isfinite(x)):
        raise UsageError("observation contains non-finite values")
    if np.all(x == 0):
        raise SingularMatrixError("observation is zero in every frequency bin")

    rng = np.random.default_rng(config.seed)
    clock = 0.0
    start = time.perf_counter()

    # Iterate in the coordinates whitened by the initial filters: x' = W0^H x
    # and W = W0 W'. The iterates are the same, but the weighted covariances
    # stay well conditioned even where the array covariance is nearly singular.
    w0 = init_demixing(x, floor=config.eps)
    xw = np.einsum("imn,ijm->ijn", w0.conj(), x)
    logdet0 = _logdets(w0)
    w = np.tile(np.eye(m, dtype=np.complex128), (n_bins, 1, 1))
    source = mdl.init_nmf(n_bins, n_frames, config.n_basis, rng)
    lam = np.ones(n_bins)
    powers, _ = separate(xw, w)
    logdet = logdet0 + _logdets(w)

    clock += time.perf_counter() - start
    trace = [TraceEntry(0, mdl.cost(powers, source, lam, logdet), clock, "nll")]
    if callback is not None:
        callback(0, w0 @ w, source, lam)

    switched_at = None
    for it in range(1, config.n_iter + 1):
        start = time.perf_counter()
        free_phase = config.switch_iter is not None and it > config.switch_iter
        if free_phase and switched_at is None:
            switched_at = it
            r_s, r_n = source.variances()
            beta = config.beta_scale * float(np.mean(powers.p1))
            source = mdl.FreeSourceModel(
                np.maximum(r_s, config.eps), np.maximum(r_n, config.eps), config.alpha, max(beta, config.eps)
            )
        if free_phase:
            for _ in range(config.schedule_ratio):
                source, lam = mdl.update_free(source, lam, powers, eps=config.eps)
            value = mdl.map_objective(powers, source, lam, logdet)
            kind = "map"
        else:
            g_s, g_n = build_covariances(xw, source, lam)
            w, failed = update_demixing(g_s, g_n, w)
            if on_demixing_update is not None:
                paused = time.perf_counter()
                on_demixing_update(it, g_s, g_n, w, failed)
                start += time.perf_counter() - paused
            powers, _ = separate(xw, w)
            logdet = logdet0 + _logdets(w)
            for _ in range(config.schedule_ratio):
                source, lam = mdl.update_nmf(source, lam, powers, eps=config.eps)
            value = mdl.cost(powers, source, lam, logdet)
            kind = "nll"
        clock += time.perf_counter() - start
        trace.append(TraceEntry(it, value, clock, kind))
        if callback is not None:
            callback(it, w0 @ w, source, lam)

    w = w0 @ w
    result = wiener_extract(x, w, source, lam)
    result.trace = trace
    result.switched_at = switched_at
    return result
