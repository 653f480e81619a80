"""Signal-to-distortion ratio against a single reference.

The estimate is projected onto the span of the reference and its delayed
copies ``r[n - k]`` (``k = 0 .. taps-1``, zero-filled, truncated to the
signal length). Whatever the projection cannot explain counts as distortion.
With ``taps=1`` this is the scale-invariant SDR; the default of 512 taps
mirrors the distortion filter length of the usual BSS-eval criterion.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lstsq
from scipy.signal import fftconvolve

from .errors import UsageError

__all__ = ["SDR_CAP", "SdrReport", "sdr", "sdr_improvement", "projection"]

SDR_CAP = 200.0
DEFAULT_TAPS = 512


@dataclass(frozen=True)
class SdrReport:
    sdr_out: float
    sdr_in: float
    sdr_improvement: float
    projection_taps: int


def _check(estimate, reference, taps):
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if estimate.ndim != 1 or reference.ndim != 1:
        raise UsageError("sdr expects 1-D waveforms")
    if estimate.shape != reference.shape:
        raise UsageError(f"length mismatch: {estimate.shape[0]} vs {reference.shape[0]}")
    if taps < 1 or taps > len(reference):
        raise UsageError("taps must be in [1, len(reference)]")
    if not np.any(reference):
        raise UsageError("reference has zero energy")
    return estimate, reference


def _truncated_gram(reference, taps):
    """Gram matrix of the truncated delayed references.

    ``G[k, l] = sum_{n >= max(k, l)} r[n-k] r[n-l]`` is the full
    autocorrelation at lag ``|k-l|`` minus the products that fall off the end.
    """
    n = len(reference)
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(reference, size)
    acorr = np.fft.irfft(spec * spec.conj(), size)[:taps]
    gram = np.empty((taps, taps))
    for lag in range(taps):
        count = taps - 1 - lag
        m = np.arange(n - lag - count, n - lag)
        # dropped products for row k are the last k terms of r[m+lag] r[m]
        dropped = np.concatenate([[0.0], np.cumsum((reference[m + lag] * reference[m])[::-1])])
        k = np.arange(count + 1)
        gram[k, k + lag] = acorr[lag] - dropped
        gram[k + lag, k] = gram[k, k + lag]
    return gram


def projection(estimate, reference, taps=DEFAULT_TAPS):
    """Least-squares projection of ``estimate`` onto the delayed references."""
    estimate, reference = _check(estimate, reference, taps)
    n = len(reference)
    if taps == 1:
        coef = np.array([estimate @ reference / (reference @ reference)])
    else:
        gram = _truncated_gram(reference, taps)
        xcorr = fftconvolve(estimate, reference[::-1])[n - 1 : n - 1 + taps]
        coef = lstsq(gram, xcorr, cond=1e-12, lapack_driver="gelsy")[0]
    return fftconvolve(reference, coef)[:n]


def sdr(estimate, reference, taps=DEFAULT_TAPS):
    """SDR in dB; a vanishing residual returns the cap of +200 dB."""
    estimate, reference = _check(estimate, reference, taps)
    proj = projection(estimate, reference, taps)
    signal = float(proj @ proj)
    resid = estimate - proj
    noise = float(resid @ resid)
    if noise <= 1e-20 * max(signal, np.finfo(float).tiny):
        return SDR_CAP
    if signal <= 0:
        return -SDR_CAP
    return float(min(SDR_CAP, 10.0 * np.log10(signal / noise)))


def sdr_improvement(extracted, mixture_channel, reference, taps=DEFAULT_TAPS):
    """Output SDR of ``extracted`` minus input SDR of ``mixture_channel``."""
    out = sdr(extracted, reference, taps)
    inp = sdr(mixture_channel, reference, taps)
    return SdrReport(out, inp, out - inp, taps)
