"""Synthetic point-source plus diffuse-noise mixtures for a uniform linear array.

Sources are rendered as far-field plane waves. Each source is delayed per
microphone by a frequency-domain fractional delay applied to the full-length
signal (zero-padded, so no wrap-around reaches the kept samples). Optional
reverberation adds a synthetic exponentially decaying Gaussian tail per
source and microphone.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .errors import DataError, UsageError

__all__ = [
    "ArrayGeometry",
    "Reverb",
    "MixtureSpec",
    "GroundTruth",
    "steering_vector",
    "render_mixture",
    "default_noise_angles",
    "speech_like",
    "diffuse_noise_signals",
    "default_mixture_spec",
    "plane_wave_spectrogram",
]


@dataclass(frozen=True)
class ArrayGeometry:
    mic_count: int = 4
    spacing: float = 0.05
    speed_of_sound: float = 343.0

    def __post_init__(self):
        if self.mic_count < 2:
            raise UsageError("an array needs at least two microphones")
        if not self.spacing > 0 or not self.speed_of_sound > 0:
            raise UsageError("spacing and speed of sound must be positive")

    def delays(self, angle):
        """Propagation delay (seconds) to each microphone relative to mic 1."""
        m = np.arange(self.mic_count)
        return m * self.spacing * np.sin(np.deg2rad(angle)) / self.speed_of_sound


@dataclass(frozen=True)
class Reverb:
    rt60: float = 0.3
    rir_length: int = 2048
    rng_seed: int = 0
    drr_db: float = 3.0

    def __post_init__(self):
        if not self.rt60 > 0 or self.rir_length < 2:
            raise UsageError("rt60 must be positive and rir_length >= 2")


@dataclass
class MixtureSpec:
    target_signal: np.ndarray
    noise_signals: Sequence[np.ndarray]
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry)
    target_angle: float = 0.0
    noise_angles: Optional[Sequence[float]] = None
    input_snr: float = 0.0
    reverb: Optional[Reverb] = None
    sample_rate: int = 16000
    sensor_noise_db: Optional[float] = None
    sensor_seed: int = 0

    def resolved_noise_angles(self):
        if self.noise_angles is None:
            return list(default_noise_angles(len(self.noise_signals)))
        return list(self.noise_angles)


@dataclass
class GroundTruth:
    """Waveforms ``(M, N)``; ``mixture`` is exactly ``target_image + noise_image``."""

    mixture: np.ndarray
    target_image: np.ndarray
    noise_image: np.ndarray
    sample_rate: int = 16000


def default_noise_angles(count=19):
    """``count`` equally spaced directions covering [-90, 90] degrees."""
    return np.linspace(-90.0, 90.0, count)


def steering_vector(geometry, angle, frequency):
    """Far-field ULA response ``exp(-2j pi f tau_m)``.

    ``frequency`` may be a scalar or an array; the microphone axis is last.
    """
    if abs(angle) > 90:
        raise UsageError("angle must lie in [-90, 90] degrees")
    tau = geometry.delays(angle)
    f = np.asarray(frequency, dtype=float)[..., None]
    return np.exp(-2j * np.pi * f * tau)


def _plane_wave(signal, geometry, angle, sample_rate):
    n = len(signal)
    max_delay = geometry.delays(90.0)[-1] * sample_rate
    n_fft = int(2 ** np.ceil(np.log2(n + 2 * np.ceil(max_delay) + 16)))
    spectrum = np.fft.rfft(signal, n=n_fft)
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    steer = steering_vector(geometry, angle, freqs)
    # Nyquist bin must stay real for an exact real inverse
    steer[-1] = np.real(steer[-1])
    images = np.fft.irfft(spectrum[:, None] * steer, n=n_fft, axis=0)
    return np.ascontiguousarray(images[:n].T)


def _reverb_tail(reverb, source_index, mic_count, sample_rate):
    rng = np.random.default_rng([reverb.rng_seed, source_index])
    t = np.arange(reverb.rir_length) / sample_rate
    decay = np.exp(-3.0 * np.log(10.0) * t / reverb.rt60)
    tail = rng.standard_normal((mic_count, reverb.rir_length)) * decay
    tail[:, 0] = 0.0
    energy = np.sum(tail**2, axis=1, keepdims=True)
    return tail * np.sqrt(10 ** (-reverb.drr_db / 10) / energy)


def _render_source(signal, angle, spec, source_index):
    image = _plane_wave(signal, spec.geometry, angle, spec.sample_rate)
    if spec.reverb is not None:
        tail = _reverb_tail(spec.reverb, source_index, spec.geometry.mic_count, spec.sample_rate)
        for m in range(spec.geometry.mic_count):
            image[m] += fftconvolve(signal, tail[m])[: len(signal)]
    return image


def render_mixture(spec):
    """Render target and noise images and scale the noise to the requested SNR.

    The noise image is multiplied by a single factor so that
    ``10 log10(||target_image||^2 / ||noise_image||^2) == input_snr``.
    """
    angles = spec.resolved_noise_angles()
    if len(angles) != len(spec.noise_signals) or not spec.noise_signals:
        raise UsageError("noise_angles and noise_signals must be non-empty and of equal length")
    if not np.isfinite(spec.input_snr):
        raise UsageError("input_snr must be finite")
    for a in [spec.target_angle, *angles]:
        if abs(a) > 90:
            raise UsageError("angles must lie in [-90, 90] degrees")

    length = min(len(spec.target_signal), *(len(s) for s in spec.noise_signals))
    target = np.asarray(spec.target_signal, dtype=float)[:length]
    target_image = _render_source(target, spec.target_angle, spec, 0)

    noise_image = np.zeros_like(target_image)
    for k, (sig, ang) in enumerate(zip(spec.noise_signals, angles)):
        noise_image += _render_source(np.asarray(sig, dtype=float)[:length], ang, spec, k + 1)
    if spec.sensor_noise_db is not None:
        # spatially white microphone self-noise, relative to the diffuse noise power
        level = np.sqrt(np.mean(noise_image**2) * 10 ** (spec.sensor_noise_db / 10))
        sensor = np.random.default_rng([spec.sensor_seed, 7919]).standard_normal(noise_image.shape)
        noise_image += level * sensor

    e_target = float(np.sum(target_image**2))
    e_noise = float(np.sum(noise_image**2))
    if e_target <= 0 or e_noise <= 0:
        raise DataError("target and noise must both have nonzero energy")
    noise_image *= np.sqrt(e_target / e_noise / 10 ** (spec.input_snr / 10))
    return GroundTruth(target_image + noise_image, target_image, noise_image, spec.sample_rate)


def _resonator(freqs, bandwidths, sample_rate):
    """All-pole filter with one conjugate pole pair per (frequency, bandwidth)."""
    a = np.array([1.0])
    for f, bw in zip(freqs, bandwidths):
        r = np.exp(-np.pi * bw / sample_rate)
        theta = 2 * np.pi * f / sample_rate
        a = np.convolve(a, [1.0, -2 * r * np.cos(theta), r * r])
    return a


def speech_like(n_samples, sample_rate, rng):
    """Voiced syllable bursts with drifting pitch and formants, separated by pauses.

    A stand-in for recorded speech: sparse in time, harmonic, and spectrally
    varying from one syllable to the next.
    """
    out = np.zeros(n_samples)
    pos = int(rng.uniform(0.05, 0.2) * sample_rate)
    while pos < n_samples:
        dur = int(rng.uniform(0.12, 0.35) * sample_rate)
        seg_len = min(dur, n_samples - pos)
        if seg_len < 64:
            break
        t = np.arange(seg_len) / sample_rate
        f0 = rng.uniform(100, 220) * (1 + rng.uniform(-0.15, 0.15) * t / max(t[-1], 1e-3))
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        # band-limited glottal-like excitation
        n_harm = int(0.45 * sample_rate / f0.max())
        k = np.arange(1, n_harm + 1)[:, None]
        excitation = np.sum(np.sin(k * phase) / k**0.7, axis=0)
        excitation += 0.05 * rng.standard_normal(seg_len)
        formants = np.sort(rng.uniform([250, 900, 2000], [850, 2300, 3500]))
        a = _resonator(formants, [80, 120, 180], sample_rate)
        voiced = lfilter([1.0], a, excitation)
        env = np.sin(np.pi * np.arange(seg_len) / seg_len) ** 2
        out[pos : pos + seg_len] += rng.uniform(0.4, 1.0) * env * voiced / (np.std(voiced) + 1e-12)
        pos += seg_len + int(rng.uniform(0.05, 0.35) * sample_rate)
    return out / (np.std(out) + 1e-12)


def diffuse_noise_signals(count, n_samples, sample_rate, rng):
    """``count`` mutually independent colored noises with slow level fluctuation."""
    signals = []
    t = np.arange(n_samples) / sample_rate
    for _ in range(count):
        white = rng.standard_normal(n_samples)
        pole = rng.uniform(0.6, 0.95)
        colored = lfilter([1.0], [1.0, -pole], white)
        rate = rng.uniform(0.2, 1.5)
        level = 1.0 + 0.5 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        sig = colored * level
        signals.append(sig / np.std(sig))
    return signals


def default_mixture_spec(
    seed=0,
    duration=8.8,
    sample_rate=16000,
    target_angle=0.0,
    input_snr=0.0,
    n_noise=19,
    geometry=None,
    reverb=None,
):
    """Bundled synthetic scene: one speech-like target and ``n_noise`` noise directions."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    target = speech_like(n, sample_rate, rng)
    noises = diffuse_noise_signals(n_noise, n, sample_rate, rng)
    return MixtureSpec(
        target_signal=target,
        noise_signals=noises,
        geometry=geometry or ArrayGeometry(),
        target_angle=target_angle,
        noise_angles=list(default_noise_angles(n_noise)),
        input_snr=input_snr,
        reverb=reverb,
        sample_rate=sample_rate,
    )


def plane_wave_spectrogram(spectrum, geometry, angle, config):
    """Exact rank-1 observation ``x_ij = a_i s_ij`` built in the STFT domain.

    Args:
        spectrum: single-channel STFT ``(I, J)`` or ``(I, J, 1)``.
        config: :class:`~noisy_ilrma.stft.StftConfig` giving the bin frequencies.

    Returns:
        ``(I, J, M)`` observation.
    """
    spectrum = np.asarray(spectrum)
    if spectrum.ndim == 3:
        spectrum = spectrum[..., 0]
    steer = steering_vector(geometry, angle, config.bin_frequencies())
    return steer[:, None, :] * spectrum[..., None]
