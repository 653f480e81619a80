"""Short-time Fourier transform with least-squares overlap-add synthesis.

Spectrograms are complex arrays of shape ``(n_bins, n_frames, n_channels)``,
i.e. indexed ``(i, j, m)``. Waveforms are ``(n_channels, n_samples)``; a 1-D
waveform is treated as a single channel.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import UsageError

__all__ = ["StftConfig", "analyze", "synthesize", "hamming_window"]


@dataclass(frozen=True)
class StftConfig:
    """Analysis settings. Defaults: 64 ms Hamming window, 32 ms shift at 16 kHz."""

    sample_rate: int = 16000
    window_length: int = 1024
    hop_length: int = 512
    window_kind: str = "hamming"

    def __post_init__(self):
        if self.window_kind != "hamming":
            raise UsageError(f"unsupported window {self.window_kind!r}")
        if self.window_length <= 0 or self.window_length % 2:
            raise UsageError("window_length must be a positive even number")
        if not 0 < self.hop_length <= self.window_length:
            raise UsageError("hop_length must be in (0, window_length]")
        if self.sample_rate <= 0:
            raise UsageError("sample_rate must be positive")

    @property
    def n_bins(self):
        return self.window_length // 2 + 1

    def bin_frequencies(self):
        return np.arange(self.n_bins) * self.sample_rate / self.window_length


def hamming_window(length):
    """Periodic Hamming window (DFT-even)."""
    n = np.arange(length)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / length)


def _as_channels(signal):
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 1:
        signal = signal[np.newaxis, :]
    if signal.ndim != 2:
        raise UsageError(f"waveform must be 1-D or (channels, samples), got shape {signal.shape}")
    return signal


def _padding(n_samples, config):
    half = config.window_length // 2
    # extra tail so the last sample still sits under a full set of frames
    extra = (-n_samples) % config.hop_length
    return half, half + extra


def analyze(signal, config=None):
    """Forward STFT of a (multichannel) waveform.

    The signal is zero-padded by half a window at the front and by half a
    window (plus up to ``hop - 1`` samples to complete the last hop) at the
    back, so every input sample is covered by the same number of frames.
    """
    config = config or StftConfig()
    x = _as_channels(signal)
    if x.shape[1] == 0 or x.shape[0] == 0:
        raise UsageError("empty signal")
    if x.shape[1] < config.window_length:
        raise UsageError(
            f"signal has {x.shape[1]} samples, fewer than window_length={config.window_length}"
        )
    front, back = _padding(x.shape[1], config)
    padded = np.pad(x, ((0, 0), (front, back)))
    frames = sliding_window_view(padded, config.window_length, axis=1)[:, :: config.hop_length]
    spec = np.fft.rfft(frames * hamming_window(config.window_length), axis=-1)
    return np.ascontiguousarray(spec.transpose(2, 1, 0))


def synthesize(spec, config=None, length=None):
    """Inverse STFT by weighted overlap-add with the least-squares dual window.

    Args:
        spec: complex array ``(n_bins, n_frames, n_channels)``.
        config: the configuration used for :func:`analyze`.
        length: number of output samples; defaults to ``(n_frames - 1) * hop``,
            the longest length compatible with the frame grid.

    Returns:
        Real array ``(n_channels, length)``.
    """
    config = config or StftConfig()
    spec = np.asarray(spec)
    if spec.ndim != 3 or spec.shape[0] != config.n_bins:
        raise UsageError(
            f"spectrogram shape {spec.shape} incompatible with window_length={config.window_length}"
        )
    n_bins, n_frames, n_channels = spec.shape
    win, hop = config.window_length, config.hop_length
    window = hamming_window(win)

    frames = np.fft.irfft(spec.transpose(2, 1, 0), n=win, axis=-1) * window
    total = (n_frames - 1) * hop + win
    out = np.zeros((n_channels, total))
    norm = np.zeros(total)
    for j in range(n_frames):
        out[:, j * hop : j * hop + win] += frames[:, j]
        norm[j * hop : j * hop + win] += window**2
    covered = norm > 1e-10
    out[:, covered] /= norm[covered]
    out[:, ~covered] = 0.0

    front = win // 2
    max_length = total - win
    if length is None:
        length = max_length
    if not 0 <= length <= max_length:
        raise UsageError(f"length {length} exceeds the {max_length} samples the frames cover")
    return out[:, front : front + length]
