"""Windowed short-time analysis producing magnitude spectrograms.

Frames are centered: frame ``t`` is centered at sample ``t * hop_length``
of the input, with reflect padding at both ends. Magnitudes (not powers)
are used throughout, so downstream multiplicative factorizations recombine
by plain elementwise products.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window of the given length.

    The periodic variant (denominator ``length``, not ``length - 1``) is
    used everywhere; its DFT vanishes exactly beyond the first bin when the
    window fills the whole transform, which low-bin masking downstream
    relies on.
    """
    if length <= 0:
        raise ValueError(f"window length must be positive, got {length}")
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters for short-time Fourier magnitudes.

    Defaults target 24 kHz speech analysis: 40 ms window (960 samples),
    5 ms hop (120 samples), 1024-point FFT (next power of two above the
    window, zero-padded).
    """

    window_length: int = 960
    hop_length: int = 120
    fft_size: int = 1024
    window_function: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop_length <= self.window_length <= self.fft_size):
            raise ValueError(
                "require 0 < hop_length <= window_length <= fft_size, got "
                f"hop={self.hop_length} window={self.window_length} fft={self.fft_size}"
            )
        if not _is_power_of_two(self.fft_size):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.window_function != "hann":
            raise ValueError(f"unsupported window function: {self.window_function!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        return hann_window(self.window_length)


@dataclass
class Waveform:
    """A mono waveform with amplitudes in [-1, 1].

    Parameters
    ----------
    samples : np.ndarray
        Real amplitudes. Finite, within [-1, 1]; out-of-range values are
        rejected at construction.
    sample_rate : int
        Sampling rate in Hz, > 0.
    bit_depth_origin : int
        Informational bit depth of the source material.
    """

    samples: np.ndarray
    sample_rate: int = 24000
    bit_depth_origin: int = 16

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size:
            if not np.all(np.isfinite(self.samples)):
                raise ValueError("samples contain non-finite values")
            peak = np.max(np.abs(self.samples))
            if peak > 1.0:
                raise ValueError(f"amplitudes outside [-1, 1] (peak {peak:.6g})")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Spectrogram:
    """Magnitude spectrogram: ``n_frames x n_bins`` non-negative reals."""

    magnitudes: np.ndarray
    config: StftConfig
    sample_rate: int

    def __post_init__(self):
        self.magnitudes = np.asarray(self.magnitudes, dtype=np.float64)
        if self.magnitudes.ndim != 2:
            raise ValueError(f"magnitudes must be 2-D, got shape {self.magnitudes.shape}")
        if self.magnitudes.shape[1] != self.config.n_bins:
            raise ValueError(
                f"expected {self.config.n_bins} bins (fft_size/2 + 1), "
                f"got {self.magnitudes.shape[1]}"
            )
        if self.magnitudes.size and not np.all(np.isfinite(self.magnitudes)):
            raise ValueError("magnitudes contain non-finite values")
        if self.magnitudes.size and np.any(self.magnitudes < 0):
            raise ValueError("magnitudes must be non-negative")

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[1]

    def bin_frequencies(self) -> np.ndarray:
        """Center frequency in Hz of each bin."""
        return np.arange(self.n_bins) * self.sample_rate / self.config.fft_size


def frame_centered(samples: np.ndarray, window_length: int, hop_length: int) -> np.ndarray:
    """Slice a signal into centered, reflect-padded analysis frames.

    Frame ``t`` covers ``[t*hop - window//2, t*hop - window//2 + window)`` of
    the padded signal, so it is centered at sample ``t*hop`` of the input.

    Returns
    -------
    np.ndarray
        ``n_frames x window_length`` array (a copy, safe to scale in place).
    """
    if samples.size == 0:
        raise ValueError("cannot frame an empty signal")
    pad = window_length // 2
    if samples.size > 1:
        padded = np.pad(samples, pad, mode="reflect")
    else:
        padded = np.pad(samples, pad, mode="edge")
    n_frames = (padded.size - window_length) // hop_length + 1
    if n_frames <= 0:
        raise ValueError(
            f"signal of length {samples.size} too short for window {window_length}"
        )
    view = np.lib.stride_tricks.sliding_window_view(padded, window_length)
    return view[:: hop_length][:n_frames].copy()


def _windowed_magnitudes(samples: np.ndarray, window_length: int,
                         hop_length: int, fft_size: int) -> np.ndarray:
    frames = frame_centered(samples, window_length, hop_length)
    frames *= hann_window(window_length)[None, :]
    return np.abs(np.fft.rfft(frames, n=fft_size, axis=1))


def stft_magnitude(wave: Waveform, cfg: StftConfig | None = None) -> Spectrogram:
    """Compute the magnitude spectrogram of a waveform.

    Parameters
    ----------
    wave : Waveform
        Non-empty input signal.
    cfg : StftConfig, optional
        Analysis parameters; speech defaults when omitted.

    Returns
    -------
    Spectrogram
        ``floor((len + 2*(window//2) - window)/hop) + 1`` centered frames by
        ``fft_size/2 + 1`` bins of absolute DFT values.
    """
    cfg = cfg or StftConfig()
    if len(wave) == 0:
        raise ValueError("cannot analyze an empty waveform")
    mags = _windowed_magnitudes(
        wave.samples, cfg.window_length, cfg.hop_length, cfg.fft_size
    )
    return Spectrogram(magnitudes=mags, config=cfg, sample_rate=wave.sample_rate)


def magnitude_for_sequence(seq: np.ndarray, res, sequence_rate: float = 1.0) -> Spectrogram:
    """Magnitude spectrogram of an arbitrary real sequence at a small resolution.

    Same framing contract as :func:`stft_magnitude` (centered frames,
    reflect padding, periodic Hann), parameterized by a loss-scale
    resolution spec with ``fft_size``, ``window_size`` and ``hop_size``
    attributes. Intended for frame-rate sequences such as F0 contours;
    ``sequence_rate`` is recorded as the spectrogram's sample rate.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 1:
        raise ValueError(f"sequence must be 1-D, got shape {seq.shape}")
    if seq.size < res.window_size:
        raise ValueError(
            f"sequence of length {seq.size} shorter than one window "
            f"({res.window_size})"
        )
    mags = _windowed_magnitudes(seq, res.window_size, res.hop_size, res.fft_size)
    cfg = StftConfig(
        window_length=res.window_size, hop_length=res.hop_size, fft_size=res.fft_size
    )
    return Spectrogram(magnitudes=mags, config=cfg, sample_rate=sequence_rate)


def resample_linear(samples: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    """Linear-interpolation resampler (quality adequate for ingestion only)."""
    if rate_in == rate_out:
        return np.asarray(samples, dtype=np.float64)
    n_out = int(round(samples.size * rate_out / rate_in))
    t_out = np.arange(n_out) * (rate_in / rate_out)
    return np.interp(t_out, np.arange(samples.size), samples)


def load_wav(path, expected_sample_rate: int | None = None,
             resample: bool = False) -> Waveform:
    """Load a PCM 16-bit mono WAV file.

    Other encodings (float, 8/24/32-bit) and multichannel files are
    rejected. A sample rate differing from ``expected_sample_rate`` is
    rejected unless ``resample`` is set, in which case a linear resampler
    converts to the expected rate.
    """
    path = Path(path)
    rate, data = wavfile.read(path)
    if data.dtype != np.int16:
        raise ValueError(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono, got {data.shape[1]} channels")
    samples = data.astype(np.float64) / 32768.0
    if expected_sample_rate is not None and rate != expected_sample_rate:
        if not resample:
            raise ValueError(
                f"{path}: sample rate {rate} != expected {expected_sample_rate} "
                "(pass resample=True to convert)"
            )
        samples = resample_linear(samples, rate, expected_sample_rate)
        rate = expected_sample_rate
    return Waveform(samples=samples, sample_rate=rate)
