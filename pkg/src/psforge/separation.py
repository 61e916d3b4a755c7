"""Decompose magnitude spectrograms into spectral envelope and fine structure.

The decomposition lifters the real cepstrum of each frame's log magnitude:
quefrencies below a cutoff form the (smooth) envelope, the remainder is the
fine structure. Both factors are strictly positive and their elementwise
product reproduces the floored input magnitudes exactly, because the fine
structure is defined as the log-domain residual.
"""

from dataclasses import dataclass

import numpy as np

from .stft import Spectrogram, StftConfig

MAGNITUDE_FLOOR = 1e-10

DEFAULT_LIFTER_CUTOFF_MS = 2.0
# Quefrencies below 2 ms go to the envelope, so harmonic (pitch) structure
# stays in the fine structure for F0 down to ~71 Hz at 24 kHz.

LIFTER_TAPERS = ("rectangular", "smooth")


@dataclass
class SpectralEnvelope:
    """Smooth-in-frequency multiplicative factor of a magnitude spectrogram.

    Strictly positive. The cepstrum of its log is zero beyond the lifter
    cutoff by construction. Carries the source spectrogram's analysis
    config and sample rate so recombination can restore them.
    """

    values: np.ndarray
    lifter_cutoff_ms: float
    config: StftConfig
    sample_rate: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size and (
            not np.all(np.isfinite(self.values)) or np.any(self.values <= 0)
        ):
            raise ValueError("envelope values must be finite and strictly positive")


@dataclass
class FineStructure:
    """Rapidly-varying multiplicative residual carrying harmonic structure."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size and (
            not np.all(np.isfinite(self.values)) or np.any(self.values <= 0)
        ):
            raise ValueError("fine-structure values must be finite and strictly positive")


def lifter_weights(fft_size: int, cutoff_samples: int, taper: str = "rectangular") -> np.ndarray:
    """Quefrency-domain weights keeping coefficients below the cutoff.

    ``rectangular`` is a hard cutoff (exactly testable smoothness);
    ``smooth`` applies a raised-cosine rolloff inside the kept band. Both
    zero everything at or beyond the cutoff, mirror halves included.
    """
    if taper not in LIFTER_TAPERS:
        raise ValueError(f"unknown lifter taper {taper!r}, expected one of {LIFTER_TAPERS}")
    w = np.zeros(fft_size)
    if taper == "rectangular":
        w[:cutoff_samples] = 1.0
    else:
        q = np.arange(cutoff_samples)
        w[:cutoff_samples] = 0.5 * (1.0 + np.cos(np.pi * q / cutoff_samples))
    if cutoff_samples > 1:
        w[fft_size - cutoff_samples + 1:] = w[1:cutoff_samples][::-1]
    return w


def _cutoff_samples(lifter_cutoff_ms: float, sample_rate: float, cfg: StftConfig) -> int:
    window_ms = cfg.window_length * 1000.0 / sample_rate
    if not (0.0 < lifter_cutoff_ms < window_ms):
        raise ValueError(
            f"lifter cutoff {lifter_cutoff_ms} ms out of range (0, {window_ms} ms)"
        )
    cutoff = int(round(lifter_cutoff_ms * 1e-3 * sample_rate))
    if cutoff < 1:
        raise ValueError(f"lifter cutoff {lifter_cutoff_ms} ms is below one sample")
    if cutoff > cfg.fft_size // 2:
        raise ValueError(
            f"lifter cutoff {lifter_cutoff_ms} ms exceeds the quefrency range "
            f"of a {cfg.fft_size}-point transform"
        )
    return cutoff


def lag_window_separate(
    spec: Spectrogram,
    lifter_cutoff_ms: float = DEFAULT_LIFTER_CUTOFF_MS,
    taper: str = "rectangular",
) -> tuple[SpectralEnvelope, FineStructure]:
    """Split a spectrogram into spectral envelope and fine structure.

    Per frame: ``L = log(max(magnitude, floor))``; the real cepstrum of L is
    liftered at the cutoff quefrency to form the log envelope; the log fine
    structure is the residual ``L - log_envelope``. Returned factors are the
    exponentials, so ``envelope * fine == exp(L)`` up to floating error.

    Parameters
    ----------
    spec : Spectrogram
        Source magnitudes (exact zeros are floored to ``MAGNITUDE_FLOOR``).
    lifter_cutoff_ms : float
        Quefrency cutoff in milliseconds, in (0, window duration).
    taper : str
        ``"rectangular"`` (default) or ``"smooth"``.

    Returns
    -------
    (SpectralEnvelope, FineStructure)
    """
    fft_size = spec.config.fft_size
    cutoff = _cutoff_samples(lifter_cutoff_ms, spec.sample_rate, spec.config)
    log_mag = np.log(np.maximum(spec.magnitudes, MAGNITUDE_FLOOR))
    # irfft of the real half-spectrum log is the real cepstrum: the implied
    # full spectrum is even-symmetric because log magnitudes are zero-phase.
    cepstrum = np.fft.irfft(log_mag, n=fft_size, axis=1)
    cepstrum *= lifter_weights(fft_size, cutoff, taper)[None, :]
    log_env = np.fft.rfft(cepstrum, n=fft_size, axis=1).real
    log_fine = log_mag - log_env
    env = SpectralEnvelope(
        values=np.exp(log_env),
        lifter_cutoff_ms=lifter_cutoff_ms,
        config=spec.config,
        sample_rate=spec.sample_rate,
    )
    return env, FineStructure(values=np.exp(log_fine))


def recombine(env: SpectralEnvelope, fine: FineStructure) -> Spectrogram:
    """Elementwise product of envelope and fine structure.

    The result inherits the analysis config and sample rate from the
    envelope's source spectrogram.
    """
    if env.values.shape != fine.values.shape:
        raise ValueError(
            f"shape mismatch: envelope {env.values.shape} vs fine {fine.values.shape}"
        )
    return Spectrogram(
        magnitudes=env.values * fine.values,
        config=env.config,
        sample_rate=env.sample_rate,
    )
