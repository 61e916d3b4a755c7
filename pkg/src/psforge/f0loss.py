"""STFT-domain F0 regularization loss with a multi-resolution extension.

The criterion is the mean absolute log-magnitude difference between the
short-time spectra of a reference and a predicted sequence, summed over
frequency bins at and above a low-frequency cutoff index ``beta``. With
``beta = 3`` (1-based) the two lowest bins are excluded, so constant level
offsets are inert and only oscillatory structure is penalized. The
multi-resolution form averages the criterion over several analysis
resolutions and applies a global weight.

Both the forward value and an analytic gradient with respect to the
predicted sequence are provided, so the criterion can be dropped into any
external trainer.
"""

from dataclasses import dataclass

import numpy as np

from .stft import hann_window, magnitude_for_sequence

LOSS_MAGNITUDE_FLOOR = 1e-7
# Larger than the feature-extraction floor: loss stability matters more
# than dynamic range here.


@dataclass(frozen=True)
class ResolutionSpec:
    """One analysis resolution, in frames of the input sequence."""

    fft_size: int
    window_size: int
    hop_size: int

    def __post_init__(self):
        if not (0 < self.hop_size <= self.window_size <= self.fft_size):
            raise ValueError(
                "require 0 < hop_size <= window_size <= fft_size, got "
                f"hop={self.hop_size} window={self.window_size} fft={self.fft_size}"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


DEFAULT_RESOLUTIONS = (
    ResolutionSpec(fft_size=32, window_size=32, hop_size=8),
    ResolutionSpec(fft_size=64, window_size=64, hop_size=16),
    ResolutionSpec(fft_size=128, window_size=128, hop_size=32),
)

DEFAULT_BETA = 3
DEFAULT_WEIGHT = 0.1


@dataclass(frozen=True)
class LossConfig:
    """Hyperparameters of the multi-resolution criterion.

    ``beta`` is a 1-based bin index: bins ``beta..K`` enter the sum, so the
    default of 3 excludes the DC bin and the first bin at every resolution.
    """

    beta: int = DEFAULT_BETA
    resolutions: tuple = DEFAULT_RESOLUTIONS
    weight: float = DEFAULT_WEIGHT
    magnitude_floor: float = LOSS_MAGNITUDE_FLOOR

    def __post_init__(self):
        if not self.resolutions:
            raise ValueError("at least one resolution is required")
        object.__setattr__(self, "resolutions", tuple(self.resolutions))
        min_bins = min(r.n_bins for r in self.resolutions)
        if not (1 <= self.beta <= min_bins):
            raise ValueError(
                f"beta must lie in [1, {min_bins}] for these resolutions, got {self.beta}"
            )
        if self.weight < 0:
            raise ValueError(f"weight must be non-negative, got {self.weight}")
        if self.magnitude_floor <= 0:
            raise ValueError("magnitude floor must be positive")

    @property
    def max_window(self) -> int:
        return max(r.window_size for r in self.resolutions)


def f0_stft_loss_from_magnitudes(
    x_mag: np.ndarray,
    xhat_mag: np.ndarray,
    beta: int = DEFAULT_BETA,
    magnitude_floor: float = LOSS_MAGNITUDE_FLOOR,
) -> float:
    """Mean absolute log-magnitude difference over bins ``beta..K`` (1-based).

    The mean divides by the count of summed elements ``N * (K - beta + 1)``.
    Magnitudes are floored before the log.
    """
    x_mag = np.asarray(x_mag, dtype=np.float64)
    xhat_mag = np.asarray(xhat_mag, dtype=np.float64)
    if x_mag.shape != xhat_mag.shape:
        raise ValueError(f"shape mismatch: {x_mag.shape} vs {xhat_mag.shape}")
    if x_mag.ndim != 2:
        raise ValueError(f"magnitudes must be 2-D, got shape {x_mag.shape}")
    n_bins = x_mag.shape[1]
    if not (1 <= beta <= n_bins):
        raise ValueError(f"beta must lie in [1, {n_bins}], got {beta}")
    lo = beta - 1  # 0-based first summed bin
    diff = np.log(np.maximum(x_mag[:, lo:], magnitude_floor)) - np.log(
        np.maximum(xhat_mag[:, lo:], magnitude_floor)
    )
    return float(np.abs(diff).mean()) if diff.size else 0.0


def f0_stft_loss(
    f0: np.ndarray,
    f0hat: np.ndarray,
    res: ResolutionSpec,
    beta: int = DEFAULT_BETA,
    magnitude_floor: float = LOSS_MAGNITUDE_FLOOR,
) -> float:
    """Single-resolution loss between two equal-length sequences."""
    f0 = np.asarray(f0, dtype=np.float64)
    f0hat = np.asarray(f0hat, dtype=np.float64)
    if f0.shape != f0hat.shape:
        raise ValueError(f"length mismatch: {f0.shape} vs {f0hat.shape}")
    x = magnitude_for_sequence(f0, res)
    xhat = magnitude_for_sequence(f0hat, res)
    return f0_stft_loss_from_magnitudes(
        x.magnitudes, xhat.magnitudes, beta, magnitude_floor
    )


def loss_per_resolution(f0, f0hat, cfg: LossConfig | None = None) -> list[float]:
    """Unweighted single-resolution losses, in configuration order."""
    cfg = cfg or LossConfig()
    return [
        f0_stft_loss(f0, f0hat, res, cfg.beta, cfg.magnitude_floor)
        for res in cfg.resolutions
    ]


def multires_f0_loss(f0, f0hat, cfg: LossConfig | None = None) -> float:
    """Weighted multi-resolution loss: weight times the mean over resolutions."""
    cfg = cfg or LossConfig()
    per_res = loss_per_resolution(f0, f0hat, cfg)
    return cfg.weight * float(np.mean(per_res))


def _single_res_gradient(f0, f0hat, res: ResolutionSpec, beta: int,
                         magnitude_floor: float) -> np.ndarray:
    """Gradient of the single-resolution loss with respect to ``f0hat``.

    Chain rule through |.|, log, the magnitude, the windowed DFT, framing
    and the reflect padding. Subgradient 0 is used where the log difference
    is zero and where the magnitude floor is active.
    """
    n = f0hat.size
    window, hop, fft_size = res.window_size, res.hop_size, res.fft_size
    pad = window // 2
    padded = np.pad(f0hat, pad, mode="reflect") if n > 1 else np.pad(f0hat, pad, mode="edge")
    n_frames = (padded.size - window) // hop + 1
    starts = hop * np.arange(n_frames)
    idx = starts[:, None] + np.arange(window)[None, :]
    taper = hann_window(window)
    frames = padded[idx] * taper[None, :]
    spectra = np.fft.rfft(frames, n=fft_size, axis=1)
    mag = np.abs(spectra)

    x_mag = magnitude_for_sequence(np.asarray(f0, dtype=np.float64), res).magnitudes
    x_floored = np.maximum(x_mag, magnitude_floor)
    xhat_floored = np.maximum(mag, magnitude_floor)
    log_diff = np.log(x_floored) - np.log(xhat_floored)

    lo = beta - 1
    count = log_diff.shape[0] * (log_diff.shape[1] - lo)
    grad_mag = np.zeros_like(mag)
    grad_mag[:, lo:] = -np.sign(log_diff[:, lo:]) / (count * xhat_floored[:, lo:])
    grad_mag[mag <= magnitude_floor] = 0.0  # floor active: flat region

    # d|C|/dC pulled back through the one-sided DFT. Each one-sided bin is
    # used exactly once in the loss, so the adjoint fills only those slots.
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(mag > 0, spectra / np.maximum(mag, 1e-300), 0.0)
    upstream = np.zeros((n_frames, fft_size), dtype=np.complex128)
    upstream[:, : mag.shape[1]] = grad_mag * phase
    grad_frames = fft_size * np.fft.ifft(upstream, axis=1).real[:, :window]
    grad_frames *= taper[None, :]

    grad_padded = np.zeros(padded.size)
    np.add.at(grad_padded, idx.ravel(), grad_frames.ravel())

    grad = grad_padded[pad: pad + n].copy()
    if n > 1:
        # Adjoint of reflect padding: fold pad gradients onto their sources.
        for j in range(pad):
            grad[pad - j] += grad_padded[j]
            grad[n - 2 - j] += grad_padded[pad + n + j]
    else:
        grad[0] += grad_padded[:pad].sum() + grad_padded[pad + n:].sum()
    return grad


def multires_f0_loss_gradient(f0, f0hat, cfg: LossConfig | None = None) -> np.ndarray:
    """Gradient of :func:`multires_f0_loss` with respect to ``f0hat``.

    Matches central finite differences away from the criterion's
    nondifferentiable points (zero log differences, active magnitude
    floors, zero magnitudes).
    """
    cfg = cfg or LossConfig()
    f0 = np.asarray(f0, dtype=np.float64)
    f0hat = np.asarray(f0hat, dtype=np.float64)
    if f0.shape != f0hat.shape:
        raise ValueError(f"length mismatch: {f0.shape} vs {f0hat.shape}")
    if f0hat.size < cfg.max_window:
        raise ValueError(
            f"sequences of length {f0hat.size} shorter than the largest "
            f"window ({cfg.max_window})"
        )
    total = np.zeros(f0hat.size)
    for res in cfg.resolutions:
        total += _single_res_gradient(f0, f0hat, res, cfg.beta, cfg.magnitude_floor)
    return cfg.weight * total / len(cfg.resolutions)
