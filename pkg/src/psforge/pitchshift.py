"""Pitch shifting by stretching spectral fine structure along frequency.

A shift of ``p`` semitones stretches the fine structure by ``2**(p/12)``
while leaving the spectral envelope untouched, so harmonic spacing moves
but formant positions stay put. No waveform is synthesized and no phase is
reconstructed; everything happens on magnitude spectrograms.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .separation import (
    DEFAULT_LIFTER_CUTOFF_MS,
    FineStructure,
    lag_window_separate,
    recombine,
)
from .stft import Spectrogram

OUT_OF_RANGE_MODES = ("clamp", "mirror", "unity")


def semitone_to_ratio(p: float) -> float:
    """Frequency ratio of a shift of ``p`` semitones: ``2**(p/12)``."""
    if not math.isfinite(p):
        raise ValueError(f"semitone shift must be finite, got {p}")
    return 2.0 ** (p / 12.0)


@dataclass(frozen=True)
class ShiftSpec:
    """A semitone shift and its derived stretching ratio."""

    semitones: float
    ratio: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "ratio", semitone_to_ratio(self.semitones))


def stretch_fine_structure(
    fine: FineStructure, alpha: float, out_of_range: str = "clamp"
) -> FineStructure:
    """Stretch fine structure along the frequency axis by factor ``alpha``.

    Output bin ``j`` reads the source at position ``j / alpha`` with linear
    interpolation in the log domain (the fine structure is multiplicative;
    its log is the quantity the cepstral decomposition linearizes). Output
    shape equals input shape.

    For ``alpha < 1`` the source position can pass the last bin; behavior
    there is selected by ``out_of_range``:

    - ``"clamp"`` (default): hold the last source bin's value.
    - ``"mirror"``: reflect the position back below the last bin.
    - ``"unity"``: emit a flat factor of 1.
    """
    if not (alpha > 0) or not math.isfinite(alpha):
        raise ValueError(f"stretch ratio must be positive and finite, got {alpha}")
    if out_of_range not in OUT_OF_RANGE_MODES:
        raise ValueError(
            f"unknown out_of_range mode {out_of_range!r}, expected one of {OUT_OF_RANGE_MODES}"
        )
    n_bins = fine.values.shape[1]
    top = n_bins - 1
    source = np.arange(n_bins) / alpha
    oob = source > top
    if out_of_range == "mirror" and top > 0:
        period = 2.0 * top
        folded = np.mod(source, period)
        source = np.where(folded > top, period - folded, folded)
    else:
        source = np.minimum(source, top)

    lower = np.floor(source).astype(np.intp)
    upper = np.minimum(lower + 1, top)
    frac = source - lower

    log_fine = np.log(fine.values)
    stretched = (1.0 - frac)[None, :] * log_fine[:, lower] + frac[None, :] * log_fine[:, upper]
    if out_of_range == "unity":
        stretched[:, oob] = 0.0
    return FineStructure(values=np.exp(stretched))


def pitch_shift_spectrogram(
    spec: Spectrogram,
    p: float,
    lifter_cutoff_ms: float = DEFAULT_LIFTER_CUTOFF_MS,
    taper: str = "rectangular",
    out_of_range: str = "clamp",
) -> Spectrogram:
    """Shift the pitch of a magnitude spectrogram by ``p`` semitones.

    Separates the input into envelope and fine structure, stretches only
    the fine structure by ``2**(p/12)``, and recombines with the original
    (unstretched) envelope.
    """
    env, fine = lag_window_separate(spec, lifter_cutoff_ms, taper)
    stretched = stretch_fine_structure(fine, semitone_to_ratio(p), out_of_range)
    return recombine(env, stretched)
