"""Pitch-shift data augmentation for speech features.

Separates magnitude spectrograms into spectral envelope and fine
structure, stretches the fine structure to move pitch while preserving
formants, extracts 82-dimensional acoustic features with by-construction
F0 propagation, sweeps a semitone range over whole corpora, and provides a
multi-resolution STFT F0 regularization loss for training criteria.
"""

from .f0loss import (
    DEFAULT_RESOLUTIONS,
    LossConfig,
    ResolutionSpec,
    f0_stft_loss,
    f0_stft_loss_from_magnitudes,
    loss_per_resolution,
    multires_f0_loss,
    multires_f0_loss_gradient,
)
from .features import (
    ContinuousLogF0,
    F0Contour,
    FeatureMatrix,
    MelConfig,
    NormStats,
    ZeroVarianceError,
    assemble_features,
    compute_norm_stats,
    continuize_log_f0,
    denormalize,
    extract_f0,
    load_features,
    load_norm_stats,
    log_mel,
    mel_filterbank,
    normalize,
    save_features,
    save_norm_stats,
    shift_continuous_log_f0,
)
from .pipeline import (
    AugmentationPlan,
    AugmentSummary,
    CorpusManifest,
    ManifestEntry,
    ManifestError,
    analyze_f0_distribution,
    augment_corpus,
    extract_corpus_features,
    load_plan,
    run_stats,
    validate_manifest,
)
from .pitchshift import (
    ShiftSpec,
    pitch_shift_spectrogram,
    semitone_to_ratio,
    stretch_fine_structure,
)
from .separation import (
    FineStructure,
    SpectralEnvelope,
    lag_window_separate,
    recombine,
)
from .stft import (
    Spectrogram,
    StftConfig,
    Waveform,
    load_wav,
    magnitude_for_sequence,
    stft_magnitude,
)

__version__ = "0.1.0"
