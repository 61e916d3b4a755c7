"""82-dimensional acoustic features: 80 log-Mel bands, continuous log F0, V/UV.

For pitch-shifted material the F0 column is obtained by construction (a
constant log-domain offset on the original contour) and the V/UV column is
copied from the original utterance, so augmentation never re-estimates
pitch.
"""

import json
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .stft import Spectrogram, Waveform, frame_centered

FEATURE_DIM = 82
MEL_FLOOR = 1e-10
LOG_F0_COLUMN = 80
VUV_COLUMN = 81

COLUMN_LAYOUT = {"log_mel": [0, 80], "continuous_log_f0": 80, "vuv": 81}

LN2 = math.log(2.0)


class ZeroVarianceError(ValueError):
    """A feature dimension has no variance; statistics would be degenerate."""

    def __init__(self, dimensions):
        self.dimensions = list(dimensions)
        super().__init__(
            "zero variance in feature dimension(s): "
            + ", ".join(str(d) for d in self.dimensions)
        )


@dataclass(frozen=True)
class MelConfig:
    """Mel filterbank geometry: HTK mel scale, triangular filters."""

    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 12000.0
    normalization: str = "area"  # "area" (unit-area triangles) or "none"

    def __post_init__(self):
        if self.n_mels < 1:
            raise ValueError(f"n_mels must be >= 1, got {self.n_mels}")
        if not (0.0 <= self.fmin < self.fmax):
            raise ValueError(f"require 0 <= fmin < fmax, got [{self.fmin}, {self.fmax}]")
        if self.normalization not in ("area", "none"):
            raise ValueError(f"unknown filterbank normalization {self.normalization!r}")


@dataclass
class F0Contour:
    """Per-frame F0 in Hz (0 at unvoiced frames) with V/UV flags."""

    values: np.ndarray
    vuv: np.ndarray
    hop_ms: float = 5.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.vuv = np.asarray(self.vuv, dtype=bool)
        if self.values.shape != self.vuv.shape:
            raise ValueError("values and vuv must have the same length")
        if np.any(self.values < 0):
            raise ValueError("F0 values must be non-negative")
        if not np.array_equal(self.values > 0, self.vuv):
            raise ValueError("voicing flags must match positive F0 values")

    def __len__(self) -> int:
        return self.values.size


@dataclass
class ContinuousLogF0:
    """Natural-log F0 defined at every frame (gaps filled by interpolation)."""

    values: np.ndarray
    hop_ms: float = 5.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise ValueError("continuous log F0 must be finite everywhere")

    def __len__(self) -> int:
        return self.values.size


@dataclass
class FeatureMatrix:
    """N x 82 feature frames plus provenance metadata.

    Columns 0..79 are log-Mel bands, column 80 is continuous log F0 and
    column 81 is the binary V/UV flag.
    """

    data: np.ndarray
    sample_rate: int
    hop_ms: float
    utterance_id: str
    semitone_p: float = 0.0
    source_file: str | None = None
    style: str | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != FEATURE_DIM:
            raise ValueError(
                f"feature matrix must be N x {FEATURE_DIM}, got shape {self.data.shape}"
            )
        if self.data.size and not np.all(np.isfinite(self.data)):
            raise ValueError("feature matrix contains non-finite values")
        vuv = self.data[:, VUV_COLUMN]
        if vuv.size and not np.all((vuv == 0.0) | (vuv == 1.0)):
            raise ValueError("V/UV column must be binary")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


@dataclass
class NormStats:
    """Per-dimension mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray
    frame_count: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-D arrays of equal length")
        bad = np.nonzero(self.std <= 0)[0]
        if bad.size:
            raise ZeroVarianceError(bad)


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _mel_filterbank_cached(sample_rate, fft_size, n_mels, fmin, fmax, normalization):
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    corners = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    weights = np.zeros((n_mels, freqs.size))
    for m in range(n_mels):
        lo, center, hi = corners[m], corners[m + 1], corners[m + 2]
        rising = (freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - freqs) / max(hi - center, 1e-12)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
        if normalization == "area":
            weights[m] *= 2.0 / max(hi - lo, 1e-12)
    return weights


def mel_filterbank(sample_rate: int, fft_size: int, mel: MelConfig) -> np.ndarray:
    """Triangular mel filterbank as an ``n_mels x n_bins`` weight matrix."""
    if mel.fmax > sample_rate / 2:
        raise ValueError(
            f"fmax {mel.fmax} exceeds Nyquist ({sample_rate / 2}) at {sample_rate} Hz"
        )
    return _mel_filterbank_cached(
        sample_rate, fft_size, mel.n_mels, mel.fmin, mel.fmax, mel.normalization
    )


def log_mel(spec: Spectrogram, mel: MelConfig | None = None) -> np.ndarray:
    """Project a magnitude spectrogram through the mel filterbank and log it.

    Returns ``log(max(filterbank @ magnitudes, floor))`` per frame, shape
    ``n_frames x n_mels``.
    """
    mel = mel or MelConfig()
    fb = mel_filterbank(spec.sample_rate, spec.config.fft_size, mel)
    return np.log(np.maximum(spec.magnitudes @ fb.T, MEL_FLOOR))


# --- F0 extraction ---------------------------------------------------------
#
# Normalized-autocorrelation tracker: per frame, the cross-correlation of a
# short segment against its lagged continuation, normalized by the energies
# of both windows. Voicing is decided by a correlation threshold; octave
# halving is suppressed by preferring the smallest lag whose peak comes
# close to the global maximum; the track is median-filtered (length 3).

F0_CORRELATION_WINDOW = 480  # 20 ms at 24 kHz
F0_VOICING_THRESHOLD = 0.30
F0_SILENCE_RMS = 1e-5
F0_OCTAVE_GUARD = 0.98


def extract_f0(
    wave: Waveform,
    fmin: float = 70.0,
    fmax: float = 500.0,
    hop_length: int = 120,
    correlation_window: int = F0_CORRELATION_WINDOW,
    voicing_threshold: float = F0_VOICING_THRESHOLD,
) -> F0Contour:
    """Track F0 with normalized autocorrelation at the feature frame rate.

    The frame grid matches centered spectrogram analysis with the same hop,
    so the contour aligns frame-for-frame with log-Mel features.
    """
    if len(wave) == 0:
        raise ValueError("cannot extract F0 from an empty waveform")
    sr = wave.sample_rate
    if not (0 < fmin < fmax <= sr / 2):
        raise ValueError(f"require 0 < fmin < fmax <= {sr / 2}, got [{fmin}, {fmax}]")
    lag_min = int(np.floor(sr / fmax))
    lag_max = int(np.ceil(sr / fmin))
    if not (1 <= lag_min < lag_max):
        raise ValueError("degenerate lag search range")

    x = wave.samples
    half = correlation_window // 2
    seg_len = correlation_window + lag_max + 1
    # The correlation segment for the frame centered at t*hop covers
    # [center - half, center + half + lag_max]: the base window is centered
    # on the frame and the remainder is lookahead for the lag search.
    outer = correlation_window + 2 * (lag_max + 1)
    frames = frame_centered(x, outer, hop_length)[:, lag_max + 1: lag_max + 1 + seg_len]
    n_frames = x.size // hop_length + 1
    frames = frames[:n_frames]

    fft_len = 1
    while fft_len < seg_len + correlation_window:
        fft_len *= 2
    base = frames[:, :correlation_window]
    spec_full = np.fft.rfft(frames, fft_len, axis=1)
    spec_base = np.fft.rfft(base, fft_len, axis=1)
    corr = np.fft.irfft(spec_full * np.conj(spec_base), fft_len, axis=1)[:, : lag_max + 1]

    sq = np.concatenate(
        [np.zeros((frames.shape[0], 1)), np.cumsum(frames * frames, axis=1)], axis=1
    )
    energy = sq[:, correlation_window:] - sq[:, :-correlation_window]
    energy = energy[:, : lag_max + 1]
    denom = np.sqrt(np.maximum(energy[:, :1] * energy, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, corr / np.maximum(denom, 1e-300), 0.0)

    rms = np.sqrt(np.mean(base * base, axis=1))
    f0 = np.zeros(n_frames)
    for t in range(n_frames):
        if rms[t] < F0_SILENCE_RMS:
            continue
        rt = r[t]
        search = rt[lag_min: lag_max + 1]
        best = int(np.argmax(search)) + lag_min
        if rt[best] < voicing_threshold:
            continue
        # Smallest local peak within the guard band of the maximum.
        interior = rt[1:-1]
        is_peak = np.zeros_like(rt, dtype=bool)
        is_peak[1:-1] = (interior >= rt[:-2]) & (interior >= rt[2:])
        is_peak[:lag_min] = False
        is_peak &= rt >= F0_OCTAVE_GUARD * rt[best]
        candidates = np.nonzero(is_peak)[0]
        lag = int(candidates[0]) if candidates.size else best
        if 0 < lag < lag_max:
            a, b, c = rt[lag - 1], rt[lag], rt[lag + 1]
            curvature = a - 2 * b + c
            delta = 0.5 * (a - c) / curvature if abs(curvature) > 1e-12 else 0.0
            delta = float(np.clip(delta, -0.5, 0.5))
        else:
            delta = 0.0
        f0[t] = sr / (lag + delta)

    f0 = _median3(f0)
    return F0Contour(values=f0, vuv=f0 > 0, hop_ms=hop_length * 1000.0 / sr)


def _median3(x: np.ndarray) -> np.ndarray:
    if x.size < 3:
        return x.copy()
    padded = np.concatenate([x[:1], x, x[-1:]])
    return np.median(
        np.stack([padded[:-2], padded[1:-1], padded[2:]]), axis=0
    )


def continuize_log_f0(contour: F0Contour) -> ContinuousLogF0:
    """Fill unvoiced gaps of a log-F0 contour by linear interpolation.

    Voiced frames keep ``log(F0)`` exactly; interior gaps are linear in
    (frame index, log F0); leading and trailing gaps hold the nearest
    voiced value.
    """
    voiced = np.nonzero(contour.vuv)[0]
    if voiced.size == 0:
        raise ValueError("cannot continuize a fully unvoiced contour")
    log_voiced = np.log(contour.values[voiced])
    frames = np.arange(len(contour))
    values = np.interp(frames, voiced, log_voiced)  # np.interp holds the edges
    values[voiced] = log_voiced  # exact at voiced frames
    return ContinuousLogF0(values=values, hop_ms=contour.hop_ms)


def log_f0_shift(p: float) -> float:
    """Constant added to a log-F0 contour by a shift of ``p`` semitones."""
    return p * LN2 / 12.0


def shift_continuous_log_f0(clf0: ContinuousLogF0, p: float) -> ContinuousLogF0:
    """Shift every frame by ``(p/12) * log 2``, multiplying F0 by ``2**(p/12)``."""
    if not math.isfinite(p):
        raise ValueError(f"semitone shift must be finite, got {p}")
    return ContinuousLogF0(values=clf0.values + log_f0_shift(p), hop_ms=clf0.hop_ms)


def assemble_features(
    mel: np.ndarray,
    clf0: ContinuousLogF0,
    vuv: np.ndarray,
    *,
    sample_rate: int,
    hop_ms: float,
    utterance_id: str,
    semitone_p: float = 0.0,
    source_file: str | None = None,
    style: str | None = None,
) -> FeatureMatrix:
    """Concatenate log-Mel, continuous log F0 and V/UV into an N x 82 matrix.

    Lengths differing by at most 2 frames are trimmed to the minimum with a
    warning; larger mismatches are an error. For augmented utterances pass
    the ORIGINAL utterance's V/UV.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[1] != LOG_F0_COLUMN:
        raise ValueError(f"expected N x {LOG_F0_COLUMN} log-Mel input, got {mel.shape}")
    vuv = np.asarray(vuv, dtype=bool)
    lengths = (mel.shape[0], len(clf0), vuv.size)
    n = min(lengths)
    if max(lengths) - n > 2:
        raise ValueError(f"irreconcilable frame-count mismatch: {lengths}")
    if max(lengths) != n:
        warnings.warn(
            f"trimming features to {n} frames (inputs had {lengths})", stacklevel=2
        )
    data = np.empty((n, FEATURE_DIM))
    data[:, :LOG_F0_COLUMN] = mel[:n]
    data[:, LOG_F0_COLUMN] = clf0.values[:n]
    data[:, VUV_COLUMN] = vuv[:n].astype(np.float64)
    return FeatureMatrix(
        data=data,
        sample_rate=sample_rate,
        hop_ms=hop_ms,
        utterance_id=utterance_id,
        semitone_p=semitone_p,
        source_file=source_file,
        style=style,
    )


class _StatsAccumulator:
    """Mergeable running sums for per-dimension mean/std."""

    def __init__(self, dims: int = FEATURE_DIM):
        self.n = 0
        self.sum = np.zeros(dims)
        self.sumsq = np.zeros(dims)

    def add(self, data: np.ndarray):
        self.n += data.shape[0]
        self.sum += data.sum(axis=0)
        self.sumsq += (data * data).sum(axis=0)

    def merge(self, other: "_StatsAccumulator"):
        self.n += other.n
        self.sum += other.sum
        self.sumsq += other.sumsq

    def finalize(self) -> NormStats:
        if self.n < 2:
            raise ValueError(f"need at least 2 frames for statistics, got {self.n}")
        mean = self.sum / self.n
        var = np.maximum(self.sumsq / self.n - mean * mean, 0.0)
        std = np.sqrt(var)
        bad = np.nonzero(std <= 0)[0]
        if bad.size:
            raise ZeroVarianceError(bad)
        return NormStats(mean=mean, std=std, frame_count=self.n)


def compute_norm_stats(features) -> NormStats:
    """Per-dimension mean and population std across all frames of all inputs.

    ``features`` is an iterable of FeatureMatrix (or bare N x 82 arrays).
    Raises :class:`ZeroVarianceError` naming any degenerate dimension.
    """
    acc = _StatsAccumulator()
    for fm in features:
        data = fm.data if isinstance(fm, FeatureMatrix) else np.asarray(fm, np.float64)
        acc.add(data)
    return acc.finalize()


def _check_stats(stats: NormStats):
    if stats.mean.size != FEATURE_DIM:
        raise ValueError(
            f"statistics cover {stats.mean.size} dimensions, expected {FEATURE_DIM}"
        )


def normalize(fm: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    """Zero-mean/unit-variance scaling per dimension; V/UV stays binary."""
    _check_stats(stats)
    data = (fm.data - stats.mean) / stats.std
    data[:, VUV_COLUMN] = fm.data[:, VUV_COLUMN]
    return FeatureMatrix(
        data=data,
        sample_rate=fm.sample_rate,
        hop_ms=fm.hop_ms,
        utterance_id=fm.utterance_id,
        semitone_p=fm.semitone_p,
        source_file=fm.source_file,
        style=fm.style,
    )


def denormalize(fm: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    """Exact inverse of :func:`normalize`."""
    _check_stats(stats)
    data = fm.data * stats.std + stats.mean
    data[:, VUV_COLUMN] = fm.data[:, VUV_COLUMN]
    return FeatureMatrix(
        data=data,
        sample_rate=fm.sample_rate,
        hop_ms=fm.hop_ms,
        utterance_id=fm.utterance_id,
        semitone_p=fm.semitone_p,
        source_file=fm.source_file,
        style=fm.style,
    )


# --- feature files ----------------------------------------------------------
# Binary payload: little-endian float32, row-major N x 82. A JSON sidecar of
# the same stem carries the metadata.


def feature_stem(utterance_id: str, semitone_p: float) -> str:
    """Canonical file stem for an (utterance, shift) pair."""
    return f"{utterance_id}_p{int(round(semitone_p)):+03d}"


def feature_payloads(fm: FeatureMatrix) -> tuple[bytes, str]:
    """Binary payload and sidecar JSON text for a feature matrix."""
    payload = np.ascontiguousarray(fm.data, dtype="<f4").tobytes()
    sidecar = {
        "schema_version": 1,
        "utterance_id": fm.utterance_id,
        "n_frames": fm.n_frames,
        "dims": FEATURE_DIM,
        "sample_rate": fm.sample_rate,
        "hop_ms": fm.hop_ms,
        "semitone_p": fm.semitone_p,
        "source_file": fm.source_file,
        "style": fm.style,
        "column_layout": COLUMN_LAYOUT,
    }
    return payload, json.dumps(sidecar, indent=2, sort_keys=True) + "\n"


def save_features(fm: FeatureMatrix, directory, stem: str | None = None) -> tuple[Path, Path]:
    """Write the binary payload and JSON sidecar; returns both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or feature_stem(fm.utterance_id, fm.semitone_p)
    bin_path = directory / f"{stem}.bin"
    json_path = directory / f"{stem}.json"
    payload, sidecar = feature_payloads(fm)
    bin_path.write_bytes(payload)
    json_path.write_text(sidecar)
    return bin_path, json_path


def load_features(path) -> FeatureMatrix:
    """Load a feature file from its ``.bin`` or ``.json`` path."""
    path = Path(path)
    stem = path.with_suffix("")
    bin_path = stem.with_suffix(".bin")
    json_path = stem.with_suffix(".json")
    meta = json.loads(json_path.read_text())
    raw = np.frombuffer(bin_path.read_bytes(), dtype="<f4")
    dims = meta.get("dims", FEATURE_DIM)
    if raw.size % dims:
        raise ValueError(f"{bin_path}: payload size {raw.size} not divisible by {dims}")
    data = raw.reshape(-1, dims).astype(np.float64)
    if meta.get("n_frames") not in (None, data.shape[0]):
        raise ValueError(
            f"{bin_path}: sidecar claims {meta['n_frames']} frames, file has {data.shape[0]}"
        )
    return FeatureMatrix(
        data=data,
        sample_rate=meta["sample_rate"],
        hop_ms=meta["hop_ms"],
        utterance_id=meta["utterance_id"],
        semitone_p=meta.get("semitone_p", 0.0),
        source_file=meta.get("source_file"),
        style=meta.get("style"),
    )


def save_norm_stats(stats: NormStats, path, provenance: dict | None = None) -> Path:
    path = Path(path)
    payload = {
        "schema_version": 1,
        "dims": stats.mean.size,
        "frame_count": stats.frame_count,
        "mean": stats.mean.tolist(),
        "std": stats.std.tolist(),
        "provenance": provenance or {},
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_norm_stats(path) -> NormStats:
    meta = json.loads(Path(path).read_text())
    return NormStats(
        mean=np.asarray(meta["mean"], dtype=np.float64),
        std=np.asarray(meta["std"], dtype=np.float64),
        frame_count=meta["frame_count"],
    )
