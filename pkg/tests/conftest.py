"""Shared synthesis helpers and oracles for the test suite."""

import json

import numpy as np
import pytest
from scipy.io import wavfile

from psforge import Waveform

SR = 24000


def sine(freq, dur=1.0, sr=SR, amp=0.7, phase=0.0):
    t = np.arange(int(dur * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t + phase)


def pulse_train(f0, dur=1.0, sr=SR, amp=0.9):
    """Unit impulses every period, rounded to the sample grid."""
    n = int(dur * sr)
    x = np.zeros(n)
    period = sr / f0
    positions = np.round(np.arange(int(n / period) + 1) * period).astype(int)
    x[positions[positions < n]] = amp
    return x


def harmonic_source(f0, dur=1.0, sr=SR, seed=0, noise=1e-3):
    """All harmonics of f0 up to Nyquist with 1/h rolloff and random phases.

    A small noise floor keeps inter-harmonic magnitudes off the log floor,
    similar to recorded speech.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(int(dur * sr)) / sr
    x = np.zeros_like(t)
    h = 1
    while h * f0 < sr / 2:
        x += (1.0 / h) * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
        h += 1
    x /= np.max(np.abs(x))
    x = 0.7 * x + noise * rng.standard_normal(t.size)
    return x / max(1.0, np.max(np.abs(x)))


def chirp_harmonics(f0_start, f0_end, dur=1.0, sr=SR, seed=0, noise=1e-3):
    """Harmonic source whose instantaneous F0 ramps linearly start to end.

    An oscillator bank (not an impulse train) so periodicity is not
    quantized to the sample grid.
    """
    rng = np.random.default_rng(seed)
    n = int(dur * sr)
    t = np.arange(n) / sr
    inst_f0 = f0_start + (f0_end - f0_start) * t / dur
    phase = 2 * np.pi * np.cumsum(inst_f0) / sr
    x = np.zeros(n)
    h = 1
    while h * max(f0_start, f0_end) < sr / 2:
        x += (1.0 / h) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
        h += 1
    x /= np.max(np.abs(x))
    x = 0.7 * x + noise * rng.standard_normal(n)
    return x / max(1.0, np.max(np.abs(x)))


def speechlike(f0, dur=0.5, sr=SR, seed=0, silence_ms=60.0):
    """Harmonic source padded with leading/trailing silence, like a
    recorded utterance; guarantees both voiced and unvoiced frames."""
    pad = np.zeros(int(silence_ms * 1e-3 * sr))
    return np.concatenate([pad, harmonic_source(f0, dur=dur, sr=sr, seed=seed), pad])


def write_pcm16(path, samples, sr=SR):
    data = np.clip(np.asarray(samples) * 32767.0, -32768, 32767).astype(np.int16)
    wavfile.write(path, sr, data)
    return path


def make_manifest(tmp_path, utterances, styles=("neutral", "happiness", "sadness"),
                  sample_rate=SR, name="manifest.json"):
    """Write WAVs plus a manifest; ``utterances`` is a list of dicts with
    keys ``utterance_id``, ``samples`` and optional ``style``/``split``."""
    wav_dir = tmp_path / "wav"
    wav_dir.mkdir(exist_ok=True)
    entries = []
    for u in utterances:
        wav_path = wav_dir / f"{u['utterance_id']}.wav"
        write_pcm16(wav_path, u["samples"], sample_rate)
        entries.append(
            {
                "utterance_id": u["utterance_id"],
                "wav_path": str(wav_path.relative_to(tmp_path)),
                "speaker": u.get("speaker", "spk1"),
                "style": u.get("style", "neutral"),
                "split": u.get("split", "train"),
            }
        )
    manifest = {
        "schema_version": 1,
        "sample_rate": sample_rate,
        "styles": list(styles),
        "entries": entries,
    }
    path = tmp_path / name
    path.write_text(json.dumps(manifest, indent=2))
    return path


def direct_dft_magnitude(frame, fft_size):
    """O(n^2) DFT magnitude oracle for one windowed frame."""
    padded = np.zeros(fft_size)
    padded[: frame.size] = frame
    n = np.arange(fft_size)
    k = np.arange(fft_size // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, n) / fft_size)
    return np.abs(basis @ padded)


def harmonic_spacing_hz(fine_values, sr=SR, fft_size=1024, q_min_ms=2.0):
    """Peak-picking harmonic-spacing estimator for a fine structure, in Hz.

    Picks the strongest quefrency peak of the time-averaged log fine
    structure (above the envelope cutoff region) and refines it with
    parabolic interpolation; the harmonic spacing is the reciprocal
    period, ``sr / quefrency``.
    """
    ceps = np.fft.irfft(np.log(fine_values), n=fft_size, axis=1).mean(axis=0)
    q_min = int(round(q_min_ms * 1e-3 * sr))
    q = int(np.argmax(ceps[q_min: fft_size // 2])) + q_min
    a, b, c = ceps[q - 1], ceps[q], ceps[q + 1]
    denom = a - 2 * b + c
    delta = 0.5 * (a - c) / denom if abs(denom) > 1e-12 else 0.0
    return sr / (q + float(np.clip(delta, -0.5, 0.5)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240810)


def random_spectrogram(rng, n_frames=20, sr=SR):
    """Random positive magnitudes under the default analysis config."""
    from psforge import Spectrogram, StftConfig

    cfg = StftConfig()
    mags = np.abs(rng.lognormal(mean=0.0, sigma=1.0, size=(n_frames, cfg.n_bins)))
    return Spectrogram(magnitudes=mags, config=cfg, sample_rate=sr)


def waveform(samples, sr=SR):
    return Waveform(samples=np.asarray(samples, dtype=np.float64), sample_rate=sr)
