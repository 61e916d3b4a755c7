"""Manifest-driven corpus augmentation, F0 analysis and statistics.

The augmentation sweep applies every semitone shift in the plan to each
training utterance and always emits the unshifted original alongside, so a
downstream trainer reads a single directory. Output file names are a pure
function of (utterance_id, semitone), which makes scheduling irrelevant to
results: runs are bit-identical for any worker count.
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import features as feat
from .pitchshift import stretch_fine_structure, semitone_to_ratio
from .separation import lag_window_separate, recombine
from .stft import StftConfig, load_wav, stft_magnitude

SCHEMA_VERSION = 1
DEFAULT_STYLES = ("neutral", "happiness", "sadness")
SPLITS = ("train", "dev", "eval")

# Default sweep: [-3, 12] without 0 (the original already covers p = 0),
# 15 shifts per utterance.
DEFAULT_SEMITONES = tuple(p for p in range(-3, 13) if p != 0)

F0_HIST_MIN = 50.0
F0_HIST_MAX = 1000.0
F0_HIST_BIN = 5.0

WORKERS_ENV_VAR = "PSFORGE_WORKERS"


class ManifestError(ValueError):
    """The corpus manifest is malformed or violates an invariant."""


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    wav_path: str
    speaker: str
    style: str
    split: str = "train"


@dataclass
class CorpusManifest:
    entries: list
    styles: tuple = DEFAULT_STYLES
    sample_rate: int = 24000
    base_dir: Path | None = None

    def train_entries(self):
        return [e for e in self.entries if e.split == "train"]

    def resolve_wav(self, entry: ManifestEntry) -> Path:
        p = Path(entry.wav_path)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p


@dataclass(frozen=True)
class AugmentationPlan:
    """Semitone sweep plus the analysis/feature configuration it drives."""

    semitones: tuple = DEFAULT_SEMITONES
    lifter_cutoff_ms: float = 2.0
    taper: str = "rectangular"
    out_of_range: str = "clamp"
    window_length: int = 960
    hop_length: int = 120
    fft_size: int = 1024
    n_mels: int = 80
    mel_fmin: float = 0.0
    mel_fmax: float = 12000.0
    mel_normalization: str = "area"
    f0_min: float = 70.0
    f0_max: float = 500.0

    def __post_init__(self):
        object.__setattr__(self, "semitones", tuple(int(p) for p in self.semitones))
        if len(set(self.semitones)) != len(self.semitones):
            raise ValueError("semitone set contains duplicates")
        if 0 in self.semitones:
            raise ValueError(
                "semitone 0 is not allowed in the sweep: the original is always "
                "emitted and owns the p=0 output slot"
            )

    def stft_config(self) -> StftConfig:
        return StftConfig(
            window_length=self.window_length,
            hop_length=self.hop_length,
            fft_size=self.fft_size,
        )

    def mel_config(self) -> feat.MelConfig:
        return feat.MelConfig(
            n_mels=self.n_mels,
            fmin=self.mel_fmin,
            fmax=self.mel_fmax,
            normalization=self.mel_normalization,
        )


@dataclass
class AugmentSummary:
    n_entries: int
    n_written: int
    n_skipped: int
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def validate_manifest(path) -> CorpusManifest:
    """Parse and schema-check a corpus manifest JSON file.

    Checks: non-empty entry list, unique utterance ids, declared styles,
    known splits, and that every referenced WAV file exists. Relative WAV
    paths resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ManifestError(f"{path}: unsupported schema_version {version!r}")
    entries_raw = raw.get("entries")
    if not entries_raw:
        raise ManifestError(f"{path}: empty corpus")
    styles = tuple(raw.get("styles", DEFAULT_STYLES))
    sample_rate = int(raw.get("sample_rate", 24000))
    if sample_rate <= 0:
        raise ManifestError(f"{path}: sample_rate must be positive")

    entries = []
    seen = set()
    base = path.parent
    for i, item in enumerate(entries_raw):
        try:
            entry = ManifestEntry(
                utterance_id=item["utterance_id"],
                wav_path=item["wav_path"],
                speaker=item.get("speaker", ""),
                style=item["style"],
                split=item.get("split", "train"),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: entry {i} is malformed ({exc})") from exc
        if entry.utterance_id in seen:
            raise ManifestError(f"{path}: duplicate utterance_id {entry.utterance_id!r}")
        seen.add(entry.utterance_id)
        if entry.style not in styles:
            raise ManifestError(
                f"{path}: entry {entry.utterance_id!r} has unknown style "
                f"{entry.style!r} (declared: {list(styles)})"
            )
        if entry.split not in SPLITS:
            raise ManifestError(
                f"{path}: entry {entry.utterance_id!r} has unknown split {entry.split!r}"
            )
        wav = Path(entry.wav_path)
        if not wav.is_absolute():
            wav = base / wav
        if not wav.exists():
            raise ManifestError(f"{path}: missing WAV file {wav}")
        entries.append(entry)
    return CorpusManifest(
        entries=entries, styles=styles, sample_rate=sample_rate, base_dir=base
    )


def load_plan(path) -> AugmentationPlan:
    """Load an augmentation plan from JSON (missing keys take defaults)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON ({exc})") from exc
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ManifestError(f"{path}: unsupported schema_version {version!r}")
    known = {f for f in AugmentationPlan.__dataclass_fields__}
    kwargs = {k: v for k, v in raw.items() if k in known}
    unknown = set(raw) - known - {"schema_version"}
    if unknown:
        raise ManifestError(f"{path}: unknown plan keys {sorted(unknown)}")
    try:
        return AugmentationPlan(**kwargs)
    except ValueError as exc:
        raise ManifestError(f"{path}: {exc}") from exc


def _output_paths(out_dir: Path, utterance_id: str, p: int) -> tuple[Path, Path]:
    stem = feat.feature_stem(utterance_id, p)
    return out_dir / f"{stem}.bin", out_dir / f"{stem}.json"


def _write_atomic(fm: feat.FeatureMatrix, out_dir: Path):
    """Write via .partial files, renaming only when both parts are complete."""
    out_dir = Path(out_dir)
    bin_final, json_final = _output_paths(out_dir, fm.utterance_id, int(fm.semitone_p))
    bin_tmp = bin_final.with_name(bin_final.name + ".partial")
    json_tmp = json_final.with_name(json_final.name + ".partial")
    payload, sidecar = feat.feature_payloads(fm)
    bin_tmp.write_bytes(payload)
    json_tmp.write_text(sidecar)
    os.replace(bin_tmp, bin_final)
    os.replace(json_tmp, json_final)


def process_utterance(entry: ManifestEntry, wav_path: str, plan: AugmentationPlan,
                      out_dir, sample_rate: int, semitones: tuple,
                      resample: bool = False) -> tuple[int, int]:
    """Extract and write features for one utterance and its shift sweep.

    Emits the original (p=0) plus one file per semitone in ``semitones``.
    Already-completed outputs are skipped, so interrupted runs resume.
    Returns (written, skipped) counts.
    """
    out_dir = Path(out_dir)
    all_ps = (0,) + tuple(semitones)
    todo = []
    skipped = 0
    for p in all_ps:
        bin_path, json_path = _output_paths(out_dir, entry.utterance_id, p)
        if bin_path.exists() and json_path.exists():
            skipped += 1
        else:
            todo.append(p)
    if not todo:
        return 0, skipped

    cfg = plan.stft_config()
    mel_cfg = plan.mel_config()
    wave = load_wav(wav_path, expected_sample_rate=sample_rate, resample=resample)
    spec = stft_magnitude(wave, cfg)
    contour = feat.extract_f0(
        wave, fmin=plan.f0_min, fmax=plan.f0_max, hop_length=cfg.hop_length
    )
    clf0 = feat.continuize_log_f0(contour)
    hop_ms = cfg.hop_length * 1000.0 / sample_rate
    # Quantize the base contour to file precision once, so the written
    # shifted contours reproduce exactly from the written original.
    base_log_f0 = clf0.values.astype(np.float32).astype(np.float64)
    env, fine = lag_window_separate(spec, plan.lifter_cutoff_ms, plan.taper)

    written = 0
    for p in todo:
        if p == 0:
            shifted_spec = spec
        else:
            stretched = stretch_fine_structure(
                fine, semitone_to_ratio(p), plan.out_of_range
            )
            shifted_spec = recombine(env, stretched)
        mel = feat.log_mel(shifted_spec, mel_cfg)
        log_f0 = base_log_f0 + feat.log_f0_shift(p)
        fm = feat.assemble_features(
            mel,
            feat.ContinuousLogF0(values=log_f0, hop_ms=hop_ms),
            contour.vuv,
            sample_rate=sample_rate,
            hop_ms=hop_ms,
            utterance_id=entry.utterance_id,
            semitone_p=p,
            source_file=str(wav_path),
            style=entry.style,
        )
        _write_atomic(fm, out_dir)
        written += 1
    return written, skipped


def _worker(args):
    entry, wav_path, plan, out_dir, sample_rate, semitones, resample = args
    try:
        written, skipped = process_utterance(
            entry, wav_path, plan, out_dir, sample_rate, semitones, resample
        )
        return entry.utterance_id, written, skipped, None
    except Exception as exc:  # per-utterance isolation: collect, don't abort
        return entry.utterance_id, 0, 0, f"{type(exc).__name__}: {exc}"


def resolve_workers(requested: int | None = None) -> int:
    """Worker count: explicit argument, else PSFORGE_WORKERS, else all cores."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def augment_corpus(
    manifest: CorpusManifest,
    plan: AugmentationPlan,
    out_dir,
    workers: int | None = None,
    resample: bool = False,
) -> AugmentSummary:
    """Run the shift sweep over the corpus and write feature files.

    Train-split utterances get the full semitone sweep; every utterance
    (any split) gets its original features. Per-utterance failures are
    collected in the summary instead of aborting the run; failed
    utterances leave only ``.partial`` files behind.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(workers)

    jobs = []
    for entry in manifest.entries:
        sweep = plan.semitones if entry.split == "train" else ()
        jobs.append(
            (entry, str(manifest.resolve_wav(entry)), plan, str(out_dir),
             manifest.sample_rate, sweep, resample)
        )

    if workers == 1:
        results = [_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs))

    summary = AugmentSummary(n_entries=len(jobs), n_written=0, n_skipped=0)
    for utterance_id, written, skipped, error in results:
        summary.n_written += written
        summary.n_skipped += skipped
        if error is not None:
            summary.failures.append({"utterance_id": utterance_id, "error": error})
    summary.failures.sort(key=lambda f: f["utterance_id"])

    payload = {
        "schema_version": SCHEMA_VERSION,
        "n_entries": summary.n_entries,
        "n_written": summary.n_written,
        "n_skipped": summary.n_skipped,
        "semitones": list(plan.semitones),
        "failures": summary.failures,
    }
    (out_dir / "augment_summary.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )
    return summary


def extract_corpus_features(
    manifest: CorpusManifest,
    plan: AugmentationPlan,
    out_dir,
    workers: int | None = None,
    resample: bool = False,
    split: str | None = None,
) -> AugmentSummary:
    """Originals-only feature extraction (no shift sweep)."""
    entries = manifest.entries if split in (None, "all") else [
        e for e in manifest.entries if e.split == split
    ]
    subset = CorpusManifest(
        entries=entries,
        styles=manifest.styles,
        sample_rate=manifest.sample_rate,
        base_dir=manifest.base_dir,
    )
    return augment_corpus(
        subset, replace(plan, semitones=()), out_dir, workers, resample
    )


# --- F0 distribution analysis ------------------------------------------------


@dataclass
class DatasetF0Stats:
    label: str
    style: str
    n_voiced: int
    mean: float
    std: float
    min: float
    max: float
    histogram: np.ndarray
    underflow: int
    overflow: int


@dataclass
class AnalysisReport:
    bin_edges: np.ndarray
    groups: list  # DatasetF0Stats per (label, style), plus per-label totals

    def to_payload(self) -> dict:
        datasets: dict = {}
        for g in self.groups:
            block = datasets.setdefault(g.label, {"styles": {}})
            entry = {
                "n_voiced": g.n_voiced,
                "mean_hz": g.mean,
                "std_hz": g.std,
                "min_hz": g.min,
                "max_hz": g.max,
                "histogram": g.histogram.tolist(),
                "underflow": g.underflow,
                "overflow": g.overflow,
            }
            if g.style == "__all__":
                block["overall"] = entry
            else:
                block["styles"][g.style] = entry
        return {
            "schema_version": SCHEMA_VERSION,
            "bin_edges_hz": self.bin_edges.tolist(),
            "datasets": datasets,
        }


def _feature_files(directory: Path):
    return sorted(
        p for p in directory.glob("*.json")
        if p.name != "augment_summary.json" and not p.name.endswith(".partial")
    )


def _group_stats(label: str, style: str, values: np.ndarray,
                 edges: np.ndarray) -> DatasetF0Stats:
    hist, _ = np.histogram(values, bins=edges)
    return DatasetF0Stats(
        label=label,
        style=style,
        n_voiced=values.size,
        mean=float(values.mean()),
        std=float(values.std()),
        min=float(values.min()),
        max=float(values.max()),
        histogram=hist,
        underflow=int((values < edges[0]).sum()),
        overflow=int((values >= edges[-1]).sum()),
    )


def analyze_f0_distribution(datasets: dict, out_dir=None) -> AnalysisReport:
    """Histogram voiced F0 (Hz) per dataset and style.

    ``datasets`` maps labels to feature directories. F0 values are
    ``exp(continuous log F0)`` restricted to frames with V/UV = 1, binned
    at 5 Hz over [50, 1000) Hz; values outside the range are tallied as
    underflow/overflow so counts always sum to the voiced-frame count.
    Writes ``report.json`` and one distribution plot per dataset when
    ``out_dir`` is given.
    """
    if not datasets:
        raise ValueError("at least one dataset is required")
    edges = np.arange(F0_HIST_MIN, F0_HIST_MAX + F0_HIST_BIN, F0_HIST_BIN)
    groups = []
    per_label_values: dict = {}
    for label, directory in datasets.items():
        directory = Path(directory)
        by_style: dict = {}
        for sidecar in _feature_files(directory):
            fm = feat.load_features(sidecar)
            voiced = fm.data[:, feat.VUV_COLUMN] == 1.0
            values = np.exp(fm.data[voiced, feat.LOG_F0_COLUMN])
            style = fm.style or "unstyled"
            by_style.setdefault(style, []).append(values)
        if not by_style:
            raise ValueError(f"dataset {label!r}: no feature files in {directory}")
        all_values = []
        for style in sorted(by_style):
            values = np.concatenate(by_style[style])
            if values.size == 0:
                raise ValueError(f"dataset {label!r} style {style!r}: no voiced frames")
            groups.append(_group_stats(label, style, values, edges))
            all_values.append(values)
        total = np.concatenate(all_values)
        if total.size == 0:
            raise ValueError(f"dataset {label!r}: no voiced frames")
        groups.append(_group_stats(label, "__all__", total, edges))
        per_label_values[label] = total

    report = AnalysisReport(bin_edges=edges, groups=groups)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps(report.to_payload(), indent=2, sort_keys=True) + "\n"
        )
        _render_plots(report, per_label_values, out_dir)
    return report


def _render_plots(report: AnalysisReport, per_label_values: dict, out_dir: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    centers = report.bin_edges[:-1] + F0_HIST_BIN / 2.0
    for label in per_label_values:
        fig, ax = plt.subplots(figsize=(8, 4))
        for g in report.groups:
            if g.label != label or g.style == "__all__":
                continue
            ax.step(centers, g.histogram, where="mid", label=g.style)
        ax.set_xlabel("F0 [Hz]")
        ax.set_ylabel("voiced frames")
        ax.set_title(f"F0 distribution: {label}")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / f"f0_distribution_{label}.png", dpi=120)
        plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 4))
    for g in report.groups:
        if g.style != "__all__":
            continue
        ax.step(centers, g.histogram, where="mid", label=g.label)
    ax.set_xlabel("F0 [Hz]")
    ax.set_ylabel("voiced frames")
    ax.set_title("F0 distribution comparison")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "f0_distribution_comparison.png", dpi=120)
    plt.close(fig)


# --- corpus statistics --------------------------------------------------------


def run_stats(
    manifest: CorpusManifest,
    feature_dir,
    out_path=None,
    include_augmented: bool = True,
) -> feat.NormStats:
    """Normalization statistics over the train split's feature files.

    Originals of every train utterance must exist; augmented files are
    included by default (set ``include_augmented=False`` for originals
    only). Other splits never contribute.
    """
    feature_dir = Path(feature_dir)
    train = manifest.train_entries()
    if not train:
        raise ValueError("manifest has no train-split entries")

    selected = []
    missing = []
    for entry in train:
        original = feature_dir / f"{feat.feature_stem(entry.utterance_id, 0)}.json"
        if not original.exists():
            missing.append(str(original))
            continue
        if include_augmented:
            selected.extend(
                p for p in sorted(feature_dir.glob(f"{entry.utterance_id}_p*.json"))
                if not p.name.endswith(".partial")
            )
        else:
            selected.append(original)
    if missing:
        raise ValueError(
            "missing feature files for train utterances: " + ", ".join(missing)
        )

    acc = feat._StatsAccumulator()
    for sidecar in selected:
        acc.add(feat.load_features(sidecar).data)
    stats = acc.finalize()
    if out_path is not None:
        feat.save_norm_stats(
            stats,
            out_path,
            provenance={
                "split": "train",
                "include_augmented": include_augmented,
                "n_files": len(selected),
            },
        )
    return stats
