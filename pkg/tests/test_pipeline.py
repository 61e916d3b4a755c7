import json

import numpy as np
import pytest

from psforge import (
    AugmentationPlan,
    ManifestError,
    analyze_f0_distribution,
    augment_corpus,
    extract_corpus_features,
    load_features,
    load_plan,
    run_stats,
    validate_manifest,
)
from psforge.features import LOG_F0_COLUMN, VUV_COLUMN
from psforge.pipeline import DEFAULT_SEMITONES

from conftest import SR, harmonic_source, make_manifest, sine, speechlike


SMALL_PLAN = AugmentationPlan(semitones=(12, -3))


def small_corpus(tmp_path, n=3, split="train"):
    utts = [
        {
            "utterance_id": f"utt{i:03d}",
            "samples": harmonic_source(180.0 + 30.0 * i, dur=0.5, seed=i),
            "style": "neutral",
            "split": split,
        }
        for i in range(n)
    ]
    return make_manifest(tmp_path, utts)


class TestManifest:
    def test_valid_manifest_parses(self, tmp_path):
        path = small_corpus(tmp_path)
        manifest = validate_manifest(path)
        assert len(manifest.entries) == 3
        assert manifest.sample_rate == SR

    def test_empty_corpus_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"schema_version": 1, "entries": []}))
        with pytest.raises(ManifestError, match="empty corpus"):
            validate_manifest(path)

    def test_duplicate_id_named(self, tmp_path):
        path = small_corpus(tmp_path)
        raw = json.loads(path.read_text())
        raw["entries"].append(dict(raw["entries"][0]))
        path.write_text(json.dumps(raw))
        with pytest.raises(ManifestError, match="utt000"):
            validate_manifest(path)

    def test_missing_wav_rejected(self, tmp_path):
        path = small_corpus(tmp_path)
        raw = json.loads(path.read_text())
        raw["entries"][1]["wav_path"] = "wav/nonexistent.wav"
        path.write_text(json.dumps(raw))
        with pytest.raises(ManifestError, match="missing WAV"):
            validate_manifest(path)

    def test_unknown_style_rejected(self, tmp_path):
        path = small_corpus(tmp_path)
        raw = json.loads(path.read_text())
        raw["entries"][0]["style"] = "anger"
        path.write_text(json.dumps(raw))
        with pytest.raises(ManifestError, match="anger"):
            validate_manifest(path)

    def test_malformed_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ManifestError, match="malformed"):
            validate_manifest(path)

    def test_wrong_schema_version_rejected(self, tmp_path):
        path = small_corpus(tmp_path)
        raw = json.loads(path.read_text())
        raw["schema_version"] = 99
        path.write_text(json.dumps(raw))
        with pytest.raises(ManifestError, match="schema_version"):
            validate_manifest(path)


class TestPlan:
    def test_default_sweep_is_15_shifts_without_zero(self):
        plan = AugmentationPlan()
        assert len(plan.semitones) == 15
        assert 0 not in plan.semitones
        assert plan.semitones == tuple(p for p in range(-3, 13) if p != 0)
        assert DEFAULT_SEMITONES == plan.semitones

    def test_zero_semitone_rejected(self):
        with pytest.raises(ValueError, match="semitone 0"):
            AugmentationPlan(semitones=(0, 2))

    def test_duplicate_semitones_rejected(self):
        with pytest.raises(ValueError, match="duplicates"):
            AugmentationPlan(semitones=(3, 3))

    def test_plan_file_roundtrip(self, tmp_path):
        path = tmp_path / "plan.json"
        path.write_text(json.dumps({
            "schema_version": 1,
            "semitones": [12],
            "lifter_cutoff_ms": 2.5,
            "f0_min": 60.0,
        }))
        plan = load_plan(path)
        assert plan.semitones == (12,)
        assert plan.lifter_cutoff_ms == 2.5
        assert plan.f0_min == 60.0
        assert plan.n_mels == 80  # defaults survive

    def test_unknown_plan_key_rejected(self, tmp_path):
        path = tmp_path / "plan.json"
        path.write_text(json.dumps({"schema_version": 1, "fft": 512}))
        with pytest.raises(ManifestError, match="unknown plan keys"):
            load_plan(path)


class TestAugment:
    def test_counts_and_metadata(self, tmp_path):
        manifest = validate_manifest(small_corpus(tmp_path))
        out = tmp_path / "features"
        summary = augment_corpus(manifest, SMALL_PLAN, out, workers=1)
        assert summary.ok
        assert summary.n_written == 3 * (2 + 1)
        bins = sorted(out.glob("*.bin"))
        assert len(bins) == 9
        for p in (0, 12, -3):
            fm = load_features(out / f"utt000_p{p:+03d}.json")
            assert fm.semitone_p == p
            assert fm.style == "neutral"

    def test_sidecar_f0_shift_law_is_bit_exact(self, tmp_path):
        manifest = validate_manifest(small_corpus(tmp_path))
        out = tmp_path / "features"
        augment_corpus(manifest, SMALL_PLAN, out, workers=1)
        for utt in ("utt000", "utt001", "utt002"):
            orig = load_features(out / f"{utt}_p+00.json")
            base = orig.data[:, LOG_F0_COLUMN].astype(np.float32)
            for p in SMALL_PLAN.semitones:
                aug = load_features(out / f"{utt}_p{p:+03d}.json")
                expected = (
                    base.astype(np.float64) + p * np.log(2.0) / 12.0
                ).astype(np.float32)
                assert np.array_equal(
                    aug.data[:, LOG_F0_COLUMN].astype(np.float32), expected
                )

    def test_vuv_copied_bit_identical(self, tmp_path):
        manifest = validate_manifest(small_corpus(tmp_path))
        out = tmp_path / "features"
        augment_corpus(manifest, SMALL_PLAN, out, workers=1)
        orig = load_features(out / "utt000_p+00.json")
        for p in SMALL_PLAN.semitones:
            aug = load_features(out / f"utt000_p{p:+03d}.json")
            assert np.array_equal(aug.data[:, VUV_COLUMN], orig.data[:, VUV_COLUMN])

    def test_non_train_entries_get_originals_only(self, tmp_path):
        utts = [
            {"utterance_id": "tr0", "samples": sine(200.0, dur=0.4), "split": "train"},
            {"utterance_id": "dv0", "samples": sine(210.0, dur=0.4), "split": "dev"},
        ]
        manifest = validate_manifest(make_manifest(tmp_path, utts))
        out = tmp_path / "features"
        summary = augment_corpus(manifest, SMALL_PLAN, out, workers=1)
        assert summary.ok
        assert len(list(out.glob("tr0_p*.bin"))) == 3
        assert len(list(out.glob("dv0_p*.bin"))) == 1

    def test_unreadable_wav_collected_as_failure(self, tmp_path):
        path = small_corpus(tmp_path)
        manifest = validate_manifest(path)
        wav = manifest.resolve_wav(manifest.entries[1])
        wav.write_bytes(b"not a wav file")
        out = tmp_path / "features"
        summary = augment_corpus(manifest, SMALL_PLAN, out, workers=1)
        assert not summary.ok
        assert len(summary.failures) == 1
        assert summary.failures[0]["utterance_id"] == "utt001"
        assert len(list(out.glob("utt001_*.bin"))) == 0
        assert len(list(out.glob("utt000_*.bin"))) == 3

    def test_resume_skips_completed_outputs(self, tmp_path):
        manifest = validate_manifest(small_corpus(tmp_path))
        out = tmp_path / "features"
        first = augment_corpus(manifest, SMALL_PLAN, out, workers=1)
        assert first.n_written == 9 and first.n_skipped == 0
        # Drop one completed output; the rerun recreates only that one.
        (out / "utt002_p+12.bin").unlink()
        (out / "utt002_p+12.json").unlink()
        second = augment_corpus(manifest, SMALL_PLAN, out, workers=1)
        assert second.n_written == 1
        assert second.n_skipped == 8
        assert (out / "utt002_p+12.bin").exists()

    def test_no_partial_files_after_success(self, tmp_path):
        manifest = validate_manifest(small_corpus(tmp_path))
        out = tmp_path / "features"
        augment_corpus(manifest, SMALL_PLAN, out, workers=1)
        assert list(out.glob("*.partial")) == []

    def test_stale_partials_are_superseded(self, tmp_path):
        # A crash between write and rename leaves .partial files; the
        # rerun rewrites the real outputs and the stale markers are inert.
        manifest = validate_manifest(small_corpus(tmp_path))
        out = tmp_path / "features"
        out.mkdir()
        (out / "utt000_p+12.bin.partial").write_bytes(b"stale")
        (out / "utt000_p+12.json.partial").write_text("{}")
        summary = augment_corpus(manifest, SMALL_PLAN, out, workers=1)
        assert summary.ok and summary.n_written == 9
        assert (out / "utt000_p+12.bin").exists()
        fm = load_features(out / "utt000_p+12.json")
        assert fm.semitone_p == 12

    def test_multiworker_matches_single_worker(self, tmp_path):
        manifest = validate_manifest(small_corpus(tmp_path))
        out1 = tmp_path / "w1"
        out2 = tmp_path / "w2"
        augment_corpus(manifest, SMALL_PLAN, out1, workers=1)
        augment_corpus(manifest, SMALL_PLAN, out2, workers=3)
        files1 = sorted(p.name for p in out1.iterdir())
        files2 = sorted(p.name for p in out2.iterdir())
        assert files1 == files2
        for name in files1:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_features_command_extracts_originals(self, tmp_path):
        manifest = validate_manifest(small_corpus(tmp_path))
        out = tmp_path / "orig"
        summary = extract_corpus_features(manifest, AugmentationPlan(), out, workers=1)
        assert summary.ok
        assert len(list(out.glob("*.bin"))) == 3
        assert all("_p+00" in p.name for p in out.glob("*.bin"))


def constant_f0_corpus(tmp_path, out_name, f0s, styles=None, dur=0.4):
    utts = []
    for i, f0 in enumerate(f0s):
        utts.append(
            {
                "utterance_id": f"c{i:03d}",
                "samples": harmonic_source(f0, dur=dur, seed=100 + i),
                "style": (styles or ["neutral"] * len(f0s))[i],
            }
        )
    manifest = validate_manifest(
        make_manifest(tmp_path, utts, name=f"{out_name}.json")
    )
    out = tmp_path / out_name
    extract_corpus_features(manifest, AugmentationPlan(), out, workers=1)
    return out


class TestAnalyze:
    def test_constant_corpus_masses_one_bin(self, tmp_path):
        out = constant_f0_corpus(tmp_path, "const220", [220.0, 220.0])
        report = analyze_f0_distribution({"const": out})
        overall = [g for g in report.groups if g.style == "__all__"][0]
        assert abs(overall.mean - 220.0) < 2.0
        hist = overall.histogram
        # 220 Hz falls in bin [220, 225); allow the neighbor for tracker
        # jitter but demand a dominant bin.
        top = hist.argmax()
        assert 215.0 <= report.bin_edges[top] <= 220.0
        assert hist[top] >= 0.9 * hist.sum()

    def test_histogram_counts_cover_all_voiced_frames(self, tmp_path):
        out = constant_f0_corpus(tmp_path, "cov", [200.0, 260.0])
        report = analyze_f0_distribution({"d": out})
        for g in report.groups:
            assert g.histogram.sum() + g.underflow + g.overflow == g.n_voiced

    def test_mean_difference_recovered(self, tmp_path):
        out_a = constant_f0_corpus(tmp_path, "dsa", [220.0, 240.0])
        out_b = constant_f0_corpus(tmp_path, "dsb", [224.0, 244.0])
        report = analyze_f0_distribution({"a": out_a, "b": out_b})
        overall = {g.label: g for g in report.groups if g.style == "__all__"}
        diff = overall["b"].mean - overall["a"].mean
        assert abs(diff - 4.0) < 1.5  # tracker jitter, well under one bin

    def test_styles_grouped_separately(self, tmp_path):
        out = constant_f0_corpus(
            tmp_path, "styled", [200.0, 300.0], styles=["neutral", "happiness"]
        )
        report = analyze_f0_distribution({"s": out})
        styles = {g.style for g in report.groups}
        assert {"neutral", "happiness", "__all__"} <= styles

    def test_report_files_written(self, tmp_path):
        out = constant_f0_corpus(tmp_path, "rep", [220.0])
        report_dir = tmp_path / "report"
        analyze_f0_distribution({"corpus": out}, out_dir=report_dir)
        assert (report_dir / "report.json").exists()
        assert (report_dir / "f0_distribution_corpus.png").exists()
        assert (report_dir / "f0_distribution_comparison.png").exists()
        payload = json.loads((report_dir / "report.json").read_text())
        assert "corpus" in payload["datasets"]

    def test_empty_dataset_rejected(self, tmp_path):
        empty = tmp_path / "nothing"
        empty.mkdir()
        with pytest.raises(ValueError, match="no feature files"):
            analyze_f0_distribution({"x": empty})

    def test_no_datasets_rejected(self):
        with pytest.raises(ValueError):
            analyze_f0_distribution({})


class TestRunStats:
    def _setup(self, tmp_path):
        utts = [
            {"utterance_id": "tr0", "samples": speechlike(200.0, 0.4, seed=1),
             "split": "train"},
            {"utterance_id": "tr1", "samples": speechlike(240.0, 0.4, seed=2),
             "split": "train"},
            {"utterance_id": "dv0", "samples": speechlike(220.0, 0.4, seed=3),
             "split": "dev"},
        ]
        manifest = validate_manifest(make_manifest(tmp_path, utts))
        out = tmp_path / "features"
        augment_corpus(manifest, SMALL_PLAN, out, workers=1)
        return manifest, out

    def test_stats_over_train_split(self, tmp_path):
        manifest, out = self._setup(tmp_path)
        stats = run_stats(manifest, out, out_path=tmp_path / "stats.json")
        n_frames_expected = sum(
            load_features(p).n_frames for p in out.glob("tr*_p*.json")
        )
        assert stats.frame_count == n_frames_expected
        assert (tmp_path / "stats.json").exists()

    def test_dev_split_excluded(self, tmp_path):
        manifest, out = self._setup(tmp_path)
        stats_before = run_stats(manifest, out)
        (out / "dv0_p+00.bin").unlink()
        (out / "dv0_p+00.json").unlink()
        stats_after = run_stats(manifest, out)
        assert np.array_equal(stats_before.mean, stats_after.mean)
        assert np.array_equal(stats_before.std, stats_after.std)

    def test_originals_only_flag(self, tmp_path):
        manifest, out = self._setup(tmp_path)
        stats = run_stats(manifest, out, include_augmented=False)
        n_orig = sum(
            load_features(out / f"{e.utterance_id}_p+00.json").n_frames
            for e in manifest.train_entries()
        )
        assert stats.frame_count == n_orig

    def test_missing_features_enumerated(self, tmp_path):
        manifest, out = self._setup(tmp_path)
        (out / "tr1_p+00.bin").unlink()
        (out / "tr1_p+00.json").unlink()
        with pytest.raises(ValueError, match="tr1_p\\+00"):
            run_stats(manifest, out)

    def test_empty_train_split_rejected(self, tmp_path):
        utts = [{"utterance_id": "d", "samples": sine(200.0, dur=0.3), "split": "dev"}]
        manifest = validate_manifest(make_manifest(tmp_path, utts))
        with pytest.raises(ValueError, match="no train-split"):
            run_stats(manifest, tmp_path)

    def test_stats_then_normalize_self_consistent(self, tmp_path):
        from psforge import normalize

        manifest, out = self._setup(tmp_path)
        stats = run_stats(manifest, out)
        frames = []
        for entry in manifest.train_entries():
            for sidecar in sorted(out.glob(f"{entry.utterance_id}_p*.json")):
                frames.append(normalize(load_features(sidecar), stats).data)
        data = np.concatenate(frames)
        scaled = data[:, :VUV_COLUMN]
        assert np.max(np.abs(scaled.mean(axis=0))) < 1e-6
        assert np.max(np.abs(scaled.std(axis=0) - 1.0)) < 1e-6
