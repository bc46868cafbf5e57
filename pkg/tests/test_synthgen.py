import dataclasses

import numpy as np
import pytest
from scipy import stats

from ieegpredict.evalkit import roc_auc
from ieegpredict.ieeg_io import Label, load_manifest, read_clip
from ieegpredict.pipeline import clip_to_tensors
from ieegpredict.predictor import ArchitectureConfig, SegmentSet, TrainConfig, train
from ieegpredict.quant_analysis import detect_outliers, distribution_shift
from ieegpredict.signal_core import PipelineConfig, band_power, detect_dropout
from ieegpredict.spectro import StftConfig
from ieegpredict.synthgen import (
    SynthConfig,
    generate,
    generate_clip,
    inject_dropout,
    inject_outliers,
    inject_shift,
)

SMALL = SynthConfig(n_patients=1, train_preictal=2, train_interictal=3, test_preictal=1, test_interictal=1,
                    n_channels=4, clip_seconds=60, rng_seed=5)


def small_clip(label=Label.INTERICTAL, index=0, **kw):
    return generate_clip(dataclasses.replace(SMALL, **kw), 0, "train", label, index)


def mean_band_ratio(cfg, n=6):
    """Mean 0-8 Hz Welch band power, preictal over interictal."""
    def power(label):
        return np.mean([
            np.mean([band_power(ch, cfg.sampling_rate, 0, 8) for ch in generate_clip(cfg, 0, "train", label, i).samples])
            for i in range(n)
        ])
    return power(Label.PREICTAL) / power(Label.INTERICTAL)


class TestGenerate:
    def test_files_identical_per_seed(self, tmp_path):
        generate(SMALL, tmp_path / "a")
        generate(SMALL, tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.iegb"))
        assert len(files) == 7
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert (tmp_path / "a/manifest.json").read_text() == (tmp_path / "b/manifest.json").read_text()

    def test_seed_changes_output(self):
        a = small_clip()
        b = generate_clip(dataclasses.replace(SMALL, rng_seed=6), 0, "train", Label.INTERICTAL, 0)
        assert a.samples.tobytes() != b.samples.tobytes()

    def test_manifest_labels_match_branch(self, tmp_path):
        generate(SMALL, tmp_path)
        manifest = load_manifest(tmp_path / "manifest.json")
        for entry in manifest.patients[0].clips:
            clip = read_clip(entry.path)
            assert clip.label == entry.label
            assert ("preictal" in entry.clip_id) == (entry.label == Label.PREICTAL)
        assert manifest.counts()["P1"]["train"] == {"preictal": 2, "interictal": 3, "unlabeled": 0}

    def test_default_imbalance(self):
        cfg = SynthConfig(train_preictal=10, imbalance_ratio=6.0)
        assert cfg.n_clips("train", Label.INTERICTAL) == 60
        assert cfg.n_clips("test", Label.INTERICTAL) == 30

    def test_shape_and_rate(self):
        clip = small_clip()
        assert clip.samples.shape == (4, 24_000) and clip.sampling_rate == 400.0

    def test_band_power_signature(self):
        cfg = dataclasses.replace(SMALL, n_channels=16, clip_seconds=120)
        assert mean_band_ratio(cfg) >= 1.5

    def test_zero_strength_identical_classes(self):
        cfg = dataclasses.replace(SMALL, signature_strength=0.0, clip_seconds=120)
        assert 0.8 < mean_band_ratio(cfg) < 1.25

    @pytest.mark.parametrize("kw", [{"n_patients": -1}, {"signature_strength": -0.1}, {"n_channels": 0}])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)


def segment_set(cfg, split, n_per_class, pipeline, stft):
    tensors = []
    for label in (Label.INTERICTAL, Label.PREICTAL):
        for i in range(n_per_class):
            tensors += clip_to_tensors(generate_clip(cfg, 0, split, label, i), pipeline, stft)
    return SegmentSet.from_tensors(tensors)


class TestLearnability:
    """Strength 0 must be unlearnable; strength 1 must be learnable (positive control)."""

    PIPE = PipelineConfig(decimation_factor=4, segment_seconds=6)
    ARCH = ArchitectureConfig(conv_units=4, reduce_units=4, fc_sizes=(16, 8))

    def segment_scores(self, strength):
        cfg = dataclasses.replace(SMALL, signature_strength=strength)
        train_set = segment_set(cfg, "train", 16, self.PIPE, StftConfig())
        test_set = segment_set(cfg, "test", 16, self.PIPE, StftConfig())
        model, _ = train(train_set, TrainConfig(epochs=4, batch_size=16, validation_fraction=0.0), self.ARCH)
        return model.predict_segments(test_set.x), test_set.labels

    def test_zero_strength_chance(self):
        scores, labels = self.segment_scores(0.0)
        # a collapsed constant model would pass trivially
        assert np.std(scores) > 1e-3
        assert 0.3 <= roc_auc(scores, labels).auc <= 0.7

    def test_full_strength_learnable(self):
        scores, labels = self.segment_scores(1.0)
        assert roc_auc(scores, labels).auc >= 0.8


class TestInjectors:
    def test_single_window(self):
        clip = inject_dropout(small_clip(), [(100, 50)])
        rep = detect_dropout(clip)
        assert rep.fraction == 50 / clip.n_samples
        np.testing.assert_array_equal(rep.zero_sample_indices, np.arange(100, 150))

    def test_overlap_counted_once(self):
        clip = inject_dropout(small_clip(), [(100, 50), (120, 100), (5000, 1)])
        rep = detect_dropout(clip)
        expected = np.union1d(np.arange(100, 220), [5000])
        np.testing.assert_array_equal(rep.zero_sample_indices, expected)
        assert rep.fraction == len(expected) / clip.n_samples

    def test_full_window(self):
        clip = small_clip()
        assert detect_dropout(inject_dropout(clip, [(0, clip.n_samples)])).fraction == 1.0

    def test_outliers_recovered(self):
        clip, injected = inject_outliers(small_clip(), count=20, magnitude_sigma=10, seed=3)
        found = {(r, c) for r, c, _ in detect_outliers(clip.samples.T, 6.0)}
        assert len(injected) == 80
        assert len(found & set(injected)) / len(injected) >= 0.9

    def test_identity_shift(self):
        clip = small_clip()
        assert inject_shift(clip, 1, 0).samples.tobytes() == clip.samples.tobytes()

    def test_scale_two_shift_matches_gaussian_limit(self):
        # sup |Phi(x) - Phi(x/2)| for zero-mean Gaussians differing in scale by 2
        grid = np.linspace(0, 5, 200_001)
        limit = np.max(stats.norm.cdf(grid) - stats.norm.cdf(grid / 2))
        assert limit == pytest.approx(0.1613, abs=1e-4)
        train = small_clip(index=0).samples[0]
        test = inject_shift(small_clip(index=1), 2.0, 0.0).samples[0]
        assert distribution_shift(train, test) == pytest.approx(limit, abs=0.03)
        assert distribution_shift(train, small_clip(index=1).samples[0]) < 0.1
