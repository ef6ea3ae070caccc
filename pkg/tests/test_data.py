"""Round-trip, layout and pre-sampling tests for the storage layer."""

import math
import struct

import numpy as np
import pytest

from nsnet.data import (
    FeatureFormatError,
    ManifestEntry,
    PresampleConfig,
    VideoRecord,
    generate_synthetic_dataset,
    load_manifest,
    presample,
    presample_indices,
    read_feature_file,
    write_feature_file,
    write_manifest,
)


class TestFeatureFileLayout:
    def test_single_value_layout(self, tmp_path):
        path = str(tmp_path / "one.nsf")
        write_feature_file(path, np.array([[42.0]]))
        blob = open(path, "rb").read()
        assert len(blob) == 16
        assert blob[:4] == b"NSF1"
        assert struct.unpack("<II", blob[4:12]) == (1, 1)
        assert struct.unpack("<f", blob[12:]) == (42.0,)

    def test_round_trip_is_bitwise_at_f32(self, tmp_path):
        rng = np.random.default_rng(42)
        matrix = rng.standard_normal((7, 5))
        path = str(tmp_path / "m.nsf")
        write_feature_file(path, matrix)
        back = read_feature_file(path)
        assert back.dtype == np.float64
        np.testing.assert_array_equal(back, matrix.astype(np.float32).astype(np.float64))
        write_feature_file(str(tmp_path / "m2.nsf"), back)
        assert open(path, "rb").read() == open(str(tmp_path / "m2.nsf"), "rb").read()

    def test_file_size_formula(self, tmp_path):
        path = str(tmp_path / "f.nsf")
        write_feature_file(path, np.zeros((3, 4)))
        assert len(open(path, "rb").read()) == 4 + 4 + 4 + 48

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.nsf"
        path.write_bytes(b"XXXX" + struct.pack("<II", 1, 1) + b"\x00" * 4)
        with pytest.raises(FeatureFormatError, match="magic"):
            read_feature_file(str(path))

    def test_truncation_cites_byte_counts(self, tmp_path):
        path = str(tmp_path / "t.nsf")
        write_feature_file(path, np.zeros((3, 4)))
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-4])
        with pytest.raises(FeatureFormatError, match="expected 60 bytes, got 56"):
            read_feature_file(str(path))


def _record_with_tagged_frames(n, c=3, seed=0):
    """Every per-frame array carries the frame index in column 0."""
    rng = np.random.default_rng(seed)
    tag = np.arange(float(n)).reshape(-1, 1)
    light = np.hstack([tag, rng.standard_normal((n, 2))])
    guide = np.hstack([tag, rng.standard_normal((n, 3))])
    logits = np.hstack([tag, rng.standard_normal((n, c - 1))])
    mask = (np.arange(n) % 2).astype(np.float64)
    return VideoRecord("tagged", 0, light, guide, logits, mask)


class TestPresample:
    def test_short_video_is_tiled(self):
        idx = presample_indices(3, PresampleConfig(frames=8))
        np.testing.assert_array_equal(idx, [0, 1, 2, 0, 1, 2, 0, 1])

    def test_segment_center_formula(self):
        idx = presample_indices(10, PresampleConfig(frames=5))
        np.testing.assert_array_equal(idx, [1, 3, 5, 7, 9])

    def test_identity_when_lengths_match(self):
        for n in (1, 4, 9):
            idx = presample_indices(n, PresampleConfig(frames=n))
            np.testing.assert_array_equal(idx, np.arange(n))

    def test_indices_nondecreasing_and_in_range(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            n = int(rng.integers(1, 60))
            t = int(rng.integers(1, n + 1))
            idx = presample_indices(n, PresampleConfig(frames=t))
            assert idx.shape == (t,)
            assert np.all(np.diff(idx) >= 0)
            assert idx.min() >= 0 and idx.max() < n

    def test_shift_stays_in_range(self):
        rng = np.random.default_rng(3)
        cfg = PresampleConfig(frames=5, shift_augment=True)
        for _ in range(200):
            idx = presample_indices(23, cfg, rng)
            assert idx.shape == (5,)
            assert idx.min() >= 0 and idx.max() < 23

    def test_shift_requires_rng(self):
        with pytest.raises(ValueError, match="rng"):
            presample_indices(10, PresampleConfig(frames=5, shift_augment=True))

    def test_alignment_across_parallel_arrays(self):
        record = _record_with_tagged_frames(11)
        out = presample(record, PresampleConfig(frames=4))
        assert out.num_frames == 4
        tags = out.light_features[:, 0]
        np.testing.assert_array_equal(out.guiding_features[:, 0], tags)
        np.testing.assert_array_equal(out.recognizer_logits[:, 0], tags)
        np.testing.assert_array_equal(out.saliency_mask, tags.astype(int) % 2)

    def test_output_always_has_exactly_t_frames(self):
        record = _record_with_tagged_frames(6)
        for t in (1, 3, 6, 10, 17):
            assert presample(record, PresampleConfig(frames=t)).num_frames == t


class TestSyntheticDataset:
    def test_zero_noise_oracle_recognizer_is_exact(self, tmp_path):
        train, _ = generate_synthetic_dataset(
            str(tmp_path), num_classes=3, videos_per_class=2, num_frames=10,
            light_dim=8, guiding_dim=8, salient_fraction=0.4, noise_sigma=0.0,
            seed=5)
        manifest = load_manifest(train)
        for record in manifest.load_all():
            salient = record.saliency_mask == 1.0
            preds = record.recognizer_logits.argmax(axis=1)
            assert np.all(preds[salient] == record.label)
            # zero-noise salient guiding features sit exactly on the centroid
            feats = record.guiding_features[salient]
            assert np.allclose(feats, feats[0])
            assert record.recognizer_logits[salient, record.label].max() == 0.0

    def test_full_salient_fraction(self, tmp_path):
        train, _ = generate_synthetic_dataset(
            str(tmp_path), num_classes=2, videos_per_class=1, num_frames=6,
            light_dim=4, guiding_dim=4, salient_fraction=1.0, noise_sigma=0.1,
            seed=1)
        for record in load_manifest(train).load_all():
            np.testing.assert_array_equal(record.saliency_mask, np.ones(6))

    def test_oracle_ranking_recall(self, tmp_path):
        train, _ = generate_synthetic_dataset(
            str(tmp_path), num_classes=10, videos_per_class=20, num_frames=16,
            light_dim=16, guiding_dim=16, salient_fraction=0.25, noise_sigma=0.1,
            seed=11)
        k = math.ceil(0.25 * 16)
        recalls = []
        for record in load_manifest(train).load_all():
            order = np.argsort(-record.recognizer_logits[:, record.label], kind="stable")
            chosen = set(order[:k].tolist())
            planted = set(np.flatnonzero(record.saliency_mask).tolist())
            recalls.append(len(chosen & planted) / len(planted))
        assert np.mean(recalls) >= 0.95

    def test_same_seed_is_byte_identical(self, tmp_path):
        kwargs = dict(num_classes=2, videos_per_class=2, num_frames=5,
                      light_dim=4, guiding_dim=6, salient_fraction=0.5,
                      noise_sigma=0.3, seed=123, val_videos_per_class=1)
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        generate_synthetic_dataset(str(a_dir), **kwargs)
        generate_synthetic_dataset(str(b_dir), **kwargs)
        a_files = sorted(p.relative_to(a_dir) for p in a_dir.rglob("*") if p.is_file())
        b_files = sorted(p.relative_to(b_dir) for p in b_dir.rglob("*") if p.is_file())
        assert a_files == b_files
        for rel in a_files:
            assert (a_dir / rel).read_bytes() == (b_dir / rel).read_bytes()

    def test_parameter_validation(self, tmp_path):
        with pytest.raises(ValueError, match="salient_fraction"):
            generate_synthetic_dataset(str(tmp_path), 2, 1, 4, 4, 4, 1.5, 0.1, 0)
        with pytest.raises(ValueError, match="classes"):
            generate_synthetic_dataset(str(tmp_path), 1, 1, 4, 4, 4, 0.5, 0.1, 0)


class TestManifest:
    def test_round_trip_and_validation(self, tmp_path):
        train, val = generate_synthetic_dataset(
            str(tmp_path), num_classes=2, videos_per_class=3, num_frames=4,
            light_dim=3, guiding_dim=5, salient_fraction=0.5, noise_sigma=0.2,
            seed=2, val_videos_per_class=2)
        manifest = load_manifest(train)
        assert manifest.num_classes == 2
        assert len(manifest.entries) == 6
        records = manifest.load_all()
        assert all(r.light_features.shape == (4, 3) for r in records)
        assert all(r.guiding_features.shape == (4, 5) for r in records)
        assert len(load_manifest(val).entries) == 4

    def test_missing_file_detected(self, tmp_path):
        feat = str(tmp_path / "x.nsf")
        write_feature_file(feat, np.zeros((2, 2)))
        entries = [ManifestEntry("v0", 0, feat, feat, feat, None)]
        path = str(tmp_path / "m.nsm")
        write_manifest(path, 2, entries)
        # break the referenced file path
        text = open(path).read().replace("x.nsf", "gone.nsf")
        open(path, "w").write(text)
        with pytest.raises(FeatureFormatError, match="missing"):
            load_manifest(path)

    def test_duplicate_ids_rejected(self, tmp_path):
        feat = str(tmp_path / "x.nsf")
        write_feature_file(feat, np.zeros((2, 2)))
        entries = [ManifestEntry("v0", 0, feat, feat, feat),
                   ManifestEntry("v0", 1, feat, feat, feat)]
        path = str(tmp_path / "m.nsm")
        write_manifest(path, 2, entries)
        with pytest.raises(FeatureFormatError, match="duplicate"):
            load_manifest(path)

    def test_header_required(self, tmp_path):
        path = tmp_path / "m.nsm"
        path.write_text("not a manifest\n")
        with pytest.raises(FeatureFormatError, match="header"):
            load_manifest(str(path))
