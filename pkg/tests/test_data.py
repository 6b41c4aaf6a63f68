import gzip
import hashlib
import os
from pathlib import Path

import numpy as np
import pytest

import data
from conftest import idx_images, idx_labels
from data import (
    CLASS_PRESETS,
    LabeledDataset,
    fetch_idx,
    filter_classes,
    load_idx_pair,
    parse_idx,
    preprocess,
    split,
    synth_blobs,
)
from errors import ArgumentError, ChecksumError, ConsistencyError, FormatError, TruncatedDataError


def test_parse_handcrafted_image():
    images = idx_images(np.array([[[0, 255], [128, 64]]], dtype=np.uint8))
    ds = parse_idx(images, idx_labels([7]))
    np.testing.assert_allclose(ds.features, [[0.0, 1.0, 128 / 255, 64 / 255]])
    assert ds.labels.tolist() == [7]
    assert ds.image_shape == (2, 2)
    assert ds.class_index == {7: (0,)}


def test_parse_rejects_swapped_magic(tiny_images):
    pixels, labels = tiny_images
    with pytest.raises(FormatError, match="expected IDX magic 0x00000803, found 0x00000801"):
        parse_idx(idx_labels(labels), idx_images(pixels))


def test_parse_truncated_stream(tiny_images):
    pixels, labels = tiny_images
    with pytest.raises(TruncatedDataError):
        parse_idx(idx_images(pixels)[:-3], idx_labels(labels))
    with pytest.raises(TruncatedDataError):
        parse_idx(b"\x00\x00", idx_labels(labels))


def test_parse_count_mismatch(tiny_images):
    pixels, labels = tiny_images
    with pytest.raises(ConsistencyError):
        parse_idx(idx_images(pixels), idx_labels(labels[:-1]))


def test_load_idx_pair_from_files(idx_dir, tiny_images):
    ds = load_idx_pair(idx_dir / "images.idx", idx_dir / "labels.idx")
    assert ds.num_samples == 6
    assert ds.feature_dim == 16
    assert ds.classes == (0, 1, 2)
    assert ds.class_index[1] == (1, 4)


def test_load_idx_pair_reads_gzip(idx_dir):
    for name in ("images.idx", "labels.idx"):
        with gzip.open(idx_dir / f"{name}.gz", "wb") as f:
            f.write((idx_dir / name).read_bytes())
    plain = load_idx_pair(idx_dir / "images.idx", idx_dir / "labels.idx")
    packed = load_idx_pair(idx_dir / "images.idx.gz", idx_dir / "labels.idx.gz")
    assert np.array_equal(plain.features, packed.features)


def test_load_idx_pair_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing-images"):
        load_idx_pair(tmp_path / "missing-images", tmp_path / "missing-labels")


def test_dataset_consistency():
    with pytest.raises(ConsistencyError):
        LabeledDataset(np.zeros((3, 2)), [0, 1])


def test_downsample_identity_and_blocks():
    ones = LabeledDataset(np.ones((1, 16)), [0], image_shape=(4, 4))
    assert np.array_equal(preprocess(ones, "downsample", 1).features, ones.features)
    reduced = preprocess(ones, "downsample", 2)
    np.testing.assert_allclose(reduced.features, [[1.0, 1.0, 1.0, 1.0]])
    assert reduced.image_shape == (2, 2)


def test_downsample_averages_blocks():
    image = np.arange(16, dtype=float).reshape(1, 16)
    reduced = preprocess(LabeledDataset(image, [0]), "downsample", 2)
    np.testing.assert_allclose(reduced.features, [[2.5, 4.5, 10.5, 12.5]])


def test_downsample_errors():
    with pytest.raises(ArgumentError):
        preprocess(LabeledDataset(np.zeros((1, 15)), [0]), "downsample", 2)
    with pytest.raises(ArgumentError):
        preprocess(LabeledDataset(np.zeros((1, 16)), [0]), "downsample", 3)


def test_standardize_constant_feature():
    features = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
    ds = preprocess(LabeledDataset(features, [0, 1, 0]), "standardize")
    np.testing.assert_allclose(ds.features[:, 1], 0.0)
    np.testing.assert_allclose(ds.features[:, 0].mean(), 0.0, atol=1e-12)
    np.testing.assert_allclose(ds.features[:, 0].std(), 1.0)


def test_standardize_reuses_training_statistics():
    train = preprocess(LabeledDataset(np.array([[0.0], [2.0]]), [0, 1]), "standardize")
    test = preprocess(LabeledDataset(np.array([[4.0]]), [0]), "standardize", stats=train.standardization)
    np.testing.assert_allclose(test.features, [[3.0]])


def test_standardize_zeroes_train_constant_features_everywhere():
    train = preprocess(LabeledDataset(np.array([[0.0, 7.0], [2.0, 7.0]]), [0, 1]), "standardize")
    test = preprocess(
        LabeledDataset(np.array([[1.0, 7.0], [1.0, 9.5], [1.0, -3.0]]), [0, 1, 0]),
        "standardize",
        stats=train.standardization,
    )
    np.testing.assert_allclose(test.features[:, 0], 0.0)
    assert not np.any(test.features[:, 1])


def test_unknown_preprocessing_mode():
    with pytest.raises(ArgumentError):
        preprocess(LabeledDataset(np.zeros((1, 4)), [0]), "normalize")


def test_synth_blobs_noise_free():
    ds = synth_blobs(3, dim=4, per_class=5, separation=2.0, noise_sd=0.0, seed=1)
    for c in ds.classes:
        rows = ds.features[list(ds.class_index[c])]
        assert np.all(rows == rows[0])


def test_synth_blobs_is_deterministic():
    a = synth_blobs(4, dim=8, per_class=20, separation=6.0, noise_sd=1.0, seed=9)
    b = synth_blobs(4, dim=8, per_class=20, separation=6.0, noise_sd=1.0, seed=9)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_synth_blobs_mean_separation():
    ds = synth_blobs(6, dim=4, per_class=3, separation=3.0, noise_sd=0.0, seed=2)
    means = np.stack([ds.features[list(ds.class_index[c])[0]] for c in ds.classes])
    for i in range(6):
        for j in range(i + 1, 6):
            assert np.linalg.norm(means[i] - means[j]) >= 3.0 - 1e-12


def test_synth_blobs_nearest_mean_accuracy():
    ds = synth_blobs(4, dim=8, per_class=200, separation=6.0, noise_sd=1.0, seed=4)
    means = np.stack([ds.features[list(ds.class_index[c])].mean(axis=0) for c in ds.classes])
    distances = np.linalg.norm(ds.features[:, None, :] - means[None], axis=-1)
    assert np.mean(np.argmin(distances, axis=1) == ds.labels) >= 0.99


def test_synth_blobs_more_classes_than_axes():
    ds = synth_blobs(5, dim=1, per_class=3, separation=2.5, noise_sd=0.5, seed=0)
    again = synth_blobs(5, dim=1, per_class=3, separation=2.5, noise_sd=0.5, seed=0)
    assert np.array_equal(ds.features, again.features)
    assert ds.classes == (0, 1, 2, 3, 4)

    clean = synth_blobs(7, dim=3, per_class=2, separation=2.0, noise_sd=0.0, seed=4)
    means = np.stack([clean.features[list(clean.class_index[c])[0]] for c in clean.classes])
    assert not np.any(means[:, 1:])
    np.testing.assert_allclose(np.sort(means[:, 0]), 2.0 * (np.arange(7) - 3.0))
    gaps = np.abs(means[:, None, 0] - means[None, :, 0]) + 10.0 * np.eye(7)
    assert gaps.min() >= 2.0 - 1e-12


def test_filter_classes_relabels_in_order(idx_dir):
    ds = load_idx_pair(idx_dir / "images.idx", idx_dir / "labels.idx")
    pair = filter_classes(ds, [2, 0])
    assert pair.classes == (0, 1)
    assert pair.num_samples == 4
    # sample order is preserved; original class 2 becomes 0
    assert pair.labels.tolist() == [1, 0, 1, 0]


def test_filter_all_classes_keeps_content(idx_dir):
    ds = load_idx_pair(idx_dir / "images.idx", idx_dir / "labels.idx")
    same = filter_classes(ds, ds.classes)
    assert np.array_equal(same.features, ds.features)
    assert np.array_equal(same.labels, ds.labels)


def test_filter_classes_errors(idx_dir):
    ds = load_idx_pair(idx_dir / "images.idx", idx_dir / "labels.idx")
    with pytest.raises(ArgumentError):
        filter_classes(ds, [0, 9])
    with pytest.raises(ArgumentError):
        filter_classes(ds, [1, 1])


def test_presets():
    assert CLASS_PRESETS["mnist-01"] == (0, 1)
    assert CLASS_PRESETS["mnist-35"] == (3, 5)
    assert CLASS_PRESETS["fashion-012"] == (0, 1, 2)
    assert CLASS_PRESETS["mnist-36"] == CLASS_PRESETS["fashion-36"] == (3, 6)
    assert CLASS_PRESETS["mnist-356"] == CLASS_PRESETS["fashion-356"] == (3, 5, 6)


def test_split_is_stratified_and_disjoint():
    ds = synth_blobs(3, dim=2, per_class=10, separation=4.0, noise_sd=1.0, seed=5)
    train, test = split(ds, 0.3, seed=8)
    assert train.num_samples == 21 and test.num_samples == 9
    for c in ds.classes:
        assert len(test.class_index[c]) == 3
    rows = {tuple(r) for r in train.features.tolist()} & {tuple(r) for r in test.features.tolist()}
    assert not rows
    with pytest.raises(ArgumentError):
        split(ds, 1.0, seed=0)


MNIST_DIR = os.getenv("QPMEL_MNIST_DIR")


@pytest.mark.skipif(not MNIST_DIR, reason="QPMEL_MNIST_DIR not set")
def test_official_mnist_test_files():
    base = Path(MNIST_DIR)
    images = next(p for p in (base / "t10k-images-idx3-ubyte", base / "t10k-images-idx3-ubyte.gz") if p.exists())
    labels = next(p for p in (base / "t10k-labels-idx1-ubyte", base / "t10k-labels-idx1-ubyte.gz") if p.exists())
    ds = load_idx_pair(images, labels)
    assert ds.num_samples == 10000
    assert ds.feature_dim == 784
    assert len(ds.classes) == 10
    assert len(filter_classes(ds, CLASS_PRESETS["mnist-01"]).classes) == 2


class _Response:
    def __init__(self, content):
        self.content = content

    def raise_for_status(self):
        pass


def test_fetch_idx_verifies_checksum(tmp_path, monkeypatch):
    payload = idx_labels([1, 2, 3])
    digest = hashlib.sha256(payload).hexdigest()
    calls = []

    def fake_get(url, timeout):
        calls.append(url)
        return _Response(payload)

    monkeypatch.setattr(data.requests, "get", fake_get)
    target = tmp_path / "mnist" / "labels.idx"
    assert fetch_idx("https://example.org/labels.idx", target, digest) == target
    assert target.read_bytes() == payload

    # present with a matching checksum: no second download
    fetch_idx("https://example.org/labels.idx", target, digest)
    assert len(calls) == 1

    with pytest.raises(ChecksumError):
        fetch_idx("https://example.org/labels.idx", tmp_path / "other.idx", "0" * 64)
    assert not (tmp_path / "other.idx").exists()
