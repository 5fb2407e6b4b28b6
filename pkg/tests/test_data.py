import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skgfat import data

from _synth import glyph_arrays, write_idx_images, write_idx_labels


# --- blobs -------------------------------------------------------------------

def test_blobs_zero_variance_limit_sits_on_class_means():
    ds = data.make_blobs(2, 1, dim=2, spread=1e-12, seed=0)
    means = np.array([[0.85, 0.5], [0.15, 0.5]])  # circle radius 0.35 around center
    assert np.abs(ds.examples - means).max() < 1e-9


def test_blobs_counts_and_balance():
    ds = data.make_blobs(4, 250, dim=3, spread=0.05, seed=1)
    assert len(ds) == 1000
    assert np.array_equal(np.bincount(ds.labels), [250] * 4)


def test_blobs_linearly_separable_under_probe():
    ds = data.make_blobs(2, 100, dim=2, spread=0.05, seed=2)
    # oracle: tiny logistic probe fit by gradient descent on raw features
    x = np.hstack([ds.examples, np.ones((len(ds), 1))])
    y = ds.labels.astype(np.float64)
    w = np.zeros(3)
    for _ in range(500):
        p = 1 / (1 + np.exp(-(x @ w)))
        w -= 0.5 * x.T @ (p - y) / len(y)
    acc = (((x @ w) > 0) == (y > 0.5)).mean()
    assert acc >= 0.99


def test_blobs_validation():
    with pytest.raises(ValueError, match="spread"):
        data.make_blobs(2, 10, spread=0.0)
    with pytest.raises(ValueError, match="num_classes"):
        data.make_blobs(1, 10)
    with pytest.raises(ValueError, match="per_class"):
        data.make_blobs(2, 0)


def test_blobs_deterministic_under_seed():
    a = data.make_blobs(3, 20, dim=4, spread=0.1, seed=9)
    b = data.make_blobs(3, 20, dim=4, spread=0.1, seed=9)
    assert np.array_equal(a.examples, b.examples)
    assert a.fingerprint() == b.fingerprint()


# --- idx ---------------------------------------------------------------------

def test_idx_pixel_scaling(tmp_path):
    write_idx_images(tmp_path / "img", np.array([[[0, 128], [255, 64]]], dtype=np.uint8))
    write_idx_labels(tmp_path / "lab", np.array([1], dtype=np.uint8))
    ds = data.load_idx(tmp_path / "img", tmp_path / "lab")
    want = np.array([0, 128, 255, 64]) / 255.0
    assert np.allclose(ds.examples.ravel(), want, atol=1e-9)
    assert abs(ds.examples.ravel()[1] - 0.50196) < 1e-5


def test_idx_count_mismatch(tmp_path):
    write_idx_images(tmp_path / "img", np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx_labels(tmp_path / "lab", np.zeros(2, dtype=np.uint8))
    with pytest.raises(data.CountMismatchError):
        data.load_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_bad_magic(tmp_path):
    (tmp_path / "img").write_bytes(b"\x00\x00\x08\x05" + b"\x00" * 16)
    write_idx_labels(tmp_path / "lab", np.zeros(1, dtype=np.uint8))
    with pytest.raises(data.BadMagicError):
        data.load_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_truncated(tmp_path):
    write_idx_images(tmp_path / "img", np.zeros((2, 3, 3), dtype=np.uint8))
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "img").write_bytes(raw[:-5])
    write_idx_labels(tmp_path / "lab", np.zeros(2, dtype=np.uint8))
    with pytest.raises(data.TruncatedFileError):
        data.load_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_round_trip_bit_exact(tmp_path):
    images, labels = glyph_arrays(per_class=3, num_classes=4, seed=5)
    write_idx_images(tmp_path / "img", images)
    write_idx_labels(tmp_path / "lab", labels)
    ds = data.load_idx(tmp_path / "img", tmp_path / "lab")
    assert np.array_equal(np.round(ds.examples * 255).astype(np.uint8)[:, 0], images)
    assert np.array_equal(ds.labels, labels)


# --- cifar binary --------------------------------------------------------------

def _write_cifar(path, records):
    path.write_bytes(b"".join(records))


def test_cifar_record_parsing(tmp_path):
    rec = bytes([7]) + bytes([255]) + bytes(3071)
    _write_cifar(tmp_path / "batch.bin", [rec])
    ds = data.load_cifar_binary(tmp_path)
    assert ds.labels[0] == 7
    assert ds.examples[0, 0, 0, 0] == 1.0
    assert ds.examples.shape == (1, 3, 32, 32)


def test_cifar_empty_directory(tmp_path):
    with pytest.raises(data.RecordFormatError, match="no .bin"):
        data.load_cifar_binary(tmp_path)


def test_cifar_bad_length(tmp_path):
    (tmp_path / "bad.bin").write_bytes(bytes(3072))
    with pytest.raises(data.RecordFormatError, match="not a multiple"):
        data.load_cifar_binary(tmp_path)


def test_cifar_two_records_preserve_order(tmp_path):
    rec1 = bytes([1]) + bytes(3072)
    rec2 = bytes([3]) + bytes([10] * 3072)
    _write_cifar(tmp_path / "batch.bin", [rec1, rec2])
    ds = data.load_cifar_binary(tmp_path)
    assert len(ds) == 2
    assert list(ds.labels) == [1, 3]


# --- batching ------------------------------------------------------------------

def test_batch_sizes_with_short_tail():
    ds = data.make_blobs(2, 5, dim=2, spread=0.05, seed=0)
    sizes = [len(y) for _, y, _ in data.batches(ds, data.BatchPlan(3, seed=1))]
    assert sizes == [3, 3, 3, 1]


def test_batches_identical_for_same_seed_epoch():
    ds = data.make_blobs(2, 10, dim=2, spread=0.05, seed=0)
    run = lambda: [y.tolist() for _, y, _ in data.batches(ds, data.BatchPlan(4, seed=3, epoch=2))]
    assert run() == run()


def test_batches_cover_dataset_exactly_once():
    ds = data.make_blobs(3, 7, dim=2, spread=0.05, seed=0)
    seen = np.concatenate([x for x, _, _ in data.batches(ds, data.BatchPlan(4, seed=5))])
    assert seen.shape[0] == len(ds)
    assert np.allclose(np.sort(seen, axis=0), np.sort(ds.examples, axis=0))


def test_batches_differ_across_epochs():
    ds = data.make_blobs(2, 10, dim=2, spread=0.05, seed=0)
    first = [y.tolist() for _, y, _ in data.batches(ds, data.BatchPlan(20, seed=3, epoch=0))]
    second = [y.tolist() for _, y, _ in data.batches(ds, data.BatchPlan(20, seed=3, epoch=1))]
    assert first != second


def test_batch_size_validation():
    ds = data.make_blobs(2, 5, dim=2, spread=0.05, seed=0)
    with pytest.raises(ValueError, match="at least 1"):
        list(data.batches(ds, data.BatchPlan(0, seed=0)))
    with pytest.raises(ValueError, match="exceeds"):
        list(data.batches(ds, data.BatchPlan(11, seed=0)))


def test_class_ids_ride_along_with_labels():
    ds = data.make_blobs(3, 4, dim=2, spread=0.05, seed=0)
    for _, labels, class_ids in data.batches(ds, data.BatchPlan(5, seed=2)):
        assert np.array_equal(labels, class_ids)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 40), batch=st.integers(1, 40), seed=st.integers(0, 10))
def test_batches_emit_a_permutation(n, batch, seed):
    if batch > n:
        batch = n
    ds = data.LabeledDataset(np.linspace(0, 1, n)[:, None], np.zeros(n, dtype=int), 1)
    got = np.concatenate([x.ravel() for x, _, _ in data.batches(ds, data.BatchPlan(batch, seed))])
    assert sorted(got.tolist()) == ds.examples.ravel().tolist()


def test_loader_outputs_respect_invariants(tmp_path):
    images, labels = glyph_arrays(per_class=5, seed=1)
    write_idx_images(tmp_path / "img", images)
    write_idx_labels(tmp_path / "lab", labels)
    ds = data.load_idx(tmp_path / "img", tmp_path / "lab")
    assert ds.examples.min() >= 0 and ds.examples.max() <= 1
    assert len(np.bincount(ds.labels, minlength=ds.num_classes)) == ds.num_classes
