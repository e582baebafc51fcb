import struct

import numpy as np
import pytest

from hgmdp.data import DATA_DIR_ENV, FormatError, load_mnist, load_mnist_idx, make_synthetic, train_test_split
from hgmdp.nn import Dense, Model, build_mlp
from hgmdp.rng import make_rng
from hgmdp.secure_sgd import plain_sgd

IMAGES = np.array(
    [
        [[0, 255], [128, 1]],
        [[255, 255], [0, 0]],
        [[7, 64], [200, 127]],
    ],
    dtype=np.uint8,
)
LABELS = [3, 0, 9]


def write_fixture(tmp_path, images=IMAGES, labels=LABELS, prefix=""):
    # hand-packed big-endian headers, independent of the package's writers
    img = tmp_path / f"{prefix}images"
    lab = tmp_path / f"{prefix}labels"
    img.write_bytes(struct.pack(">4i", 2051, len(images), 2, 2) + bytes(np.asarray(images).ravel().tolist()))
    lab.write_bytes(struct.pack(">2i", 2049, len(labels)) + bytes(labels))
    return img, lab


def test_idx_round_trip(tmp_path):
    ds = load_mnist_idx(*write_fixture(tmp_path))
    expect = IMAGES.reshape(3, 4).astype(float) / 127.5 - 1
    np.testing.assert_array_equal(ds.inputs, expect)
    np.testing.assert_array_equal(ds.labels, LABELS)
    assert ds.inputs[0, 0] == -1.0 and abs(ds.inputs[0, 1] - 1.0) <= 1e-6


def test_truncated_file(tmp_path):
    img, lab = write_fixture(tmp_path)
    img.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(FormatError, match="offset 16"):
        load_mnist_idx(img, lab)
    img.write_bytes(b"\x00\x00")
    with pytest.raises(FormatError, match="truncated"):
        load_mnist_idx(img, lab)


def test_bad_magic(tmp_path):
    img, lab = write_fixture(tmp_path)
    with pytest.raises(FormatError, match="magic"):
        load_mnist_idx(lab, img)


def test_count_mismatch(tmp_path):
    img, lab = write_fixture(tmp_path, labels=[1, 2])
    with pytest.raises(FormatError, match="labels"):
        load_mnist_idx(img, lab)


def test_load_mnist_uses_env(tmp_path, monkeypatch):
    img, lab = write_fixture(tmp_path)
    img.rename(tmp_path / "t10k-images-idx3-ubyte")
    lab.rename(tmp_path / "t10k-labels-idx1-ubyte")
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path))
    ds = load_mnist("test", limit=2)
    assert len(ds) == 2 and ds.split == "test"


def test_synthetic_is_deterministic_and_valid():
    a, b = make_synthetic(50, 3, 4, seed=1), make_synthetic(50, 3, 4, seed=1)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.inputs.min() >= -1 and a.inputs.max() <= 1
    assert set(a.labels) == {0, 1, 2, 3}
    assert not np.array_equal(a.inputs, make_synthetic(50, 3, 4, seed=2).inputs)


def test_zero_spread_is_linearly_separable():
    ds = make_synthetic(60, 3, 4, seed=0, spread=0.0)
    m = Model([Dense(np.zeros((3, 4)), np.zeros(4))])
    plain_sgd(m, ds.inputs, ds.labels, 300, 20, 2.0, make_rng(0))
    assert np.all(m.predict(ds.inputs) == ds.labels)


def test_default_blobs_learnable_by_plain_sgd():
    ds = make_synthetic(500, 2, 2, seed=0)
    tr, te = train_test_split(ds, 0.2, seed=0)
    m = build_mlp(2, (8,), 2, seed=0)
    plain_sgd(m, tr.inputs, tr.labels, 200, 16, 0.5, make_rng(0))
    assert np.mean(m.predict(te.inputs) == te.labels) >= 0.95


def test_split_partitions():
    ds = make_synthetic(30, 2, 2, seed=0)
    tr, te = train_test_split(ds, 0.2, seed=0)
    assert len(tr) == 24 and len(te) == 6
    rows = {tuple(r) for r in np.vstack([tr.inputs, te.inputs])}
    assert rows == {tuple(r) for r in ds.inputs}


def test_dataset_validation():
    from hgmdp.data import Dataset

    with pytest.raises(ValueError):
        Dataset("x", np.full((2, 2), 1.5), [0, 1], 2)
    with pytest.raises(ValueError):
        Dataset("x", np.zeros((2, 2)), [0, 2], 2)
    one_hot = Dataset("x", np.zeros((2, 2)), [0, 1], 2).one_hot()
    np.testing.assert_array_equal(one_hot, np.eye(2))
