import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hbar.data import (Dataset, IdxFormatError, desk_splits, load_idx, load_mnist, onehot, subset,
                       subset_indices, synth_gaussian, write_idx)

from conftest import DATA_DIR, mnist_available


def _write_raw(path, magic, dims, payload: bytes):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims) + payload)


@pytest.fixture
def fixture_pair(tmp_path):
    imgs = np.array([[0] * 4, [255] * 4], dtype=np.uint8)
    _write_raw(tmp_path / "img", 0x803, (2, 2, 2), imgs.tobytes())
    _write_raw(tmp_path / "lab", 0x801, (2,), bytes([3, 7]))
    return tmp_path / "img", tmp_path / "lab"


class TestIdx:
    def test_two_image_fixture(self, fixture_pair):
        ds = load_idx(*fixture_pair)
        assert set(np.unique(ds.x)) == {0.0, 1.0}
        assert ds.x.shape == (2, 4) and ds.labels.tolist() == [3, 7]
        assert ds.y_onehot.sum(axis=1).tolist() == [1.0, 1.0]

    def test_truncated(self, fixture_pair, tmp_path):
        raw = fixture_pair[0].read_bytes()
        (tmp_path / "short").write_bytes(raw[:-1])
        with pytest.raises(IdxFormatError):
            load_idx(tmp_path / "short", fixture_pair[1])

    def test_trailing_bytes(self, fixture_pair, tmp_path):
        (tmp_path / "long").write_bytes(fixture_pair[0].read_bytes() + b"\0")
        with pytest.raises(IdxFormatError):
            load_idx(tmp_path / "long", fixture_pair[1])

    def test_bad_magic(self, fixture_pair, tmp_path):
        _write_raw(tmp_path / "bad", 0x801, (2, 2, 2), bytes(8))
        with pytest.raises(IdxFormatError):
            load_idx(tmp_path / "bad", fixture_pair[1])

    def test_count_mismatch(self, fixture_pair, tmp_path):
        _write_raw(tmp_path / "lab3", 0x801, (3,), bytes([1, 2, 3]))
        with pytest.raises(IdxFormatError):
            load_idx(fixture_pair[0], tmp_path / "lab3")

    def test_gzip(self, fixture_pair, tmp_path):
        for p in fixture_pair:
            with gzip.open(str(p) + ".gz", "wb") as f:
                f.write(p.read_bytes())
        a = load_idx(*fixture_pair)
        b = load_idx(str(fixture_pair[0]) + ".gz", str(fixture_pair[1]) + ".gz")
        assert a.x.tobytes() == b.x.tobytes()

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(1, 20), seed=st.integers(0, 1000), gz=st.booleans())
    def test_roundtrip_bit_exact(self, tmp_path_factory, n, seed, gz):
        d = tmp_path_factory.mktemp("rt")
        rng = np.random.default_rng(seed)
        ds = Dataset(rng.integers(0, 256, (n, 12)) / 255.0, rng.integers(0, 10, n))
        suffix = ".gz" if gz else ""
        write_idx(ds, d / f"i{suffix}", d / f"l{suffix}", side=(3, 4))
        back = load_idx(d / f"i{suffix}", d / f"l{suffix}")
        assert back.x.tobytes() == ds.x.tobytes()
        assert back.labels.tolist() == ds.labels.tolist()


class TestSubset:
    def _ds(self, n=1000, k=10):
        labels = np.arange(n) % k
        return Dataset(np.arange(n, dtype=float)[:, None], labels, k=k)

    def test_full_take_is_permutation(self):
        ds = self._ds()
        sub = subset(ds, len(ds), seed=0)
        assert set(sub.x[:, 0].tolist()) == set(ds.x[:, 0].tolist())

    def test_stratified_exact(self):
        ds = self._ds(5000)
        sub = subset(ds, 1000, seed=3)
        assert np.bincount(sub.labels, minlength=10).tolist() == [100] * 10

    @settings(max_examples=30, deadline=None)
    @given(n_take=st.integers(1, 500), seed=st.integers(0, 100))
    def test_stratified_within_one(self, n_take, seed):
        counts = np.bincount(subset(self._ds(), n_take, seed).labels, minlength=10)
        assert counts.sum() == n_take
        assert counts.max() - counts.min() <= 1

    def test_deterministic(self):
        ds = self._ds()
        assert subset_indices(ds.labels, 77, 5).tolist() == subset_indices(ds.labels, 77, 5).tolist()
        assert subset_indices(ds.labels, 77, 5).tolist() != subset_indices(ds.labels, 77, 6).tolist()

    def test_too_many(self):
        with pytest.raises(ValueError):
            subset(self._ds(100), 101, 0)

    def test_exclude(self):
        ds = self._ds()
        a = subset_indices(ds.labels, 500, 0)
        b = subset_indices(ds.labels, 300, 1, exclude=a)
        assert not set(a.tolist()) & set(b.tolist())

    def test_unstratified(self):
        idx = subset_indices(self._ds().labels, 100, 0, stratified=False)
        assert len(set(idx.tolist())) == 100


class TestSynth:
    def test_mean_within_clt_bound(self):
        n, sigma = 5000, 1.5
        ds = synth_gaussian(n, 10, sigma, seed=0)
        assert np.all(np.abs(ds.x.mean(axis=0)) <= 4 * sigma / np.sqrt(n))

    def test_variance(self):
        ds = synth_gaussian(5000, 10, 2.0, seed=1)
        assert np.all(np.abs(ds.x.var(axis=0) / 4.0 - 1) <= 0.2)

    def test_label_balance(self):
        ds = synth_gaussian(5000, 10, 1.0, seed=2)
        assert abs(ds.labels.mean() - 0.5) <= 0.05

    def test_metadata(self):
        ds = synth_gaussian(10, 3, seed=0)
        assert ds.gaussian and ds.clamp == (-np.inf, np.inf) and ds.k == 2

    def test_custom_labeler(self):
        ds = synth_gaussian(100, 3, labeler=lambda x: (x.sum(1) > 0).astype(int), seed=0)
        assert ds.labels.tolist() == (ds.x.sum(1) > 0).astype(int).tolist()

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            synth_gaussian(10, 2, 0.0)


def test_onehot():
    assert onehot(np.array([2, 0]), 3).tolist() == [[0, 0, 1], [1, 0, 0]]


@pytest.mark.skipif(not mnist_available(), reason="MNIST files not present")
class TestMnist:
    def test_standard_files(self):
        train, test = load_mnist(DATA_DIR)
        assert train.x.shape == (60000, 784) and test.x.shape == (10000, 784)
        assert train.x.min() == 0.0 and train.x.max() == 1.0

    def test_desk_splits(self):
        train, test = load_mnist(DATA_DIR)
        sp = desk_splits(train, test)
        assert (len(sp.train), len(sp.test), len(sp.probe)) == (8000, 2000, 512)
        assert np.bincount(sp.train.labels).tolist() == [800] * 10
        rows = {r.tobytes() for r in sp.train.x}
        # probe drawn from the training file but never overlapping the training subset
        assert sum(r.tobytes() in rows for r in sp.probe.x) <= 5  # MNIST has a few duplicate images
        assert sp.probe.split == "probe"
