import struct

import numpy as np
import pytest

from scnet import datasets as ds


@pytest.fixture
def idx_pair(tmp_path, rng):
    imgs = rng.integers(0, 256, (12, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 12, dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ds.write_idx(ip, lp, imgs, labels)
    return ip, lp, imgs, labels


class TestIdx:
    def test_header_is_big_endian(self, idx_pair):
        ip, lp, imgs, _ = idx_pair
        raw = ip.read_bytes()
        assert raw[:4] == b"\x00\x00\x08\x03"
        assert struct.unpack(">3I", raw[4:16]) == (12, 28, 28)

    def test_load_pads_and_scales(self, idx_pair):
        ip, lp, imgs, labels = idx_pair
        d = ds.load_idx(ip, lp)
        assert d.data.shape == (12, 32, 32, 1)
        np.testing.assert_array_equal(d.data[:, 2:30, 2:30, 0], imgs.astype(np.float32) / 255.0)
        assert d.data[:, :2].max() == 0.0
        np.testing.assert_array_equal(d.labels, labels)
        assert d.classes == 10

    def test_no_padding(self, idx_pair):
        ip, lp, _, _ = idx_pair
        assert ds.load_idx(ip, lp, pad_to=None).data.shape == (12, 28, 28, 1)

    def test_bad_magic(self, idx_pair):
        ip, lp, _, _ = idx_pair
        with pytest.raises(ds.BadMagic):
            ds.load_idx(lp, lp)

    def test_truncated(self, idx_pair, tmp_path):
        ip, lp, _, _ = idx_pair
        cut = tmp_path / "cut.idx"
        cut.write_bytes(ip.read_bytes()[:500])
        with pytest.raises(ds.Truncated):
            ds.load_idx(cut, lp)

    def test_count_mismatch(self, idx_pair, tmp_path, rng):
        ip, _, _, _ = idx_pair
        ds.write_idx(tmp_path / "x", tmp_path / "few.idx", np.zeros((1, 2, 2)), np.zeros(5))
        with pytest.raises(ds.CountMismatch):
            ds.load_idx(ip, tmp_path / "few.idx")

    def test_errors_share_base(self):
        assert issubclass(ds.BadMagic, ds.DataError) and issubclass(ds.Truncated, ds.DataError)


class TestShapes:
    def test_deterministic_and_balanced(self):
        a, b = ds.gen_shapes2d(100, 4), ds.gen_shapes2d(100, 4)
        np.testing.assert_array_equal(a.data, b.data)
        assert np.bincount(a.labels).tolist() == [10] * 10
        assert a.data.shape == (100, 32, 32, 1)
        assert 0.0 <= a.data.min() and a.data.max() <= 1.0

    def test_seed_changes_data(self):
        assert not np.array_equal(ds.gen_shapes2d(20, 1).data, ds.gen_shapes2d(20, 2).data)

    def test_too_few(self):
        with pytest.raises(ValueError):
            ds.gen_shapes2d(5, 0)

    def test_classes_are_distinct(self):
        d = ds.gen_shapes2d(200, 0)
        means = np.stack([d.data[d.labels == k].mean(axis=0) for k in range(10)])
        dist = np.linalg.norm((means[:, None] - means[None]).reshape(10, 10, -1), axis=2)
        assert dist[~np.eye(10, dtype=bool)].min() > 1.0

    def test_downscale_pad(self):
        x = np.ones((2, 32, 32, 1), dtype=np.float32)
        out = ds.downscale_pad(x, 0.5, 8)
        assert out.shape == (2, 32, 32, 1)
        assert out[:, 8:24, 8:24].min() == 1.0 and out.sum() == 2 * 256


class TestClouds:
    def test_unit_normalized(self):
        d = ds.gen_clouds3d(20, 0, points=256)
        assert d.data.shape == (20, 256, 3) and d.kind == "clouds"
        norms = np.linalg.norm(d.data.astype(np.float64), axis=2).max(axis=1)
        assert np.all(norms <= 1.0) and np.all(norms > 0.99)

    def test_deterministic(self):
        np.testing.assert_array_equal(ds.gen_clouds3d(10, 3, 64).data, ds.gen_clouds3d(10, 3, 64).data)


class TestSplitAndContainer:
    def test_split_is_stratified_and_disjoint(self):
        d = ds.gen_shapes2d(200, 0)
        d.meta["row"] = None
        tr, te = ds.split(d, [0.75, 0.25], 3)
        assert len(tr) == 150 and len(te) == 50
        assert np.bincount(te.labels).tolist() == [5] * 10
        rows = {x.tobytes() for x in tr.data}
        assert not any(x.tobytes() in rows for x in te.data)

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            ds.split(ds.gen_shapes2d(20, 0), [0.5, 0.6], 0)

    @pytest.mark.parametrize("kind", ["images", "clouds"])
    def test_container_round_trip_bit_exact(self, tmp_path, kind):
        d = ds.gen_shapes2d(30, 1) if kind == "images" else ds.gen_clouds3d(10, 1, 32)
        p1, p2 = tmp_path / "a.scnd", tmp_path / "b.scnd"
        ds.save_container(p1, d)
        back = ds.load_container(p1)
        ds.save_container(p2, back)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(back.data, d.data)
        np.testing.assert_array_equal(back.labels, d.labels)
        assert back.kind == kind and back.meta == d.meta

    def test_container_header_little_endian(self, tmp_path):
        d = ds.gen_shapes2d(10, 1)
        ds.save_container(tmp_path / "a", d)
        raw = (tmp_path / "a").read_bytes()
        assert raw[:4] == b"SCND"
        hlen = struct.unpack("<I", raw[4:8])[0]
        assert raw[8:8 + hlen].startswith(b"{")

    def test_container_errors(self, tmp_path):
        d = ds.gen_shapes2d(10, 1)
        ds.save_container(tmp_path / "a", d)
        raw = (tmp_path / "a").read_bytes()
        (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(ds.BadMagic):
            ds.load_container(tmp_path / "bad")
        (tmp_path / "short").write_bytes(raw[:-3])
        with pytest.raises(ds.Truncated):
            ds.load_container(tmp_path / "short")

    def test_label_count_mismatch(self):
        with pytest.raises(ds.CountMismatch):
            ds.LabeledSet(np.zeros((3, 2, 2, 1)), np.zeros(2))


def test_symmetry_table_matches_rendering():
    """The label-symmetry sets used when scoring angle recovery agree with
    how class-mean shapes actually look after quarter and half turns."""
    from scnet import acceptance
    d = ds.gen_shapes2d(1000, 5)
    means = np.stack([d.data[d.labels == k].mean(axis=0) for k in range(10)])
    for q, safe in ((1, acceptance._QUARTER_SAFE), (2, acceptance._HALF_SAFE)):
        rot = np.rot90(means, q, axes=(1, 2))
        for k, name in enumerate(ds.SHAPE_CLASSES):
            dist = np.linalg.norm((rot[k][None] - means).reshape(10, -1), axis=1)
            assert (dist.min() < 1.0) == (name in safe), (q, name)
