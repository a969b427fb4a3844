import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scnet import autodiff as ad
from scnet import netspec
from scnet import scn
from scnet import transforms as tf

ARCH = netspec.ArchSpec("mlp", 4, 1)


@pytest.mark.parametrize("s,d", [(2, 3), (1, 1), (6, 8), (2, 5)])
def test_config_param_count(s, d):
    assert scn.config_param_count(s, d) == 64 * (s + 1) + 65 * d


def test_config_387():
    assert scn.config_param_count(2, 3) == 387
    assert scn.init_config(2, 3, 0).shape == (387,)


def test_config_forward_matches_manual(rng):
    cfg = rng.standard_normal(scn.config_param_count(2, 3))
    enc = rng.standard_normal((5, 2))
    w1 = cfg[:128].reshape(2, 64)
    b1 = cfg[128:192]
    w2 = cfg[192:384].reshape(64, 3)
    b2 = cfg[384:]
    z = np.maximum(enc @ w1 + b1, 0) @ w2 + b2
    e = np.exp(z - z.max(axis=1, keepdims=True))
    expect = e / e.sum(axis=1, keepdims=True)
    out = scn.config_forward(ad.Tensor(cfg), ad.Tensor(enc), 2, 3).data
    np.testing.assert_allclose(out, expect, rtol=1e-12)


def test_config_forward_wrong_width(rng):
    with pytest.raises(ad.ShapeError):
        scn.config_forward(ad.Tensor(np.zeros(387)), ad.Tensor(np.zeros((1, 3))), 2, 3)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (20, 2), elements=st.floats(-50, 50)), st.integers(1, 8), st.integers(0, 10 ** 6))
def test_beta_on_simplex(enc, d, seed):
    cfg = scn.init_config(2, d, seed, dtype=np.float64) * 3
    beta = scn.config_forward(ad.Tensor(cfg), ad.Tensor(enc), 2, d).data
    assert np.all(beta >= 0)
    np.testing.assert_allclose(beta.sum(axis=1), 1.0, atol=1e-12)


class TestCompose:
    def test_basis_recovery(self, rng):
        bank = rng.standard_normal((4, 30))
        for i in range(4):
            np.testing.assert_array_equal(scn.compose(bank, np.eye(4)[i]).data, bank[i])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10 ** 6), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        bank = rng.standard_normal((3, 20))
        u, v = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
        lhs = scn.compose(bank, a * u + b * v).data
        rhs = a * scn.compose(bank, u).data + b * scn.compose(bank, v).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_wrong_beta_length(self):
        with pytest.raises(ad.ShapeError):
            scn.compose(np.zeros((3, 5)), np.ones(2) / 2)

    def test_gradient_reaches_bank_and_beta(self, rng):
        bank = ad.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        beta = ad.Tensor(np.array([0.2, 0.3, 0.5]), requires_grad=True)
        w = rng.standard_normal((4, 1))
        g = ad.backward(ad.total(ad.matmul(ad.reshape(scn.compose(bank, beta), (1, 4)), ad.Tensor(w))))
        np.testing.assert_allclose(g[beta], bank.data @ w[:, 0])
        np.testing.assert_allclose(g[bank], np.outer(beta.data, w[:, 0]))


class TestModel:
    def test_create_shapes_and_seeds(self):
        m = scn.SCNModel.create("rotation2d", ARCH, 3, 11)
        assert m.bank.shape == (3, netspec.param_count(ARCH))
        assert m.meta["base_seeds"][0] == 11
        np.testing.assert_array_equal(m.bank[0], netspec.init_params(ARCH, 11))
        assert len(set(m.meta["base_seeds"])) == 3

    def test_d1_beta_is_one(self):
        m = scn.SCNModel.create("rotation2d", ARCH, 1, 0)
        assert np.all(m.betas(np.linspace(0, 6, 50)[:, None]) == 1.0)
        np.testing.assert_array_equal(m.weights([1.0]), m.bank[0])

    def test_weights_are_convex_combination(self):
        m = scn.SCNModel.create("scaling", ARCH, 3, 0)
        beta = m.beta([1.3])
        np.testing.assert_allclose(m.weights([1.3]), beta @ m.bank, rtol=1e-5)

    def test_forward_uses_composed_weights(self, rng):
        m = scn.SCNModel.create("translation", ARCH, 2, 0)
        x = rng.random((3, 32, 32)).astype(np.float32)
        np.testing.assert_array_equal(m.forward([1.0, -2.0], x),
                                      netspec.forward(ARCH, m.weights([1.0, -2.0]), x).data)

    def test_scn_forward_checks_domain(self):
        m = scn.SCNModel.create("scaling", ARCH, 2, 0)
        with pytest.raises(tf.DomainError):
            scn.scn_forward(m, [3.0], np.zeros((1, 32, 32)))

    def test_mismatched_bank(self):
        with pytest.raises(ValueError):
            scn.SCNModel("rotation2d", ARCH, 2, np.zeros(scn.config_param_count(2, 2)), np.zeros((2, 5)))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        m = scn.SCNModel.create("rotation3d", ARCH, 4, 3)
        scn.save_checkpoint(tmp_path / "a.scn", m)
        back = scn.load_checkpoint(tmp_path / "a.scn")
        np.testing.assert_array_equal(back.config, m.config)
        np.testing.assert_array_equal(back.bank, m.bank)
        assert (back.family, back.dims, back.arch) == ("rotation3d", 4, ARCH)
        scn.save_checkpoint(tmp_path / "b.scn", back)
        assert (tmp_path / "a.scn").read_bytes() == (tmp_path / "b.scn").read_bytes()

    def test_header_fields(self, tmp_path):
        import json
        import struct
        m = scn.SCNModel.create("rotation2d", ARCH, 3, 0)
        scn.save_checkpoint(tmp_path / "a.scn", m)
        raw = (tmp_path / "a.scn").read_bytes()
        assert raw[:4] == b"SCN1"
        n = struct.unpack("<I", raw[4:8])[0]
        head = json.loads(raw[8:8 + n])
        assert head["D"] == 3 and head["enc_size"] == 2 and head["config_size"] == 387
        assert head["encoding"]["type"] == "cos-sin"
        assert len(raw) == 8 + n + 4 * (387 + 3 * netspec.param_count(ARCH))

    def test_corrupt_files(self, tmp_path):
        m = scn.SCNModel.create("rotation2d", ARCH, 2, 0)
        scn.save_checkpoint(tmp_path / "a.scn", m)
        raw = (tmp_path / "a.scn").read_bytes()
        (tmp_path / "magic").write_bytes(b"NOPE" + raw[4:])
        (tmp_path / "short").write_bytes(raw[:-4])
        for name in ("magic", "short"):
            with pytest.raises(ValueError):
                scn.load_checkpoint(tmp_path / name)
