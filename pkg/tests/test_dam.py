import numpy as np
import pytest

from conftest import random_pairs, small_model
from rtl import dam
from rtl.dam import DamConfig, aggregate, attend, compare, encode
from rtl.data import TARGET, PairBatch, SentencePair
from rtl.numerics import NumericError, ParamStore, finite_diff_check


def identity_f_params(d):
    """F = relu(relu(x I) I), the identity on nonnegative inputs."""
    p = ParamStore()
    for k in range(2):
        p.add(f"encoder.F.W{k}", np.eye(d))
        p.add(f"encoder.F.b{k}", np.zeros(d))
    return p


class TestAttend:
    def test_singletons(self):
        cfg = DamConfig(4, 4)
        p = ParamStore()
        dam.init_encoder(p, cfg, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        x1, x2 = rng.normal(size=(1, 1, 4)), rng.normal(size=(1, 1, 4))
        eps2, eps1, cache = attend(x1, x2, np.ones((1, 1)), np.ones((1, 1)), p, cfg)
        np.testing.assert_array_equal(cache.p_row, [[[1.0]]])
        np.testing.assert_array_equal(eps2, x2)
        np.testing.assert_array_equal(eps1, x1)

    def test_identical_orthogonal_sentences(self):
        n, scale = 4, 3.0
        x = (scale * np.eye(n))[None]
        cfg = DamConfig(n, n)
        eps2, eps1, cache = attend(x, x, np.ones((1, n)), np.ones((1, n)), identity_f_params(n), cfg)
        # e = F(x) F(x)^T = scale^2 I, so each row softmax is closed form
        diag = np.exp(scale**2) / (np.exp(scale**2) + n - 1)
        np.testing.assert_allclose(np.diag(cache.p_row[0]), diag, rtol=1e-12)
        assert np.all(np.argmax(cache.p_row[0], axis=1) == np.arange(n))
        cos = (eps2[0] @ x[0].T) / np.linalg.norm(eps2[0], axis=1, keepdims=True) / scale
        assert np.all(np.argmax(cos, axis=1) == np.arange(n))

    def test_pads_get_no_weight(self):
        cfg = DamConfig(5, 4)
        p = ParamStore()
        dam.init_encoder(p, cfg, np.random.default_rng(0))
        rng = np.random.default_rng(2)
        m1, m2 = np.array([[1, 1, 0]], float), np.array([[1, 1, 1, 0, 0]], float)
        x1, x2 = rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 5, 4))
        _, _, cache = attend(x1, x2, m1, m2, p, cfg)
        assert np.all(cache.p_row[0, :, 3:] == 0.0)
        assert np.all(cache.p_col[0, 2:, :] == 0.0)

    def test_empty_sentence(self):
        cfg = DamConfig(3, 3)
        p = ParamStore()
        dam.init_encoder(p, cfg, np.random.default_rng(0))
        x = np.ones((1, 2, 3))
        with pytest.raises(NumericError):
            attend(x, x, np.zeros((1, 2)), np.ones((1, 2)), p, cfg)


class TestCompare:
    def test_zero_g(self):
        cfg = DamConfig(3, 2)
        p = ParamStore()
        dam.init_encoder(p, cfg, np.random.default_rng(0))
        for name in p.names("encoder.G"):
            p[name][...] = 0.0
        x = np.random.default_rng(0).normal(size=(2, 4, 2))
        v1, v2, _ = compare(x, x, x, x, p, cfg)
        assert np.all(v1 == 0.0) and np.all(v2 == 0.0)

    def test_symmetric_inputs(self):
        cfg = DamConfig(3, 2)
        p = ParamStore()
        dam.init_encoder(p, cfg, np.random.default_rng(0))
        x = np.random.default_rng(0).normal(size=(2, 4, 2))
        e = np.random.default_rng(1).normal(size=(2, 4, 2))
        v1, v2, _ = compare(x, e, x, e, p, cfg)
        np.testing.assert_array_equal(v1, v2)

    def test_shape_mismatch(self):
        cfg = DamConfig(3, 2)
        p = ParamStore()
        dam.init_encoder(p, cfg, np.random.default_rng(0))
        with pytest.raises(NumericError):
            compare(np.ones((1, 2, 2)), np.ones((1, 3, 2)), np.ones((1, 2, 2)), np.ones((1, 2, 2)), p, cfg)


class TestAggregate:
    def test_worked_example(self):
        v = np.array([[[1.0, 2.0], [3.0, 0.0]]])
        z, _, _ = aggregate(v, v, np.ones((1, 2)), np.ones((1, 2)))
        np.testing.assert_array_equal(z[0], [4, 2, 4, 2, 3, 2, 3, 2])

    def test_padding_ignored(self):
        v = np.array([[[1.0, 2.0], [3.0, 0.0], [50.0, -9.0]]])
        m = np.array([[1.0, 1.0, 0.0]])
        z, _, _ = aggregate(v, v, m, m)
        np.testing.assert_array_equal(z[0], [4, 2, 4, 2, 3, 2, 3, 2])

    def test_width(self):
        v = np.zeros((3, 2, 5))
        z, _, _ = aggregate(v, v, np.ones((3, 2)), np.ones((3, 2)))
        assert z.shape == (3, 20)


class TestEncode:
    def test_full_scale_width(self):
        model = small_model(0, vocab_size=10, h=200, d=300)
        batch = PairBatch.from_pairs([SentencePair((2, 3), (4,), 1)], TARGET)
        assert encode(batch, model.params, model.cfg).z.shape == (1, 800)

    def test_identical_pairs_identical_z(self):
        model = small_model(0)
        p = SentencePair((2, 3, 4), (5, 6), 1)
        z = encode(PairBatch.from_pairs([p, p], TARGET), model.params, model.cfg).z
        np.testing.assert_array_equal(z[0], z[1])

    def test_padding_invariance(self):
        model = small_model(1)
        rng = np.random.default_rng(0)
        pairs = random_pairs(rng, 5, 12, max_len=4)
        alone = [encode(PairBatch.from_pairs([p], TARGET), model.params, model.cfg).z[0] for p in pairs]
        padded = encode(PairBatch.from_pairs(pairs, TARGET, pad_to=9), model.params, model.cfg).z
        np.testing.assert_allclose(padded, np.stack(alone), rtol=0, atol=1e-12)

    def test_swap_symmetry(self):
        model = small_model(2)
        pairs = random_pairs(np.random.default_rng(0), 6, 12)
        swapped = [SentencePair(p.tokens2, p.tokens1, p.label) for p in pairs]
        h = model.cfg.hidden_size
        z = encode(PairBatch.from_pairs(pairs, TARGET), model.params, model.cfg).z
        zs = encode(PairBatch.from_pairs(swapped, TARGET), model.params, model.cfg).z
        perm = np.r_[h : 2 * h, 0:h, 3 * h : 4 * h, 2 * h : 3 * h]
        np.testing.assert_allclose(zs, z[:, perm], rtol=0, atol=1e-12)

    def test_token_out_of_range(self):
        model = small_model(0)
        with pytest.raises(NumericError):
            encode(PairBatch.from_pairs([SentencePair((2, 99), (3,), 0)], TARGET), model.params, model.cfg)

    @pytest.mark.parametrize("seed", range(4))
    def test_gradient(self, seed):
        model = small_model(seed)
        rng = np.random.default_rng(100 + seed)
        batch = PairBatch.from_pairs(random_pairs(rng, 4, 12), TARGET)
        w = np.random.default_rng(seed).normal(size=(4, model.cfg.z_dim))

        def loss(_):
            return float(np.sum(w * encode(batch, model.params, model.cfg).z))

        model.params.zero_grad()
        enc = encode(batch, model.params, model.cfg)
        dam.encode_backward(w, enc, model.params, model.cfg)
        for name in model.params.names("encoder.") + [dam.EMBEDDING]:
            assert finite_diff_check(loss, model.params, name, max_entries=40, rng=rng) < 1e-4, name

    def test_pad_row_gets_no_gradient(self):
        model = small_model(0)
        batch = PairBatch.from_pairs([SentencePair((2, 3), (4, 5, 6), 1), SentencePair((7,), (8,), 0)], TARGET)
        model.params.zero_grad()
        enc = encode(batch, model.params, model.cfg)
        dam.encode_backward(np.ones_like(enc.z), enc, model.params, model.cfg)
        assert np.all(model.params.grad(dam.EMBEDDING)[0] == 0.0)
