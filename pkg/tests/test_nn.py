import numpy as np
import pytest

import ttlstm.autograd as ag
from ttlstm.autograd import Parameter, Tape, Var, backward, grad_check
from ttlstm.errors import NumericError, ShapeError, VocabError
from ttlstm.nn import (
    LayerNormParams,
    ModelArch,
    TTLinear,
    build_model,
    cross_entropy_perplexity,
    forward_lm,
    layer_norm,
    lstm_step,
    sequence_nll,
)
from ttlstm.ttrain import reconstruct


def _ln_params(d):
    return LayerNormParams(Parameter(np.ones(d), "g"), Parameter(np.zeros(d), "b"))


class TestLayerNorm:
    def test_constant_input_maps_to_zero(self):
        out = layer_norm(np.full(8, 3.7), _ln_params(8))
        np.testing.assert_allclose(out, 0.0, atol=1e-9)

    def test_closed_form_three_vector(self):
        p = _ln_params(3)
        p.eps = 0.0
        out = layer_norm(np.array([1.0, 2.0, 3.0]), p)
        np.testing.assert_allclose(out, [-1.224744871391589, 0.0, 1.224744871391589], rtol=1e-12)

    def test_output_standardized(self):
        rng = np.random.default_rng(0)
        v = rng.normal(3.0, 2.0, size=64)
        p = _ln_params(64)
        p.eps = 1e-12
        out = layer_norm(v, p)
        assert abs(out.mean()) < 1e-6
        assert abs(out.var() - 1.0) < 1e-6

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=16)
        p = _ln_params(16)
        np.testing.assert_allclose(layer_norm(v, p), layer_norm(v + 5.0, p), atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            layer_norm(np.zeros(4), _ln_params(5))


def _tiny_arch(rep="dense", rank=0, v=20, e=8, h=8, factors=2):
    return ModelArch(vocab_size=v, embed_dim=e, hidden_dim=h,
                     representation=rep, n_factors=factors, rank=rank,
                     unroll=4, batch_size=2)


class TestLstmStep:
    def _zero_model(self):
        model = build_model(_tiny_arch(), seed=0)
        model.wx.weight.value[:] = 0.0
        model.wh.weight.value[:] = 0.0
        model.gate_bias.value[:] = 0.0
        return model

    def test_all_zero_weights_zero_cell(self):
        model = self._zero_model()
        h, c = lstm_step(model, np.zeros(8), np.zeros(8), np.zeros(8))
        np.testing.assert_allclose(h, 0.0, atol=1e-15)
        np.testing.assert_allclose(c, 0.0, atol=1e-15)

    def test_zero_weights_nonzero_cell_closed_form(self):
        model = self._zero_model()
        c0 = np.linspace(-1.0, 1.0, 8)
        h, c = lstm_step(model, np.zeros(8), np.zeros(8), c0)
        np.testing.assert_allclose(c, 0.5 * c0, atol=1e-12)
        np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c0), atol=1e-12)

    def test_cell_magnitude_bound(self):
        rng = np.random.default_rng(5)
        model = build_model(_tiny_arch(), seed=3)
        c0 = rng.normal(scale=2.0, size=8)
        _, c = lstm_step(model, rng.normal(size=8), rng.normal(size=8), c0)
        assert np.all(np.abs(c) <= np.abs(c0) + 1.0 + 1e-12)

    def test_dense_vs_mps_same_matrix(self):
        mps_model = build_model(_tiny_arch("mps", rank=3), seed=7)
        dense_model = build_model(_tiny_arch(), seed=7)
        dense_model.wx = TTLinear.dense(mps_model.wx.reconstruct_matrix(), name="wx")
        dense_model.wh = TTLinear.dense(mps_model.wh.reconstruct_matrix(), name="wh")
        for name in ("embed", "gate_bias", "proj_w", "proj_b"):
            getattr(dense_model, name).value[:] = getattr(mps_model, name).value
        rng = np.random.default_rng(8)
        x, h, c = rng.normal(size=8), rng.normal(size=8), rng.normal(size=8)
        hd, cd = lstm_step(dense_model, x, h, c)
        hm, cm = lstm_step(mps_model, x, h, c)
        np.testing.assert_allclose(hd, hm, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(cd, cm, rtol=1e-10, atol=1e-12)


class TestForward:
    def test_zero_model_logits_equal_projection_bias(self):
        model = build_model(_tiny_arch(), seed=0)
        for p in model.parameters():
            if p is not model.ln_x.gain and p is not model.ln_h.gain:
                p.value[:] = 0.0
        model.proj_b.value[:] = np.arange(20.0)
        out = forward_lm(model, np.array([[3], [11]]))
        for row in out.logits.reshape(-1, 20):
            np.testing.assert_allclose(row, np.arange(20.0), atol=1e-12)

    def test_identical_rows_identical_logits(self):
        model = build_model(_tiny_arch(), seed=1)
        tokens = np.tile(np.array([[2, 5, 7, 1]]), (3, 1))
        out = forward_lm(model, tokens)
        np.testing.assert_array_equal(out.logits[0], out.logits[1])
        np.testing.assert_array_equal(out.logits[0], out.logits[2])

    def test_vocab_error(self):
        model = build_model(_tiny_arch(), seed=1)
        with pytest.raises(VocabError):
            forward_lm(model, np.array([[0, 20]]))
        with pytest.raises(VocabError):
            forward_lm(model, np.array([[-1, 3]]))

    def test_untrained_perplexity_near_vocab_size(self):
        arch = ModelArch(vocab_size=50, embed_dim=16, hidden_dim=16,
                         unroll=8, batch_size=4)
        model = build_model(arch, seed=9)
        rng = np.random.default_rng(10)
        tokens = rng.integers(0, 50, size=(4, 64))
        out = forward_lm(model, tokens[:, :-1])
        _, ppl = cross_entropy_perplexity(out.logits, tokens[:, 1:])
        assert abs(ppl - 50.0) / 50.0 < 0.10

    def test_representation_equivalence_full_forward(self):
        mps_model = build_model(_tiny_arch("mps", rank=3), seed=21)
        dense_model = build_model(_tiny_arch(), seed=21)
        dense_model.wx = TTLinear.dense(mps_model.wx.reconstruct_matrix(), name="wx")
        dense_model.wh = TTLinear.dense(mps_model.wh.reconstruct_matrix(), name="wh")
        for name in ("embed", "gate_bias", "proj_w", "proj_b"):
            getattr(dense_model, name).value[:] = getattr(mps_model, name).value
        tokens = np.random.default_rng(22).integers(0, 20, size=(2, 6))
        a = forward_lm(mps_model, tokens).logits
        b = forward_lm(dense_model, tokens).logits
        scale = max(1.0, np.max(np.abs(b)))
        assert np.max(np.abs(a - b)) <= 1e-8 * scale

    def test_representation_equivalence_mpo(self):
        mpo_model = build_model(_tiny_arch("mpo", rank=3), seed=23)
        dense_model = build_model(_tiny_arch(), seed=23)
        dense_model.wx = TTLinear.dense(mpo_model.wx.reconstruct_matrix(), name="wx")
        dense_model.wh = TTLinear.dense(mpo_model.wh.reconstruct_matrix(), name="wh")
        for name in ("embed", "gate_bias", "proj_w", "proj_b"):
            getattr(dense_model, name).value[:] = getattr(mpo_model, name).value
        tokens = np.random.default_rng(24).integers(0, 20, size=(2, 6))
        a = forward_lm(mpo_model, tokens).logits
        b = forward_lm(dense_model, tokens).logits
        assert np.max(np.abs(a - b)) <= 1e-8 * max(1.0, np.max(np.abs(b)))

    def test_carried_state_changes_output(self):
        model = build_model(_tiny_arch(), seed=2)
        tokens = np.array([[1, 2], [3, 4]])
        cold = forward_lm(model, tokens)
        warm = forward_lm(model, tokens, state=cold.state)
        assert not np.allclose(cold.logits, warm.logits)


class TestCrossEntropyPerplexity:
    def test_uniform_logits_give_vocab_size(self):
        logits = np.zeros((7, 10))
        nll, ppl = cross_entropy_perplexity(logits, np.arange(7) % 10)
        assert abs(nll - np.log(10)) < 1e-12
        assert abs(ppl - 10.0) < 1e-9

    def test_large_margin_approaches_one(self):
        logits = np.full((4, 6), -100.0)
        targets = np.array([0, 1, 2, 3])
        logits[np.arange(4), targets] = 100.0
        _, ppl = cross_entropy_perplexity(logits, targets)
        assert abs(ppl - 1.0) < 1e-9

    def test_non_finite_rejected(self):
        logits = np.zeros((2, 3))
        logits[0, 0] = np.nan
        with pytest.raises(NumericError):
            cross_entropy_perplexity(logits, np.array([0, 1]))


def test_one_step_lm_grad_check_mps_gates():
    arch = _tiny_arch("mps", rank=2, v=12, e=6, h=6)
    model = build_model(arch, seed=30)
    tokens = np.array([[3, 7], [1, 5]])
    targets = np.array([[7, 2], [5, 0]])

    def build(t):
        out = forward_lm(model, tokens, t)
        return sequence_nll(t, out, targets)

    assert grad_check(model.parameters(), build) < 1e-4


def test_sequence_nll_matches_value_level_perplexity():
    model = build_model(_tiny_arch(), seed=31)
    rng = np.random.default_rng(32)
    tokens = rng.integers(0, 20, size=(2, 5))
    targets = rng.integers(0, 20, size=(2, 5))
    t = Tape()
    out = forward_lm(model, tokens, t)
    loss = sequence_nll(t, out, targets)
    nll, _ = cross_entropy_perplexity(
        out.logits.transpose(1, 0, 2).reshape(-1, 20),
        targets.T.reshape(-1))
    assert abs(float(loss.value) - nll) < 1e-12
