import numpy as np
import pytest

from ttlstm.data import build_vocab, encode_stream, synthetic_corpus
from ttlstm.distill import DistillConfig, TeacherWeights
from ttlstm.errors import ConfigError, NumericError
from ttlstm.nn import ModelArch, build_model
from ttlstm.training import TrainConfig, clip_gradients, evaluate, train_model, collect_stack_inputs


def _setup(n_tokens=4000, vocab_cap=60, seed=0):
    text = synthetic_corpus(n_tokens, vocab_size=40, seed=seed)
    vocab = build_vocab(text, vocab_cap)
    ids = encode_stream(text, vocab)
    cut = int(ids.size * 0.85)
    return vocab, ids[:cut], ids[cut:]


def _arch(vocab, rep="dense", rank=0, unroll=8, batch=4):
    return ModelArch(vocab_size=vocab.size, embed_dim=12, hidden_dim=12,
                     representation=rep, n_factors=2, rank=rank,
                     unroll=unroll, batch_size=batch)


class TestTrainModel:
    def test_one_epoch_beats_initial_perplexity(self):
        vocab, train_ids, valid_ids = _setup()
        model = build_model(_arch(vocab), seed=2)
        _, initial = evaluate(model, valid_ids)
        train_model(model, train_ids, valid_ids, TrainConfig(lr=1.0, epochs=1))
        _, after = evaluate(model, valid_ids)
        assert after < initial

    def test_history_shape_and_monotone_progress(self):
        vocab, train_ids, valid_ids = _setup()
        model = build_model(_arch(vocab), seed=3)
        history = train_model(model, train_ids, valid_ids, TrainConfig(lr=1.0, epochs=3))
        assert [h.epoch for h in history] == [1, 2, 3]
        assert history[-1].train_ppl < history[0].train_ppl

    def test_same_seed_same_parameters_bitwise(self):
        vocab, train_ids, valid_ids = _setup()

        def run():
            model = build_model(_arch(vocab), seed=7)
            train_model(model, train_ids, valid_ids, TrainConfig(lr=1.0, epochs=1))
            return [p.value.copy() for p in model.parameters()]

        for a, b in zip(run(), run()):
            assert a.tobytes() == b.tobytes()

    def test_distill_requires_teacher(self):
        vocab, train_ids, valid_ids = _setup()
        model = build_model(_arch(vocab, "mps", rank=3), seed=1)
        cfg = TrainConfig(epochs=1, distill=DistillConfig("kdw", 1e-4))
        with pytest.raises(ConfigError):
            train_model(model, train_ids, valid_ids, cfg)

    def test_shape_incompatible_teacher_rejected(self):
        vocab, train_ids, valid_ids = _setup()
        model = build_model(_arch(vocab, "mps", rank=3), seed=1)
        bad_teacher = TeacherWeights(np.zeros((48, 10)), np.zeros((48, 12)))
        cfg = TrainConfig(epochs=1, distill=DistillConfig("kdw", 1e-4))
        with pytest.raises(ConfigError):
            train_model(model, train_ids, valid_ids, cfg, teacher=bad_teacher)

    def test_kdw_training_runs_and_penalty_pulls_toward_teacher(self):
        vocab, train_ids, valid_ids = _setup()
        teacher_model = build_model(_arch(vocab), seed=5)
        train_model(teacher_model, train_ids, valid_ids, TrainConfig(lr=1.0, epochs=1))
        teacher = TeacherWeights.from_model(teacher_model)

        def distance_after(lam):
            student = build_model(_arch(vocab, "mps", rank=4), seed=9)
            cfg = TrainConfig(lr=0.5, epochs=1, distill=DistillConfig("kdw", lam))
            train_model(student, train_ids, valid_ids, cfg, teacher=teacher)
            return float(np.sum((student.wx.reconstruct_matrix() - teacher.wx) ** 2))

        assert distance_after(0.05) < distance_after(0.0)

    def test_kda_requires_covariances(self):
        vocab, train_ids, valid_ids = _setup()
        model = build_model(_arch(vocab, "mps", rank=3), seed=1)
        teacher = TeacherWeights(np.zeros((48, 12)), np.zeros((48, 12)))
        cfg = TrainConfig(epochs=1, distill=DistillConfig("kda", 1e-4))
        with pytest.raises(ConfigError):
            train_model(model, train_ids, valid_ids, cfg, teacher=teacher)

    def test_non_finite_loss_aborts_with_numeric_error(self):
        vocab, train_ids, valid_ids = _setup()
        model = build_model(_arch(vocab), seed=2)
        model.embed.value[:] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(NumericError):
            train_model(model, train_ids, valid_ids, TrainConfig(epochs=1))

    def test_lambda_zero_mode_none_identical_to_plain(self):
        vocab, train_ids, valid_ids = _setup()
        teacher = TeacherWeights(np.zeros((48, 12)), np.zeros((48, 12)))

        def run(cfg, **kw):
            model = build_model(_arch(vocab), seed=11)
            train_model(model, train_ids, valid_ids, cfg, **kw)
            return b"".join(p.value.tobytes() for p in model.parameters())

        plain = run(TrainConfig(epochs=1))
        none_mode = run(TrainConfig(epochs=1, distill=DistillConfig("none", 0.0)))
        zero_lam = run(TrainConfig(epochs=1, distill=DistillConfig("kdw", 0.0)), teacher=teacher)
        assert plain == none_mode == zero_lam


class TestOptimizerMechanics:
    def test_zero_gradients_leave_parameters_unchanged(self):
        vocab, train_ids, valid_ids = _setup()
        for opt in ("sgd", "adam"):
            model = build_model(_arch(vocab), seed=4)
            before = [p.value.copy() for p in model.parameters()]
            from ttlstm.training import _Adam, _Sgd

            cfg = TrainConfig(optimizer=opt)
            stepper = _Sgd(cfg) if opt == "sgd" else _Adam(cfg)
            for p in model.parameters():
                p.zero_grad()
            stepper.step(model.parameters())
            for a, b in zip(before, model.parameters()):
                np.testing.assert_array_equal(a, b.value)

    def test_clip_rescales_to_bound(self):
        from ttlstm.autograd import Parameter

        p = Parameter(np.zeros(4), "p")
        p.grad = np.full(4, 10.0)
        norm = clip_gradients([p], 5.0)
        assert norm == pytest.approx(20.0)
        assert np.linalg.norm(p.grad) == pytest.approx(5.0)

    def test_lr_halves_on_validation_stall(self):
        vocab, train_ids, valid_ids = _setup(n_tokens=1500)
        model = build_model(_arch(vocab), seed=6)
        # absurdly large lr guarantees no steady validation improvement
        history = train_model(model, train_ids, valid_ids,
                              TrainConfig(lr=64.0, epochs=4, clip=1.0))
        assert history[-1].lr < 64.0


def test_collect_stack_inputs_shapes():
    vocab, train_ids, _ = _setup(n_tokens=1200)
    model = build_model(_arch(vocab, unroll=5, batch=3), seed=8)
    xs, hs = collect_stack_inputs(model, train_ids, max_windows=4)
    assert xs.shape == (4 * 3 * 5, 12)
    assert hs.shape == (4 * 3 * 5, 12)
    # the first hidden input of the stream is the zero initial state
    np.testing.assert_array_equal(hs[0], np.zeros(12))
