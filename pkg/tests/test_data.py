import numpy as np
import pytest

from ttlstm.data import (
    EOS_TOKEN,
    UNK_TOKEN,
    build_vocab,
    encode_stream,
    load_vocab,
    make_batches,
    save_vocab,
    synthetic_corpus,
)
from ttlstm.errors import DomainError, FormatError


class TestBuildVocab:
    def test_frequency_cap(self):
        vocab = build_vocab("a a b", 3)
        assert vocab.id_to_token == (UNK_TOKEN, EOS_TOKEN, "a")
        assert "b" not in vocab

    def test_tie_breaks_lexicographically(self):
        vocab = build_vocab("b a", 4)
        assert vocab.id_to_token == (UNK_TOKEN, EOS_TOKEN, "a", "b")

    def test_deterministic_rebuild(self):
        text = synthetic_corpus(2000, vocab_size=80, seed=3)
        a = build_vocab(text, 50)
        b = build_vocab(text, 50)
        assert a.id_to_token == b.id_to_token

    def test_empty_corpus(self):
        with pytest.raises(DomainError):
            build_vocab("   \n  ", 10)

    def test_reserved_tokens_not_duplicated(self):
        vocab = build_vocab(f"{UNK_TOKEN} {UNK_TOKEN} x", 5)
        assert vocab.id_to_token.count(UNK_TOKEN) == 1


class TestEncodeStream:
    def test_line_gets_eos(self):
        vocab = build_vocab("a b", 4)
        ids = encode_stream("a b\n", vocab)
        np.testing.assert_array_equal(
            ids, [vocab.encode_token("a"), vocab.encode_token("b"), vocab.eos_id])

    def test_oov_maps_to_unk(self):
        vocab = build_vocab("a a b", 3)
        ids = encode_stream("b\n", vocab)
        np.testing.assert_array_equal(ids, [vocab.unk_id, vocab.eos_id])

    def test_concatenation_property(self):
        text = synthetic_corpus(3000, vocab_size=60, seed=9)
        vocab = build_vocab(text, 40)
        lines = text.splitlines(keepends=True)
        rng = np.random.default_rng(4)
        for _ in range(5):
            cut = int(rng.integers(1, len(lines)))
            left, right = "".join(lines[:cut]), "".join(lines[cut:])
            joined = np.concatenate([encode_stream(left, vocab), encode_stream(right, vocab)])
            np.testing.assert_array_equal(encode_stream(text, vocab), joined)

    def test_blank_lines_contribute_nothing(self):
        vocab = build_vocab("a b", 4)
        np.testing.assert_array_equal(encode_stream("a\n\n\nb\n", vocab),
                                      encode_stream("a\nb\n", vocab))


class TestVocabFile:
    def test_round_trip_bitwise(self, tmp_path):
        text = synthetic_corpus(1500, vocab_size=50, seed=5)
        vocab = build_vocab(text, 30)
        p1, p2 = tmp_path / "v1.tsv", tmp_path / "v2.tsv"
        save_vocab(vocab, p1)
        save_vocab(build_vocab(text, 30), p2)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = load_vocab(p1)
        assert loaded.id_to_token == vocab.id_to_token

    def test_reserved_first_enforced(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("a\t0\nb\t1\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_vocab(p)

    def test_bad_ids_rejected(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text(f"{UNK_TOKEN}\t0\n{EOS_TOKEN}\t7\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_vocab(p)


class TestMakeBatches:
    def test_hand_layout(self):
        stream = make_batches(np.arange(1, 14), batch_size=2, unroll=3)
        batches = list(stream)
        assert len(batches) == 1
        np.testing.assert_array_equal(batches[0].inputs, [[1, 2, 3], [7, 8, 9]])
        np.testing.assert_array_equal(batches[0].targets, [[2, 3, 4], [8, 9, 10]])

    def test_single_lane_full_cover(self):
        ids = np.arange(10)
        stream = make_batches(ids, batch_size=1, unroll=9)
        batches = list(stream)
        assert len(batches) == 1
        np.testing.assert_array_equal(batches[0].inputs[0], ids[:-1])
        np.testing.assert_array_equal(batches[0].targets[0], ids[1:])

    def test_target_token_accounting(self):
        stream = make_batches(np.arange(101), batch_size=4, unroll=5)
        total = sum(b.targets.size for b in stream)
        assert total == stream.tokens_per_epoch == len(stream) * 4 * 5

    def test_every_target_shifted_within_lane(self):
        ids = np.arange(57)
        stream = make_batches(ids, batch_size=3, unroll=4)
        lanes = stream.lanes
        for w, batch in enumerate(stream):
            np.testing.assert_array_equal(batch.inputs, lanes[:, w * 4: w * 4 + 4])
            np.testing.assert_array_equal(batch.targets, lanes[:, w * 4 + 1: w * 4 + 5])

    def test_windows_never_cross_lanes(self):
        ids = np.arange(24)
        stream = make_batches(ids, batch_size=2, unroll=5)
        lane_sets = [set(lane) for lane in stream.lanes]
        for batch in stream:
            for row_in, row_t, lane in zip(batch.inputs, batch.targets, lane_sets):
                assert set(row_in) <= lane and set(row_t) <= lane

    def test_insufficient_tokens(self):
        with pytest.raises(DomainError):
            make_batches(np.arange(7), batch_size=2, unroll=3)


class TestSyntheticCorpus:
    def test_deterministic(self):
        assert synthetic_corpus(500, 40, seed=1) == synthetic_corpus(500, 40, seed=1)
        assert synthetic_corpus(500, 40, seed=1) != synthetic_corpus(500, 40, seed=2)

    def test_token_budget_roughly_met(self):
        text = synthetic_corpus(5000, 100, seed=0)
        count = len(text.split())
        assert 4500 <= count <= 5600

    def test_has_markov_structure(self):
        # successor sets are sparse: each word should be followed by few
        # distinct words relative to the vocabulary
        text = synthetic_corpus(20000, 100, seed=7)
        tokens = text.split()
        followers: dict[str, set] = {}
        for a, b in zip(tokens, tokens[1:]):
            followers.setdefault(a, set()).add(b)
        avg = np.mean([len(s) for s in followers.values()])
        assert avg < 15
