"""Corpus ingestion, vocabulary construction and contiguous batch layout.

Corpora are UTF-8 plain text, one sentence per line, whitespace-tokenized
with no case folding. Encoding appends an end-of-sentence marker per
non-empty line and maps out-of-vocabulary tokens to the unknown marker.

Batching reshapes the token stream into ``batch`` contiguous lanes
(dropping the remainder) and yields ``(inputs, targets)`` windows of
``unroll`` steps whose targets are the inputs shifted by one position;
windows never cross a lane boundary.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError

__all__ = [
    "UNK_TOKEN", "EOS_TOKEN", "Vocab", "build_vocab", "encode_stream",
    "save_vocab", "load_vocab", "Batch", "BatchStream", "make_batches",
    "synthetic_corpus",
]

UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"


@dataclass(frozen=True)
class Vocab:
    id_to_token: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_token_to_id",
                           {tok: i for i, tok in enumerate(self.id_to_token)})

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    def encode_token(self, token: str) -> int:
        return self._token_to_id.get(token, 0)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id


def build_vocab(text: str, max_size: int) -> Vocab:
    """Frequency-capped vocabulary: the ``max_size - 2`` most frequent
    tokens after the two reserved markers; ties break lexicographically."""
    if max_size < 2:
        raise DomainError("max_size must leave room for the reserved markers")
    counts = Counter(text.split())
    counts.pop(UNK_TOKEN, None)
    counts.pop(EOS_TOKEN, None)
    if not counts:
        raise DomainError("empty corpus")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ordered[: max_size - 2]]
    return Vocab((UNK_TOKEN, EOS_TOKEN, *kept))


def encode_stream(text: str, vocab: Vocab) -> np.ndarray:
    """One id per token with an end-of-sentence id after each non-empty line."""
    ids: list[int] = []
    for line in text.splitlines():
        tokens = line.split()
        if not tokens:
            continue
        ids.extend(vocab.encode_token(t) for t in tokens)
        ids.append(vocab.eos_id)
    return np.asarray(ids, dtype=np.int64)


def save_vocab(vocab: Vocab, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, tok in enumerate(vocab.id_to_token):
            fh.write(f"{tok}\t{i}\n")


def load_vocab(path) -> Vocab:
    tokens: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or parts[1] != str(lineno):
                raise FormatError(f"bad vocab line {lineno + 1}: {line!r}")
            tokens.append(parts[0])
    if len(tokens) < 2 or tokens[0] != UNK_TOKEN or tokens[1] != EOS_TOKEN:
        raise FormatError("vocab file must start with the reserved markers")
    return Vocab(tuple(tokens))


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray     # (batch, unroll)
    targets: np.ndarray    # (batch, unroll), inputs shifted by one


class BatchStream:
    """Iterator over full ``(batch, unroll)`` windows of a token stream."""

    def __init__(self, ids: np.ndarray, batch_size: int, unroll: int):
        ids = np.asarray(ids, dtype=np.int64)
        if batch_size < 1 or unroll < 1:
            raise DomainError("batch size and unroll length must be >= 1")
        if ids.size < batch_size * (unroll + 1):
            raise DomainError(
                f"need at least {batch_size * (unroll + 1)} tokens, got {ids.size}")
        lane_len = ids.size // batch_size
        self.lanes = ids[: lane_len * batch_size].reshape(batch_size, lane_len)
        self.batch_size = batch_size
        self.unroll = unroll
        self.n_windows = (lane_len - 1) // unroll

    def __len__(self) -> int:
        return self.n_windows

    @property
    def tokens_per_epoch(self) -> int:
        return self.n_windows * self.batch_size * self.unroll

    def __iter__(self):
        for w in range(self.n_windows):
            lo = w * self.unroll
            yield Batch(self.lanes[:, lo: lo + self.unroll],
                        self.lanes[:, lo + 1: lo + self.unroll + 1])


def make_batches(ids: np.ndarray, batch_size: int, unroll: int) -> BatchStream:
    return BatchStream(ids, batch_size, unroll)


_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "gr", "kl", "pl", "st", "tr", "sk")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ea", "ou")
_CODAS = ("", "", "n", "r", "s", "t", "l", "m")


def _word_list(count: int, rng: np.random.Generator) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < count:
        syllables = rng.integers(1, 4)
        word = "".join(
            _ONSETS[rng.integers(len(_ONSETS))]
            + _VOWELS[rng.integers(len(_VOWELS))]
            + (_CODAS[rng.integers(len(_CODAS))] if s == syllables - 1 else "")
            for s in range(syllables)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def synthetic_corpus(n_tokens: int, vocab_size: int = 500, seed: int = 0,
                     branching: int = 5) -> str:
    """Deterministic pseudo-language corpus for demos and tests.

    Sentences follow a sparse first-order Markov chain: every word has
    ``branching`` possible successors with skewed probabilities, so there
    is real sequential structure for a model to learn while the unigram
    distribution stays broad. Generated from scratch, so the text is free
    of any third-party content.
    """
    if n_tokens < 1 or vocab_size < 2:
        raise DomainError("need at least one token and two word types")
    rng = np.random.default_rng(seed)
    words = _word_list(vocab_size, rng)
    successors = np.array([
        rng.choice(vocab_size, size=branching, replace=False)
        for _ in range(vocab_size)
    ])
    weights = np.array([0.45, 0.25, 0.15, 0.10, 0.05][:branching], dtype=np.float64)
    weights /= weights.sum()
    # Zipf-ish start-word distribution
    start_p = 1.0 / np.arange(1, vocab_size + 1, dtype=np.float64)
    start_p /= start_p.sum()

    lines: list[str] = []
    produced = 0
    while produced < n_tokens:
        length = int(rng.integers(8, 21))
        w = int(rng.choice(vocab_size, p=start_p))
        sentence = [words[w]]
        for _ in range(length - 1):
            w = int(successors[w][rng.choice(branching, p=weights)])
            sentence.append(words[w])
        lines.append(" ".join(sentence))
        produced += length + 1     # mirrors the end-of-sentence id added on encode
    return "\n".join(lines) + "\n"
