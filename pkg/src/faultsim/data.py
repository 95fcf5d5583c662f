"""Character-level training data: the embedded corpus and batch sampling.

The corpus is sharded contiguously across DP ranks, so each rank sees a
distinct slice (mild data heterogeneity). A synthetic-teacher mode generates
per-rank token streams from a frozen seeded bigram chain instead.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .errors import ConfigError

SOURCE_CORPUS = "corpus"
SOURCE_TEACHER = "teacher"


def load_corpus(path: str | None = None) -> str:
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    return resources.files("faultsim").joinpath("assets/corpus.txt").read_text("utf-8")


def build_char_vocab(text: str, vocab_size: int) -> dict[str, int]:
    chars = sorted(set(text))
    if len(chars) > vocab_size:
        raise ConfigError(
            f"corpus has {len(chars)} distinct characters, vocab is {vocab_size}"
        )
    return {c: i for i, c in enumerate(chars)}


def encode(text: str, vocab: dict[str, int]) -> np.ndarray:
    try:
        return np.fromiter((vocab[c] for c in text), dtype=np.int64, count=len(text))
    except KeyError as exc:
        raise ConfigError(f"character {exc.args[0]!r} not in vocabulary") from exc


def _teacher_stream(vocab_size: int, length: int, seed: int) -> np.ndarray:
    """Token stream from a frozen random bigram transition table."""
    rng = np.random.Generator(np.random.PCG64(seed))
    logits = rng.normal(size=(vocab_size, vocab_size)) * 2.0
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    cumulative = np.cumsum(probs, axis=1)
    uniforms = rng.random(length)
    out = np.empty(length, dtype=np.int64)
    out[0] = rng.integers(vocab_size)
    for t in range(1, length):
        out[t] = np.searchsorted(cumulative[out[t - 1]], uniforms[t])
    return out


class ShardedSampler:
    """Deterministic per-rank batch sampler over contiguous shards.

    Each rank owns an independent PCG64 stream derived from (seed, rank), so
    two runs with the same seed draw identical batch sequences regardless of
    anything else happening in the run.
    """

    def __init__(
        self,
        n_ranks: int,
        seq_len: int,
        vocab_size: int,
        seed: int,
        source: str = SOURCE_CORPUS,
        corpus_path: str | None = None,
        teacher_tokens_per_rank: int = 20000,
    ):
        self.seq_len = seq_len
        self.n_ranks = n_ranks
        if source == SOURCE_CORPUS:
            text = load_corpus(corpus_path)
            self.vocab = build_char_vocab(text, vocab_size)
            tokens = encode(text, self.vocab)
            bound = len(tokens) // n_ranks
            self.shards = [tokens[i * bound : (i + 1) * bound] for i in range(n_ranks)]
        elif source == SOURCE_TEACHER:
            self.vocab = None
            self.shards = [
                _teacher_stream(vocab_size, teacher_tokens_per_rank, seed * 7919 + 13 * i)
                for i in range(n_ranks)
            ]
        else:
            raise ConfigError(f"unknown data source {source!r}")
        for shard in self.shards:
            if len(shard) < seq_len + 2:
                raise ConfigError("shard too short for the sequence length")
        self.rngs = [
            np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xDA7A, i))))
            for i in range(n_ranks)
        ]

    def batch(self, rank: int, batch_size: int):
        """Next (inputs, targets) pair for a rank, each (batch, seq_len)."""
        shard = self.shards[rank]
        hi = len(shard) - self.seq_len - 1
        starts = self.rngs[rank].integers(0, hi, size=batch_size)
        inputs = np.stack([shard[s : s + self.seq_len] for s in starts])
        targets = np.stack([shard[s + 1 : s + 1 + self.seq_len] for s in starts])
        return inputs, targets

    def eval_windows(self, rank: int, count: int):
        """Fixed, evenly spaced (inputs, targets) windows for full-batch probes."""
        shard = self.shards[rank]
        hi = len(shard) - self.seq_len - 1
        starts = np.linspace(0, hi, num=count, dtype=np.int64)
        inputs = np.stack([shard[s : s + self.seq_len] for s in starts])
        targets = np.stack([shard[s + 1 : s + 1 + self.seq_len] for s in starts])
        return inputs, targets
