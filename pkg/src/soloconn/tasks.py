"""Synthetic sequence tasks for the pretrain -> fine-tune protocol.

Paired tasks emit [BOS, source..., SEP, answer...] with the loss restricted
to the answer region, so "eval loss" measures the mapping being learned and
not the unpredictable random source prefix. The char-LM task samples
windows of a seeded first-order Markov corpus and scores every position.

Token layout: 0 = BOS, 1 = SEP, data symbols start at 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import substream

BOS = 0
SEP = 1
DATA_OFFSET = 2

TASK_KINDS = ("copy", "reverse", "shift-cipher", "char-lm-corpus")


@dataclass
class TaskSpec:
    kind: str
    alphabet_size: int = 14
    source_len: int = 8          # window length for char-lm-corpus
    split_seed: int = 0
    shift: int = 3               # shift-cipher only

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if self.alphabet_size < 2:
            raise ConfigError(f"alphabet_size must be >= 2, got {self.alphabet_size}")
        if self.source_len < 1:
            raise ConfigError(f"source_len must be >= 1, got {self.source_len}")
        if self.kind == "shift-cipher" and self.shift % self.alphabet_size == 0:
            raise ConfigError("shift-cipher shift must not be a multiple of alphabet_size")

    @property
    def required_vocab(self) -> int:
        return self.alphabet_size + DATA_OFFSET

    @property
    def seq_len(self) -> int:
        if self.kind == "char-lm-corpus":
            return self.source_len + 1
        return 2 * self.source_len + 2


class TaskSampler:
    """Draws (tokens, loss_mask) examples; mask aligns with next-token targets."""

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        self._corpus = None
        if spec.kind == "char-lm-corpus":
            self._corpus = _markov_corpus(spec.alphabet_size, spec.split_seed)

    def example(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        spec = self.spec
        if spec.kind == "char-lm-corpus":
            start = int(rng.integers(0, self._corpus.size - spec.seq_len))
            tokens = self._corpus[start:start + spec.seq_len].copy()
            mask = np.ones(spec.seq_len - 1)
            return tokens, mask
        k = spec.source_len
        src = rng.integers(0, spec.alphabet_size, size=k) + DATA_OFFSET
        if spec.kind == "copy":
            answer = src
        elif spec.kind == "reverse":
            answer = src[::-1]
        else:  # shift-cipher
            answer = (src - DATA_OFFSET + spec.shift) % spec.alphabet_size + DATA_OFFSET
        tokens = np.concatenate(([BOS], src, [SEP], answer)).astype(np.int64)
        # targets are tokens[1:]; answer tokens sit at target positions k+1 .. 2k
        mask = np.zeros(tokens.size - 1)
        mask[k + 1:] = 1.0
        return tokens, mask

    def batch(self, rng: np.random.Generator, size: int) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self.example(rng) for _ in range(size)]

    def eval_set(self, size: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """A fixed held-out set; drawn from its own stream so it never
        collides with training draws."""
        rng = substream(seed, f"eval-data:{self.spec.kind}:{self.spec.split_seed}")
        return [self.example(rng) for _ in range(size)]


def _markov_corpus(alphabet: int, seed: int, length: int = 8192) -> np.ndarray:
    """Seeded first-order Markov text: each symbol prefers a few successors."""
    rng = substream(seed, "corpus")
    trans = rng.random((alphabet, alphabet)) ** 4
    trans /= trans.sum(axis=1, keepdims=True)
    out = np.empty(length, dtype=np.int64)
    state = int(rng.integers(alphabet))
    for i in range(length):
        out[i] = state + DATA_OFFSET
        state = int(rng.choice(alphabet, p=trans[state]))
    return out
