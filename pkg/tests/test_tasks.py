"""Synthetic task generators."""

import numpy as np
import pytest

from soloconn.errors import ConfigError
from soloconn.rng import substream
from soloconn.tasks import BOS, DATA_OFFSET, SEP, TaskSampler, TaskSpec


class TestPairedTasks:
    def test_copy_layout(self):
        spec = TaskSpec(kind="copy", alphabet_size=6, source_len=4)
        tokens, mask = TaskSampler(spec).example(substream(0, "t"))
        assert tokens.size == 2 * 4 + 2
        assert tokens[0] == BOS and tokens[5] == SEP
        np.testing.assert_array_equal(tokens[1:5], tokens[6:])
        assert mask.tolist() == [0, 0, 0, 0, 0, 1, 1, 1, 1]

    def test_reverse_is_reversal(self):
        spec = TaskSpec(kind="reverse", alphabet_size=6, source_len=5)
        tokens, _ = TaskSampler(spec).example(substream(1, "t"))
        np.testing.assert_array_equal(tokens[1:6][::-1], tokens[7:])

    def test_shift_cipher(self):
        spec = TaskSpec(kind="shift-cipher", alphabet_size=6, source_len=4, shift=2)
        tokens, _ = TaskSampler(spec).example(substream(2, "t"))
        src = tokens[1:5] - DATA_OFFSET
        ans = tokens[6:] - DATA_OFFSET
        np.testing.assert_array_equal((src + 2) % 6, ans)

    def test_tokens_within_required_vocab(self):
        spec = TaskSpec(kind="reverse", alphabet_size=14, source_len=8)
        sampler = TaskSampler(spec)
        rng = substream(3, "t")
        for _ in range(20):
            tokens, _ = sampler.example(rng)
            assert tokens.min() >= 0 and tokens.max() < spec.required_vocab

    def test_shift_must_change_tokens(self):
        with pytest.raises(ConfigError):
            TaskSpec(kind="shift-cipher", alphabet_size=5, shift=5)


class TestCharLm:
    def test_window_and_mask(self):
        spec = TaskSpec(kind="char-lm-corpus", alphabet_size=8, source_len=12, split_seed=4)
        tokens, mask = TaskSampler(spec).example(substream(4, "t"))
        assert tokens.size == 13
        assert mask.size == 12 and np.all(mask == 1.0)
        assert tokens.min() >= DATA_OFFSET

    def test_corpus_deterministic_in_split_seed(self):
        a = TaskSampler(TaskSpec(kind="char-lm-corpus", alphabet_size=8, split_seed=5))
        b = TaskSampler(TaskSpec(kind="char-lm-corpus", alphabet_size=8, split_seed=5))
        c = TaskSampler(TaskSpec(kind="char-lm-corpus", alphabet_size=8, split_seed=6))
        assert a._corpus.tobytes() == b._corpus.tobytes()
        assert a._corpus.tobytes() != c._corpus.tobytes()


class TestEvalSets:
    def test_eval_set_fixed_and_disjoint_from_training_stream(self):
        spec = TaskSpec(kind="reverse", alphabet_size=6, source_len=4, split_seed=7)
        sampler = TaskSampler(spec)
        e1 = sampler.eval_set(8, seed=42)
        e2 = sampler.eval_set(8, seed=42)
        for (t1, _), (t2, _) in zip(e1, e2):
            assert t1.tobytes() == t2.tobytes()
        # drawing train batches does not change a later eval set
        sampler.batch(substream(42, "data"), 16)
        e3 = sampler.eval_set(8, seed=42)
        for (t1, _), (t3, _) in zip(e1, e3):
            assert t1.tobytes() == t3.tobytes()

    def test_bad_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            TaskSpec(kind="sorting")
