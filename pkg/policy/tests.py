import math

import numpy as np
from django.test import SimpleTestCase

from optim.updates import grad_check
from taskforge.generators import gen_arith_tasks, gen_context_tasks
from taskforge.transforms import ablate_context, boxed

from .checkpoint import from_bytes, load_checkpoint, save_checkpoint, to_bytes
from .engine import (
    FIXED_COLUMNS,
    PolicyParams,
    RedundancyConfig,
    decode_greedy,
    derive_seed,
    featurize,
    grad_logprob,
    init_policy,
    logprob,
    logprob_and_grad,
    sample,
    snapshot,
)
from .vocabulary import EOS, Vocabulary

TASK = gen_arith_tasks(1, 10, 0)[0]


def _zeros(vocab_size, hash_width=4):
    feature_dim = hash_width + vocab_size + FIXED_COLUMNS
    weights = np.zeros((vocab_size, feature_dim))
    return PolicyParams(weights, np.zeros_like(weights, dtype=bool))


class InitPolicyTests(SimpleTestCase):

    def test_same_seed_same_weights(self):
        np.testing.assert_array_equal(init_policy(6, 20, 3).weights, init_policy(6, 20, 3).weights)

    def test_range_and_mask(self):
        params = init_policy(6, 20, 3)
        self.assertLessEqual(np.abs(params.weights).max(), 0.01)
        self.assertFalse(params.frozen_mask.any())
        self.assertEqual(params.version, 0)

    def test_invalid_dims(self):
        with self.assertRaises(ValueError):
            init_policy(0, 20, 0)
        with self.assertRaises(ValueError):
            init_policy(6, 9, 0)


class FeaturizeTests(SimpleTestCase):

    def test_layout(self):
        params = init_policy(6, 20, 0)
        phi = featurize(TASK, [], 6, 20)
        self.assertEqual(phi.shape, (20,))
        self.assertEqual(phi[params.column_of_last(None)], 1.0)
        self.assertEqual(phi[params.bias_column], 1.0)
        self.assertEqual(phi[params.missing_column], 0.0)
        self.assertAlmostEqual(np.linalg.norm(phi[params.prompt_columns()]), 1.0, places=12)

    def test_last_token_slot(self):
        params = init_policy(6, 20, 0)
        phi = featurize(TASK, [3, 2], 6, 20)
        self.assertEqual(phi[params.column_of_last(2)], 1.0)
        self.assertEqual(phi[params.column_of_last(None)], 0.0)

    def test_deterministic(self):
        np.testing.assert_array_equal(featurize(TASK, [1], 6, 20), featurize(TASK, [1], 6, 20))

    def test_missing_context_flag(self):
        ablated = ablate_context(gen_context_tasks(1, 10, 0)[0])
        params = init_policy(6, 20, 0)
        self.assertEqual(featurize(ablated, [], 6, 20)[params.missing_column], 1.0)

    def test_prompts_hash_apart(self):
        tasks = gen_arith_tasks(200, 10, 1)
        width = 256
        blocks = {featurize(t, [], 6, width + 6 + FIXED_COLUMNS)[:width].tobytes() for t in tasks}
        self.assertEqual(len(blocks), len({t.prompt for t in tasks}))


class LogprobTests(SimpleTestCase):

    def test_uniform_weights(self):
        params = _zeros(7)
        total, per_token = logprob(params, TASK, [3, 1, 0])
        np.testing.assert_allclose(per_token, -math.log(7), rtol=0, atol=1e-12)
        self.assertAlmostEqual(total, per_token.sum(), delta=1e-12)

    def test_two_token_vocabulary(self):
        params = _zeros(2, hash_width=1)
        params.weights[0, params.bias_column] = 1.0
        total, _ = logprob(params, TASK, [0])
        self.assertAlmostEqual(total, -math.log(1 + math.exp(-1)), places=6)
        self.assertAlmostEqual(total, -0.313262, places=6)

    def test_softmax_normalizes(self):
        params = init_policy(8, 30, 2)
        params.weights *= 100
        for prefix in ([], [4]):
            mass = sum(math.exp(logprob(params, TASK, prefix + [v])[1][-1]) for v in range(8))
            self.assertAlmostEqual(mass, 1.0, delta=1e-12)

    def test_out_of_vocabulary(self):
        with self.assertRaises(ValueError):
            logprob(_zeros(5), TASK, [5])
        with self.assertRaises(ValueError):
            logprob(_zeros(5), TASK, [])


class GradLogprobTests(SimpleTestCase):

    def test_uniform_single_step(self):
        params = _zeros(5)
        grad = grad_logprob(params, TASK, [2])
        phi = featurize(TASK, [], 5, params.feature_dim)
        np.testing.assert_allclose(grad[2], (1 - 1 / 5) * phi, atol=1e-15)
        np.testing.assert_allclose(grad[0], -phi / 5, atol=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        tasks = gen_arith_tasks(20, 10, 4)
        worst = 0.0
        for instance in range(100):
            vocab_size = int(rng.integers(4, 8))
            params = PolicyParams(
                rng.normal(0, 0.5, size=(vocab_size, 4 + vocab_size + FIXED_COLUMNS)),
                np.zeros((vocab_size, 4 + vocab_size + FIXED_COLUMNS), dtype=bool),
            )
            task = tasks[instance % len(tasks)]
            tokens = [int(t) for t in rng.integers(0, vocab_size, size=int(rng.integers(1, 6)))]
            temperature = float(rng.uniform(0.5, 2.0))
            error = grad_check(
                lambda p: logprob_and_grad(p, task, tokens, temperature), params, h=1e-5, seed=instance,
            )
            worst = max(worst, error)
        self.assertLessEqual(worst, 1e-6)


class SampleTests(SimpleTestCase):

    def setUp(self):
        self.vocabulary = Vocabulary.for_modulus(10)
        size = self.vocabulary.size
        self.params = init_policy(size, 64 + size + FIXED_COLUMNS, 5)

    def _sample(self, seed, max_len=32, temperature=1.0):
        return sample(self.params, TASK, max_len, temperature, seed, detokenize=self.vocabulary.detokenize)

    def test_reproducible(self):
        self.assertEqual(self._sample(11), self._sample(11))

    def test_max_len_one(self):
        rollout = self._sample(3, max_len=1)
        self.assertEqual(rollout.length, 1)

    def test_logprob_recomputes_exactly(self):
        for seed in range(20):
            for temperature in (1.0, 0.7):
                rollout = self._sample(seed, temperature=temperature)
                self.assertLessEqual(rollout.length, 32)
                total, _ = logprob(self.params, TASK, rollout.tokens, temperature)
                self.assertEqual(rollout.logprob_cur, total)
                self.assertEqual(rollout.logprob_old, total)

    def test_redundancy_truncation(self):
        params = _zeros(6)
        params.weights[1, params.column_of_last(None)] = 10.0
        params.weights[2, params.column_of_last(1)] = 10.0
        params.weights[1, params.column_of_last(2)] = 10.0
        redundancy = RedundancyConfig(window=2, max_repeats=3)

        rollout = sample(params, TASK, 50, 0.05, seed=0, redundancy=redundancy)
        self.assertTrue(rollout.truncated_by_redundancy)
        self.assertLessEqual(rollout.length, 6)
        self.assertEqual(rollout.tokens, (1, 2, 1, 2, 1, 2))

        greedy = decode_greedy(params, TASK, 50, redundancy)
        self.assertTrue(greedy.truncated_by_redundancy)
        self.assertEqual(greedy.length, 6)

    def test_loop_period_not_dividing_window(self):
        params = _zeros(6)
        params.weights[1, params.column_of_last(None)] = 10.0
        params.weights[2, params.column_of_last(1)] = 10.0
        params.weights[3, params.column_of_last(2)] = 10.0
        params.weights[1, params.column_of_last(3)] = 10.0

        greedy = decode_greedy(params, TASK, 100, RedundancyConfig(window=8, max_repeats=4))
        self.assertTrue(greedy.truncated_by_redundancy)
        self.assertEqual(greedy.tokens, (1, 2, 3) * 4)

    def test_repeated_token_truncates(self):
        params = _zeros(6)
        params.weights[4, params.bias_column] = 10.0
        greedy = decode_greedy(params, TASK, 100, RedundancyConfig(window=8, max_repeats=4))
        self.assertEqual(greedy.tokens, (4, 4, 4, 4))
        self.assertTrue(greedy.truncated_by_redundancy)

    def test_greedy_stops_at_eos(self):
        params = _zeros(6)
        params.weights[0, params.bias_column] = 5.0
        rollout = decode_greedy(params, TASK, 10)
        self.assertEqual(rollout.tokens, (0,))
        self.assertFalse(rollout.truncated_by_redundancy)

    def test_text_is_detokenized(self):
        rollout = self._sample(4)
        self.assertEqual(rollout.text, self.vocabulary.detokenize(rollout.tokens))

    def test_derive_seed(self):
        self.assertEqual(derive_seed(1, 'a', 2), derive_seed(1, 'a', 2))
        self.assertNotEqual(derive_seed(1, 'a', 2), derive_seed(1, 'b', 2))


class SnapshotTests(SimpleTestCase):

    def test_snapshot_is_a_frozen_copy(self):
        params = init_policy(6, 20, 1)
        old = snapshot(params)
        params.weights += 1.0
        self.assertFalse(np.array_equal(old.weights, params.weights))
        with self.assertRaises(ValueError):
            old.weights[0, 0] = 3.0

    def test_logprob_under_snapshot(self):
        params = init_policy(6, 20, 1)
        self.assertEqual(logprob(snapshot(params), TASK, [1, 2])[0], logprob(params, TASK, [1, 2])[0])

    def test_freeze_block(self):
        params = init_policy(6, 20, 1).freeze(cols=slice(0, 11))
        self.assertTrue(params.frozen_mask[:, :11].all())
        self.assertFalse(params.frozen_mask[:, 11:].any())
        with self.assertRaises(ValueError):
            snapshot(params).freeze()


class CheckpointTests(SimpleTestCase):

    def test_byte_exact_round_trip(self):
        params = init_policy(13, 40, 9).freeze(rows=[0, 3], cols=slice(5, 9))
        params.version = 17
        blob = to_bytes(params)
        restored = from_bytes(blob)
        self.assertEqual(to_bytes(restored), blob)
        np.testing.assert_array_equal(restored.weights, params.weights)
        np.testing.assert_array_equal(restored.frozen_mask, params.frozen_mask)
        self.assertEqual(restored.version, 17)

    def test_header_layout(self):
        blob = to_bytes(init_policy(4, 10, 0))
        self.assertEqual(blob[:4], b'HRLP')
        self.assertEqual(int.from_bytes(blob[4:12], 'little'), 4)
        self.assertEqual(len(blob), 4 + 24 + 40 * 8 + 5)

    def test_corrupt_checkpoints(self):
        blob = to_bytes(init_policy(4, 10, 0))
        with self.assertRaises(ValueError):
            from_bytes(b'XXXX' + blob[4:])
        with self.assertRaises(ValueError):
            from_bytes(blob[:-1])

    def test_file_round_trip(self):
        import tempfile
        from pathlib import Path

        params = init_policy(5, 12, 2)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(params, Path(tmp) / 'policy.ckpt')
            self.assertEqual(to_bytes(load_checkpoint(path)), to_bytes(params))


class VocabularyTests(SimpleTestCase):

    def test_layout(self):
        vocabulary = Vocabulary.for_modulus(10)
        self.assertEqual(vocabulary.tokens[0], EOS)
        self.assertEqual(vocabulary.eos_id, 0)
        for answer in [str(v) for v in range(10)] + ['true', 'false', '<ABSTAIN>']:
            self.assertIn(boxed(answer), vocabulary.index)

    def test_tokenize_detokenize(self):
        vocabulary = Vocabulary.for_modulus(10)
        text = "the answer is \\boxed{7}"
        ids = vocabulary.tokenize(text)
        self.assertEqual(ids[-1], vocabulary.eos_id)
        self.assertEqual(vocabulary.detokenize(ids), text)

    def test_unknown_word(self):
        with self.assertRaises(ValueError):
            Vocabulary.for_modulus(10).tokenize("banana")

    def test_small_modulus_keeps_ten_answers(self):
        self.assertEqual(Vocabulary.for_modulus(6), Vocabulary.for_modulus(10))
