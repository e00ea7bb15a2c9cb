from itertools import combinations

import numpy as np
from django.test import SimpleTestCase

from policy.engine import Rollout
from taskforge.generators import gen_arith_tasks
from verifier.answers import verify

from .distance import char_trigram_distances, embedding_distances, pairwise_distances_from
from .engine import (
    DegenerateGroupError,
    DiversityConfig,
    LengthConfig,
    Phase,
    RolloutGroup,
    cluster_responses,
    diversity_advantages,
    diversity_from_matrix,
    diversity_scores,
    distinct_count,
    fuse_diversity,
    hybrid_advantage,
    length_reward,
    pass1_reward,
    passk_advantages,
    passk_estimate,
    passk_stats,
    phase_for_iteration,
    score_group,
)


def _rollout(text, length=3, task_id='t'):
    return Rollout(task_id=task_id, tokens=(1,) * length, text=text, logprob_old=0.0, logprob_cur=0.0)


def _group(correctness, texts=None, lengths=None):
    texts = texts or [f"response {i}" for i in range(len(correctness))]
    lengths = lengths or [3] * len(correctness)
    rollouts = [_rollout(text, n) for text, n in zip(texts, lengths)]
    return RolloutGroup(task_id='t', rollouts=tuple(rollouts), correctness=tuple(correctness))


def _table(table):
    return pairwise_distances_from(lambda a, b: table[frozenset((a, b))])


def _enumerated(n_rollout, n_neg, k):
    rewards = [0] * n_neg + [1] * (n_rollout - n_neg)
    maxima = np.array([max(subset) for subset in combinations(rewards, k)], dtype=np.float64)
    mean, std = maxima.mean(), maxima.std()
    return mean, std, (1.0 - mean) / std, (0.0 - mean) / std


class Pass1RewardTests(SimpleTestCase):

    def test_verdicts(self):
        self.assertEqual(pass1_reward(verify("\\boxed{3}", "3")), 1)
        self.assertEqual(pass1_reward(verify("\\boxed{4}", "3")), 0)
        self.assertEqual(pass1_reward(verify("\\boxed{<ABSTAIN>}", "<ABSTAIN>")), 1)

    def test_score_group(self):
        task = gen_arith_tasks(1, 10, 0)[0]
        wrong = str((int(task.ground_truth) + 1) % 10)
        rollouts = [_rollout(f"\\boxed{{{task.ground_truth}}}", task_id=task.id),
                    _rollout(f"\\boxed{{{wrong}}}", task_id=task.id)]
        group = score_group(task, rollouts)
        self.assertEqual(group.correctness, (1, 0))
        self.assertTrue(group.is_informative)

    def test_group_rejects_foreign_rollouts(self):
        with self.assertRaises(ValueError):
            RolloutGroup('t', (_rollout('a'), _rollout('b', task_id='u')), (1, 0))
        with self.assertRaises(ValueError):
            RolloutGroup('t', (_rollout('a'),), (1,))


class PassKTests(SimpleTestCase):

    def test_two_of_four(self):
        stats = passk_stats(4, 2, 2)
        self.assertAlmostEqual(stats.r_bar_group, 0.833333, places=6)
        self.assertAlmostEqual(stats.sigma_group, 0.372678, places=6)
        self.assertAlmostEqual(stats.a_pos, 0.447214, places=6)
        self.assertAlmostEqual(stats.a_neg, -2.236068, places=6)

    def test_k_one_reduces_to_accuracy(self):
        stats = passk_stats(4, 2, 1)
        self.assertEqual(stats.r_bar_group, 0.5)
        self.assertEqual(stats.sigma_group, 0.5)
        self.assertEqual((stats.a_pos, stats.a_neg), (1.0, -1.0))
        for n in range(2, 9):
            for n_neg in range(n + 1):
                self.assertEqual(passk_stats(n, n_neg, 1).r_bar_group, (n - n_neg) / n)

    def test_degenerate_group(self):
        stats = passk_stats(4, 0, 2)
        self.assertEqual(stats.r_bar_group, 1.0)
        self.assertTrue(stats.is_degenerate)
        with self.assertRaises(DegenerateGroupError):
            passk_advantages(stats)

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            passk_stats(4, 2, 5)
        with self.assertRaises(ValueError):
            passk_stats(4, 5, 2)

    def test_matches_exhaustive_enumeration(self):
        for n in range(2, 9):
            for n_neg in range(1, n):
                for k in range(1, n + 1):
                    stats = passk_stats(n, n_neg, k)
                    mean, std, a_pos, a_neg = _enumerated(n, n_neg, k)
                    self.assertAlmostEqual(stats.r_bar_group, mean, delta=1e-9)
                    if std == 0.0:
                        # Every k-subset holds a correct response
                        self.assertTrue(stats.is_degenerate)
                        continue
                    self.assertAlmostEqual(stats.sigma_group, std, delta=1e-9)
                    self.assertAlmostEqual(stats.a_pos, a_pos, delta=1e-9)
                    self.assertAlmostEqual(stats.a_neg, a_neg, delta=1e-9)

    def test_sign_and_monotonicity(self):
        for n in range(2, 9):
            magnitudes = []
            for n_neg in range(1, n):
                stats = passk_stats(n, n_neg, 1)
                self.assertGreaterEqual(stats.a_pos, 0.0)
                self.assertLessEqual(stats.a_neg, 0.0)
                magnitudes.append(stats.a_pos)
            self.assertEqual(magnitudes, sorted(magnitudes))

    def test_passk_estimate(self):
        self.assertAlmostEqual(passk_estimate(4, 2, 2), 5 / 6, places=12)
        self.assertEqual(passk_estimate(8, 0, 3), 0.0)
        self.assertEqual(passk_estimate(8, 8, 3), 1.0)


class DiversityTests(SimpleTestCase):

    def setUp(self):
        self.table = {
            frozenset(('a', 'b')): 0.2,
            frozenset(('a', 'c')): 0.4,
            frozenset(('b', 'c')): 0.6,
        }
        self.cfg = DiversityConfig(distance=_table(self.table))

    def test_mean_pairwise_distance(self):
        np.testing.assert_allclose(diversity_scores(['a', 'b', 'c'], self.cfg), [0.3, 0.4, 0.5], atol=1e-12)

    def test_identical_and_pair(self):
        cfg = DiversityConfig()
        np.testing.assert_allclose(diversity_scores(['same'] * 3, cfg), [0.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(diversity_from_matrix(np.array([[0, 0.7], [0.7, 0]])), [0.7, 0.7])

    def test_needs_two_responses(self):
        with self.assertRaises(ValueError):
            diversity_scores(['only'], self.cfg)

    def test_embedding_provider(self):
        vectors = {'x': [1.0, 0.0], 'y': [0.0, 1.0], 'z': [1.0, 1.0]}
        cfg = DiversityConfig(distance=embedding_distances(lambda texts: [vectors[t] for t in texts]))
        near = 1 - 1 / np.sqrt(2)
        np.testing.assert_allclose(
            diversity_scores(['x', 'y', 'z'], cfg), [(1 + near) / 2, (1 + near) / 2, near], atol=1e-12,
        )

    def test_fuse(self):
        fused = fuse_diversity([1, 1, 0], [0.3, 0.4, 0.5], self.cfg)
        np.testing.assert_allclose(fused, [0.5, 0.75, 0.0], atol=1e-12)
        np.testing.assert_allclose(fuse_diversity([1, 0], [0.2, 0.2], self.cfg), [1.0, 0.0])
        np.testing.assert_array_equal(fuse_diversity([0, 0, 0], [0.3, 0.4, 0.5], self.cfg), [0.0, 0.0, 0.0])

    def test_fuse_ignores_affine_rescaling(self):
        scaled = {pair: 3.0 * d + 0.5 for pair, d in self.table.items()}
        texts = ['a', 'b', 'c']
        original = fuse_diversity([1, 1, 1], diversity_scores(texts, self.cfg), self.cfg)
        rescaled_cfg = DiversityConfig(distance=_table(scaled))
        rescaled = fuse_diversity([1, 1, 1], diversity_scores(texts, rescaled_cfg), rescaled_cfg)
        np.testing.assert_allclose(original, rescaled, atol=1e-12)

    def test_advantages(self):
        advantages = diversity_advantages([0.5, 0.75, 0.0])
        np.testing.assert_allclose(advantages, [0.083333, 0.333333, -0.416667], atol=1e-6)
        self.assertLessEqual(abs(advantages.sum()), 1e-12)
        np.testing.assert_allclose(diversity_advantages([0.4] * 4), np.zeros(4), atol=1e-12)

    def test_char_trigram_distances(self):
        matrix = char_trigram_distances(['the answer is 3', 'the answer is 3', 'totally different text'])
        np.testing.assert_array_equal(np.diag(matrix), np.zeros(3))
        np.testing.assert_allclose(matrix, matrix.T)
        self.assertAlmostEqual(matrix[0, 1], 0.0, places=12)
        self.assertGreater(matrix[0, 2], 0.5)
        self.assertTrue(np.all((matrix >= 0.0) & (matrix <= 1.0)))


class LengthRewardTests(SimpleTestCase):

    def test_branches(self):
        cfg = LengthConfig(l_max=512, l_soft=128)
        self.assertEqual(length_reward(300, cfg), 0.0)
        self.assertEqual(length_reward(448, cfg), -0.5)
        self.assertEqual(length_reward(600, cfg), -1.0)

    def test_continuous_and_non_increasing(self):
        cfg = LengthConfig(l_max=512, l_soft=128)
        self.assertEqual(length_reward(384, cfg), 0.0)
        self.assertEqual(length_reward(512, cfg), -1.0)
        values = [length_reward(n, cfg) for n in range(0, 700)]
        self.assertTrue(all(a >= b for a, b in zip(values, values[1:])))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            length_reward(-1, LengthConfig())
        with self.assertRaises(ValueError):
            LengthConfig(l_max=100, l_soft=100)


class HybridAdvantageTests(SimpleTestCase):

    def test_early_phase(self):
        result = hybrid_advantage(_group([1, 1, 0, 0]), Phase.EARLY_PASSK, 2, DiversityConfig())
        np.testing.assert_allclose(result.values, [0.447214, 0.447214, -2.236068, -2.236068], atol=1e-6)
        self.assertFalse(result.degenerate)

    def test_late_phase_identical_responses(self):
        group = _group([1, 1, 1, 1], texts=['\\boxed{3}'] * 4)
        result = hybrid_advantage(group, Phase.LATE_DIVERSITY, 2, DiversityConfig())
        np.testing.assert_array_equal(result.values, np.zeros(4))

    def test_length_term_is_additive(self):
        cfg = LengthConfig(l_max=512, l_soft=128)
        base = hybrid_advantage(_group([1, 1, 0, 0]), Phase.EARLY_PASSK, 2, DiversityConfig())
        shaped = hybrid_advantage(
            _group([1, 1, 0, 0], lengths=[600, 3, 3, 3]), Phase.EARLY_PASSK, 2, DiversityConfig(), cfg, w_len=0.5,
        )
        np.testing.assert_allclose(shaped.values - base.values, [-0.5, 0.0, 0.0, 0.0], atol=1e-12)

    def test_degenerate_early_group_is_zeroed(self):
        result = hybrid_advantage(_group([1, 1, 1, 1]), Phase.EARLY_PASSK, 2, DiversityConfig())
        self.assertTrue(result.degenerate)
        np.testing.assert_array_equal(result.values, np.zeros(4))

    def test_phase_schedule(self):
        self.assertEqual(phase_for_iteration(0, 10, 0.4), Phase.EARLY_PASSK)
        self.assertEqual(phase_for_iteration(3, 10, 0.4), Phase.EARLY_PASSK)
        self.assertEqual(phase_for_iteration(4, 10, 0.4), Phase.LATE_DIVERSITY)
        self.assertEqual(phase_for_iteration(0, 10, 0.0), Phase.LATE_DIVERSITY)


class DistinctCountTests(SimpleTestCase):

    def test_identical(self):
        self.assertEqual(distinct_count(['\\boxed{1}'] * 5, DiversityConfig()), 1)

    def test_all_far_apart(self):
        table = {frozenset(p): 0.9 for p in combinations('abcd', 2)}
        self.assertEqual(distinct_count(list('abcd'), DiversityConfig(distance=_table(table))), 4)

    def test_hand_clustering(self):
        table = {frozenset(('a', 'b')): 0.1, frozenset(('a', 'c')): 0.9, frozenset(('b', 'c')): 0.9}
        cfg = DiversityConfig(distance=_table(table), tau=0.2)
        self.assertEqual(distinct_count(['a', 'b', 'c'], cfg), 2)
        self.assertEqual(distinct_count(['c', 'b', 'a'], cfg), 2)

    def test_threshold_is_exclusive(self):
        table = {frozenset(('a', 'b')): 0.2}
        self.assertEqual(distinct_count(['a', 'b'], DiversityConfig(distance=_table(table), tau=0.2)), 2)
        self.assertEqual(distinct_count(['a', 'b'], DiversityConfig(distance=_table(table), tau=0.21)), 1)

    def test_same_order_same_clustering(self):
        responses = ["\\boxed{1}", "so \\boxed{1}", "\\boxed{7}", "the answer is \\boxed{7}", "\\boxed{1}"]
        cfg = DiversityConfig()
        self.assertEqual(cluster_responses(responses, cfg), cluster_responses(list(responses), cfg))
        self.assertEqual(cluster_responses(responses, cfg)[0], cluster_responses(responses, cfg)[4])

    def test_empty(self):
        with self.assertRaises(ValueError):
            distinct_count([], DiversityConfig())
