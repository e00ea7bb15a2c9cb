import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from policy.engine import Rollout, init_policy
from policy.vocabulary import Vocabulary
from rewards.engine import RolloutGroup
from taskforge.generators import gen_arith_tasks, gen_context_tasks
from taskforge.records import Tier
from taskforge.transforms import boxed

from .filters import rejection_filter
from .reports import (
    CurationDecision,
    CurationRecord,
    leaked_task_ids,
    read_curation_report,
    write_curation_report,
)
from .sampling import (
    RatioEmaState,
    TierReport,
    fill_informative_batch,
    oversample_count,
    ratio_ema_update,
    resample_weights,
    tier_classify,
)
from .screening import PolicyResponder, PromptOracleResponder, ScreenDecision, leakage_screen


def _group(correctness, task_id='t'):
    rollouts = tuple(
        Rollout(task_id, (1, 0), f"r{i}", 0.0, 0.0) for i in range(len(correctness))
    )
    return RolloutGroup(task_id, rollouts, tuple(correctness))


class FixedResponder:

    def __init__(self, responses):
        self.responses = responses
        self.seen = []

    def respond(self, task, n, seed):
        self.seen.append(task)
        return list(self.responses[:n])


class RejectionFilterTests(SimpleTestCase):

    def test_examples(self):
        result = rejection_filter([_group([1, 1, 1, 1]), _group([0, 0, 0, 0]), _group([1, 0, 1, 0])])
        self.assertEqual(result.dropped_all_correct, 1)
        self.assertEqual(result.dropped_all_wrong, 1)
        self.assertEqual([g.correctness for g in result.kept], [(1, 0, 1, 0)])
        self.assertAlmostEqual(result.informative_fraction, 1 / 3)

    def test_empty_input(self):
        result = rejection_filter([])
        self.assertEqual(result.kept, [])
        self.assertEqual(result.informative_fraction, 0.0)

    def test_randomized_groups(self):
        rng = np.random.default_rng(0)
        groups = []
        for i in range(10_000):
            size = int(rng.integers(2, 9))
            groups.append(_group([int(c) for c in rng.integers(0, 2, size=size)], task_id=f"t{i}"))
        result = rejection_filter(groups)
        expected = [g for g in groups if 0 < sum(g.correctness) < g.n_rollout]
        self.assertEqual(result.kept, expected)
        self.assertEqual(
            result.dropped_all_correct, sum(1 for g in groups if sum(g.correctness) == g.n_rollout)
        )
        self.assertEqual(result.dropped_all_wrong, sum(1 for g in groups if sum(g.correctness) == 0))


class RatioEmaTests(SimpleTestCase):

    def test_one_step(self):
        self.assertAlmostEqual(ratio_ema_update(RatioEmaState(), 0.3).rho, 0.48, places=12)

    def test_fixed_point(self):
        self.assertAlmostEqual(ratio_ema_update(RatioEmaState(rho=0.5), 0.5).rho, 0.5, places=12)

    def test_floor(self):
        state = RatioEmaState(rho=0.05, rho_min=0.05)
        self.assertEqual(ratio_ema_update(state, 0.0).rho, 0.05)

    def test_invalid_inputs(self):
        with self.assertRaises(ValueError):
            RatioEmaState(rho=0.01, rho_min=0.05)
        with self.assertRaises(ValueError):
            RatioEmaState(alpha=0.0)
        with self.assertRaises(ValueError):
            ratio_ema_update(RatioEmaState(), 1.5)

    def test_oversample_count(self):
        self.assertEqual(oversample_count(RatioEmaState(rho=0.4), 16), 40)
        self.assertEqual(oversample_count(RatioEmaState(rho=1.0), 16), 16)
        self.assertEqual(oversample_count(RatioEmaState(rho=0.05, rho_min=0.05, factor_cap=8), 16), 128)
        with self.assertRaises(ValueError):
            oversample_count(RatioEmaState(), 0)


class FillInformativeBatchTests(SimpleTestCase):

    def _drawer(self, rng, p_informative):
        def draw(round_index, count):
            groups = []
            for _ in range(count):
                roll = rng.random()
                if roll < p_informative:
                    groups.append(_group([1, 0, 0, 1]))
                elif roll < (1 + p_informative) / 2:
                    groups.append(_group([1, 1, 1, 1]))
                else:
                    groups.append(_group([0, 0, 0, 0]))
            return groups
        return draw

    def test_stationary_mix_fills(self):
        rng = np.random.default_rng(1)
        state = RatioEmaState()
        filled = 0
        for _ in range(200):
            result = fill_informative_batch(state, 8, self._drawer(rng, 0.3))
            filled += result.filled
            self.assertLessEqual(len(result.groups), 8)
            state = result.state
        self.assertGreaterEqual(filled / 200, 0.95)
        self.assertLess(abs(state.rho - 0.3), 0.1)

    def test_budget_bounds_draws(self):
        result = fill_informative_batch(RatioEmaState(), 4, self._drawer(np.random.default_rng(0), 0.0))
        self.assertFalse(result.filled)
        self.assertEqual(result.n_drawn, 32)
        self.assertEqual(result.dropped_all_correct + result.dropped_all_wrong, 32)
        self.assertAlmostEqual(result.state.rho, 0.45)

    def test_single_round_when_all_informative(self):
        result = fill_informative_batch(RatioEmaState(rho=1.0), 5, self._drawer(np.random.default_rng(0), 1.0))
        self.assertEqual(result.rounds, 1)
        self.assertEqual(result.n_drawn, 5)
        self.assertTrue(result.filled)


class TierTests(SimpleTestCase):

    def test_classify(self):
        self.assertEqual(tier_classify(1.0), Tier.MASTERED)
        self.assertEqual(tier_classify(0.5), Tier.PARTIAL)
        self.assertEqual(tier_classify(0.0), Tier.UNMASTERED)
        with self.assertRaises(ValueError):
            tier_classify(1.2)

    def test_report(self):
        report = TierReport()
        report.record_groups([_group([1, 1], 'a'), _group([1, 0], 'b')])
        self.assertEqual(report.tier_of('a'), Tier.MASTERED)
        self.assertEqual(report.tier_of('b'), Tier.PARTIAL)
        self.assertEqual(report.tier_of('c'), Tier.UNKNOWN)
        self.assertEqual(report.counts()['mastered'], 1)

    def test_default_weights(self):
        report = TierReport()
        for task_id, accuracy in (('m', 1.0), ('p', 0.5), ('u', 0.0)):
            report.record(task_id, accuracy)
        np.testing.assert_allclose(resample_weights(report), [1 / 11, 5 / 11, 5 / 11], atol=1e-12)

    def test_all_mastered_is_uniform(self):
        report = TierReport()
        for task_id in 'abcd':
            report.record(task_id, 1.0)
        np.testing.assert_allclose(resample_weights(report), [0.25] * 4)

    def test_unknown_tasks_use_partial_weight(self):
        report = TierReport()
        report.record('m', 1.0)
        np.testing.assert_allclose(resample_weights(report, task_ids=['m', 'new']), [1 / 6, 5 / 6])

    def test_invalid(self):
        with self.assertRaises(ValueError):
            resample_weights(TierReport())
        report = TierReport()
        report.record('m', 1.0)
        with self.assertRaises(ValueError):
            resample_weights(report, base=(1.0, 0.5, 1.0))
        with self.assertRaises(ValueError):
            resample_weights(report, base=(0.0, 1.0, 1.0))


class LeakageScreenTests(SimpleTestCase):

    def setUp(self):
        self.task = gen_context_tasks(1, 10, 4)[0]
        self.wrong = boxed(str((int(self.task.ground_truth) + 1) % 10))

    def test_three_of_four_leaks(self):
        right = boxed(self.task.ground_truth)
        responder = FixedResponder([right, right, right, self.wrong])
        result = leakage_screen(self.task, responder, n_trials=4, threshold=0.5)
        self.assertEqual(result.decision, ScreenDecision.LEAKED)
        self.assertEqual(result.match_rate, 0.75)
        self.assertIsNone(responder.seen[0].context)

    def test_no_matches_is_clean(self):
        result = leakage_screen(self.task, FixedResponder([self.wrong] * 4), n_trials=4)
        self.assertFalse(result.leaked)
        self.assertEqual(result.match_rate, 0.0)

    def test_zero_threshold_always_leaks(self):
        result = leakage_screen(self.task, FixedResponder([self.wrong] * 4), n_trials=4, threshold=0.0)
        self.assertTrue(result.leaked)

    def test_text_only_task(self):
        with self.assertRaises(ValueError):
            leakage_screen(gen_arith_tasks(1, 10, 0)[0], FixedResponder([]))

    def test_prompt_oracle(self):
        oracle = PromptOracleResponder()
        for task in gen_context_tasks(10, 10, 5, leak_fraction=1.0):
            self.assertTrue(leakage_screen(task, oracle).leaked)
        for task in gen_context_tasks(10, 10, 5, leak_fraction=0.0):
            result = leakage_screen(task, oracle)
            self.assertFalse(result.leaked)
            self.assertEqual(result.match_rate, 0.0)

    def test_policy_responder_is_seeded(self):
        vocabulary = Vocabulary.for_modulus(10)
        params = init_policy(vocabulary.size, 32 + vocabulary.size + 3, 0)
        responder = PolicyResponder(params, vocabulary, max_len=8)
        first = leakage_screen(self.task, responder, seed=3)
        self.assertEqual(first, leakage_screen(self.task, responder, seed=3))
        self.assertEqual(first.n_trials, 8)


class CurationReportTests(SimpleTestCase):

    def test_round_trip(self):
        task = gen_context_tasks(1, 10, 4, leak_fraction=1.0)[0]
        screen = leakage_screen(task, PromptOracleResponder())
        records = [
            CurationRecord.from_screen(screen),
            CurationRecord('a', CurationDecision.KEPT, Tier.PARTIAL),
            CurationRecord('b', CurationDecision.DROPPED_ALL_CORRECT, Tier.MASTERED),
        ]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'curation.jsonl'
            self.assertEqual(write_curation_report(path, records), 3)
            restored = read_curation_report(path)
        self.assertEqual(restored, records)
        self.assertEqual(leaked_task_ids(restored), frozenset({task.id}))
