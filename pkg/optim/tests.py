import math

import numpy as np
from django.test import SimpleTestCase

from policy.engine import (
    FIXED_COLUMNS,
    PolicyParams,
    Rollout,
    init_policy,
    logprob,
    logprob_and_grad,
    sample,
    snapshot,
)
from policy.vocabulary import Vocabulary
from rewards.engine import RolloutGroup
from taskforge.generators import gen_arith_tasks
from taskforge.transforms import make_preference_pairs

from .objectives import (
    ClipConfig,
    TokenizedPair,
    dpo_loss_grad,
    gspo_loss_grad,
    pair_margins,
    preference_accuracy,
    sequence_ratio,
    tokenize_pairs,
)
from .updates import MomentumState, NonFiniteGradientError, OptimConfig, apply_update, grad_check

TASKS = gen_arith_tasks(6, 10, 3)
TASKS_BY_ID = {task.id: task for task in TASKS}


def _params(rng, vocab_size=6, hash_width=4, scale=0.5):
    shape = (vocab_size, hash_width + vocab_size + FIXED_COLUMNS)
    return PolicyParams(rng.normal(0.0, scale, size=shape), np.zeros(shape, dtype=bool))


def _groups(old, rng, n_groups=2, n_rollout=3, max_len=5):
    groups = []
    for g in range(n_groups):
        task = TASKS[g % len(TASKS)]
        rollouts = tuple(
            sample(old, task, max_len, 1.0, seed=int(rng.integers(0, 2**31))) for _ in range(n_rollout)
        )
        correctness = tuple([1] + [0] * (n_rollout - 1))
        advantages = rng.normal(0.0, 1.0, size=n_rollout)
        groups.append((RolloutGroup(task.id, rollouts, correctness), advantages))
    return groups


class GspoTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.params = _params(self.rng)
        self.old = snapshot(self.params)
        self.groups = _groups(self.old, self.rng)

    def test_identity_ratio(self):
        loss, grad = gspo_loss_grad(self.params, self.old, self.groups, ClipConfig(), TASKS_BY_ID)
        expected_loss = -np.mean([advantages.mean() for _, advantages in self.groups])
        self.assertAlmostEqual(loss, expected_loss, delta=1e-12)

        expected_grad = np.zeros_like(self.params.weights)
        for group, advantages in self.groups:
            task = TASKS_BY_ID[group.task_id]
            for rollout, advantage in zip(group.rollouts, advantages):
                _, lp_grad = logprob_and_grad(self.params, task, rollout.tokens)
                expected_grad += advantage / rollout.length * lp_grad / group.n_rollout
        np.testing.assert_allclose(grad, -expected_grad / len(self.groups), atol=1e-12)

    def test_clipped_branch_has_no_gradient(self):
        task = TASKS[0]
        tokens = (1, 2, 0)
        lp_cur, _ = logprob(self.params, task, tokens)
        stretched = Rollout(task.id, tokens, 'x', lp_cur - len(tokens) * math.log(1.5), lp_cur)
        idle = Rollout(task.id, (3, 0), 'y', 0.0, 0.0)
        group = RolloutGroup(task.id, (stretched, idle), (1, 0))

        loss, grad = gspo_loss_grad(
            self.params, self.old, [(group, np.array([1.0, 0.0]))], ClipConfig(eps_high=0.3), TASKS_BY_ID,
        )
        self.assertAlmostEqual(loss, -1.3 / 2, delta=1e-12)
        np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_sequence_ratio(self):
        self.assertAlmostEqual(sequence_ratio(0.5, 0.0, 10), 1.051271, places=6)

    def test_permutation_invariance(self):
        loss, grad = gspo_loss_grad(self.params, self.old, self.groups, ClipConfig(), TASKS_BY_ID)
        shuffled = [
            (RolloutGroup(group.task_id, group.rollouts[::-1], group.correctness[::-1]), advantages[::-1])
            for group, advantages in self.groups[::-1]
        ]
        loss_p, grad_p = gspo_loss_grad(self.params, self.old, shuffled, ClipConfig(), TASKS_BY_ID)
        self.assertAlmostEqual(loss, loss_p, delta=1e-12)
        np.testing.assert_allclose(grad, grad_p, atol=1e-12)

    def test_zero_advantages_contribute_nothing(self):
        zeroed = [(group, np.zeros(group.n_rollout)) for group, _ in self.groups]
        loss, grad = gspo_loss_grad(self.params, self.old, zeroed, ClipConfig(), TASKS_BY_ID)
        self.assertEqual(loss, 0.0)
        np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_mismatched_advantages(self):
        group, _ = self.groups[0]
        with self.assertRaises(ValueError):
            gspo_loss_grad(self.params, self.old, [(group, np.zeros(2))], ClipConfig(), TASKS_BY_ID)

    def test_snapshot_newer_than_rollouts(self):
        self.params.version = 3
        with self.assertRaises(ValueError):
            gspo_loss_grad(self.params, snapshot(self.params), self.groups, ClipConfig(), TASKS_BY_ID)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for instance in range(100):
            old = snapshot(_params(rng, vocab_size=int(rng.integers(4, 7))))
            groups = _groups(old, rng)
            live = old.copy()
            if instance % 2:
                live.weights += rng.normal(0.0, 0.01, size=live.weights.shape)
            error = grad_check(
                lambda p: gspo_loss_grad(p, old, groups, ClipConfig(), TASKS_BY_ID), live, h=1e-5, seed=instance,
            )
            worst = max(worst, error)
        self.assertLessEqual(worst, 1e-5)


class DpoTests(SimpleTestCase):

    def _uniform(self, vocab_size=7):
        shape = (vocab_size, 4 + vocab_size + FIXED_COLUMNS)
        return PolicyParams(np.zeros(shape), np.zeros(shape, dtype=bool))

    def test_equal_likelihoods(self):
        pair = TokenizedPair(TASKS[0], (1, 2, 0), (1, 2, 0))
        loss, _ = dpo_loss_grad(init_policy(6, 20, 0), [pair], beta=0.1)
        self.assertAlmostEqual(loss, math.log(2), places=12)

    def test_scalar_margin(self):
        params = self._uniform(7)
        pair = TokenizedPair(TASKS[0], (1, 0), (2, 3, 4, 0))
        margin = pair_margins(params, [pair])[0]
        self.assertAlmostEqual(margin, 2 * math.log(7), places=12)

        loss, _ = dpo_loss_grad(params, [pair], beta=0.4 / margin)
        self.assertAlmostEqual(loss, 0.513015, places=6)
        self.assertAlmostEqual(loss, -math.log(1 / (1 + math.exp(-0.4))), places=12)

    def test_zero_beta(self):
        rng = np.random.default_rng(2)
        pair = TokenizedPair(TASKS[0], (1, 0), (2, 3, 0))
        loss, grad = dpo_loss_grad(_params(rng), [pair], beta=0.0)
        self.assertAlmostEqual(loss, math.log(2), places=12)
        np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_loss_falls_as_chosen_gains(self):
        params = self._uniform(7)
        pair = TokenizedPair(TASKS[0], (1, 0), (2, 3, 0))
        losses = []
        for boost in (0.0, 0.5, 1.0, 2.0):
            params.weights[1, params.column_of_last(None)] = boost
            losses.append(dpo_loss_grad(params, [pair], beta=0.5)[0])
        self.assertTrue(all(a > b for a, b in zip(losses, losses[1:])))

    def test_invalid_inputs(self):
        with self.assertRaises(ValueError):
            dpo_loss_grad(init_policy(6, 20, 0), [], beta=0.1)
        with self.assertRaises(ValueError):
            dpo_loss_grad(init_policy(6, 20, 0), [TokenizedPair(TASKS[0], (1,), (2,))], beta=-1.0)
        with self.assertRaises(ValueError):
            TokenizedPair(TASKS[0], (), (2,))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for instance in range(100):
            vocab_size = int(rng.integers(4, 7))
            params = _params(rng, vocab_size=vocab_size)
            pairs = [
                TokenizedPair(
                    TASKS[i],
                    tuple(int(t) for t in rng.integers(0, vocab_size, size=int(rng.integers(1, 5)))),
                    tuple(int(t) for t in rng.integers(0, vocab_size, size=int(rng.integers(1, 5)))),
                )
                for i in range(3)
            ]
            beta = float(rng.uniform(0.1, 1.0))
            error = grad_check(lambda p: dpo_loss_grad(p, pairs, beta), params, h=1e-5, seed=instance)
            worst = max(worst, error)
        self.assertLessEqual(worst, 1e-5)

    def test_tokenized_generated_pairs(self):
        vocabulary = Vocabulary.for_modulus(10)
        pairs = tokenize_pairs(make_preference_pairs(TASKS, seed=0), TASKS_BY_ID, vocabulary)
        self.assertEqual(len(pairs), len(TASKS))
        for pair in pairs:
            self.assertEqual(pair.chosen[-1], vocabulary.eos_id)
        accuracy = preference_accuracy(self._uniform(vocabulary.size), pairs)
        # Shorter chosen responses win under a uniform policy
        self.assertEqual(accuracy, 1.0)

    def test_unknown_task(self):
        pairs = make_preference_pairs(TASKS[:1], seed=0)
        with self.assertRaises(ValueError):
            tokenize_pairs(pairs, {}, Vocabulary.for_modulus(10))


class ApplyUpdateTests(SimpleTestCase):

    def setUp(self):
        self.params = init_policy(6, 20, 4)

    def test_zero_gradient(self):
        before = self.params.weights.copy()
        apply_update(self.params, np.zeros_like(before), OptimConfig())
        np.testing.assert_array_equal(self.params.weights, before)
        self.assertEqual(self.params.version, 1)

    def test_norm_cap(self):
        before = self.params.weights.copy()
        cfg = OptimConfig(learning_rate=1.0, momentum=0.0, max_grad_norm=5.0)
        apply_update(self.params, np.full_like(before, 100.0), cfg)
        self.assertAlmostEqual(np.linalg.norm(before - self.params.weights), 5.0, delta=1e-9)

    def test_frozen_rows(self):
        self.params.freeze(rows=[0, 2])
        before = self.params.weights.copy()
        grad = np.random.default_rng(0).normal(size=before.shape)
        apply_update(self.params, grad, OptimConfig())
        np.testing.assert_array_equal(self.params.weights[[0, 2]], before[[0, 2]])
        self.assertFalse(np.array_equal(self.params.weights[1], before[1]))

    def test_momentum(self):
        grad = np.full_like(self.params.weights, 0.01)
        cfg = OptimConfig(learning_rate=0.1, momentum=0.9, max_grad_norm=100.0)
        state = MomentumState()
        start = self.params.weights.copy()
        apply_update(self.params, grad, cfg, state)
        middle = self.params.weights.copy()
        apply_update(self.params, grad, cfg, state)
        np.testing.assert_allclose(start - middle, 0.1 * grad, atol=1e-15)
        np.testing.assert_allclose(middle - self.params.weights, 0.1 * 1.9 * grad, atol=1e-15)
        self.assertEqual(self.params.version, 2)

    def test_non_finite_gradient(self):
        before = self.params.weights.copy()
        grad = np.zeros_like(before)
        grad[1, 2] = np.nan
        grad[3, 4] = np.inf
        with self.assertRaises(NonFiniteGradientError) as ctx:
            apply_update(self.params, grad, OptimConfig())
        self.assertEqual(ctx.exception.count, 2)
        self.assertEqual(ctx.exception.first_index, (1, 2))
        np.testing.assert_array_equal(self.params.weights, before)
        self.assertEqual(self.params.version, 0)

    def test_snapshot_cannot_be_updated(self):
        with self.assertRaises(ValueError):
            apply_update(snapshot(self.params), np.zeros_like(self.params.weights), OptimConfig())

    def test_version_increases(self):
        old = snapshot(self.params)
        apply_update(self.params, np.ones_like(self.params.weights), OptimConfig())
        self.assertGreater(self.params.version, old.version)
        self.assertFalse(np.array_equal(self.params.weights, old.weights))


class GradCheckTests(SimpleTestCase):

    def test_quadratic(self):
        rng = np.random.default_rng(0)
        weights = rng.uniform(0.5, 1.5, size=(10, 30))
        curvature = rng.uniform(0.5, 2.0, size=weights.shape)
        params = PolicyParams(weights, np.zeros(weights.shape, dtype=bool))

        def quadratic(p):
            return 0.5 * float(np.sum(curvature * p.weights ** 2)), curvature * p.weights

        self.assertLessEqual(grad_check(quadratic, params, h=1e-3), 1e-9)

    def test_detects_wrong_gradient(self):
        params = PolicyParams(np.ones((4, 8)), np.zeros((4, 8), dtype=bool))
        self.assertGreater(grad_check(lambda p: (float(np.sum(p.weights ** 2)), p.weights), params), 0.4)

    def test_invalid_step(self):
        params = PolicyParams(np.ones((4, 8)), np.zeros((4, 8), dtype=bool))
        with self.assertRaises(ValueError):
            grad_check(lambda p: (0.0, np.zeros((4, 8))), params, h=0.0)
