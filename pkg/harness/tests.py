import json
import math
import tempfile
from pathlib import Path
from types import SimpleNamespace
from unittest import skipUnless

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings
from openpyxl import load_workbook

from curation.screening import ScreenDecision, ScreenResult
from policy.checkpoint import load_checkpoint, to_bytes
from policy.engine import FIXED_COLUMNS, PolicyParams, Rollout
from policy.vocabulary import Vocabulary
from rewards.engine import Phase, RolloutGroup
from taskforge.generators import gen_arith_tasks, gen_context_tasks, gen_probe_tasks
from taskforge.records import PreferenceAttribute, PreferencePair
from taskforge.transforms import ablate_context, boxed
from verifier.answers import ABSTAIN

from .config import ConfigurationError, RunConfig, SuiteConfig, load_run_config, parse_run_config
from .dispatch import RolloutDispatcher, RolloutRequest, decode_and_run_chunk, encode_chunk
from .evaluation import evaluate
from .metrics import MetricsRecord, MetricsWriter, read_metrics
from .models import TrainingRun
from .pipeline import (
    PipelineInvariantError,
    Stage1Trainer,
    Stage2Trainer,
    TaskSuite,
    build_preference_pairs,
    build_task_suite,
    initial_policy,
)
from .registry import close_run, open_run
from .reporting import load_metrics, summarize, write_csv_report, write_xlsx_report
from .tasks import run_stage1_job, run_stage2_job

SMALL = {
    'suite': {'arith_count': 6, 'context_count': 4, 'leak_fraction': 0.5, 'probe_count': 2},
    'sampling': {'n_rollout': 4, 'groups_per_batch': 2, 'k': 2, 'max_len': 6},
    'policy': {'hash_width': 16},
    'stage1': {'iterations': 3},
    'stage2': {'epochs': 2, 'batch_size': 4},
    'evaluation': {'probe_samples': 3},
}


def _small(**sections):
    data = json.loads(json.dumps(SMALL))
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return parse_run_config(data)


def _answer_policy(answer: str, hash_width: int = 16) -> PolicyParams:
    """Greedy policy that boxes one fixed answer, or abstains when the evidence is missing"""
    vocabulary = Vocabulary.for_modulus(10)
    size = vocabulary.size
    weights = np.zeros((size, hash_width + size + FIXED_COLUMNS))
    params = PolicyParams(weights, np.zeros(weights.shape, dtype=bool))
    answer_id = vocabulary.token_id(boxed(answer))
    abstain_id = vocabulary.token_id(boxed(ABSTAIN))
    params.weights[answer_id, params.bias_column] = 5.0
    params.weights[abstain_id, params.missing_column] = 10.0
    params.weights[vocabulary.eos_id, params.column_of_last(answer_id)] = 20.0
    params.weights[vocabulary.eos_id, params.column_of_last(abstain_id)] = 20.0
    return params


class RunConfigTests(SimpleTestCase):

    def test_defaults(self):
        config = parse_run_config()
        self.assertEqual(config, RunConfig())
        self.assertEqual(config.sampling.n_rollout, 8)
        self.assertEqual(config.clip.eps_high, 0.28)
        self.assertEqual(config.tier_weights, (0.2, 1.0, 1.0))

    def test_round_trip_through_dict(self):
        config = _small()
        self.assertEqual(parse_run_config(config.to_dict()), config)

    def test_unknown_keys_rejected(self):
        with self.assertRaises(ConfigurationError):
            parse_run_config({'bogus': 1})
        with self.assertRaises(ConfigurationError) as ctx:
            parse_run_config({'sampling': {'n_rollouts': 4}})
        self.assertIn('sampling', ctx.exception.errors)

    def test_invariants(self):
        for bad in (
            {'sampling': {'n_rollout': 4, 'k': 5}},
            {'sampling': {'temperature': 0.0}},
            {'length': {'l_max': 100, 'l_soft': 100}},
            {'ratio_ema': {'rho': 0.01}},
            {'tier_weights': [2.0, 1.0, 1.0]},
            {'stage2': {'styles': ['abstention']}},
            {'optim': {'momentum': 1.0}},
            {'suite': {'modulus': 5}},
            {'suite': {'modulus': 5, 'probe_count': 0, 'probe_train_count': 3}},
        ):
            with self.assertRaises(ConfigurationError, msg=str(bad)):
                parse_run_config(bad)

    def test_small_modulus_without_multi_answer_tasks(self):
        config = parse_run_config({'suite': {'modulus': 3, 'probe_count': 0, 'arith_count': 4}})
        self.assertEqual(config.suite.modulus, 3)
        suite = build_task_suite(config.suite, config.seed)
        self.assertTrue(all(int(task.ground_truth) < 3 for task in suite.pool))

    def test_seed_override(self):
        self.assertEqual(parse_run_config({'seed': 3}, seed=9).seed, 9)
        self.assertEqual(parse_run_config({'seed': 3}).seed, 3)

    def test_load_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.json'
            path.write_text(json.dumps(SMALL))
            self.assertEqual(load_run_config(path).suite.arith_count, 6)
            path.write_text('{not json')
            with self.assertRaises(ConfigurationError):
                load_run_config(path)
            with self.assertRaises(ConfigurationError):
                load_run_config(Path(tmp) / 'missing.json')


class TaskSuiteTests(SimpleTestCase):

    def test_leaked_tasks_leave_the_pool(self):
        suite = build_task_suite(SuiteConfig(arith_count=6, context_count=4, leak_fraction=0.5, probe_count=2), 0)
        self.assertEqual(len(suite.leaked_ids), 2)
        self.assertEqual(len(suite.pool), 8)
        self.assertEqual(len(suite.ablated), 1)
        self.assertEqual(len(suite.probes), 2)
        self.assertFalse(suite.leaked_ids & {task.id for task in suite.pool})
        self.assertTrue(all(task.is_ablated for task in suite.ablated))

    def test_multi_answer_training_tasks_join_the_pool(self):
        suite = build_task_suite(SuiteConfig(arith_count=4, probe_count=2, probe_train_count=3), 0)
        trained = [task for task in suite.pool if 'probe' in task.tags]
        self.assertEqual(len(trained), 3)
        self.assertTrue(all(len(task.accepted_answers) >= 3 for task in trained))
        self.assertFalse({t.id for t in trained} & {t.id for t in suite.probes})

    def test_deterministic(self):
        cfg = SuiteConfig(arith_count=10, context_count=4, probe_count=2)
        self.assertEqual(build_task_suite(cfg, 5).eval_tasks, build_task_suite(cfg, 5).eval_tasks)


class MetricsWriterTests(SimpleTestCase):

    def test_iterations_must_be_gapless(self):
        with tempfile.TemporaryDirectory() as tmp:
            writer = MetricsWriter(tmp, 'stage1')
            writer.write(MetricsRecord('stage1', 0, loss=0.5), 1.0)
            with self.assertRaises(ValueError):
                writer.write(MetricsRecord('stage1', 2, loss=0.4), 1.0)
            self.assertEqual([r.iteration for r in read_metrics(writer.metrics_path)], [0])
            self.assertTrue(writer.timings_path.read_text().strip())


class DispatchTests(SimpleTestCase):

    def setUp(self):
        self.config = _small()
        self.vocabulary = Vocabulary.for_modulus(10)
        self.params = initial_policy(self.config, self.vocabulary)
        self.requests = [RolloutRequest(task, 100 + i) for i, task in enumerate(gen_arith_tasks(5, 10, 0))]

    def _generate(self, workers):
        return RolloutDispatcher(workers).generate(
            self.params, self.vocabulary, 10, self.requests, 6, 1.0, self.config.sampling.redundancy,
        )

    def test_worker_count_does_not_change_rollouts(self):
        self.assertEqual(self._generate(1), self._generate(2))
        self.assertEqual(self._generate(1), self._generate(3))

    def test_serialized_chunk(self):
        payload = encode_chunk(self.params, 10, self.requests, 6, 1.0, self.config.sampling.redundancy)
        payload = json.loads(json.dumps(payload))
        self.assertEqual([r.to_payload() for r in self._generate(1)], decode_and_run_chunk(payload))

    def test_invalid_worker_count(self):
        with self.assertRaises(ValueError):
            RolloutDispatcher(0)


class Stage1Tests(SimpleTestCase):

    def test_zero_iterations(self):
        config = _small(stage1={'iterations': 0})
        with tempfile.TemporaryDirectory() as tmp:
            result = Stage1Trainer(config, tmp).run()
            self.assertEqual(result.iterations_completed, 0)
            self.assertEqual((Path(tmp) / 'stage1_metrics.jsonl').read_text(), '')
            initial = initial_policy(config, Vocabulary.for_modulus(config.suite.modulus))
            self.assertEqual(to_bytes(load_checkpoint(result.checkpoint_path)), to_bytes(initial))

    def test_same_seed_same_bytes_for_any_worker_count(self):
        config = _small()
        outputs = []
        for workers in (1, 2):
            with tempfile.TemporaryDirectory() as tmp:
                Stage1Trainer(config, tmp, workers=workers).run()
                outputs.append((
                    (Path(tmp) / 'stage1_metrics.jsonl').read_bytes(),
                    (Path(tmp) / 'stage1_final.ckpt').read_bytes(),
                    (Path(tmp) / 'stage1_curation.jsonl').read_bytes(),
                ))
        self.assertEqual(outputs[0], outputs[1])

    def test_metrics_stream(self):
        config = _small()
        with tempfile.TemporaryDirectory() as tmp:
            result = Stage1Trainer(config, tmp).run()
            records = read_metrics(Path(tmp) / 'stage1_metrics.jsonl')
        self.assertEqual([r.iteration for r in records], [0, 1, 2])
        self.assertEqual(result.iterations_completed, 3)
        for record in records:
            self.assertEqual(record.stage, 'stage1')
            self.assertIn(record.phase, ('early_passk', 'late_diversity'))
            self.assertGreaterEqual(record.greedy_accuracy, 0.0)
            self.assertLessEqual(record.mean_length, config.sampling.max_len)
            self.assertGreater(record.n_drawn, 0)

    def test_leaked_task_in_pool_is_fatal(self):
        task = gen_context_tasks(1, 10, 0)[0]
        suite = TaskSuite(pool=[task], screen_results=[ScreenResult(task.id, ScreenDecision.LEAKED, 1.0, 8)])
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(PipelineInvariantError):
                Stage1Trainer(_small(), tmp, suite=suite).run()

    def _split_policy(self, task):
        """Boxes the right answer about 60% of the time, a fixed wrong one otherwise"""
        vocabulary = Vocabulary.for_modulus(10)
        size = vocabulary.size
        weights = np.zeros((size, 16 + size + FIXED_COLUMNS))
        params = PolicyParams(weights, np.zeros(weights.shape, dtype=bool))
        right = vocabulary.token_id(boxed(task.ground_truth))
        wrong = vocabulary.token_id(boxed(str((int(task.ground_truth) + 1) % 10)))
        params.weights[right, params.bias_column] = 10.0 + math.log(1.5)
        params.weights[wrong, params.bias_column] = 10.0
        params.weights[vocabulary.eos_id, params.column_of_last(right)] = 30.0
        params.weights[vocabulary.eos_id, params.column_of_last(wrong)] = 30.0
        return params

    def test_passk_degenerate_group_leaves_the_batch(self):
        task = gen_arith_tasks(1, 10, 0)[0]
        config = _small(sampling={'n_rollout': 8, 'k': 4})
        rollouts = tuple(Rollout(task.id, (1, 0), f"r{i}", 0.0, 0.0) for i in range(8))
        mostly_right = RolloutGroup(task.id, rollouts, (1, 1, 1, 1, 1, 0, 0, 0))
        mostly_wrong = RolloutGroup(task.id, rollouts, (1, 0, 0, 0, 0, 0, 0, 0))
        with tempfile.TemporaryDirectory() as tmp:
            trainer = Stage1Trainer(config, tmp, suite=TaskSuite(pool=[task]))
            batch, n_degenerate = trainer._advantages([mostly_right, mostly_wrong], Phase.EARLY_PASSK)
        self.assertEqual(n_degenerate, 1)
        self.assertEqual([group for group, _ in batch], [mostly_wrong])
        self.assertTrue(np.any(batch[0][1] != 0))

    def test_mostly_right_policy_skips_degenerate_groups(self):
        task = gen_arith_tasks(1, 10, 0)[0]
        config = _small(
            sampling={'n_rollout': 8, 'k': 4, 'groups_per_batch': 2, 'max_len': 4},
            stage1={'iterations': 4, 'phase_switch': 1.0, 'tier_resampling': False},
        )
        with tempfile.TemporaryDirectory() as tmp:
            trainer = Stage1Trainer(config, tmp, suite=TaskSuite(pool=[task]), params=self._split_policy(task))
            result = trainer.run()
        self.assertEqual(result.iterations_completed, 4)
        self.assertTrue(all(r.phase == 'early_passk' for r in result.metrics))
        self.assertGreater(sum(r.n_degenerate for r in result.metrics), 0)
        self.assertEqual(result.final_metrics['greedy_accuracy'], 1.0)


class StageJobTests(SimpleTestCase):

    def test_stage_jobs_chain(self):
        config = _small()
        with tempfile.TemporaryDirectory() as tmp:
            first = run_stage1_job(config.to_dict(), tmp)
            self.assertEqual(first['status'], 'success')
            self.assertEqual(first['iterations'], 3)
            second = run_stage2_job(config.to_dict(), tmp, first['checkpoint'])
            self.assertEqual(second['status'], 'success')
            self.assertEqual(second['epochs'], 2)
            self.assertTrue(Path(second['checkpoint']).exists())

    def test_bad_config_reports_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            result = run_stage1_job({'bogus': 1}, tmp)
        self.assertEqual(result['status'], 'error')
        self.assertIn('error', result)


class Stage2Tests(SimpleTestCase):

    def setUp(self):
        self.tasks = gen_arith_tasks(10, 10, 1)
        self.vocabulary = Vocabulary.for_modulus(10)

    def test_zero_beta_changes_nothing(self):
        config = _small(optim={'beta': 0.0})
        params = initial_policy(config, self.vocabulary)
        start = params.weights.copy()
        pairs = [
            PreferencePair(t.id, boxed(t.ground_truth), f"so the answer is {boxed(t.ground_truth)}",
                           PreferenceAttribute.CONCISENESS)
            for t in self.tasks
        ]
        with tempfile.TemporaryDirectory() as tmp:
            result = Stage2Trainer(config, tmp, params, pairs, self.tasks).run()
        np.testing.assert_array_equal(result.params.weights, start)
        self.assertEqual([r.iteration for r in result.metrics], [0, 1, 2])
        for record in result.metrics:
            self.assertAlmostEqual(record.loss, math.log(2), places=12)
        self.assertEqual(len({r.preference_accuracy for r in result.metrics}), 1)

    def test_single_longer_pair_is_learned(self):
        config = _small(
            optim={'learning_rate': 0.5, 'beta': 1.0},
            stage2={'epochs': 30, 'batch_size': 1, 'held_out_fraction': 0.2},
        )
        task = self.tasks[0]
        pair = PreferencePair(
            task.id, f"well so the answer is clearly {boxed(task.ground_truth)}", boxed(task.ground_truth),
            PreferenceAttribute.FLUENCY,
        )
        with tempfile.TemporaryDirectory() as tmp:
            trainer = Stage2Trainer(config, tmp, initial_policy(config, self.vocabulary), [pair], [task])
            self.assertEqual(trainer.held_out, [])
            result = trainer.run()
        self.assertEqual(result.metrics[0].preference_accuracy, 0.0)
        self.assertEqual(result.metrics[-1].preference_accuracy, 1.0)
        self.assertIsNone(result.metrics[-1].held_out_accuracy)

    def test_split_sizes(self):
        config = _small(stage2={'epochs': 0, 'held_out_fraction': 0.2})
        pairs = [
            PreferencePair(t.id, boxed(t.ground_truth), f"thus {boxed(t.ground_truth)}", PreferenceAttribute.CONCISENESS)
            for t in self.tasks
        ]
        with tempfile.TemporaryDirectory() as tmp:
            trainer = Stage2Trainer(config, tmp, initial_policy(config, self.vocabulary), pairs, self.tasks)
            self.assertEqual((len(trainer.train), len(trainer.held_out)), (8, 2))
            result = trainer.run()
            self.assertTrue((Path(tmp) / 'stage2_final.ckpt').exists())
        self.assertEqual(len(result.metrics), 1)


class EvaluationTests(SimpleTestCase):

    def test_answer_policy(self):
        tasks = [t for t in gen_arith_tasks(60, 10, 0) if t.ground_truth == '3']
        ablated = [ablate_context(t) for t in gen_context_tasks(3, 10, 0)]
        report = evaluate(
            _answer_policy('3'), Vocabulary.for_modulus(10), tasks + ablated, gen_probe_tasks(2, 10, 0),
            temperature=0.01, probe_samples=4, passk_samples=2, passk_k=2,
        )
        self.assertGreater(report.n_tasks, 0)
        self.assertEqual(report.accuracy, 1.0)
        self.assertEqual(report.n_ablated, 3)
        self.assertEqual(report.abstention_rate, 1.0)
        self.assertEqual(report.mean_distinct_count, 1.0)
        self.assertEqual(report.mean_length, 2.0)
        self.assertEqual(report.passk, 1.0)

    def test_wrong_answer_policy(self):
        tasks = [t for t in gen_arith_tasks(60, 10, 0) if t.ground_truth == '4']
        report = evaluate(_answer_policy('3'), Vocabulary.for_modulus(10), tasks)
        self.assertEqual(report.accuracy, 0.0)
        self.assertIsNone(report.abstention_rate)
        self.assertIsNone(report.mean_distinct_count)


class ReportingTests(SimpleTestCase):

    def _write(self, tmp):
        writer = MetricsWriter(tmp, 'stage1')
        writer.write(MetricsRecord('stage1', 0, loss=1.0, greedy_accuracy=0.2, mean_length=4.0), 1.0)
        writer.write(MetricsRecord('stage1', 1, loss=0.5, greedy_accuracy=0.6, mean_length=6.0), 1.0)
        return writer.metrics_path

    def test_summary(self):
        with tempfile.TemporaryDirectory() as tmp:
            summary = summarize(load_metrics([self._write(tmp)]))
        self.assertEqual(len(summary), 1)
        row = summary.iloc[0]
        self.assertEqual(row['iterations'], 2)
        self.assertEqual(row['greedy_accuracy'], 0.6)
        self.assertEqual(row['mean_length'], 5.0)
        self.assertEqual(row['best_greedy_accuracy'], 0.6)

    def test_csv_and_xlsx(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = self._write(tmp)
            iterations_csv, summary_csv = write_csv_report([path], tmp)
            self.assertEqual(len(iterations_csv.read_text().strip().splitlines()), 3)
            self.assertTrue(summary_csv.exists())

            workbook = load_workbook(write_xlsx_report([path], tmp))
            self.assertEqual(workbook.sheetnames, ['Summary', 'Iterations'])
            self.assertTrue(workbook['Summary']['A1'].font.bold)
            self.assertEqual(workbook['Iterations'].max_row, 3)


@override_settings(RLVR_RECORD_RUNS=True)
class TrainingRunTests(TestCase):

    def test_open_and_close(self):
        run = open_run('stage1', {'seed': 1}, 1, '/tmp/out')
        self.assertEqual(run.status, TrainingRun.Status.RUNNING)
        close_run(run, SimpleNamespace(checkpoint_path=Path('/tmp/out/stage1_final.ckpt'),
                                       iterations_completed=3, final_metrics={'greedy_accuracy': 0.5}))
        run.refresh_from_db()
        self.assertEqual(run.status, TrainingRun.Status.COMPLETED)
        self.assertEqual(run.iterations_completed, 3)
        self.assertIsNotNone(run.finished_at)

    def test_failed_run(self):
        run = open_run('stage2', {}, 0, '/tmp/out')
        close_run(run, error=ValueError('boom'))
        run.refresh_from_db()
        self.assertEqual(run.status, TrainingRun.Status.FAILED)
        self.assertEqual(run.error_message, 'boom')

    @override_settings(RLVR_RECORD_RUNS=False)
    def test_recording_disabled(self):
        self.assertIsNone(open_run('stage1', {}, 0, '/tmp/out'))
        self.assertEqual(TrainingRun.objects.count(), 0)


class CommandTests(TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.config_path = self.dir / 'run.json'
        self.config_path.write_text(json.dumps(SMALL))

    def _call(self, name, *args):
        call_command(name, '--config', str(self.config_path), '--out-dir', str(self.dir), *args)

    def test_configuration_error_exit_code(self):
        self.config_path.write_text(json.dumps({'sampling': {'bogus': 1}}))
        with self.assertRaises(CommandError) as ctx:
            self._call('train_stage1')
        self.assertEqual(ctx.exception.returncode, 2)

    def test_pipeline_end_to_end(self):
        self._call('gen_tasks')
        for name in ('tasks.jsonl', 'probes.jsonl', 'pairs.jsonl', 'screen.jsonl'):
            self.assertTrue((self.dir / name).exists(), name)

        self._call('train_stage1', '--workers', '1')
        checkpoint = self.dir / 'stage1_final.ckpt'
        self.assertTrue(checkpoint.exists())
        self.assertEqual(TrainingRun.objects.get(stage='stage1').status, TrainingRun.Status.COMPLETED)

        self._call('train_stage2', '--checkpoint', str(checkpoint),
                   '--pairs', str(self.dir / 'pairs.jsonl'), '--tasks', str(self.dir / 'tasks.jsonl'))
        self.assertEqual(len(read_metrics(self.dir / 'stage2_metrics.jsonl')), 3)

        self._call('eval', '--checkpoint', str(self.dir / 'stage2_final.ckpt'),
                   '--tasks', str(self.dir / 'tasks.jsonl'), '--probes', str(self.dir / 'probes.jsonl'))
        report = json.loads((self.dir / 'eval_report.json').read_text())
        self.assertEqual(report['n_ablated'], 1)

        self._call('report', '--format', 'xlsx')
        self.assertTrue((self.dir / 'report.xlsx').exists())

    def test_screen_command(self):
        self._call('screen')
        lines = (self.dir / 'screen.jsonl').read_text().strip().splitlines()
        decisions = [json.loads(line)['decision'] for line in lines]
        self.assertEqual(sorted(decisions), ['clean', 'clean', 'leaked', 'leaked'])


@skipUnless(settings.RLVR_RUN_ACCEPTANCE, 'Set RLVR_RUN_ACCEPTANCE=True for full-scale training runs')
class AcceptanceTests(SimpleTestCase):

    def test_stage1_learns_modular_arithmetic(self):
        config = parse_run_config(
            {'sampling': {'k': 1}, 'length': {'enabled': False}, 'stage1': {'phase_switch': 1.0}}, seed=0,
        )
        with tempfile.TemporaryDirectory() as tmp:
            result = Stage1Trainer(config, tmp).run()
        self.assertGreaterEqual(result.final_metrics['greedy_accuracy'], 0.9)

    def _stage1(self, data):
        with tempfile.TemporaryDirectory() as tmp:
            return Stage1Trainer(parse_run_config(data, seed=0), tmp).run()

    def test_diversity_reward_keeps_open_answers_apart(self):
        base = {
            'suite': {'probe_train_count': 40},
            'sampling': {'k': 1},
            'length': {'enabled': False},
        }
        pass1_only = self._stage1({**base, 'stage1': {'phase_switch': 1.0}})
        diverse = self._stage1({**base, 'stage1': {'phase_switch': 0.4}})
        self.assertEqual(diverse.metrics[-1].phase, 'late_diversity')
        self.assertGreaterEqual(
            diverse.final_metrics['distinct_count'], pass1_only.final_metrics['distinct_count'],
        )
        self.assertGreaterEqual(
            diverse.final_metrics['greedy_accuracy'], pass1_only.final_metrics['greedy_accuracy'] - 0.02,
        )

    def test_length_term_shortens_rollouts(self):
        # l_max / l_soft keep the 4:1 ratio of 512 / 128, scaled to rollouts capped at 32 tokens
        base = {'sampling': {'k': 1}, 'stage1': {'phase_switch': 1.0}}
        shaped = self._stage1({**base, 'length': {'enabled': True, 'l_max': 24, 'l_soft': 6, 'w_len': 0.5}})
        unshaped = self._stage1({**base, 'length': {'enabled': False}})

        def run_p95(result):
            return float(np.mean([r.p95_length for r in result.metrics if r.p95_length is not None]))

        self.assertLess(run_p95(shaped), run_p95(unshaped))
        self.assertLessEqual(shaped.metrics[-1].mean_length, 24)
        self.assertLessEqual(
            abs(shaped.final_metrics['greedy_accuracy'] - unshaped.final_metrics['greedy_accuracy']), 0.02,
        )

    def test_stage2_aligns_preferences(self):
        config = parse_run_config({'suite': {'context_count': 40}, 'stage1': {'iterations': 0}}, seed=0)
        with tempfile.TemporaryDirectory() as tmp:
            stage1 = Stage1Trainer(config, tmp).run()
            suite = build_task_suite(config.suite, config.seed)
            pairs = build_preference_pairs(suite, config.seed, config.stage2.styles)
            result = Stage2Trainer(config, tmp, stage1.params, pairs, suite.eval_tasks).run()
        first, last = result.metrics[0], result.metrics[-1]
        self.assertGreaterEqual(last.preference_accuracy, 0.95)
        self.assertGreaterEqual(last.held_out_accuracy, 0.80)
        self.assertGreater(last.abstention_rate, first.abstention_rate)
