"""
Two-stage training pipeline

Stage-1 runs online GSPO on verified rollout groups with phase-switched hybrid
advantages; Stage-2 runs reference-free DPO on preference pairs. Stage
boundaries are checkpoint files.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from curation.filters import rejection_filter
from curation.reports import CurationDecision, CurationRecord, write_curation_report
from curation.sampling import TierReport, fill_informative_batch, resample_weights
from curation.screening import PromptOracleResponder, Responder, ScreenResult, leakage_screen
from optim.objectives import dpo_loss_grad, gspo_loss_grad, preference_accuracy, tokenize_pairs
from optim.updates import MomentumState, apply_update
from policy.checkpoint import load_checkpoint, save_checkpoint
from policy.engine import PolicyParams, derive_seed, feature_dim_for, init_policy, snapshot
from policy.vocabulary import Vocabulary
from rewards.engine import Phase, hybrid_advantage, phase_for_iteration, score_group
from taskforge.generators import gen_arith_tasks, gen_context_tasks, gen_probe_tasks
from taskforge.records import PreferencePair, Task
from taskforge.storage import read_pairs, read_tasks
from taskforge.transforms import ablate_context, make_preference_pairs, mix_text_only

from .config import RunConfig, SuiteConfig
from .dispatch import RolloutDispatcher, RolloutRequest
from .evaluation import Evaluator
from .metrics import MetricsRecord, MetricsWriter, Stage

logger = logging.getLogger(__name__)


class PipelineInvariantError(RuntimeError):
    """A training-loop invariant was violated"""


@dataclass
class TaskSuite:
    pool: List[Task]
    ablated: List[Task] = field(default_factory=list)
    probes: List[Task] = field(default_factory=list)
    screen_results: List[ScreenResult] = field(default_factory=list)

    @property
    def leaked_ids(self) -> frozenset:
        return frozenset(r.task_id for r in self.screen_results if r.leaked)

    @property
    def eval_tasks(self) -> List[Task]:
        return list(self.pool) + list(self.ablated)

    @property
    def all_tasks(self) -> List[Task]:
        return self.eval_tasks + list(self.probes)


def build_task_suite(suite: SuiteConfig, seed: int, responder: Optional[Responder] = None) -> TaskSuite:
    """
    Generate, mix and screen the task suite of a run

    Leaked evidence-bearing tasks are dropped; a fraction of the clean ones is
    ablated for abstention training and evaluation only.
    """
    responder = responder or PromptOracleResponder()
    pool = mix_text_only(gen_arith_tasks(suite.arith_count, suite.modulus, seed), suite.text_only_fraction, seed + 1)

    screen_results = []
    clean = []
    if suite.context_count:
        for task in gen_context_tasks(suite.context_count, suite.modulus, seed + 2, suite.leak_fraction):
            result = leakage_screen(task, responder, suite.screen_trials, suite.screen_threshold, seed)
            screen_results.append(result)
            if not result.leaked:
                clean.append(task)
        pool.extend(clean)

    ablated = []
    n_ablated = math.floor(suite.ablation_fraction * len(clean) + 1e-9)
    if n_ablated:
        rng = np.random.default_rng(derive_seed(seed, 'ablate'))
        picks = sorted(int(i) for i in rng.choice(len(clean), size=n_ablated, replace=False))
        ablated = [ablate_context(clean[i]) for i in picks]

    probes = gen_probe_tasks(suite.probe_count, suite.modulus, seed + 3) if suite.probe_count else []
    if suite.probe_train_count:
        # Multi-answer training tasks, drawn from a separate stream from the evaluation probes
        pool.extend(gen_probe_tasks(suite.probe_train_count, suite.modulus, seed + 4))
    logger.info(
        f"Task suite: {len(pool)} training tasks, {len(ablated)} ablated, {len(probes)} probes, "
        f"{len(screen_results) - len(clean)} leaked"
    )
    return TaskSuite(pool=pool, ablated=ablated, probes=probes, screen_results=screen_results)


def build_preference_pairs(suite: TaskSuite, seed: int, styles: Sequence[str]) -> List[PreferencePair]:
    return make_preference_pairs(suite.eval_tasks, seed, styles)


@dataclass
class StageResult:
    params: PolicyParams
    checkpoint_path: Path
    metrics: List[MetricsRecord]

    @property
    def iterations_completed(self) -> int:
        return len(self.metrics)

    @property
    def final_metrics(self) -> Dict:
        return self.metrics[-1].to_record() if self.metrics else {}


def initial_policy(config: RunConfig, vocabulary: Vocabulary) -> PolicyParams:
    feature_dim = feature_dim_for(vocabulary.size, config.policy.hash_width)
    params = init_policy(vocabulary.size, feature_dim, config.seed)
    if config.policy.freeze_prompt_block:
        params.freeze(cols=params.prompt_columns())
    return params


def _p95(values) -> Optional[float]:
    return float(np.percentile(values, 95)) if len(values) else None


class Stage1Trainer:
    """Online GSPO with Ratio-EMA batch fill and tier-weighted task draws"""

    def __init__(self, config: RunConfig, out_dir, workers: int = 1,
                 suite: Optional[TaskSuite] = None, params: Optional[PolicyParams] = None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.dispatcher = RolloutDispatcher(workers)
        self.vocabulary = Vocabulary.for_modulus(config.suite.modulus)
        self.suite = suite if suite is not None else build_task_suite(config.suite, config.seed)
        self.params = params if params is not None else initial_policy(config, self.vocabulary)
        if self.params.vocab_size != self.vocabulary.size:
            raise ValueError(
                f"Policy vocabulary {self.params.vocab_size} does not match the token table {self.vocabulary.size}"
            )
        if not self.suite.pool:
            raise ValueError("Stage-1 needs at least one training task")
        self.task_map = {task.id: task for task in self.suite.all_tasks}
        self.div_cfg = config.diversity.build()
        self.len_cfg = config.length.build()
        self.tiers = TierReport()
        self.last_decisions: Dict[str, CurationDecision] = {}

    def _check_batch_tasks(self, tasks: Sequence[Task]):
        leaked = self.suite.leaked_ids
        offending = sorted({task.id for task in tasks if task.id in leaked})
        if offending:
            raise PipelineInvariantError(f"Leaked tasks reached a Stage-1 batch: {offending}")

    def _draw_groups(self, old: PolicyParams, iteration: int, round_index: int, count: int,
                     probs: Optional[np.ndarray]):
        cfg = self.config
        pool = self.suite.pool
        rng = np.random.default_rng(derive_seed(cfg.seed, 'draw', iteration, round_index))
        tasks = [pool[int(i)] for i in rng.choice(len(pool), size=count, replace=True, p=probs)]
        self._check_batch_tasks(tasks)

        n = cfg.sampling.n_rollout
        requests = [
            RolloutRequest(task, derive_seed(cfg.seed, iteration, round_index, j, task.id, r))
            for j, task in enumerate(tasks)
            for r in range(n)
        ]
        rollouts = self.dispatcher.generate(
            old, self.vocabulary, cfg.suite.modulus, requests,
            cfg.sampling.max_len, cfg.sampling.temperature, cfg.sampling.redundancy,
        )
        groups = [score_group(task, rollouts[j * n:(j + 1) * n]) for j, task in enumerate(tasks)]
        for group in groups:
            if group.n_neg == 0:
                self.last_decisions[group.task_id] = CurationDecision.DROPPED_ALL_CORRECT
            elif group.n_neg == group.n_rollout:
                self.last_decisions[group.task_id] = CurationDecision.DROPPED_ALL_WRONG
            else:
                self.last_decisions[group.task_id] = CurationDecision.KEPT
        return groups

    def _advantages(self, groups, phase: Phase):
        """(batch, degenerate count); groups whose Pass@k spread is zero are left out of the batch"""
        cfg = self.config
        batch = []
        n_degenerate = 0
        for group in groups:
            advantage = hybrid_advantage(group, phase, cfg.sampling.k, self.div_cfg, self.len_cfg, cfg.length.w_len)
            if advantage.degenerate:
                n_degenerate += 1
                continue
            batch.append((group, advantage.values))
        return batch, n_degenerate

    def run(self) -> StageResult:
        cfg = self.config
        stage_cfg = cfg.stage1
        params = self.params
        old = snapshot(params)
        momentum = MomentumState()
        rho_state = cfg.ratio_ema
        writer = MetricsWriter(self.out_dir, 'stage1')
        pool_ids = [task.id for task in self.suite.pool]
        evaluator = Evaluator(params, self.vocabulary, cfg.sampling.max_len, cfg.sampling.redundancy,
                              cfg.sampling.temperature)
        best_accuracy, since_best = -1.0, 0

        logger.info(
            f"Stage-1: {stage_cfg.iterations} iterations, {len(pool_ids)} tasks, "
            f"G={cfg.sampling.groups_per_batch}, N={cfg.sampling.n_rollout}, k={cfg.sampling.k}"
        )
        for iteration in range(stage_cfg.iterations):
            started = time.perf_counter()
            phase = phase_for_iteration(iteration, stage_cfg.iterations, stage_cfg.phase_switch)
            probs = resample_weights(self.tiers, cfg.tier_weights, pool_ids) if stage_cfg.tier_resampling else None

            drawn = []

            def draw(round_index, count):
                groups = self._draw_groups(old, iteration, round_index, count, probs)
                drawn.extend(groups)
                return groups

            fill = fill_informative_batch(rho_state, cfg.sampling.groups_per_batch, draw)
            rho_state = fill.state
            self.tiers.record_groups(drawn)
            # Re-check the admitted batch itself against the filter
            if len(rejection_filter(fill.groups).kept) != len(fill.groups):
                raise PipelineInvariantError("Non-informative group admitted to the batch")

            batch, n_degenerate = self._advantages(fill.groups, phase)
            loss = None
            if batch:
                for _ in range(stage_cfg.epochs_per_batch):
                    loss, grad = gspo_loss_grad(params, old, batch, cfg.clip, self.task_map)
                    apply_update(params, grad, cfg.optim, momentum)
            else:
                logger.warning(f"Stage-1 iteration {iteration}: no groups with a learning signal, update skipped")

            if (iteration + 1) % stage_cfg.snapshot_interval == 0:
                old = snapshot(params)

            accuracy = evaluator.greedy_accuracy(self.suite.pool)
            lengths = [r.length for g in drawn for r in g.rollouts]
            truncated = [r.truncated_by_redundancy for g in drawn for r in g.rollouts]
            advantages = np.concatenate([values for _, values in batch]) if batch else np.zeros(0)
            record = MetricsRecord(
                stage=Stage.STAGE1.value,
                iteration=iteration,
                loss=loss,
                greedy_accuracy=accuracy,
                mean_length=float(np.mean(lengths)) if lengths else None,
                p95_length=_p95(lengths),
                informative_fraction=fill.informative_fraction,
                rho=rho_state.rho,
                mean_abs_advantage=float(np.abs(advantages).mean()) if advantages.size else None,
                distinct_count=evaluator.mean_distinct_count(
                    self.suite.probes, cfg.evaluation.probe_samples, cfg.seed, self.div_cfg,
                ),
                phase=phase.value,
                n_groups=len(batch),
                n_drawn=fill.n_drawn,
                n_degenerate=n_degenerate,
                truncated_fraction=float(np.mean(truncated)) if truncated else None,
                policy_version=params.version,
            )
            writer.write(record, (time.perf_counter() - started) * 1000.0)
            logger.info(
                f"Stage-1 iteration {iteration} [{phase.value}]: accuracy {accuracy:.3f}, "
                f"loss {loss if loss is None else round(loss, 6)}, rho {rho_state.rho:.3f}"
            )

            if stage_cfg.patience:
                if accuracy > best_accuracy:
                    best_accuracy, since_best = accuracy, 0
                else:
                    since_best += 1
                if since_best >= stage_cfg.patience:
                    logger.info(f"Stage-1 plateaued for {since_best} iterations; stopping at {iteration}")
                    break

        checkpoint_path = save_checkpoint(params, self.out_dir / 'stage1_final.ckpt')
        write_curation_report(self.out_dir / 'stage1_curation.jsonl', self.curation_records())
        return StageResult(params, checkpoint_path, writer.records)

    def curation_records(self) -> List[CurationRecord]:
        records = [
            CurationRecord.from_screen(result, self.tiers.tier_of(result.task_id))
            for result in self.suite.screen_results
        ]
        records.extend(
            CurationRecord(task.id, self.last_decisions[task.id], self.tiers.tier_of(task.id))
            for task in self.suite.pool
            if task.id in self.last_decisions
        )
        return records


class Stage2Trainer:
    """Offline reference-free DPO over preference pairs"""

    def __init__(self, config: RunConfig, out_dir, params: PolicyParams,
                 pairs: Sequence[PreferencePair], tasks: Sequence[Task]):
        if not pairs:
            raise ValueError("Stage-2 needs at least one preference pair")
        self.config = config
        self.out_dir = Path(out_dir)
        self.params = params
        self.vocabulary = Vocabulary.for_modulus(config.suite.modulus)
        if params.vocab_size != self.vocabulary.size:
            raise ValueError(
                f"Checkpoint vocabulary {params.vocab_size} does not match the token table {self.vocabulary.size}"
            )
        self.tasks = list(tasks)
        tokenized = tokenize_pairs(pairs, {task.id: task for task in self.tasks}, self.vocabulary)

        rng = np.random.default_rng(derive_seed(config.seed, 'stage2-split'))
        order = rng.permutation(len(tokenized))
        n_held = min(math.floor(config.stage2.held_out_fraction * len(tokenized) + 1e-9), len(tokenized) - 1)
        self.held_out = [tokenized[int(i)] for i in order[:n_held]]
        self.train = [tokenized[int(i)] for i in order[n_held:]]

    @classmethod
    def from_files(cls, config: RunConfig, out_dir, checkpoint_path, pairs_path=None, tasks_path=None):
        params = load_checkpoint(checkpoint_path)
        suite = None
        if tasks_path is not None:
            tasks = read_tasks(tasks_path)
        else:
            suite = build_task_suite(config.suite, config.seed)
            tasks = suite.eval_tasks
        if pairs_path is not None:
            pairs = read_pairs(pairs_path)
        else:
            suite = suite or TaskSuite(pool=[t for t in tasks if not t.is_ablated],
                                       ablated=[t for t in tasks if t.is_ablated])
            pairs = build_preference_pairs(suite, config.seed, config.stage2.styles)
        return cls(config, out_dir, params, pairs, tasks)

    def _record(self, epoch: int, loss: Optional[float], evaluator: Evaluator) -> MetricsRecord:
        return MetricsRecord(
            stage=Stage.STAGE2.value,
            iteration=epoch,
            loss=loss,
            preference_accuracy=preference_accuracy(self.params, self.train),
            held_out_accuracy=preference_accuracy(self.params, self.held_out) if self.held_out else None,
            abstention_rate=evaluator.abstention_rate(self.tasks),
            policy_version=self.params.version,
        )

    def run(self) -> StageResult:
        cfg = self.config
        params = self.params
        momentum = MomentumState()
        writer = MetricsWriter(self.out_dir, 'stage2')
        evaluator = Evaluator(params, self.vocabulary, cfg.sampling.max_len, cfg.sampling.redundancy)
        batch_size = cfg.stage2.batch_size

        # Epoch 0 records the incoming policy
        started = time.perf_counter()
        initial_loss, _ = dpo_loss_grad(params, self.train, cfg.optim.beta)
        writer.write(self._record(0, initial_loss, evaluator), (time.perf_counter() - started) * 1000.0)

        logger.info(f"Stage-2: {cfg.stage2.epochs} epochs over {len(self.train)} pairs ({len(self.held_out)} held out)")
        for epoch in range(1, cfg.stage2.epochs + 1):
            started = time.perf_counter()
            order = np.random.default_rng(derive_seed(cfg.seed, 'stage2', epoch)).permutation(len(self.train))
            losses = []
            for start in range(0, len(order), batch_size):
                minibatch = [self.train[int(i)] for i in order[start:start + batch_size]]
                loss, grad = dpo_loss_grad(params, minibatch, cfg.optim.beta)
                apply_update(params, grad, cfg.optim, momentum)
                losses.append(loss)
            record = self._record(epoch, float(np.mean(losses)), evaluator)
            writer.write(record, (time.perf_counter() - started) * 1000.0)
            logger.info(
                f"Stage-2 epoch {epoch}: loss {record.loss:.6f}, preference accuracy {record.preference_accuracy:.3f}"
            )

        checkpoint_path = save_checkpoint(params, self.out_dir / 'stage2_final.ckpt')
        return StageResult(params, checkpoint_path, writer.records)


def run_stage1(config: RunConfig, out_dir, workers: int = 1) -> StageResult:
    return Stage1Trainer(config, out_dir, workers=workers).run()


def run_stage2(config: RunConfig, out_dir, checkpoint_path, pairs_path=None, tasks_path=None) -> StageResult:
    return Stage2Trainer.from_files(config, out_dir, checkpoint_path, pairs_path, tasks_path).run()
