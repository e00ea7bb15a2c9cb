import json

from harness.evaluation import evaluate
from harness.pipeline import build_task_suite
from policy.checkpoint import load_checkpoint
from policy.vocabulary import Vocabulary
from taskforge.storage import read_tasks

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Evaluate a checkpoint: greedy accuracy, abstention rate, probe diversity, lengths'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--tasks', default=None, help='Evaluation tasks (default: config suite)')
        parser.add_argument('--probes', default=None, help='Probe tasks (default: config suite)')

    def run(self, config, out_dir, options):
        params = load_checkpoint(options['checkpoint'])
        suite = None
        if options['tasks'] is None or options['probes'] is None:
            suite = build_task_suite(config.suite, config.seed)
        tasks = read_tasks(options['tasks']) if options['tasks'] else suite.eval_tasks
        probes = read_tasks(options['probes']) if options['probes'] else suite.probes

        report = evaluate(
            params,
            Vocabulary.for_modulus(config.suite.modulus),
            tasks,
            probes,
            max_len=config.sampling.max_len,
            redundancy=config.sampling.redundancy,
            temperature=config.sampling.temperature,
            diversity=config.diversity.build(),
            probe_samples=config.evaluation.probe_samples,
            passk_samples=config.evaluation.passk_samples,
            passk_k=config.sampling.k,
            seed=config.seed,
        )
        path = out_dir / 'eval_report.json'
        path.write_text(json.dumps(report.to_record(), indent=2, sort_keys=True) + '\n', encoding='utf-8')
        self.stdout.write(json.dumps(report.to_record(), sort_keys=True))
        self.stdout.write(self.style.SUCCESS(f"Evaluation report -> {path}"))
