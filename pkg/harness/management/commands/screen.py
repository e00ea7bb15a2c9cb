from curation.reports import CurationRecord, write_curation_report
from curation.screening import PolicyResponder, PromptOracleResponder, leakage_screen
from policy.checkpoint import load_checkpoint
from policy.vocabulary import Vocabulary
from taskforge.generators import gen_context_tasks
from taskforge.storage import read_tasks

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Screen evidence-bearing tasks for answers that leak through the question text'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--tasks', default=None, help='Task file (default: generate context tasks from the config)')
        parser.add_argument('--checkpoint', default=None, help='Screen with this policy instead of the prompt oracle')

    def run(self, config, out_dir, options):
        suite_cfg = config.suite
        if options['tasks']:
            tasks = [t for t in read_tasks(options['tasks']) if t.requires_context and t.context is not None]
        elif suite_cfg.context_count:
            tasks = gen_context_tasks(suite_cfg.context_count, suite_cfg.modulus, config.seed + 2, suite_cfg.leak_fraction)
        else:
            tasks = []

        if options['checkpoint']:
            responder = PolicyResponder(
                load_checkpoint(options['checkpoint']),
                Vocabulary.for_modulus(suite_cfg.modulus),
                max_len=config.sampling.max_len,
                temperature=config.sampling.temperature,
                redundancy=config.sampling.redundancy,
            )
        else:
            responder = PromptOracleResponder()

        results = [
            leakage_screen(task, responder, suite_cfg.screen_trials, suite_cfg.screen_threshold, config.seed)
            for task in tasks
        ]
        write_curation_report(out_dir / 'screen.jsonl', (CurationRecord.from_screen(r) for r in results))
        leaked = sum(r.leaked for r in results)
        self.stdout.write(self.style.SUCCESS(f"Screened {len(results)} tasks: {leaked} leaked -> {out_dir}"))
