from curation.reports import CurationRecord, write_curation_report
from harness.pipeline import build_preference_pairs, build_task_suite
from taskforge.storage import write_pairs, write_tasks

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Generate the task suite, its ablated variants, probes and preference pairs'

    def run(self, config, out_dir, options):
        suite = build_task_suite(config.suite, config.seed)
        write_tasks(out_dir / 'tasks.jsonl', suite.eval_tasks)
        write_tasks(out_dir / 'probes.jsonl', suite.probes)
        write_pairs(out_dir / 'pairs.jsonl', build_preference_pairs(suite, config.seed, config.stage2.styles))
        write_curation_report(
            out_dir / 'screen.jsonl',
            (CurationRecord.from_screen(result) for result in suite.screen_results),
        )
        self.stdout.write(self.style.SUCCESS(
            f"{len(suite.pool)} training tasks, {len(suite.ablated)} ablated, "
            f"{len(suite.probes)} probes, {len(suite.leaked_ids)} leaked -> {out_dir}"
        ))
