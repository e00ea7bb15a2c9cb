import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from verifier.answers import ABSTAIN, extract_boxed, verify

from .generators import apply_operator, gen_arith_tasks, gen_context_tasks, gen_logic_tasks, gen_probe_tasks
from .records import BOXED_INSTRUCTION, PreferenceAttribute, PreferencePair, Task, append_boxed_instruction
from .storage import read_pairs, read_tasks, write_pairs, write_tasks
from .transforms import ablate_context, make_preference_pairs, mix_text_only, to_cloze


def _operands(task):
    inner = task.prompt.split('(')[1].split(')')[0].split()
    return int(inner[0]), int(inner[2])


class ArithmeticTaskTests(SimpleTestCase):

    def test_ground_truth_matches_oracle(self):
        for seed in (0, 7, 11):
            for task in gen_arith_tasks(100, 10, seed):
                a, b = _operands(task)
                op = next(tag.split(':')[1] for tag in task.tags if tag.startswith('op:'))
                self.assertEqual(task.ground_truth, str(apply_operator(op, a, b, 10)))

    def test_single_task_seed_seven(self):
        task = gen_arith_tasks(1, 10, seed=7)[0]
        a, b = _operands(task)
        symbol = task.prompt.split('(')[1].split()[1]
        expected = {'+': a + b, '-': a - b, '*': a * b}[symbol] % 10
        self.assertEqual(task.ground_truth, str(expected))

    def test_prompt_ends_with_instruction(self):
        for task in gen_arith_tasks(10, 10, 1):
            self.assertTrue(task.prompt.endswith(BOXED_INSTRUCTION))

    def test_deterministic(self):
        self.assertEqual(gen_arith_tasks(100, 10, 7), gen_arith_tasks(100, 10, 7))

    def test_invalid_requests(self):
        with self.assertRaises(ValueError):
            gen_arith_tasks(0, 10, 7)
        with self.assertRaises(ValueError):
            gen_arith_tasks(5, 1, 7)


class TaskFamilyTests(SimpleTestCase):

    def test_context_tasks_hide_operands(self):
        for task in gen_context_tasks(20, 10, 3, leak_fraction=0.0):
            self.assertTrue(task.requires_context)
            self.assertNotIn('first =', task.prompt)
            self.assertIn('first =', task.context)

    def test_leak_fraction(self):
        tasks = gen_context_tasks(20, 10, 3, leak_fraction=0.25)
        self.assertEqual(sum('first =' in t.prompt for t in tasks), 5)

    def test_logic_tasks_are_text_only(self):
        tasks = gen_logic_tasks(12, 4)
        self.assertEqual(len(tasks), 12)
        for task in tasks:
            self.assertTrue(task.is_text_only)
            self.assertIn(task.ground_truth, ('true', 'false'))

    def test_probe_tasks_have_three_answers(self):
        for task in gen_probe_tasks(10, 10, 5):
            self.assertGreaterEqual(len(task.accepted_answers), 3)
            for answer in task.accepted_answers:
                self.assertEqual(verify(f"\\boxed{{{answer}}}", task.ground_truth, task.alternates).reward, 1)

    def test_probe_modulus_too_small(self):
        with self.assertRaises(ValueError):
            gen_probe_tasks(2, 5, 0)


class TaskRecordTests(SimpleTestCase):

    def test_missing_context_requires_abstain(self):
        with self.assertRaises(ValueError):
            Task(id='t', prompt='q', ground_truth='3', requires_context=True)

    def test_empty_ground_truth(self):
        with self.assertRaises(ValueError):
            Task(id='t', prompt='q', ground_truth='')

    def test_append_instruction_is_idempotent(self):
        once = append_boxed_instruction("What is 2?")
        self.assertEqual(append_boxed_instruction(once), once)
        self.assertTrue(once.endswith(BOXED_INSTRUCTION))


class ClozeTests(SimpleTestCase):

    def test_capital(self):
        task = to_cloze("Capital of France?", [('A', 'Paris'), ('B', 'Rome')], 'A')
        self.assertEqual(task.prompt, f"Capital of France? {BOXED_INSTRUCTION}")
        self.assertEqual(task.ground_truth, 'Paris')
        self.assertNotIn('Rome', task.prompt)

    def test_mapping_options(self):
        self.assertEqual(to_cloze("2+2?", {'A': '4', 'B': '5'}, 'A').ground_truth, '4')

    def test_duplicate_contents(self):
        with self.assertRaises(ValueError):
            to_cloze("Pick", [('A', 'same'), ('B', 'Same')], 'A')

    def test_missing_label(self):
        with self.assertRaises(ValueError):
            to_cloze("Pick", [('A', 'x'), ('B', 'y')], 'C')


class AblationTests(SimpleTestCase):

    def setUp(self):
        self.task = gen_context_tasks(1, 10, 9)[0]

    def test_ablated_variant(self):
        ablated = ablate_context(self.task)
        self.assertIsNone(ablated.context)
        self.assertTrue(ablated.requires_context)
        self.assertEqual(ablated.ground_truth, ABSTAIN)
        self.assertNotEqual(ablated.id, self.task.id)
        self.assertTrue(ablated.is_ablated)

    def test_double_ablation_is_an_error(self):
        with self.assertRaises(ValueError):
            ablate_context(ablate_context(self.task))

    def test_text_task_cannot_be_ablated(self):
        with self.assertRaises(ValueError):
            ablate_context(gen_arith_tasks(1, 10, 0)[0])

    def test_ablated_rewards(self):
        ablated = ablate_context(self.task)
        self.assertEqual(verify("\\boxed{4}", ablated.ground_truth).reward, 0)
        self.assertEqual(verify(f"\\boxed{{{ABSTAIN}}}", ablated.ground_truth).reward, 1)


class PreferencePairTests(SimpleTestCase):

    def test_conciseness_pairs(self):
        tasks = gen_arith_tasks(20, 10, 2)
        for task, pair in zip(tasks, make_preference_pairs(tasks, seed=1)):
            self.assertEqual(pair.attribute, PreferenceAttribute.CONCISENESS)
            self.assertEqual(extract_boxed(pair.chosen), task.ground_truth)
            self.assertEqual(extract_boxed(pair.rejected), task.ground_truth)
            self.assertGreaterEqual(len(pair.rejected.split()), 3 * len(pair.chosen.split()))

    def test_abstention_pairs(self):
        ablated = [ablate_context(t) for t in gen_context_tasks(5, 10, 2)]
        for task, pair in zip(ablated, make_preference_pairs(ablated, seed=1)):
            self.assertEqual(pair.attribute, PreferenceAttribute.ABSTENTION)
            self.assertEqual(verify(pair.chosen, task.ground_truth).reward, 1)
            self.assertEqual(verify(pair.rejected, task.ground_truth).reward, 0)

    def test_styles_cycle(self):
        tasks = gen_arith_tasks(6, 10, 2)
        styles = ('conciseness', 'fluency', 'style-compliance')
        pairs = make_preference_pairs(tasks, seed=1, styles=styles)
        self.assertEqual([p.attribute.value for p in pairs], list(styles) * 2)

    def test_deterministic(self):
        tasks = gen_arith_tasks(10, 10, 2)
        self.assertEqual(make_preference_pairs(tasks, 5), make_preference_pairs(tasks, 5))

    def test_empty_input(self):
        with self.assertRaises(ValueError):
            make_preference_pairs([], 0)

    def test_identical_responses_rejected(self):
        with self.assertRaises(ValueError):
            PreferencePair('t', '\\boxed{1}', '\\boxed{1}', PreferenceAttribute.CONCISENESS)


class MixTextOnlyTests(SimpleTestCase):

    def test_zero_fraction(self):
        tasks = gen_arith_tasks(10, 10, 0)
        self.assertEqual(mix_text_only(tasks, 0.0, 1), tasks)

    def test_quarter_fraction(self):
        mixed = mix_text_only(gen_arith_tasks(100, 10, 0), 0.25, 1)
        self.assertEqual(len(mixed), 125)
        self.assertEqual(sum(t.is_text_only for t in mixed), 25)
        self.assertTrue(all(not t.requires_context for t in mixed))

    def test_empty_list(self):
        self.assertEqual(mix_text_only([], 1.0, 1), [])

    def test_invalid_fraction(self):
        with self.assertRaises(ValueError):
            mix_text_only(gen_arith_tasks(4, 10, 0), 1.5, 1)


class StorageTests(SimpleTestCase):

    def test_tasks_and_pairs_survive_ndjson(self):
        tasks = gen_arith_tasks(3, 10, 0) + gen_probe_tasks(2, 10, 0) + [ablate_context(gen_context_tasks(1, 10, 0)[0])]
        pairs = make_preference_pairs(tasks, 0)
        with tempfile.TemporaryDirectory() as tmp:
            write_tasks(Path(tmp) / 'tasks.jsonl', tasks)
            write_pairs(Path(tmp) / 'pairs.jsonl', pairs)
            self.assertEqual(read_tasks(Path(tmp) / 'tasks.jsonl'), tasks)
            self.assertEqual(read_pairs(Path(tmp) / 'pairs.jsonl'), pairs)
