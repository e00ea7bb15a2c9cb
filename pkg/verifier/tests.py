from django.test import SimpleTestCase

from taskforge.generators import gen_arith_tasks

from .answers import (
    ABSTAIN,
    Verdict,
    VerdictReason,
    extract_boxed,
    normalize_answer,
    verify,
)


class ExtractBoxedTests(SimpleTestCase):

    def test_plain_box(self):
        self.assertEqual(extract_boxed("so the answer is \\boxed{42}"), "42")

    def test_last_box_wins(self):
        self.assertEqual(extract_boxed("\\boxed{1} then later \\boxed{7}"), "7")

    def test_no_box(self):
        self.assertIsNone(extract_boxed("no box here"))

    def test_nested_braces_are_balanced(self):
        self.assertEqual(extract_boxed("\\boxed{\\frac{1}{2}}"), "\\frac{1}{2}")

    def test_unbalanced_last_box_is_absent(self):
        self.assertIsNone(extract_boxed("\\boxed{3} and \\boxed{4"))

    def test_content_is_trimmed(self):
        self.assertEqual(extract_boxed("\\boxed{  5 }"), "5")


class NormalizeAnswerTests(SimpleTestCase):

    def test_leading_zeros(self):
        self.assertEqual(normalize_answer("007"), "7")
        self.assertEqual(normalize_answer("-0"), "0")

    def test_whitespace_and_case(self):
        self.assertEqual(normalize_answer("  New   York "), "new york")


class VerifyTests(SimpleTestCase):

    def test_leading_zero_match(self):
        verdict = verify("\\boxed{007}", "7")
        self.assertEqual(verdict.reward, 1)
        self.assertEqual(verdict.reason, VerdictReason.MATCH)

    def test_mismatch(self):
        verdict = verify("\\boxed{8}", "7")
        self.assertEqual(verdict.reward, 0)
        self.assertEqual(verdict.reason, VerdictReason.MISMATCH)

    def test_abstain_sentinel(self):
        verdict = verify(f"\\boxed{{{ABSTAIN}}}", ABSTAIN)
        self.assertEqual(verdict.reward, 1)
        self.assertEqual(verdict.reason, VerdictReason.ABSTAIN_MATCH)

    def test_abstain_is_case_insensitive(self):
        self.assertEqual(verify("\\boxed{<abstain>}", ABSTAIN).reward, 1)

    def test_refusal_phrase_without_box(self):
        verdict = verify("It cannot be determined from the question.", ABSTAIN)
        self.assertEqual(verdict.reward, 1)
        self.assertEqual(verdict.reason, VerdictReason.ABSTAIN_MATCH)

    def test_no_box_on_answerable_task(self):
        verdict = verify("I cannot answer", "3")
        self.assertEqual(verdict.reward, 0)
        self.assertEqual(verdict.reason, VerdictReason.NO_BOX)

    def test_abstaining_on_answerable_task(self):
        verdict = verify(f"\\boxed{{{ABSTAIN}}}", "3")
        self.assertEqual(verdict.reward, 0)
        self.assertEqual(verdict.reason, VerdictReason.ABSTAIN_MISMATCH)

    def test_fabricated_answer_on_ablated_task(self):
        verdict = verify("the answer is clearly \\boxed{4}", ABSTAIN)
        self.assertEqual(verdict.reward, 0)
        self.assertEqual(verdict.reason, VerdictReason.ABSTAIN_MISMATCH)

    def test_alternates_are_accepted(self):
        self.assertEqual(verify("\\boxed{5}", "1", alternates=("3", "5")).reward, 1)

    def test_trailing_whitespace_is_irrelevant(self):
        self.assertEqual(verify("\\boxed{2}   \n", "2"), verify("\\boxed{2}", "2"))

    def test_empty_ground_truth_rejected(self):
        with self.assertRaises(ValueError):
            verify("\\boxed{1}", " ")

    def test_verdict_invariant(self):
        with self.assertRaises(ValueError):
            Verdict("1", 1, VerdictReason.MISMATCH)

    def test_exhaustive_numeric_answers(self):
        for modulus in (2, 7, 10, 16):
            for task in gen_arith_tasks(20, modulus, seed=modulus):
                for candidate in range(modulus):
                    expected = int(str(candidate) == task.ground_truth)
                    self.assertEqual(verify(f"\\boxed{{{candidate}}}", task.ground_truth).reward, expected)

