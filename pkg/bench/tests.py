import csv
import io
import math
import random
from collections import Counter
from functools import lru_cache

import torch
from django.conf import settings
from django.test import SimpleTestCase, override_settings, tag
from rest_framework.exceptions import ValidationError

from bang_toolkit.exceptions import ConfigError, CorpusError
from corpus.synth import synth_task
from corpus.vocab import SPECIAL_IDS
from decoding.engines import DecodeResult, ar_greedy, nar_decode
from modeling.config import ModelConfig
from modeling.network import BangModel

from .ablation import ARMS, AblationTable, ArmBudget, TrainingPlan, ablation_gate, ablation_run, _budgets
from .gates import acceptance_failures
from .latency import LatencyStats, measure_latency, speedups, timing_decoders
from .metrics import bleu, distinct_n, exact_match, overall, rouge_l, rouge_n, score_all
from .reports import EvalReport, evaluate_model

FAST_LATENCY = {**settings.BANG_TOOLKIT, 'LATENCY': {'WARMUP': 1, 'REPS': 2}}


# -- implementações escalares de referência ------------------------------

def ref_ngrams(tokens, n):
    grams = []
    for i in range(len(tokens) - n + 1):
        grams.append(tuple(tokens[i:i + n]))
    return grams


def ref_bleu(hypotheses, references, max_n=4):
    matches, totals = [0] * max_n, [0] * max_n
    for hyp, ref in zip(hypotheses, references):
        for n in range(1, max_n + 1):
            hyp_grams, ref_grams = ref_ngrams(hyp, n), ref_ngrams(ref, n)
            for gram in set(hyp_grams):
                matches[n - 1] += min(hyp_grams.count(gram), ref_grams.count(gram))
            totals[n - 1] += len(hyp_grams)
    log_sum = 0.0
    for n in range(1, max_n + 1):
        m, t = matches[n - 1], totals[n - 1]
        if n >= 2:
            m, t = m + 1, t + 1
        if t == 0 or m == 0:
            return 0.0
        log_sum += math.log(m / t)
    c = sum(len(h) for h in hypotheses)
    r = sum(len(ref) for ref in references)
    penalty = 1.0 if c >= r else math.exp(1 - r / c)
    return 100.0 * penalty * math.exp(log_sum / max_n)


def ref_lcs(a, b):
    @lru_cache(maxsize=None)
    def solve(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + solve(i + 1, j + 1)
        return max(solve(i + 1, j), solve(i, j + 1))
    return solve(0, 0)


def ref_rouge_l(hypotheses, references):
    scores = []
    for hyp, ref in zip(hypotheses, references):
        common = ref_lcs(tuple(hyp), tuple(ref))
        if common == 0:
            scores.append(0.0)
            continue
        p, r = common / len(hyp), common / len(ref)
        scores.append((1 + 1.2 * 1.2) * p * r / (r + 1.2 * 1.2 * p))
    return 100.0 * sum(scores) / len(scores)


def ref_distinct(hypotheses, n):
    seen, total = set(), 0
    for hyp in hypotheses:
        for gram in ref_ngrams(hyp, n):
            seen.add(gram)
            total += 1
    return 0.0 if total == 0 else 100.0 * len(seen) / total


def random_case(rng):
    size = rng.randint(1, 4)
    hyps = [[rng.choice('abcde') for _ in range(rng.randint(0, 8))] for _ in range(size)]
    refs = [[rng.choice('abcde') for _ in range(rng.randint(1, 8))] for _ in range(size)]
    return hyps, refs


class BleuTests(SimpleTestCase):
    """Testes do BLEU de corpus"""

    def test_identity_is_hundred(self):
        hyps = [['a', 'b', 'c', 'd', 'e'], ['x', 'y', 'z', 'w']]
        self.assertAlmostEqual(bleu(hyps, hyps), 100.0)

    def test_clipped_unigram_precision(self):
        # "the" aparece uma vez na referência: 1 de 4 unigramas conta
        self.assertAlmostEqual(bleu([['the'] * 4], [['the', 'cat']], max_n=1), 25.0)

    def test_disjoint_is_zero(self):
        self.assertEqual(bleu([['a', 'b', 'c']], [['x', 'y', 'z']]), 0.0)

    def test_brevity_penalty(self):
        score = bleu([['a', 'b']], [['a', 'b', 'c', 'd']], max_n=1)
        self.assertAlmostEqual(score, 100.0 * math.exp(1 - 4 / 2))

    def test_matches_scalar_reference(self):
        rng = random.Random(0)
        for _ in range(100):
            hyps, refs = random_case(rng)
            self.assertAlmostEqual(bleu(hyps, refs), ref_bleu(hyps, refs), delta=1e-9)

    def test_empty_corpus(self):
        with self.assertRaisesMessage(CorpusError, 'empty corpus'):
            bleu([], [])

    def test_count_mismatch(self):
        with self.assertRaises(CorpusError):
            bleu([['a']], [['a'], ['b']])


class RougeDistinctTests(SimpleTestCase):
    """Testes de ROUGE e Distinct"""

    def test_rouge_l_examples(self):
        self.assertAlmostEqual(rouge_l([['a', 'b']], [['a', 'b']]), 100.0)
        self.assertEqual(rouge_l([['a']], [['b']]), 0.0)
        p, r = 2 / 3, 1.0
        expected = 100.0 * (1 + 1.44) * p * r / (r + 1.44 * p)
        self.assertAlmostEqual(rouge_l([['a', 'b', 'c']], [['a', 'c']]), expected)

    def test_rouge_l_empty_sequences_score_zero(self):
        self.assertEqual(rouge_l([[]], [['a']]), 0.0)

    def test_rouge_l_matches_reference(self):
        rng = random.Random(1)
        for _ in range(100):
            hyps, refs = random_case(rng)
            self.assertEqual(rouge_l(hyps, refs), ref_rouge_l(hyps, refs))

    def test_rouge_n(self):
        self.assertAlmostEqual(rouge_n([['a', 'b', 'c']], [['a', 'b', 'c']], 2), 100.0)
        self.assertAlmostEqual(rouge_n([['a', 'a']], [['a', 'b']], 1), 50.0)
        self.assertEqual(rouge_n([['a']], [['a']], 2), 0.0)

    def test_distinct_examples(self):
        self.assertEqual(distinct_n([['a'], ['a'], ['a'], ['a']], 1), 25.0)
        self.assertEqual(distinct_n([['a', 'b', 'c'], ['d', 'e']], 1), 100.0)
        self.assertEqual(distinct_n([['a', 'b'], ['a', 'b']], 2), 50.0)
        self.assertEqual(distinct_n([[], []], 1), 0.0)

    def test_distinct_matches_reference(self):
        rng = random.Random(2)
        for _ in range(100):
            hyps, _ = random_case(rng)
            for n in (1, 2):
                self.assertEqual(distinct_n(hyps, n), ref_distinct(hyps, n))

    def test_exact_match_and_overall(self):
        self.assertEqual(exact_match([['a'], ['b']], [['a'], ['c']]), 50.0)
        self.assertEqual(overall({'ROUGE-1': 10.0, 'ROUGE-2': 20.0, 'ROUGE-L': 30.0, 'BLEU-4': 40.0}), 25.0)

    def test_score_all_in_percent_range(self):
        rng = random.Random(3)
        hyps, refs = random_case(rng)
        for name, value in score_all(hyps, refs).items():
            self.assertTrue(0.0 <= value <= 100.0, name)


class LatencyTests(SimpleTestCase):
    """Testes da medição de latência"""

    def test_warmup_discarded_and_passes_recorded(self):
        calls = Counter()

        def fake_decode(sample):
            calls[sample] += 1
            sum(range(2000))
            return DecodeResult([7] * sample, 0.0, forward_passes=sample)

        threads = torch.get_num_threads()
        stats = measure_latency(fake_decode, [3, 5], warmup=2, reps=4)
        self.assertEqual(stats.runs, 8)
        self.assertEqual(calls, Counter({3: 6, 5: 6}))
        self.assertEqual(stats.forward_passes, [3, 5])
        self.assertGreater(stats.median_ms, 0.0)
        self.assertGreaterEqual(stats.p90_ms, stats.median_ms)
        self.assertEqual(torch.get_num_threads(), threads)

    def test_needs_a_sample(self):
        with self.assertRaises(ConfigError):
            measure_latency(lambda s: None, [])

    def test_speedups(self):
        ratios = speedups({'ar': LatencyStats(20.0, 25.0, 1), 'nar': LatencyStats(2.0, 3.0, 1)})
        self.assertEqual(ratios, {'ar': 1.0, 'nar': 10.0})

    def test_fixed_length_timing_ignores_eos(self):
        model = BangModel(tiny_config()).eval()
        timed = timing_decoders(model, ['ar', 'nar', 'semi'], {'n_ar': 3}, latency_len=12)
        self.assertEqual(timed['ar']([7, 8, 9]).forward_passes, 12)
        self.assertEqual(timed['nar']([7, 8, 9]).forward_passes, 1)
        self.assertEqual(timed['semi']([7, 8, 9]).forward_passes, 4)

    def test_ar_baseline_is_greedy(self):
        model = BangModel(tiny_config()).eval()
        timed = timing_decoders(model, ['ar'], {'beam': 4, 'max_len': 10})
        greedy = ar_greedy(model, [7, 8, 9], max_len=10)
        result = timed['ar']([7, 8, 9])
        self.assertEqual((result.tokens, result.forward_passes), (greedy.tokens, greedy.forward_passes))

    def test_rejects_short_fixed_length(self):
        with self.assertRaises(ConfigError):
            timing_decoders(BangModel(tiny_config()), ['nar'], {}, latency_len=1)

    @tag('slow')
    def test_nar_faster_than_ar_for_long_outputs(self):
        model = BangModel(ModelConfig.desk(dropout=0.0, seed=0)).eval()
        with torch.no_grad():
            model.tok_emb.weight[sorted(SPECIAL_IDS)] = 0.0
        source = [7, 8, 9, 10, 11, 12]
        self.assertEqual(len(ar_greedy(model, source, max_len=16).tokens), 16)
        ar = measure_latency(lambda s: ar_greedy(model, s, max_len=16), [source], warmup=5, reps=50)
        nar = measure_latency(lambda s: nar_decode(model, s, max_len=16), [source], warmup=5, reps=50)
        self.assertEqual(ar.forward_passes, [16])
        self.assertEqual(nar.forward_passes, [1])
        self.assertLess(nar.median_ms, ar.median_ms)


def tiny_config(**overrides):
    return ModelConfig(
        enc_layers=1, dec_layers=1, d_model=16, n_heads=2, d_ffn=32, vocab_size=16,
        max_positions=80, n_streams=4, rel_buckets=8, rel_max_distance=16, dropout=0.0, seed=0,
        **overrides,
    )


class EvalReportTests(SimpleTestCase):
    """Testes do relatório de avaliação"""

    def sample_report(self):
        return EvalReport(
            metrics={'ar': {'BLEU-4': 12.5, 'ROUGE-L': 40.0}, 'nar': {'BLEU-4': 3.25, 'ROUGE-L': 20.0}},
            forward_passes={'ar': 6.5, 'nar': 1.0},
            latency={
                'ar': {'median_ms': 10.0, 'p90_ms': 12.0, 'runs': 50, 'mean_forward_passes': 6.5},
                'nar': {'median_ms': 1.0, 'p90_ms': 1.5, 'runs': 50, 'mean_forward_passes': 1.0},
            },
            speedup={'ar': 1.0, 'nar': 10.0},
            metadata={'config_hash': 'abc123', 'seed': 1, 'revision': 'unversioned',
                      'bleu_smoothing': 'add-one on n>=2', 'n_samples': 10},
        )

    def test_json_round_trip(self):
        report = self.sample_report()
        self.assertEqual(EvalReport.from_json(report.to_json()), report)

    def test_rejects_out_of_range_metric(self):
        report = self.sample_report()
        report.metrics['ar']['BLEU-4'] = 120.0
        with self.assertRaises(ValidationError):
            EvalReport.from_json(report.to_json())

    def test_rejects_non_positive_latency(self):
        report = self.sample_report()
        report.latency['nar']['median_ms'] = 0.0
        with self.assertRaises(ValidationError):
            EvalReport.from_json(report.to_json())

    def test_text_table(self):
        lines = self.sample_report().as_table().splitlines()
        self.assertTrue(lines[0].startswith('metric'))
        self.assertIn('BLEU-4', lines[2])
        self.assertIn('(10.0x)', next(line for line in lines if line.startswith('median ms')))
        self.assertEqual(len({len(line) for line in lines}), 1)

    @override_settings(BANG_TOOLKIT=FAST_LATENCY)
    def test_evaluate_model(self):
        dataset = synth_task('copy', 10, (3, 5), 30, seed=0)
        model = BangModel(tiny_config()).eval()
        report = evaluate_model(
            model, dataset.test, ['ar', 'nar', 'semi'], {'seed': 0},
            decode_options={'beam': 1, 'max_len': 8, 'n_ar': 2, 'n_nar': 6}, with_latency=True,
        )
        self.assertEqual(report.forward_passes['nar'], 1.0)
        self.assertLessEqual(report.forward_passes['semi'], 3.0)
        self.assertEqual(set(report.latency), {'ar', 'nar', 'semi'})
        self.assertEqual(report.metadata['n_samples'], 3)
        self.assertEqual(EvalReport.from_json(report.to_json()), report)

    @override_settings(BANG_TOOLKIT=FAST_LATENCY)
    def test_fixed_latency_length_reaches_gate(self):
        dataset = synth_task('copy', 10, (3, 5), 30, seed=0)
        model = BangModel(tiny_config()).eval()
        report = evaluate_model(
            model, dataset.test, ['ar', 'nar', 'semi'], {'seed': 0},
            decode_options={'beam': 4, 'max_len': 8, 'n_ar': 2, 'n_nar': 6}, with_latency=True, latency_len=16,
        )
        self.assertEqual(report.latency['ar']['mean_forward_passes'], 16.0)
        self.assertEqual(report.latency['nar']['mean_forward_passes'], 1.0)
        self.assertEqual(report.latency['semi']['mean_forward_passes'], 3.0)
        self.assertEqual(report.metadata['latency_len'], 16)
        gates = {**settings.BANG_TOOLKIT['GATES'], 'AR_EXACT_MATCH': 0.0, 'NAR_EXACT_MATCH': 0.0, 'SEMI_NAR_SLACK': 100.0}
        ar_ms, nar_ms = report.latency['ar']['median_ms'], report.latency['nar']['median_ms']
        failures = acceptance_failures(report, 2, gates)
        self.assertEqual(any('latency' in failure for failure in failures), nar_ms >= ar_ms)


class AblationTests(SimpleTestCase):
    """Testes do protocolo de ablação"""

    def test_single_budget_expands_to_arms(self):
        budgets = _budgets(ArmBudget(5, 7))
        self.assertEqual(budgets['scratch'], ArmBudget(0, 7))
        self.assertEqual({b.finetune_steps for b in budgets.values()}, {7})

    def test_mismatched_budgets_rejected(self):
        budgets = {arm: ArmBudget(5, 7) for arm in ARMS}
        budgets['scratch'] = ArmBudget(0, 7)
        budgets['bang'] = ArmBudget(5, 9)
        with self.assertRaisesMessage(ConfigError, 'mismatched budgets'):
            _budgets(budgets)

    def test_table_summary_and_csv(self):
        table = AblationTable([
            {'arm': 'bang', 'seed': 0, 'metric': 'BLEU-4', 'value': 10.0},
            {'arm': 'bang', 'seed': 1, 'metric': 'BLEU-4', 'value': 14.0},
            {'arm': 'scratch', 'seed': 0, 'metric': 'BLEU-4', 'value': 2.0},
            {'arm': 'scratch', 'seed': 1, 'metric': 'BLEU-4', 'value': 4.0},
        ])
        mean, stdev = table.summary()['bang']['BLEU-4']
        self.assertEqual(mean, 12.0)
        self.assertAlmostEqual(stdev, math.sqrt(8.0))
        self.assertTrue(ablation_gate(table, 3.0))
        self.assertFalse(ablation_gate(table, 10.0))
        rows = list(csv.DictReader(io.StringIO(table.to_csv())))
        self.assertEqual(rows[0], {'arm': 'bang', 'seed': '0', 'metric': 'BLEU-4', 'value': '10.0'})

    def test_quick_run_is_reproducible(self):
        dataset = synth_task('sort', 10, (3, 6), 60, seed=0)
        plan = TrainingPlan(lr=1e-3, warmup_steps=1, batch_size=8, max_len=8)
        first = ablation_run(dataset, tiny_config(), [0, 1], ArmBudget(2, 2), plan)
        second = ablation_run(dataset, tiny_config(), [0, 1], ArmBudget(2, 2), plan)
        self.assertEqual(first.rows, second.rows)
        self.assertEqual(len(first.rows), len(ARMS) * 2 * 3)
        self.assertEqual({row['value'] for row in first.rows if row['metric'] == 'finetune-steps'}, {2.0})


class AcceptanceGateTests(SimpleTestCase):
    """Testes dos limiares de aceitação"""

    gates = {
        'AR_EXACT_MATCH': 95.0, 'NAR_EXACT_MATCH': 50.0, 'SEMI_NAR_SLACK': 2.0,
        'ABLATION_BLEU_MARGIN': 3.0, 'LATENCY_MIN_OUTPUT_LEN': 16,
    }

    def report(self, ar=98.0, nar=60.0, semi=59.0, passes=None, latency=None):
        return EvalReport(
            metrics={'ar': {'exact-match': ar}, 'nar': {'exact-match': nar}, 'semi': {'exact-match': semi}},
            forward_passes=passes or {'ar': 9.0, 'nar': 1.0, 'semi': 6.0},
            latency=latency or {},
            metadata={},
        )

    def test_passing_report(self):
        self.assertEqual(acceptance_failures(self.report(), n_ar=5, gates=self.gates), [])

    def test_each_threshold(self):
        self.assertEqual(len(acceptance_failures(self.report(ar=90.0), 5, self.gates)), 1)
        self.assertEqual(len(acceptance_failures(self.report(nar=40.0, semi=40.0), 5, self.gates)), 1)
        self.assertEqual(len(acceptance_failures(self.report(semi=57.0), 5, self.gates)), 1)
        passes = {'ar': 9.0, 'nar': 1.0, 'semi': 7.0}
        self.assertEqual(len(acceptance_failures(self.report(passes=passes), 5, self.gates)), 1)

    def test_latency_only_for_long_outputs(self):
        short = {'ar': {'median_ms': 1.0, 'mean_forward_passes': 9.0}, 'nar': {'median_ms': 2.0}}
        self.assertEqual(acceptance_failures(self.report(latency=short), 5, self.gates), [])
        long = {'ar': {'median_ms': 1.0, 'mean_forward_passes': 16.0}, 'nar': {'median_ms': 2.0}}
        failures = acceptance_failures(self.report(latency=long), 5, self.gates)
        self.assertEqual(len(failures), 1)
        self.assertIn('latency', failures[0])
        long['nar']['median_ms'] = 0.5
        self.assertEqual(acceptance_failures(self.report(latency=long), 5, self.gates), [])
