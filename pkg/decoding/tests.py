import math
import random

import torch
from django.test import SimpleTestCase

from bang_toolkit.exceptions import ConfigError
from corpus.vocab import EOS_ID, MASK_ID, PAD_ID, SEP_ID, SPECIAL_IDS, UNK_ID, Vocabulary
from modeling.config import ModelConfig
from modeling.network import BangModel

from .cache import KVCache
from .engines import (
    STRIPPED_IDS,
    DecodeResult,
    ar_beam,
    ar_greedy,
    beam_search,
    collapse_repeats,
    decode,
    nar_decode,
    parallel_pass,
    semi_nar_decode,
    truncate_at_eos,
)


def make_model(seed=0, double=False):
    model = BangModel(ModelConfig.desk(dropout=0.0, seed=seed)).eval()
    return model.double() if double else model


def always_eos(model):
    """Faz o argmax de toda posição ser [EOS]"""
    with torch.no_grad():
        model.tok_emb.weight[EOS_ID].mul_(100.0)
        model.dec_norm.weight.zero_()
        model.dec_norm.bias.copy_(model.tok_emb.weight[EOS_ID])
    return model


def payload_only(model):
    """Zera os especiais na saída: o argmax cai sempre em tokens de carga"""
    with torch.no_grad():
        model.tok_emb.weight[sorted(SPECIAL_IDS)] = 0.0
    return model


def source_for(seed, length=6):
    rng = random.Random(seed)
    return [rng.randrange(6, 64) for _ in range(length)]


class ScriptedModel:
    """Modelo de brinquedo: cada passada devolve um argmax roteirizado por posição"""

    def __init__(self, *passes, vocab_size=16):
        self.passes = [list(ids) for ids in passes]
        self.vocab_size = vocab_size
        self.config = ModelConfig.desk()
        self.decoder_layers = [None, None]

    def eval(self):
        return self

    def encode(self, source):
        return None

    def decode_step(self, states, cache, new_tokens, n_masks):
        ids = self.passes.pop(0)
        assert len(ids) == n_masks
        logits = torch.full((1, n_masks, self.vocab_size), -10.0)
        logits[0, torch.arange(n_masks), torch.tensor(ids)] = 10.0
        return logits


class TableScorer:
    """Scorer de brinquedo: log-probs fixas por prefixo"""

    def __init__(self, table, default):
        self.table = table
        self.default = default
        self.calls = 0

    def __call__(self, prefixes, parents):
        self.calls += 1
        return torch.tensor([self.table.get(tuple(p), self.default) for p in prefixes], dtype=torch.float64)


A, B, C, END = 0, 1, 2, EOS_ID


class CollapseAndTruncateTests(SimpleTestCase):

    def test_collapse_examples(self):
        self.assertEqual(collapse_repeats(['a', 'a', 'b', 'b', 'b', 'c']), ['a', 'b', 'c'])
        self.assertEqual(collapse_repeats(['a', 'b', 'a']), ['a', 'b', 'a'])
        self.assertEqual(collapse_repeats([]), [])

    def test_truncate_at_first_eos(self):
        tokens, logprobs, score = truncate_at_eos([7, 8, EOS_ID, 9], [-0.1, -0.2, -0.3, -0.4])
        self.assertEqual(tokens, [7, 8])
        self.assertEqual(logprobs, [-0.1, -0.2])
        self.assertAlmostEqual(score, -0.6)

    def test_result_json_shape(self):
        vocab = Vocabulary.from_payload(4)
        payload = DecodeResult([6, 7], -1.5, 3, 2.0).to_json('s1', 'ar', vocab)
        self.assertEqual(payload['detokenized'], 'w0 w1')
        self.assertEqual(
            set(payload), {'id', 'mode', 'tokens', 'detokenized', 'score', 'forward_passes', 'latency_ms'}
        )


class GreedyDecodeTests(SimpleTestCase):
    """Testes da decodificação AR gulosa"""

    def test_cache_matches_full_recompute(self):
        for seed in range(10):
            model = make_model(seed, double=True)
            cached = ar_greedy(model, source_for(seed), max_len=12)
            recomputed = ar_greedy(model, source_for(seed), max_len=12, use_cache=False)
            self.assertEqual(cached.tokens, recomputed.tokens)
            self.assertEqual(cached.forward_passes, recomputed.forward_passes)
            torch.testing.assert_close(
                torch.tensor(cached.per_position_logprobs),
                torch.tensor(recomputed.per_position_logprobs),
                rtol=1e-5, atol=1e-9,
            )

    def test_always_eos_gives_empty_output(self):
        result = ar_greedy(always_eos(make_model(1)), source_for(1), max_len=10)
        self.assertEqual(result.tokens, [])
        self.assertEqual(result.forward_passes, 1)

    def test_passes_equal_emitted_length(self):
        result = ar_greedy(payload_only(make_model(2)), source_for(2), max_len=9)
        self.assertEqual(len(result.tokens), 9)
        self.assertEqual(result.forward_passes, 9)
        self.assertFalse(set(result.tokens) & {MASK_ID, EOS_ID, 0})

    def test_rejects_zero_max_len(self):
        with self.assertRaises(ConfigError):
            ar_greedy(make_model(0), source_for(0), max_len=0)


class BeamSearchTests(SimpleTestCase):
    """Testes da busca em feixe"""

    def toy_table(self):
        # Guloso: A (-0.6931) depois A (-1.3069) = -2.0; com feixe 2: B (-0.9163) depois A (-0.6837) = -1.6
        return TableScorer({
            (): [-0.6931, -0.9163, -2.3026, -30.0],
            (A,): [-1.3069, -1.5, -1.5, -30.0],
            (B,): [-0.6837, -2.0, -2.0, -30.0],
            (C,): [-3.0, -3.0, -3.0, -30.0],
        }, default=[-30.0, -30.0, -30.0, 0.0])

    def test_beam_finds_better_path_than_greedy(self):
        greedy = beam_search(self.toy_table(), beam=1, length_penalty=1.0, max_len=5)
        self.assertEqual(greedy.hypothesis.tokens, [A, A, END])
        self.assertAlmostEqual(greedy.hypothesis.score, -2.0)

        wide = beam_search(self.toy_table(), beam=2, length_penalty=1.0, max_len=5)
        self.assertTrue(wide.finished)
        self.assertEqual(wide.hypothesis.tokens, [B, A, END])
        self.assertAlmostEqual(wide.hypothesis.score, -1.6)
        self.assertEqual(wide.forward_passes, 3)

    def test_length_penalty_zero_ranks_by_sum(self):
        table = {(): [-0.5, -30.0, -30.0, -1.0], (A,): [-30.0, -30.0, -30.0, -1.0]}
        short = beam_search(TableScorer(table, [-30.0] * 4), beam=2, length_penalty=0.0, max_len=4)
        self.assertEqual(short.hypothesis.tokens, [END])
        averaged = beam_search(TableScorer(table, [-30.0] * 4), beam=2, length_penalty=1.0, max_len=4)
        self.assertEqual(averaged.hypothesis.tokens, [A, END])

    def test_unfinished_best_at_max_len(self):
        outcome = beam_search(TableScorer({}, [-1.0, -2.0, -3.0, -9.0]), beam=2, length_penalty=1.0, max_len=3)
        self.assertFalse(outcome.finished)
        self.assertEqual(outcome.hypothesis.tokens, [A, A, A])

    def test_rejects_zero_beam(self):
        with self.assertRaises(ConfigError):
            beam_search(self.toy_table(), beam=0, length_penalty=1.0, max_len=5)

    def test_beam_one_is_greedy(self):
        for seed in range(5):
            model = make_model(seed)
            greedy = ar_greedy(model, source_for(seed), max_len=10)
            beam = ar_beam(model, source_for(seed), beam=1, max_len=10)
            self.assertEqual(beam.tokens, greedy.tokens)
            self.assertEqual(beam.forward_passes, greedy.forward_passes)
            self.assertAlmostEqual(beam.score, greedy.score, places=9)

    def test_model_beam_is_deterministic(self):
        model = make_model(3)
        first = ar_beam(model, source_for(3), beam=4, max_len=10)
        second = ar_beam(model, source_for(3), beam=4, max_len=10)
        self.assertEqual(first.tokens, second.tokens)
        self.assertEqual(first.score, second.score)
        self.assertLessEqual(len(first.tokens), 10)
        self.assertFalse(set(first.tokens) & STRIPPED_IDS)


class NarDecodeTests(SimpleTestCase):
    """Testes da decodificação em uma passada"""

    def test_single_forward_pass(self):
        result = nar_decode(make_model(4), source_for(4), max_len=16)
        self.assertEqual(result.forward_passes, 1)
        self.assertLessEqual(len(result.tokens), 16)
        self.assertFalse(set(result.tokens) & STRIPPED_IDS)

    def test_prefix_stability(self):
        model = make_model(5)
        with torch.no_grad():
            states = model.encode(source_for(5))
            for t in (1, 4, 7):
                short, _ = parallel_pass(model, states, KVCache(2), [], t)
                long, _ = parallel_pass(model, states, KVCache(2), [], t + 5)
                self.assertEqual(long[:t], short)

    def test_output_has_no_adjacent_repeats(self):
        for seed in range(5):
            tokens = nar_decode(make_model(seed), source_for(seed), max_len=20).tokens
            self.assertEqual(collapse_repeats(tokens), tokens)

    def test_repeats_hidden_by_specials_are_collapsed(self):
        model = ScriptedModel([7, MASK_ID, 7, 8, PAD_ID, 8, 9, EOS_ID, 9])
        result = nar_decode(model, [6], max_len=9)
        self.assertEqual(result.tokens, [7, 8, 9])
        self.assertEqual(result.forward_passes, 1)

    def test_unk_and_sep_predictions_are_kept(self):
        result = nar_decode(ScriptedModel([UNK_ID, 7, SEP_ID, EOS_ID]), [6], max_len=4)
        self.assertEqual(result.tokens, [UNK_ID, 7, SEP_ID])

    def test_always_eos(self):
        result = nar_decode(always_eos(make_model(6)), source_for(6), max_len=8)
        self.assertEqual(result.tokens, [])
        self.assertEqual(result.forward_passes, 1)


class SemiNarDecodeTests(SimpleTestCase):
    """Testes da decodificação semi-NAR"""

    def test_zero_ar_steps_is_nar(self):
        model = make_model(7)
        semi = semi_nar_decode(model, source_for(7), n_ar=0, n_nar=12)
        nar = nar_decode(model, source_for(7), max_len=12)
        self.assertEqual(semi.tokens, nar.tokens)
        self.assertEqual(semi.score, nar.score)
        self.assertEqual(semi.forward_passes, 1)

    def test_passes_without_early_eos(self):
        result = semi_nar_decode(payload_only(make_model(8)), source_for(8), n_ar=5, n_nar=10)
        self.assertEqual(result.forward_passes, 6)

    def test_early_eos_skips_parallel_phase(self):
        result = semi_nar_decode(always_eos(make_model(9)), source_for(9), n_ar=1, n_nar=1)
        self.assertEqual(result.forward_passes, 1)
        self.assertEqual(result.tokens, [])

    def test_prefix_is_never_rewritten(self):
        for seed in range(5):
            model = payload_only(make_model(seed))
            prefix = ar_greedy(model, source_for(seed), max_len=4).tokens
            semi = semi_nar_decode(model, source_for(seed), n_ar=4, n_nar=8)
            self.assertEqual(semi.tokens[:4], prefix)
            self.assertLessEqual(semi.forward_passes, 5)

    def test_parallel_tail_collapses_across_specials(self):
        model = ScriptedModel([7], [9], [MASK_ID, 9, 8, MASK_ID, 8, EOS_ID])
        result = semi_nar_decode(model, [6], n_ar=2, n_nar=6)
        self.assertEqual(result.tokens, [7, 9, 8])
        self.assertEqual(result.forward_passes, 3)

    def test_zero_ar_steps_collapses_like_nar(self):
        tail = [7, MASK_ID, 7, 8, PAD_ID, 8, EOS_ID]
        semi = semi_nar_decode(ScriptedModel(tail), [6], n_ar=0, n_nar=7)
        nar = nar_decode(ScriptedModel(tail), [6], max_len=7)
        self.assertEqual(semi.tokens, [7, 8])
        self.assertEqual(semi.tokens, nar.tokens)

    def test_rejects_overlong_plan(self):
        with self.assertRaises(ConfigError):
            semi_nar_decode(make_model(0), source_for(0), n_ar=100, n_nar=100)
        with self.assertRaises(ConfigError):
            semi_nar_decode(make_model(0), source_for(0), n_ar=2, n_nar=0)


class DispatchTests(SimpleTestCase):

    def test_modes_are_deterministic(self):
        model = make_model(10)
        for mode in ('ar', 'nar', 'semi'):
            first = decode(model, source_for(10), mode, beam=2, max_len=10, n_ar=3, n_nar=7)
            second = decode(model, source_for(10), mode, beam=2, max_len=10, n_ar=3, n_nar=7)
            self.assertEqual((first.tokens, first.score), (second.tokens, second.score))
            self.assertTrue(math.isfinite(first.score))

    def test_unknown_mode(self):
        with self.assertRaises(ConfigError):
            decode(make_model(0), source_for(0), 'iterative')
