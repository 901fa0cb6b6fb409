import copy
import math
import random
import warnings

import torch
import torch.nn.functional as F
from django.test import SimpleTestCase, tag

from bang_toolkit.exceptions import ConfigError, CorpusError, NonFiniteLossError, ShapeError
from corpus.synth import ParallelPair, synth_task
from corpus.vocab import EOS_ID, MASK_ID
from masking.layout import StreamLayout
from modeling.config import ModelConfig
from modeling.network import BangModel

from .losses import ar_loss, bang_loss, nar_breakdown, nar_loss
from .pretraining import span_length, span_mask_batches
from .training import (
    Trainer,
    collate,
    compute_loss,
    iterate_batches,
    stream_loss_profile,
    warmup_inverse_sqrt,
)

VOCAB = 64


def tiny_model(seed=3, dropout=0.0):
    config = ModelConfig(
        enc_layers=1, dec_layers=1, d_model=16, n_heads=2, d_ffn=32, vocab_size=16,
        max_positions=16, n_streams=4, rel_buckets=8, rel_max_distance=16, dropout=dropout, seed=seed,
    )
    return BangModel(config)


def desk_model(seed=0, dropout=0.0):
    return BangModel(ModelConfig.desk(seed=seed, dropout=dropout))


def random_pairs(rng, count, vocab_size, src_len=5, tgt_len=4):
    return [
        ParallelPair(
            f'p{i}',
            tuple(rng.randrange(6, vocab_size) for _ in range(src_len)),
            tuple(rng.randrange(6, vocab_size) for _ in range(tgt_len)),
        )
        for i in range(count)
    ]


class BangLossTests(SimpleTestCase):
    """Testes da decomposição AR + ponte + NAR"""

    def test_decomposition_for_all_small_layouts(self):
        generator = torch.Generator().manual_seed(0)
        for T in range(1, 13):
            golden = torch.randint(6, VOCAB, (T,), generator=generator)
            for n in range(1, T + 1):
                layout = StreamLayout(T, n)
                logits = torch.randn(1, layout.n_rows, VOCAB, generator=generator)
                breakdown = bang_loss(logits, golden, layout, smoothing=0.1)
                self.assertEqual(breakdown.total, breakdown.ar_part + breakdown.bridging_part + breakdown.nar_part)
                self.assertEqual(breakdown.n_terms, sum(min(t, n) for t in range(1, T + 1)))
                self.assertEqual(breakdown.ar_terms, T)
                self.assertEqual(breakdown.nar_terms, n - 1)
            self.assertEqual(bang_loss(torch.zeros(1, (T + 1) * T, VOCAB), golden, StreamLayout(T, T)).n_terms,
                             T * (T + 1) // 2)

    def test_term_counts_full_streams(self):
        breakdown = bang_loss(torch.zeros(20, VOCAB), torch.arange(6, 10), StreamLayout(4, 4))
        self.assertEqual((breakdown.ar_terms, breakdown.nar_terms, breakdown.bridging_terms), (4, 3, 3))
        self.assertEqual(breakdown.n_terms, 10)

    def test_term_counts_two_streams(self):
        breakdown = bang_loss(torch.zeros(12, VOCAB), torch.arange(6, 10), StreamLayout(4, 2))
        self.assertEqual((breakdown.ar_terms, breakdown.nar_terms, breakdown.bridging_terms), (4, 1, 2))
        self.assertTrue(breakdown.valid[0, 1, 1])
        self.assertFalse(breakdown.valid[0, 1, 0])

    def test_uniform_logits(self):
        for smoothing in (0.0, 0.1):
            breakdown = bang_loss(torch.zeros(20, VOCAB), torch.arange(6, 10), StreamLayout(4, 4), smoothing)
            torch.testing.assert_close(breakdown.total, torch.tensor(10 * math.log(VOCAB)))
            torch.testing.assert_close(breakdown.mean, torch.tensor(math.log(VOCAB)))

    def test_zero_smoothing_is_exact_nll(self):
        generator = torch.Generator().manual_seed(1)
        layout = StreamLayout(3, 1)
        logits = torch.randn(1, layout.n_rows, VOCAB, generator=generator)
        golden = torch.tensor([7, 8, 9])
        expected = F.cross_entropy(logits[0, 3:], golden, reduction='sum')
        torch.testing.assert_close(bang_loss(logits, golden, layout).total, expected)

    def test_smoothing_adds_to_confident_loss(self):
        logits = torch.full((2, VOCAB), -5.0)
        logits[:, 7] = 5.0
        layout = StreamLayout(1, 1)
        plain = bang_loss(logits, [7], layout).total
        smoothed = bang_loss(logits, [7], layout, smoothing=0.1).total
        self.assertGreater(float(smoothed), float(plain))

    def test_padding_excluded(self):
        golden = torch.tensor([[7, 8, 9, 10], [7, 8, 0, 0]])
        breakdown = bang_loss(torch.zeros(2, 20, VOCAB), golden, StreamLayout(4, 4), lengths=[4, 2])
        self.assertEqual(breakdown.n_terms, 10 + 3)
        self.assertEqual(float(breakdown.cell_losses[1, :, 2:].abs().sum()), 0.0)

    def test_log_dict_from_graph_tensors_is_silent(self):
        logits = torch.randn(20, VOCAB, requires_grad=True)
        breakdown = bang_loss(logits, torch.arange(6, 10), StreamLayout(4, 4), smoothing=0.1)
        with warnings.catch_warnings():
            warnings.simplefilter('error')
            logged = breakdown.as_log_dict()
        self.assertAlmostEqual(logged['loss_total'], breakdown.mean.item(), places=5)
        self.assertAlmostEqual(
            logged['loss_ar'] + logged['loss_bridge'] + logged['loss_nar'], logged['loss_total'], places=5,
        )

    def test_rejects_bad_smoothing(self):
        with self.assertRaises(ConfigError):
            bang_loss(torch.zeros(20, VOCAB), torch.arange(6, 10), StreamLayout(4, 4), smoothing=1.0)

    def test_rejects_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            bang_loss(torch.zeros(19, VOCAB), torch.arange(6, 10), StreamLayout(4, 4))
        with self.assertRaises(ShapeError):
            bang_loss(torch.zeros(20, VOCAB), torch.arange(6, 11), StreamLayout(4, 4))


class ArNarLossTests(SimpleTestCase):
    """Testes das perdas especializadas"""

    def test_ar_equals_single_stream_bang(self):
        generator = torch.Generator().manual_seed(2)
        logits = torch.randn(1, 10, VOCAB, generator=generator)
        golden = torch.tensor([7, 8, 9, 10, 11])
        self.assertEqual(ar_loss(logits, golden), bang_loss(logits, golden, StreamLayout(5, 1)).total)

    def test_ar_uniform(self):
        torch.testing.assert_close(ar_loss(torch.zeros(6, VOCAB), [7, 8, 9]), torch.tensor(3 * math.log(VOCAB)))

    def test_ar_matches_causal_reference(self):
        model = desk_model(seed=4).double().eval()
        rng = random.Random(4)
        source = [rng.randrange(6, VOCAB) for _ in range(6)]
        golden = [rng.randrange(6, VOCAB) for _ in range(5)]
        with torch.no_grad():
            states = model.encode(source)
            logits = model.nstream_forward(golden, states, StreamLayout(5, 1))
            reference = sum(
                F.cross_entropy(model.oracle_forward(golden[:t - 1] + [MASK_ID], states), torch.tensor([golden[t - 1]]))
                for t in range(1, 6)
            )
        torch.testing.assert_close(ar_loss(logits, golden), reference, rtol=0, atol=1e-6)

    def test_nar_uniform_with_eos(self):
        golden = [7, 8, 9, 10, EOS_ID]
        torch.testing.assert_close(nar_loss(torch.zeros(5, VOCAB), golden), torch.tensor(5 * math.log(VOCAB)))

    def test_nar_logits_ignore_target_values(self):
        model = desk_model(seed=5).eval()
        with torch.no_grad():
            states = model.encode([7, 8, 9])
            logits = model.causal_forward([MASK_ID] * 4, states)
            again = model.causal_forward([MASK_ID] * 4, states)
        self.assertTrue(torch.equal(logits, again))
        self.assertNotEqual(float(nar_loss(logits, [7, 8, 9, EOS_ID])), float(nar_loss(logits, [9, 9, 9, EOS_ID])))

    def test_nar_equals_diagonal_cells(self):
        model = desk_model(seed=6).double().eval()
        golden = [11, 12, 13, 14, EOS_ID]
        with torch.no_grad():
            states = model.encode([7, 8, 9, 10])
            layout = StreamLayout(5, 5)
            full = bang_loss(model.nstream_forward(golden, states, layout), golden, layout)
            nar = nar_breakdown(model.causal_forward([MASK_ID] * 5, states), golden)
        diagonal = torch.stack([full.cell_losses[0, t, t] for t in range(5)])
        torch.testing.assert_close(diagonal, nar.cell_losses[0, 0], rtol=1e-9, atol=1e-9)
        self.assertEqual(nar.nar_terms, 5)


class SpanMaskTests(SimpleTestCase):
    """Testes do lote de pré-treino por span"""

    def test_span_length_rule(self):
        self.assertEqual(span_length(64, 0.15, 9), 9)
        self.assertEqual(span_length(20, 0.15, 9), 3)
        self.assertEqual(span_length(16, 0.01, 9), 1)

    def test_full_block_masks_nine(self):
        examples = list(span_mask_batches([list(range(6, 70))], rng=0))
        self.assertEqual(len(examples), 1)
        self.assertEqual(examples[0].span_len, 9)
        self.assertEqual(examples[0].source.count(MASK_ID), 9)

    def test_short_block_offsets(self):
        offsets = set()
        for seed in range(200):
            (example,) = span_mask_batches([list(range(6, 26))], rng=seed)
            self.assertEqual(example.span_len, 3)
            offsets.add(example.span_start)
        self.assertTrue(offsets <= set(range(18)))
        self.assertIn(0, offsets)
        self.assertIn(17, offsets)

    def test_final_short_block_kept_only_from_sixteen(self):
        self.assertEqual(len(list(span_mask_batches([list(range(6, 6 + 79))], rng=0))), 1)
        blocks = list(span_mask_batches([list(range(6, 6 + 80))], rng=0))
        self.assertEqual([e.block_index for e in blocks], [0, 1])
        self.assertEqual(len(blocks[1].source), 16)

    def test_deterministic_stream(self):
        rng = random.Random(0)
        documents = [[rng.randrange(6, 60) for _ in range(rng.randint(10, 200))] for _ in range(20)]
        self.assertEqual(list(span_mask_batches(documents, rng=7)), list(span_mask_batches(documents, rng=7)))

    def test_reassembly_and_targets(self):
        rng = random.Random(1)
        documents = [[rng.randrange(6, 60) for _ in range(rng.randint(16, 150))] for _ in range(30)]
        documents[3][5] = MASK_ID
        for example in span_mask_batches(documents, max_span=4, rng=2):
            self.assertNotIn(MASK_ID, example.target)
            self.assertEqual(example.target[-1], EOS_ID)
            self.assertLessEqual(example.span_len, 4)
            block = example.reassemble()
            self.assertNotIn(MASK_ID, block)
            original = documents[example.doc_id][example.block_index * 64:(example.block_index + 1) * 64]
            self.assertEqual(block, [1 if token == MASK_ID else token for token in original])

    def test_empty_corpus(self):
        with self.assertRaisesMessage(CorpusError, 'empty corpus'):
            span_mask_batches([[], []])


class ScheduleTests(SimpleTestCase):

    def test_warmup_and_decay(self):
        self.assertEqual(warmup_inverse_sqrt(0, 1000), 1 / 1000)
        self.assertEqual(warmup_inverse_sqrt(1000, 1000), 1.0)
        self.assertEqual(warmup_inverse_sqrt(4000, 1000), 0.5)

    def test_trainer_lr_at_step_zero(self):
        trainer = Trainer(tiny_model(), lr=1e-4, warmup_steps=1000)
        self.assertAlmostEqual(trainer.lr, 1e-7)


class TrainStepTests(SimpleTestCase):
    """Testes do passo de otimização"""

    def setUp(self):
        self.pairs = random_pairs(random.Random(0), 16, 16)

    def test_bang_parts_positive_on_init(self):
        trainer = Trainer(tiny_model(), smoothing=0.1)
        breakdown, record = trainer.train_step(collate(self.pairs[:4]), 'bang')
        for part in (breakdown.ar_part, breakdown.bridging_part, breakdown.nar_part):
            self.assertGreater(float(part), 0.0)
        self.assertEqual(
            set(record), {'step', 'mode', 'lr', 'loss_total', 'loss_ar', 'loss_bridge', 'loss_nar', 'wall_ms'}
        )
        self.assertAlmostEqual(record['loss_total'], record['loss_ar'] + record['loss_bridge'] + record['loss_nar'])

    def test_step_updates_parameters(self):
        model = tiny_model()
        before = copy.deepcopy(model.state_dict())
        trainer = Trainer(model, lr=1e-3, warmup_steps=1)
        for mode in ('bang', 'ar', 'nar'):
            trainer.train_step(collate(self.pairs[:4]), mode)
        self.assertEqual(trainer.step, 3)
        self.assertFalse(torch.equal(before['tok_emb.weight'], model.tok_emb.weight))

    def test_nan_loss_names_batch(self):
        model = tiny_model()
        trainer = Trainer(model)
        trainer.train_step(collate(self.pairs[:4]), 'bang')
        with torch.no_grad():
            model.tok_emb.weight.fill_(float('nan'))
        with self.assertRaisesMessage(NonFiniteLossError, 'at batch index 1'):
            trainer.train_step(collate(self.pairs[:4]), 'bang')

    def test_unknown_mode(self):
        with self.assertRaises(ConfigError):
            compute_loss(tiny_model(), collate(self.pairs[:2]), 'multi')

    def test_resume_matches_uninterrupted(self):
        def fresh():
            torch.manual_seed(0)
            model = tiny_model(dropout=0.1)
            return model, Trainer(model, lr=1e-3, warmup_steps=2), iterate_batches(self.pairs, 4, seed=1)

        model, trainer, batches = fresh()
        trainer.fit(batches, 'bang', 4)
        uninterrupted = copy.deepcopy(model.state_dict())

        model, trainer, batches = fresh()
        trainer.fit(batches, 'bang', 2)
        weights, state = copy.deepcopy(model.state_dict()), copy.deepcopy(trainer.state_dict())

        resumed_model, resumed, batches = fresh()
        resumed_model.load_state_dict(weights)
        resumed.load_state_dict(state)
        for _ in range(2):
            next(batches)
        resumed.fit(batches, 'bang', 2)
        for name, tensor in uninterrupted.items():
            self.assertTrue(torch.equal(tensor, resumed_model.state_dict()[name]), name)

    def test_stream_profile_covers_every_stream(self):
        profile = stream_loss_profile(tiny_model(), self.pairs)
        self.assertEqual(sorted(profile.mean_loss), [1, 2, 3, 4])
        self.assertTrue(math.isfinite(profile.spearman))


class GradientCheckTests(SimpleTestCase):
    """Diferenças finitas centrais contra o gradiente analítico da perda média do treino"""

    STEP = 1e-3

    def test_every_parameter_tensor(self):
        model = tiny_model(seed=11).double().eval()
        rng = random.Random(11)
        for batch_index in range(5):
            batch = collate(random_pairs(rng, 2, 16, src_len=rng.randint(3, 6), tgt_len=rng.randint(2, 4)))
            model.zero_grad()
            compute_loss(model, batch, 'bang', smoothing=0.1).mean.backward()
            for name, param in model.named_parameters():
                flat, grad = param.data.view(-1), param.grad.view(-1)
                for index in rng.sample(range(flat.numel()), min(3, flat.numel())):
                    original = flat[index].item()
                    with torch.no_grad():
                        flat[index] = original + self.STEP
                        plus = compute_loss(model, batch, 'bang', smoothing=0.1).mean.item()
                        flat[index] = original - self.STEP
                        minus = compute_loss(model, batch, 'bang', smoothing=0.1).mean.item()
                        flat[index] = original
                    numeric = (plus - minus) / (2 * self.STEP)
                    analytic = grad[index].item()
                    error = abs(numeric - analytic)
                    where = f'{name}[{index}] batch {batch_index}'
                    self.assertLessEqual(error, 1e-4, where)
                    self.assertLessEqual(error / max(abs(numeric), abs(analytic), 1e-3), 1e-2, where)


@tag('slow')
class CopyTaskTrainingTests(SimpleTestCase):

    def test_ar_training_drives_loss_down(self):
        torch.manual_seed(0)
        dataset = synth_task('copy', 32, (4, 12), 2000, seed=0)
        model = desk_model(seed=0, dropout=0.0)
        trainer = Trainer(model, lr=2e-3, warmup_steps=20, smoothing=0.0)
        records = trainer.fit(iterate_batches(dataset.train, 32, seed=0), 'ar', 200)
        self.assertTrue(all(r['loss_total'] > 0 for r in records))
        tail = sum(r['loss_total'] for r in records[-10:]) / 10
        self.assertLess(tail, math.log(model.config.vocab_size) / 4)

    def test_stream_loss_rises_with_mask_count(self):
        torch.manual_seed(0)
        dataset = synth_task('copy', 32, (4, 12), 2000, seed=0)
        model = desk_model(seed=0, dropout=0.0)
        trainer = Trainer(model, lr=2e-3, warmup_steps=20, smoothing=0.0)
        trainer.fit(iterate_batches(dataset.train, 32, seed=0), 'bang', 300)
        profile = stream_loss_profile(model, dataset.dev)
        self.assertGreaterEqual(len(profile.mean_loss), 4)
        self.assertGreater(profile.spearman, 0.0)
