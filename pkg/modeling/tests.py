import json
import random
import tempfile
from pathlib import Path

import torch
from django.test import SimpleTestCase

from bang_toolkit.exceptions import CheckpointError, ConfigError, ShapeError
from corpus.vocab import MASK_ID, PAD_ID, Vocabulary
from decoding.cache import KVCache
from masking.layout import MASK_SENTINEL, StreamLayout

from .checkpoint import load_checkpoint, save_checkpoint, weights_bytes
from .config import ModelConfig
from .network import BangModel, attention, relative_bias, relative_bucket


def make_model(seed=0, double=False, **overrides):
    config = ModelConfig.desk(dropout=0.0, seed=seed, **overrides)
    model = BangModel(config).eval()
    return model.double() if double else model


def random_tokens(rng, length, vocab_size):
    return [rng.randrange(6, vocab_size) for _ in range(length)]


class ModelConfigTests(SimpleTestCase):

    def test_desk_defaults(self):
        config = ModelConfig.desk()
        self.assertEqual((config.enc_layers, config.dec_layers, config.d_model), (2, 2, 64))
        self.assertEqual(config.d_head, 16)
        self.assertEqual(config.n_streams, 8)

    def test_full_scale_preset_is_expressible(self):
        config = ModelConfig.full()
        self.assertEqual((config.enc_layers, config.dec_layers, config.d_model, config.n_streams), (6, 6, 768, 9))

    def test_heads_must_divide_width(self):
        with self.assertRaises(ConfigError):
            ModelConfig(d_model=30, n_heads=4)

    def test_counts_must_be_positive(self):
        with self.assertRaises(ConfigError):
            ModelConfig(enc_layers=0)

    def test_streams_bounded_by_positions(self):
        with self.assertRaises(ConfigError):
            ModelConfig(n_streams=200, max_positions=128)

    def test_round_trip_dict(self):
        config = ModelConfig.desk(seed=7)
        self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)


class AttentionTests(SimpleTestCase):

    def test_single_visible_key_returns_its_value(self):
        torch.manual_seed(0)
        q, k, v = torch.randn(3, 4), torch.randn(5, 4), torch.randn(5, 4)
        bias = torch.full((3, 5), MASK_SENTINEL)
        bias[1, 2] = 0.0
        out = attention(q, k, v, bias)
        torch.testing.assert_close(out[1], v[2], rtol=0, atol=1e-6)

    def test_zero_queries_average_values(self):
        torch.manual_seed(1)
        k, v = torch.randn(6, 4), torch.randn(6, 4)
        out = attention(torch.zeros(2, 4), k, v, torch.zeros(2, 6))
        torch.testing.assert_close(out, v.mean(dim=0).expand(2, 4), rtol=0, atol=1e-6)

    def test_matches_scalar_reference(self):
        rng = random.Random(3)
        q = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(3)]
        k = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(4)]
        v = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(4)]
        bias = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(3)]

        expected = []
        for i in range(3):
            scores = [sum(q[i][d] * k[j][d] for d in range(4)) / 2.0 + bias[i][j] for j in range(4)]
            top = max(scores)
            exps = [pow(2.718281828459045, s - top) for s in scores]
            total = sum(exps)
            expected.append([sum(exps[j] / total * v[j][d] for j in range(4)) for d in range(4)])

        out = attention(
            torch.tensor(q, dtype=torch.float64), torch.tensor(k, dtype=torch.float64),
            torch.tensor(v, dtype=torch.float64), torch.tensor(bias, dtype=torch.float64),
        )
        torch.testing.assert_close(out, torch.tensor(expected, dtype=torch.float64), rtol=1e-6, atol=1e-6)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            attention(torch.zeros(2, 4), torch.zeros(3, 5), torch.zeros(3, 5))
        with self.assertRaises(ShapeError):
            attention(torch.zeros(2, 4), torch.zeros(3, 4), torch.zeros(3, 4), torch.zeros(2, 2))


class RelativeBiasTests(SimpleTestCase):

    def test_distance_zero_is_bucket_zero(self):
        self.assertEqual(int(relative_bucket(torch.tensor(0), 32, 64)), 0)

    def test_sign_split(self):
        plus, minus = relative_bucket(torch.tensor([1, -1]), 32, 64).tolist()
        self.assertNotEqual(plus, minus)

    def test_exact_region(self):
        buckets = relative_bucket(-torch.arange(8), 32, 64).tolist()
        self.assertEqual(buckets, list(range(8)))

    def test_clamps_beyond_max_distance(self):
        at_max = relative_bucket(torch.tensor([64, -64]), 32, 64)
        for k in (1, 5, 100):
            beyond = relative_bucket(torch.tensor([64 + k, -64 - k]), 32, 64)
            self.assertTrue(torch.equal(beyond, at_max))

    def test_monotone_in_distance(self):
        buckets = relative_bucket(-torch.arange(0, 200), 32, 64).tolist()
        self.assertEqual(buckets, sorted(buckets))

    def test_scalar_lookup_shared_across_heads(self):
        model = make_model()
        for head in range(model.config.n_heads):
            self.assertEqual(
                float(relative_bias(3, 3, head, model)),
                float(model.rel_bias.embedding.weight[0, head]),
            )
        # Só a distância importa, não as posições absolutas
        self.assertEqual(float(relative_bias(2, 5, 1, model)), float(relative_bias(10, 13, 1, model)))


class EncoderTests(SimpleTestCase):

    def test_output_shape(self):
        model = make_model()
        states = model.encode([7, 8, 9, 10, 11])
        self.assertEqual(tuple(states.hidden.shape), (1, 5, 64))

    def test_trailing_padding_does_not_change_real_rows(self):
        model = make_model(double=True)
        short = model.encode([7, 8, 9])
        padded = model.encode([7, 8, 9, PAD_ID, PAD_ID])
        torch.testing.assert_close(padded.hidden[:, :3], short.hidden, rtol=1e-9, atol=1e-9)

    def test_deterministic_for_seed(self):
        a = make_model(seed=5).encode([9, 10, 11]).hidden
        b = make_model(seed=5).encode([9, 10, 11]).hidden
        self.assertTrue(torch.equal(a, b))

    def test_rejects_overlong_and_out_of_vocab(self):
        model = make_model(max_positions=8, n_streams=4)
        with self.assertRaises(ShapeError):
            model.encode([7] * 9)
        with self.assertRaises(ShapeError):
            model.encode([7, 64])


class NStreamDecoderTests(SimpleTestCase):
    """Equivalência entre o passo n-stream e o oráculo de prefixo literal"""

    def assert_matches_oracle(self, model, source, golden, layout):
        states = model.encode(source)
        logits = model.nstream_forward(golden, states, layout)[0]
        for s, t in layout.valid_predicting_cells():
            prefix = golden[:t - s] + [MASK_ID] * s
            expected = model.oracle_forward(prefix, states)[0]
            torch.testing.assert_close(
                logits[layout.row_index(s, t)], expected, rtol=1e-5, atol=1e-7,
                msg=lambda m: f'cell ({s}, {t}): {m}',
            )

    def test_matches_oracle_over_seeds(self):
        for seed in range(10):
            rng = random.Random(seed)
            model = make_model(seed=seed, double=True)
            for T in range(1, 9):
                source = random_tokens(rng, rng.randint(1, 10), 64)
                golden = random_tokens(rng, T, 64)
                self.assert_matches_oracle(model, source, golden, StreamLayout(T, T))
                self.assert_matches_oracle(model, source, golden, StreamLayout.for_target(T, 3))

    def test_exhaustive_at_eight_positions(self):
        rng = random.Random(42)
        model = make_model(seed=42, double=True)
        self.assert_matches_oracle(model, random_tokens(rng, 6, 64), random_tokens(rng, 8, 64), StreamLayout(8, 8))

    def test_first_stream_equals_teacher_forced_decoder(self):
        rng = random.Random(11)
        model = make_model(seed=11, double=True)
        source, golden = random_tokens(rng, 5, 64), random_tokens(rng, 6, 64)
        states = model.encode(source)
        layout = StreamLayout(6, 1)
        logits = model.nstream_forward(golden, states, layout)[0]
        for t in range(1, 7):
            teacher_forced = model.causal_forward(golden[:t - 1] + [MASK_ID], states)[0, -1]
            torch.testing.assert_close(logits[layout.row_index(1, t)], teacher_forced, rtol=1e-5, atol=1e-7)

    def test_no_label_leakage(self):
        rng = random.Random(7)
        model = make_model(seed=7)
        T = 8
        source = random_tokens(rng, 6, 64)
        states = model.encode(source)
        layout = StreamLayout(T, T)
        checks = 0
        with torch.no_grad():
            while checks < 200:
                golden = random_tokens(rng, T, 64)
                base = model.nstream_forward(golden, states, layout)[0]
                s = rng.randint(1, T)
                t = rng.randint(s, T)
                u = rng.randint(t - s + 1, T)
                perturbed = list(golden)
                perturbed[u - 1] = 6 + (golden[u - 1] - 6 + 1) % 58
                changed = model.nstream_forward(perturbed, states, layout)[0]
                row = layout.row_index(s, t)
                self.assertTrue(torch.equal(base[row], changed[row]), f'u={u} leaked into ({s}, {t})')
                checks += 1

    def test_visible_golden_token_does_influence(self):
        model = make_model(seed=2)
        states = model.encode([7, 8, 9])
        layout = StreamLayout(4, 4)
        with torch.no_grad():
            base = model.nstream_forward([10, 11, 12, 13], states, layout)[0]
            changed = model.nstream_forward([20, 11, 12, 13], states, layout)[0]
        self.assertFalse(torch.equal(base[layout.row_index(1, 4)], changed[layout.row_index(1, 4)]))

    def test_bitwise_deterministic(self):
        golden, source = [10, 11, 12], [7, 8]
        outputs = []
        for _ in range(2):
            model = make_model(seed=9)
            outputs.append(model.nstream_forward(golden, model.encode(source), StreamLayout(3, 3)))
        self.assertTrue(torch.equal(*outputs))

    def test_layout_mismatch(self):
        model = make_model(n_streams=2)
        states = model.encode([7])
        with self.assertRaises(ShapeError):
            model.nstream_forward([7, 8, 9], states, StreamLayout(3, 3))
        with self.assertRaises(ShapeError):
            model.nstream_forward([7, 8, 9], states, StreamLayout(2, 2))

    def test_oracle_rejects_empty_prefix(self):
        model = make_model()
        with self.assertRaises(ShapeError):
            model.oracle_forward([], model.encode([7]))


class IncrementalDecodeTests(SimpleTestCase):

    def test_cached_steps_match_full_recompute(self):
        rng = random.Random(21)
        model = make_model(seed=21, double=True)
        states = model.encode(random_tokens(rng, 5, 64))
        tokens = random_tokens(rng, 6, 64)
        cache = KVCache(model.config.dec_layers)
        with torch.no_grad():
            for t in range(1, 7):
                new = tokens[t - 2:t - 1] if t > 1 else []
                step = model.decode_step(states, cache, new, 1)[0, 0]
                full = model.oracle_forward(tokens[:t - 1] + [MASK_ID], states)[0]
                torch.testing.assert_close(step, full, rtol=1e-5, atol=1e-7)
                self.assertEqual(cache.length, t - 1)

    def test_multi_mask_step_matches_causal_pass(self):
        rng = random.Random(5)
        model = make_model(seed=5, double=True)
        states = model.encode(random_tokens(rng, 4, 64))
        prefix = random_tokens(rng, 3, 64)
        cache = KVCache(model.config.dec_layers)
        with torch.no_grad():
            model.decode_step(states, cache, prefix[:2], 1)
            step = model.decode_step(states, cache, prefix[2:], 4)[0]
            full = model.causal_forward(prefix + [MASK_ID] * 4, states)[0, 3:]
        torch.testing.assert_close(step, full, rtol=1e-5, atol=1e-7)


class CheckpointTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.vocab = Vocabulary.from_payload(20)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bitwise(self):
        model = make_model(seed=3, vocab_size=32)
        path = save_checkpoint(self.root / 'ckpt', model, self.vocab, run_config={'mode': 'ar'})
        loaded = load_checkpoint(path)
        self.assertEqual(weights_bytes(loaded.model), weights_bytes(model))
        self.assertEqual(loaded.model.config, model.config)
        self.assertEqual(loaded.vocab, self.vocab)
        self.assertEqual(loaded.run_config, {'mode': 'ar'})

    def test_layout_of_files(self):
        model = make_model(seed=3, vocab_size=32)
        path = save_checkpoint(self.root / 'ckpt', model, self.vocab)
        config = json.loads((path / 'config.json').read_text())
        self.assertEqual(list(config), list(model.config.to_dict()))
        manifest = json.loads((path / 'manifest.json').read_text())
        self.assertEqual(manifest[0], {'name': 'tok_emb.weight', 'shape': [32, 64], 'dtype': 'f32'})
        total = sum(torch.Size(entry['shape']).numel() for entry in manifest)
        self.assertEqual((path / 'weights.bin').stat().st_size, 4 * total)
        self.assertEqual((path / 'vocab.txt').read_text().split('\n')[4], '[MASK]')

    def test_overwrite_is_atomic_and_clean(self):
        path = save_checkpoint(self.root / 'ckpt', make_model(seed=1, vocab_size=32), self.vocab)
        save_checkpoint(path, make_model(seed=2, vocab_size=32), self.vocab)
        self.assertEqual(load_checkpoint(path).model.config.seed, 2)
        self.assertEqual(sorted(p.name for p in self.root.iterdir()), ['ckpt'])

    def test_rejects_bad_manifest(self):
        path = save_checkpoint(self.root / 'ckpt', make_model(vocab_size=32), self.vocab)
        manifest = json.loads((path / 'manifest.json').read_text())
        manifest[0]['dtype'] = 'f16'
        (path / 'manifest.json').write_text(json.dumps(manifest))
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_truncated_weights(self):
        path = save_checkpoint(self.root / 'ckpt', make_model(vocab_size=32), self.vocab)
        data = (path / 'weights.bin').read_bytes()
        (path / 'weights.bin').write_bytes(data[:-4])
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)
