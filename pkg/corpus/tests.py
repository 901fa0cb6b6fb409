import json
import random
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from bang_toolkit.exceptions import CorpusError

from .ingest import encode_documents, ingest_text
from .synth import (
    ParallelPair,
    read_dataset,
    synth_task,
    task_target,
    toy_text_corpus,
    write_dataset,
    write_task,
)
from .vocab import (
    EOS_ID,
    MASK_ID,
    SPECIAL_IDS,
    SPECIALS,
    UNK_ID,
    Vocabulary,
    build_vocab,
    detokenize,
    tokenize,
)


class VocabularyTests(SimpleTestCase):
    """Testes do vocabulário e do tokenizador"""

    def test_specials_fixed_ids(self):
        vocab = build_vocab(['a a b'], 16)
        self.assertEqual(vocab.tokens[:6], list(SPECIALS))
        self.assertEqual(vocab.token_to_id('[MASK]'), MASK_ID)
        self.assertEqual(vocab.token_to_id('[EOS]'), EOS_ID)

    def test_frequency_order(self):
        vocab = build_vocab(['a a b'], 16)
        self.assertEqual(vocab.token_to_id('a'), 6)
        self.assertEqual(vocab.token_to_id('b'), 7)

    def test_lexicographic_tie_break(self):
        vocab = build_vocab(['z y x'], 16)
        self.assertEqual(vocab.tokens[6:], ['x', 'y', 'z'])

    def test_truncation(self):
        vocab = build_vocab(['a a a b b c'], 8)
        self.assertEqual(len(vocab), 8)
        self.assertNotIn('c', vocab)

    def test_unseen_token_is_unk(self):
        vocab = build_vocab(['a b'], 16)
        self.assertEqual(vocab.encode('a q'), [6, UNK_ID])

    def test_empty_corpus(self):
        with self.assertRaisesMessage(CorpusError, 'empty corpus'):
            build_vocab(['', '   '], 16)

    def test_deterministic_vocab_files(self):
        corpus = ['the cat sat', 'the dog sat', 'a cat']
        with tempfile.TemporaryDirectory() as tmp:
            first, second = Path(tmp) / 'a.txt', Path(tmp) / 'b.txt'
            build_vocab(corpus, 32).save(first)
            build_vocab(corpus, 32).save(second)
            self.assertEqual(first.read_bytes(), second.read_bytes())
            self.assertEqual(Vocabulary.load(first), build_vocab(corpus, 32))

    def test_decode_strips_specials(self):
        vocab = build_vocab(['a b'], 16)
        self.assertEqual(vocab.decode([6, EOS_ID, 7, MASK_ID]), ['a', 'b'])

    def test_tokenize_round_trip_normalizes_whitespace(self):
        rng = random.Random(3)
        for _ in range(100):
            words = [''.join(rng.choice('abc') for _ in range(rng.randint(1, 4))) for _ in range(rng.randint(0, 6))]
            line = ''.join(word + rng.choice([' ', '  ', '\t']) for word in words)
            self.assertEqual(detokenize(tokenize(line)), ' '.join(line.split()))


class SynthTaskTests(SimpleTestCase):
    """Testes das tarefas sintéticas"""

    def test_targets_per_kind(self):
        for kind, expected in [('copy', (7, 9, 8)), ('reverse', (8, 9, 7)), ('sort', (7, 8, 9))]:
            dataset = synth_task(kind, 8, (3, 3), 50, seed=0)
            for pair in dataset.train:
                if kind == 'copy':
                    self.assertEqual(pair.target, pair.source)
                elif kind == 'reverse':
                    self.assertEqual(pair.target, tuple(reversed(pair.source)))
                else:
                    self.assertEqual(pair.target, tuple(sorted(pair.source)))
            source = [7, 9, 8] if kind != 'sort' else [9, 7, 8]
            self.assertEqual(tuple(task_target(kind, source)), expected)

    def test_splits_are_disjoint_80_10_10(self):
        dataset = synth_task('copy', 32, (4, 12), 1000, seed=1)
        self.assertEqual((len(dataset.train), len(dataset.dev), len(dataset.test)), (800, 100, 100))
        ids = [p.id for p in dataset.train + dataset.dev + dataset.test]
        self.assertEqual(len(ids), len(set(ids)))

    def test_deterministic_by_seed(self):
        first = synth_task('sort', 32, (4, 12), 100, seed=5)
        second = synth_task('sort', 32, (4, 12), 100, seed=5)
        self.assertEqual(first.train, second.train)
        self.assertNotEqual(first.train, synth_task('sort', 32, (4, 12), 100, seed=6).train)

    def test_payload_never_contains_specials(self):
        dataset = synth_task('reverse', 32, (4, 12), 200, seed=2)
        for pair in dataset.train + dataset.dev + dataset.test:
            self.assertTrue(4 <= len(pair.source) <= 12)
            self.assertFalse(set(pair.source) & SPECIAL_IDS)
            self.assertTrue(all(i < len(dataset.vocab) for i in pair.source))

    def test_length_range_bounded_by_positions(self):
        with self.assertRaises(CorpusError):
            synth_task('copy', 32, (4, 20), 10, seed=0, max_positions=16)

    def test_decoder_target_appends_eos(self):
        pair = ParallelPair('x', (7, 8), (8, 7))
        self.assertEqual(pair.decoder_target, [8, 7, EOS_ID])


class DatasetFileTests(SimpleTestCase):
    """Testes de leitura/escrita de datasets JSON-lines"""

    def test_write_then_read(self):
        dataset = synth_task('copy', 16, (2, 5), 20, seed=0)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_dataset(Path(tmp) / 'train.jsonl', dataset.train, dataset.vocab)
            first = json.loads(path.read_text(encoding='utf-8').splitlines()[0])
            self.assertEqual(set(first), {'id', 'src', 'tgt'})
            self.assertEqual(read_dataset(path, dataset.vocab), dataset.train)

    def test_write_task_layout(self):
        dataset = synth_task('reverse', 16, (2, 5), 20, seed=0)
        with tempfile.TemporaryDirectory() as tmp:
            directory = write_task(Path(tmp) / 'reverse', dataset)
            names = sorted(p.name for p in directory.iterdir())
            self.assertEqual(names, ['dev.jsonl', 'test.jsonl', 'train.jsonl', 'vocab.txt'])

    def test_malformed_line_reports_number(self):
        vocab = Vocabulary.from_payload(4)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'bad.jsonl'
            path.write_text('{"id": "a", "src": "w0", "tgt": "w1"}\n{"src": ""}\n', encoding='utf-8')
            with self.assertRaisesMessage(CorpusError, ':2:'):
                read_dataset(path, vocab)

    def test_empty_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'empty.jsonl'
            path.write_text('', encoding='utf-8')
            with self.assertRaisesMessage(CorpusError, 'empty corpus'):
                read_dataset(path, Vocabulary.from_payload(4))

    def test_toy_text_corpus_documents(self):
        dataset = synth_task('copy', 16, (4, 12), 100, seed=0)
        documents = toy_text_corpus(dataset.train, dataset.vocab, doc_len=64)
        self.assertTrue(all(len(doc.split()) >= 64 for doc in documents[:-1]))
        total = sum(len(p.source) for p in dataset.train)
        self.assertEqual(sum(len(doc.split()) for doc in documents), total)


class IngestTextTests(SimpleTestCase):
    """Testes de ingestão de texto puro"""

    def _write(self, tmp, data):
        path = Path(tmp) / 'corpus.txt'
        path.write_bytes(data)
        return path

    def test_blank_lines_skipped(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = self._write(tmp, b'a b\n\nc d e\n   \nf\n')
            self.assertEqual(ingest_text(path), [['a', 'b'], ['c', 'd', 'e'], ['f']])

    def test_crlf_matches_lf(self):
        with tempfile.TemporaryDirectory() as tmp:
            lf = ingest_text(self._write(tmp, b'one two\nthree\n'))
            crlf = ingest_text(self._write(tmp, b'one two\r\nthree\r\n'))
            self.assertEqual(lf, crlf)

    def test_invalid_utf8_reports_offset(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = self._write(tmp, b'abc\n\xffdef\n')
            with self.assertRaisesMessage(CorpusError, 'byte offset 4'):
                ingest_text(path)

    def test_encode_documents(self):
        vocab = build_vocab(['a b'], 16)
        self.assertEqual(encode_documents([['a', 'b', 'z']], vocab), [[6, 7, UNK_ID]])
