"""Tarefas sintéticas de mesa (copy, reverse, sort) e arquivos de dataset JSON-lines"""

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

from bang_toolkit.exceptions import CorpusError

from .vocab import EOS_ID, Vocabulary, detokenize, tokenize

logger = logging.getLogger(__name__)

TASKS = ('copy', 'reverse', 'sort')
SPLITS = ('train', 'dev', 'test')


@dataclass(frozen=True)
class ParallelPair:
    """Par (X, Y) em ids; o [EOS] só entra no alvo do decodificador"""

    id: str
    source: tuple
    target: tuple

    @property
    def decoder_target(self):
        return list(self.target) + [EOS_ID]

    def to_json(self, vocab):
        return {
            'id': self.id,
            'src': detokenize(vocab.decode(self.source, strip_specials=False)),
            'tgt': detokenize(vocab.decode(self.target, strip_specials=False)),
        }


@dataclass
class SyntheticDataset:
    kind: str
    vocab: Vocabulary
    train: list
    dev: list
    test: list

    def split(self, name):
        return getattr(self, name)


def task_target(kind, source):
    if kind == 'copy':
        return list(source)
    if kind == 'reverse':
        return list(reversed(source))
    return sorted(source)


def synth_task(kind, vocab_payload_size, len_range, n_pairs, seed, max_positions=None):
    """Pares determinísticos pela semente, divididos 80/10/10 pelo índice"""
    if kind not in TASKS:
        raise CorpusError(f'unknown task {kind!r}; expected one of {TASKS}')
    low, high = len_range
    if not 1 <= low <= high:
        raise CorpusError(f'invalid length range {len_range}')
    # O alvo do decodificador ganha um [EOS]
    if max_positions is not None and high + 1 > max_positions:
        raise CorpusError(f'length range {len_range} exceeds max_positions {max_positions}')
    if vocab_payload_size < 1 or n_pairs < 1:
        raise CorpusError('payload size and pair count must be positive')

    vocab = Vocabulary.from_payload(vocab_payload_size)
    payload = vocab.payload_ids
    rng = random.Random(seed)
    pairs = []
    for index in range(n_pairs):
        source = [rng.choice(payload) for _ in range(rng.randint(low, high))]
        pairs.append(ParallelPair(f'{kind}-{index:06d}', tuple(source), tuple(task_target(kind, source))))

    n_train = n_pairs * 8 // 10
    n_dev = n_pairs // 10
    logger.info('Tarefa %s: %d pares (semente %s)', kind, n_pairs, seed)
    return SyntheticDataset(
        kind=kind,
        vocab=vocab,
        train=pairs[:n_train],
        dev=pairs[n_train:n_train + n_dev],
        test=pairs[n_train + n_dev:],
    )


def write_dataset(path, pairs, vocab):
    """Um objeto {id, src, tgt} por linha"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for pair in pairs:
            handle.write(json.dumps(pair.to_json(vocab), ensure_ascii=False) + '\n')
    return path


def read_dataset(path, vocab, max_positions=None):
    """Lê pares JSON-lines; erros apontam o número da linha"""
    pairs = []
    try:
        lines = Path(path).read_text(encoding='utf-8').splitlines()
    except FileNotFoundError as exc:
        raise CorpusError(f'dataset file {path} does not exist') from exc
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            source, target = tokenize(record['src']), tokenize(record['tgt'])
            pair_id = str(record.get('id', number))
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise CorpusError(f'{path}:{number}: malformed dataset line ({exc})') from exc
        if not source or not target:
            raise CorpusError(f'{path}:{number}: empty source or target')
        if max_positions is not None and max(len(source), len(target) + 1) > max_positions:
            raise CorpusError(f'{path}:{number}: pair longer than max_positions {max_positions}')
        pairs.append(ParallelPair(pair_id, tuple(vocab.encode(source)), tuple(vocab.encode(target))))
    if not pairs:
        raise CorpusError('empty corpus')
    return pairs


def write_task(directory, dataset):
    """Grava train/dev/test.jsonl e vocab.txt de uma tarefa sintética"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        write_dataset(directory / f'{name}.jsonl', dataset.split(name), dataset.vocab)
    dataset.vocab.save(directory / 'vocab.txt')
    return directory


def toy_text_corpus(pairs, vocab, doc_len=64):
    """Texto de pré-treino: fontes do treino concatenadas em documentos de ~doc_len tokens"""
    documents, current = [], []
    for pair in pairs:
        current.extend(vocab.decode(pair.source))
        if len(current) >= doc_len:
            documents.append(detokenize(current))
            current = []
    if current:
        documents.append(detokenize(current))
    return documents
