"""Vocabulário e tokenizador por espaços em branco"""

import logging
from collections import Counter
from pathlib import Path

from bang_toolkit.exceptions import CorpusError

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS, MASK, SEP = '[PAD]', '[UNK]', '[BOS]', '[EOS]', '[MASK]', '[SEP]'
SPECIALS = (PAD, UNK, BOS, EOS, MASK, SEP)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, MASK_ID, SEP_ID = range(len(SPECIALS))

SPECIAL_IDS = frozenset(range(len(SPECIALS)))


def tokenize(line):
    """Divide por espaços em branco (qualquer sequência)"""
    return line.split()


def detokenize(tokens):
    return ' '.join(tokens)


class Vocabulary:
    """Bijeção token <-> id com os especiais fixos nos ids 0..5"""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise CorpusError(f'vocabulary must start with {SPECIALS}')
        if len(set(tokens)) != len(tokens):
            raise CorpusError('duplicate tokens in vocabulary')
        self.tokens = tokens
        self._ids = {token: i for i, token in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __contains__(self, token):
        return token in self._ids

    def token_to_id(self, token):
        return self._ids.get(token, UNK_ID)

    def id_to_token(self, index):
        return self.tokens[index]

    @property
    def payload_ids(self):
        """Ids que não são especiais"""
        return list(range(len(SPECIALS), len(self.tokens)))

    def encode(self, text):
        """Texto (ou lista de tokens) para ids; desconhecidos viram [UNK]"""
        tokens = tokenize(text) if isinstance(text, str) else text
        return [self.token_to_id(token) for token in tokens]

    def decode(self, ids, strip_specials=True):
        """Ids para tokens, removendo especiais se pedido"""
        return [
            self.tokens[i] for i in ids
            if not (strip_specials and i in SPECIAL_IDS)
        ]

    def detokenize(self, ids):
        return detokenize(self.decode(ids))

    def save(self, path):
        """Grava vocab.txt: um token por linha, linha = id"""
        Path(path).write_text(''.join(f'{token}\n' for token in self.tokens), encoding='utf-8')

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding='utf-8').split('\n')
        if lines and lines[-1] == '':
            lines.pop()
        return cls(lines)

    @classmethod
    def from_payload(cls, payload_size):
        """Vocabulário sintético com tokens de carga 'w0'..'w{n-1}'"""
        return cls(list(SPECIALS) + [f'w{i}' for i in range(payload_size)])


def build_vocab(corpus, max_size):
    """Classifica tokens por frequência (desempate lexicográfico) e prefixa os especiais"""
    counts = Counter()
    for document in corpus:
        tokens = tokenize(document) if isinstance(document, str) else document
        counts.update(t for t in tokens if t not in SPECIALS)

    if not counts:
        raise CorpusError('empty corpus')
    if max_size <= len(SPECIALS):
        raise CorpusError(f'max_size must exceed {len(SPECIALS)}, got {max_size}')

    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    kept = [token for token, _ in ranked[:max_size - len(SPECIALS)]]
    if len(kept) < len(ranked):
        logger.info('Vocabulário truncado: %d de %d tokens mantidos', len(kept), len(ranked))
    return Vocabulary(list(SPECIALS) + kept)
