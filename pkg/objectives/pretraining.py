"""Lotes de pré-treino por mascaramento de span contíguo"""

import logging
import math
import random
from dataclasses import dataclass

from bang_toolkit.exceptions import ConfigError, CorpusError
from corpus.vocab import EOS_ID, MASK_ID, UNK_ID

logger = logging.getLogger(__name__)

MIN_BLOCK_LEN = 16


@dataclass(frozen=True)
class PretrainExample:
    """Bloco com um span trocado por [MASK] na entrada e previsto no decodificador"""

    source: tuple
    target: tuple
    span_start: int
    doc_id: int
    block_index: int

    @property
    def span_len(self):
        return len(self.target) - 1

    @property
    def decoder_target(self):
        return list(self.target)

    def reassemble(self):
        """Bloco original: entrada com o span restaurado"""
        end = self.span_start + self.span_len
        return list(self.source[:self.span_start]) + list(self.target[:-1]) + list(self.source[end:])


def span_length(block_len, ratio, max_span):
    return max(1, min(max_span, math.floor(ratio * block_len)))


def split_blocks(tokens, block):
    """Blocos consecutivos; o último curto só fica se tiver pelo menos 16 tokens"""
    for start in range(0, len(tokens), block):
        chunk = tokens[start:start + block]
        if len(chunk) == block or len(chunk) >= MIN_BLOCK_LEN:
            yield chunk


def span_mask_batches(documents, block=64, ratio=0.15, max_span=9, rng=0):
    """
    Itera exemplos de pré-treino sobre documentos já tokenizados (listas de ids).
    rng pode ser uma semente ou um random.Random; a mesma semente gera o mesmo fluxo.
    """
    documents = [list(doc) for doc in documents]
    if not any(documents):
        raise CorpusError('empty corpus')
    if block < 1 or max_span < 1 or not 0.0 < ratio <= 1.0:
        raise ConfigError(f'invalid span masking setup: block={block}, ratio={ratio}, max_span={max_span}')
    rng = rng if isinstance(rng, random.Random) else random.Random(rng)
    return _examples(documents, block, ratio, max_span, rng)


def _examples(documents, block, ratio, max_span, rng):
    for doc_id, tokens in enumerate(documents):
        # [MASK] literal do corpus nunca vira alvo
        tokens = [UNK_ID if token == MASK_ID else token for token in tokens]
        for block_index, chunk in enumerate(split_blocks(tokens, block)):
            length = span_length(len(chunk), ratio, max_span)
            start = rng.randint(0, len(chunk) - length)
            source = chunk[:start] + [MASK_ID] * length + chunk[start + length:]
            yield PretrainExample(
                source=tuple(source),
                target=tuple(chunk[start:start + length]) + (EOS_ID,),
                span_start=start,
                doc_id=doc_id,
                block_index=block_index,
            )
