import logging
from pathlib import Path

from bang_toolkit.exceptions import CorpusError

from .vocab import tokenize

logger = logging.getLogger(__name__)


def ingest_text(path):
    """Um documento por linha, em ordem; linhas em branco ignoradas, CRLF normalizado"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise CorpusError(f'corpus file {path} does not exist') from exc
    try:
        text = raw.decode('utf-8')
    except UnicodeDecodeError as exc:
        raise CorpusError(f'{path}: invalid UTF-8 at byte offset {exc.start}') from exc

    documents = [tokenize(line) for line in text.replace('\r\n', '\n').split('\n')]
    documents = [doc for doc in documents if doc]
    logger.info('Corpus %s: %d documentos', path, len(documents))
    return documents


def encode_documents(documents, vocab):
    return [vocab.encode(doc) for doc in documents]
