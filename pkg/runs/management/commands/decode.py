import json
import logging
from pathlib import Path

from bang_toolkit.exceptions import CorpusError
from corpus.vocab import tokenize
from decoding.engines import decode
from modeling.checkpoint import load_checkpoint
from runs.cli import DECODE_FIELDS, ToolkitCommand

logger = logging.getLogger(__name__)


def read_inputs(path):
    """
    (número da linha, id, tokens) por linha não vazia. Arquivos .jsonl usam os
    campos 'id' e 'src'; os demais são texto puro, uma fonte por linha.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except FileNotFoundError as exc:
        raise CorpusError(f'input file {path} does not exist') from exc
    except UnicodeDecodeError as exc:
        raise CorpusError(f'{path}: invalid UTF-8 at byte offset {exc.start}') from exc

    structured = path.suffix == '.jsonl'
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if structured:
            try:
                record = json.loads(line)
                yield number, str(record.get('id', number)), tokenize(record['src'])
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
                raise CorpusError(f'{path}:{number}: malformed input line ({exc})') from exc
        else:
            yield number, str(number), tokenize(line)


class Command(ToolkitCommand):
    help = 'Decodifica um arquivo de entradas com um checkpoint; um DecodeResult JSON por linha'

    config_fields = DECODE_FIELDS
    flag_aliases = {'decode_mode': '--mode'}

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Diretório do checkpoint')
        parser.add_argument('--input', required=True, help='Texto (uma fonte por linha) ou .jsonl com src')
        parser.add_argument('--with-latency', action='store_true', help='Inclui latency_ms (saída deixa de ser estável)')

    def run(self, **options):
        config = self.effective_config(options)
        checkpoint = load_checkpoint(options['checkpoint'])
        model, vocab = checkpoint.model, checkpoint.vocab
        mode = config['decode_mode']
        limit = model.config.max_positions

        decoded = skipped = 0
        for number, sample_id, tokens in read_inputs(options['input']):
            if len(tokens) > limit:
                logger.error('%s:%d: input of %d tokens exceeds max_positions %d; skipped',
                             options['input'], number, len(tokens), limit)
                skipped += 1
                continue
            result = decode(
                model, vocab.encode(tokens), mode,
                beam=config['beam'], length_penalty=config['length_penalty'],
                max_len=config['max_len'], n_ar=config['n_ar'], n_nar=config['n_nar'],
            )
            record = result.to_json(sample_id, mode, vocab)
            if not options['with_latency']:
                record.pop('latency_ms')
            self.emit(record)
            decoded += 1

        logger.info('Decodificados %d exemplos (%s); %d pulados', decoded, mode, skipped)
