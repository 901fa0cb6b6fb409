import json
import logging
from pathlib import Path

from bang_toolkit.exceptions import ConfigError, CorpusError
from bench.metrics import score_all
from bench.reports import evaluate_model
from corpus.synth import read_dataset
from corpus.vocab import tokenize
from decoding.engines import DECODE_MODES
from modeling.checkpoint import load_checkpoint
from runs.cli import ToolkitCommand

logger = logging.getLogger(__name__)

DECODE_OPTIONS = ('beam', 'length_penalty', 'max_len', 'n_ar', 'n_nar')


def _lines(path, what):
    try:
        return Path(path).read_text(encoding='utf-8').splitlines()
    except FileNotFoundError as exc:
        raise CorpusError(f'{what} file {path} does not exist') from exc


def read_references(path):
    """Alvos tokenizados de um dataset JSON-lines"""
    references = []
    for number, line in enumerate(_lines(path, 'test'), start=1):
        if not line.strip():
            continue
        try:
            references.append(tokenize(json.loads(line)['tgt']))
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise CorpusError(f'{path}:{number}: malformed dataset line ({exc})') from exc
    return references


def read_hypotheses(path):
    """Uma hipótese por linha: saída JSON do decode (campo tokens) ou texto puro"""
    hypotheses = []
    for line in _lines(path, 'hypothesis'):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            record = None
        if isinstance(record, dict) and isinstance(record.get('tokens'), list):
            hypotheses.append([str(token) for token in record['tokens']])
        else:
            hypotheses.append(tokenize(line))
    if not hypotheses:
        raise CorpusError('empty corpus')
    return hypotheses


def parse_modes(text):
    modes = [mode.strip() for mode in text.split(',') if mode.strip()]
    unknown = [mode for mode in modes if mode not in DECODE_MODES]
    if not modes or unknown:
        raise ConfigError(f'modes must be a subset of {DECODE_MODES}, got {text!r}')
    return modes


class Command(ToolkitCommand):
    help = 'Avalia um checkpoint (ou um arquivo de hipóteses) contra um dataset de teste'

    config_fields = DECODE_OPTIONS + ('seed',)

    def add_command_arguments(self, parser):
        parser.add_argument('--test-file', required=True, help='Dataset JSON-lines com src/tgt')
        parser.add_argument('--checkpoint', help='Diretório do checkpoint a decodificar')
        parser.add_argument('--hypotheses', help='Pontua hipóteses prontas em vez de decodificar')
        parser.add_argument('--modes', default=','.join(DECODE_MODES), help='Modos separados por vírgula')
        parser.add_argument('--with-latency', action='store_true')
        parser.add_argument('--report', help='Grava o relatório JSON neste caminho')

    def run(self, **options):
        config = self.effective_config(options)
        if options['hypotheses']:
            hypotheses = read_hypotheses(options['hypotheses'])
            metrics = score_all(hypotheses, read_references(options['test_file']))
            self.emit({'hypotheses': options['hypotheses'], 'metrics': metrics})
            return
        if not options['checkpoint']:
            raise ConfigError('eval needs --checkpoint or --hypotheses')

        checkpoint = load_checkpoint(options['checkpoint'])
        pairs = read_dataset(options['test_file'], checkpoint.vocab, checkpoint.model.config.max_positions)
        report = evaluate_model(
            checkpoint.model, pairs, parse_modes(options['modes']), config,
            decode_options={name: config[name] for name in DECODE_OPTIONS},
            with_latency=options['with_latency'],
        )
        logger.info('Relatório:\n%s', report.as_table())
        text = report.to_json()
        if options['report']:
            Path(options['report']).write_text(text + '\n', encoding='utf-8')
        self.emit(json.loads(text))
