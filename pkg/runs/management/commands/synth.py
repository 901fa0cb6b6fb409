import logging
from pathlib import Path

from bang_toolkit.exceptions import ConfigError
from corpus.synth import TASKS, synth_task, toy_text_corpus, write_task
from runs.cli import ToolkitCommand, int_list

logger = logging.getLogger(__name__)


class Command(ToolkitCommand):
    help = 'Gera uma tarefa sintética (train/dev/test.jsonl, vocab.txt) e um corpus de pré-treino'

    def add_command_arguments(self, parser):
        parser.add_argument('--task', choices=TASKS, default='copy')
        parser.add_argument('--payload', type=int, default=32, help='Tokens de carga w0..w{n-1}')
        parser.add_argument('--len-range', type=int_list, default=[4, 12])
        parser.add_argument('--pairs', type=int, default=5000)
        parser.add_argument('--seed', type=int, default=1)
        parser.add_argument('--doc-len', type=int, default=64, help='Tokens por documento do corpus de pré-treino')
        parser.add_argument('--out', required=True, help='Diretório de saída')

    def run(self, **options):
        if len(options['len_range']) != 2:
            raise ConfigError(f'--len-range needs two integers, got {options["len_range"]}')
        dataset = synth_task(
            options['task'], options['payload'], tuple(options['len_range']), options['pairs'], options['seed'],
        )
        directory = write_task(options['out'], dataset)
        documents = toy_text_corpus(dataset.train, dataset.vocab, options['doc_len'])
        corpus = Path(directory) / 'corpus.txt'
        corpus.write_text(''.join(f'{doc}\n' for doc in documents), encoding='utf-8')
        logger.info('Tarefa %s gravada em %s', options['task'], directory)
        self.emit({
            'task': options['task'],
            'out': str(directory),
            'train': len(dataset.train),
            'dev': len(dataset.dev),
            'test': len(dataset.test),
            'documents': len(documents),
        })
