"""
Base dos comandos de gerenciamento: flags --kebab-case para campos da
RunConfig, precedência flag > arquivo --config > padrão, saída JSON-lines
no stdout e ToolkitError convertido em CommandError.
"""

import argparse
import json
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from rest_framework import serializers

from bang_toolkit.exceptions import ConfigError, CorpusError, ToolkitError
from bench.reports import config_hash
from corpus.vocab import Vocabulary

from .models import TrainingRun
from .serializers import RunConfigSerializer

logger = logging.getLogger(__name__)

MODEL_FIELDS = (
    'enc_layers', 'dec_layers', 'd_model', 'n_heads', 'd_ffn', 'vocab_size',
    'max_positions', 'n_streams', 'rel_buckets', 'rel_max_distance', 'dropout', 'seed',
)
TRAINING_FIELDS = ('lr', 'warmup_steps', 'smoothing', 'clip_norm', 'batch_size', 'max_steps', 'eval_every')
DECODE_FIELDS = ('decode_mode', 'beam', 'length_penalty', 'max_len', 'n_ar', 'n_nar')


def flag_name(name):
    return '--' + name.replace('_', '-')


def _argument_type(field):
    if isinstance(field, serializers.IntegerField):
        return int
    if isinstance(field, serializers.FloatField):
        return float
    return str


def add_config_arguments(parser, names, aliases=None):
    """Uma flag por campo; padrão None para que arquivo e padrão da RunConfig prevaleçam"""
    aliases = aliases or {}
    fields = RunConfigSerializer().fields
    parser.add_argument('--config', help='Arquivo JSON com campos da RunConfig')
    for name in names:
        field = fields[name]
        kwargs = {'dest': name, 'default': None, 'type': _argument_type(field)}
        if isinstance(field, serializers.ChoiceField):
            kwargs['choices'] = list(field.choices)
        parser.add_argument(aliases.get(name, flag_name(name)), **kwargs)


def load_config_file(path):
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise ConfigError(f'config file {path} does not exist') from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f'config file {path} is not valid JSON: {exc}') from exc
    if not isinstance(data, dict):
        raise ConfigError(f'config file {path} must hold a JSON object')
    return data


def resolve_run_config(options, names):
    """Mescla arquivo e flags e valida com o RunConfigSerializer"""
    data = load_config_file(options['config']) if options.get('config') else {}
    for name in names:
        if options.get(name) is not None:
            data[name] = options[name]
    serializer = RunConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError(f'invalid run config: {json.dumps(serializer.errors, sort_keys=True)}')
    return dict(serializer.validated_data)


class ToolkitCommand(BaseCommand):
    """Comando com RunConfig, saída JSON-lines e erros do toolkit como CommandError"""

    config_fields = ()
    flag_aliases = {}

    def add_arguments(self, parser):
        if self.config_fields:
            add_config_arguments(parser, self.config_fields, self.flag_aliases)
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except ToolkitError as exc:
            raise CommandError(f'{type(exc).__name__}: {exc}') from exc

    def run(self, **options):
        raise NotImplementedError('subclasses of ToolkitCommand must provide a run() method')

    def effective_config(self, options):
        config = resolve_run_config(options, self.config_fields)
        logger.info('Configuração efetiva: %s', json.dumps(config, sort_keys=True))
        return config

    def emit(self, record):
        self.stdout.write(json.dumps(record, sort_keys=True, ensure_ascii=False))


def open_run(command, mode, run_config):
    """Registra a execução; sem banco migrado o registro é pulado"""
    try:
        return TrainingRun.objects.create(
            command=command,
            mode=mode,
            config=run_config,
            config_hash=config_hash(run_config),
            seed=run_config['seed'],
            checkpoint_dir=run_config['checkpoint_dir'],
        )
    except DatabaseError as exc:
        logger.warning('Registro de execuções indisponível (%s); rode "manage.py migrate"', exc)
        return None


def int_list(text):
    """Tipo argparse para listas '1,2,3'"""
    try:
        return [int(item) for item in text.split(',') if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f'expected comma-separated integers, got {text!r}') from exc


def read_vocab(path):
    try:
        return Vocabulary.load(path)
    except FileNotFoundError as exc:
        raise CorpusError(f'vocabulary file {path} does not exist') from exc
