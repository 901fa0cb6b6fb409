import copy
import logging
from pathlib import Path

import torch

from bang_toolkit.exceptions import ConfigError, CorpusError, ToolkitError
from corpus.synth import read_dataset
from corpus.vocab import UNK_ID
from modeling.checkpoint import checkpoint_lock, load_checkpoint, save_checkpoint
from modeling.network import BangModel
from objectives.training import Trainer, evaluate_loss, iterate_batches
from runs.cli import MODEL_FIELDS, TRAINING_FIELDS, ToolkitCommand, open_run, read_vocab
from runs.serializers import model_config

logger = logging.getLogger(__name__)

# multi usa o objetivo n-stream completo: um checkpoint atende ar, nar e semi
OBJECTIVE = {'ar': 'ar', 'nar': 'nar', 'multi': 'bang', 'bang': 'bang'}

BEST_DIR = 'best'


class Command(ToolkitCommand):
    help = 'Finetune em um dataset paralelo (modos ar, nar ou multi), com seleção do melhor checkpoint no dev'

    config_fields = MODEL_FIELDS + TRAINING_FIELDS + (
        'mode', 'train_file', 'dev_file', 'vocab_file', 'init_checkpoint', 'checkpoint_dir',
    )

    def run(self, **options):
        config = self.effective_config(options)
        if not config['train_file'] or not config['checkpoint_dir']:
            raise ConfigError('finetune needs --train-file and --checkpoint-dir')
        objective = OBJECTIVE[config['mode']]

        model, vocab = self.initial_model(config)
        self.check_vocab(config, vocab)
        limit = model.config.max_positions
        train = read_dataset(config['train_file'], vocab, limit)
        self.check_known_tokens(train, config['train_file'])
        dev = read_dataset(config['dev_file'], vocab, limit) if config['dev_file'] else []
        logger.info('Finetune %s: %d pares de treino, %d de dev', config['mode'], len(train), len(dev))

        directory = Path(config['checkpoint_dir'])
        with checkpoint_lock(directory):
            torch.manual_seed(config['seed'])
            trainer = Trainer(
                model, lr=config['lr'], warmup_steps=config['warmup_steps'],
                smoothing=config['smoothing'], clip_norm=config['clip_norm'],
            )
            batches = iterate_batches(train, config['batch_size'], config['seed'])
            self.best = None
            dev_loss = None

            run = open_run('finetune', config['mode'], config)
            try:
                while trainer.step < config['max_steps']:
                    _, record = trainer.train_step(next(batches), objective)
                    self.emit(record)
                    every = config['eval_every']
                    if dev and every and trainer.step % every == 0 and trainer.step < config['max_steps']:
                        self.evaluate(model, dev, objective, trainer.step)
                if dev:
                    dev_loss = self.evaluate(model, dev, objective, trainer.step)

                meta = {'command': 'finetune', 'mode': config['mode'], 'step': trainer.step, 'dev_loss': dev_loss}
                if self.best is not None:
                    meta['best_dev_loss'], meta['best_step'] = self.best['dev_loss'], self.best['step']
                save_checkpoint(directory, model, vocab, run_config=config, meta=meta)
                # Depois do final: regravar o diretório principal apagaria o subdiretório
                if self.best is not None:
                    best_model = BangModel(model.config)
                    best_model.load_state_dict(self.best['state'])
                    save_checkpoint(
                        directory / BEST_DIR, best_model, vocab, run_config=config,
                        meta={'command': 'finetune', 'mode': config['mode'],
                              'step': self.best['step'], 'dev_loss': self.best['dev_loss']},
                    )
            except ToolkitError as exc:
                if run is not None:
                    run.mark_failed(exc, trainer.step)
                raise
            if run is not None:
                run.mark_finished(trainer.step, self.best['dev_loss'] if self.best else None)

        self.emit({
            'event': 'finished', 'command': 'finetune', 'step': trainer.step,
            'dev_loss': dev_loss, 'checkpoint': str(directory),
        })

    def initial_model(self, config):
        if config['init_checkpoint']:
            checkpoint = load_checkpoint(config['init_checkpoint'])
            logger.info('Partindo de %s (passo %s)', checkpoint.path, checkpoint.meta.get('step'))
            return checkpoint.model, checkpoint.vocab

        vocab_path = config['vocab_file'] or Path(config['train_file']).with_name('vocab.txt')
        vocab = read_vocab(vocab_path)
        wanted = model_config(config)
        if len(vocab) > wanted.vocab_size:
            raise ConfigError(f'vocabulary has {len(vocab)} tokens but vocab_size is {wanted.vocab_size}')
        logger.info('Sem checkpoint inicial: modelo novo (semente %d)', wanted.seed)
        return BangModel(wanted), vocab

    def check_vocab(self, config, vocab):
        """O vocab.txt do dataset, quando existe, precisa ser o do checkpoint"""
        if not config['init_checkpoint']:
            return
        path = Path(config['vocab_file'] or Path(config['train_file']).with_name('vocab.txt'))
        if path.exists() and read_vocab(path) != vocab:
            raise CorpusError(f'vocab mismatch between checkpoint {config["init_checkpoint"]} and dataset {path}')

    def check_known_tokens(self, pairs, path):
        for pair in pairs:
            if UNK_ID in pair.source or UNK_ID in pair.target:
                raise CorpusError(f'vocab mismatch: {path} pair {pair.id} has tokens outside the vocabulary')

    def evaluate(self, model, dev, objective, step):
        dev_loss = evaluate_loss(model, dev, objective)
        self.emit({'event': 'eval', 'step': step, 'dev_loss': dev_loss})
        if self.best is None or dev_loss < self.best['dev_loss']:
            self.best = {'dev_loss': dev_loss, 'step': step, 'state': copy.deepcopy(model.state_dict())}
        return dev_loss
