import logging
from pathlib import Path

import torch

from bang_toolkit.exceptions import ConfigError, ToolkitError
from corpus.ingest import encode_documents, ingest_text
from corpus.vocab import build_vocab
from modeling.checkpoint import TRAINER_FILE, checkpoint_lock, load_checkpoint, save_checkpoint
from modeling.network import BangModel
from objectives.pretraining import span_mask_batches
from objectives.training import Trainer, iterate_batches
from runs.cli import MODEL_FIELDS, TRAINING_FIELDS, ToolkitCommand, open_run, read_vocab
from runs.serializers import model_config

logger = logging.getLogger(__name__)


class Command(ToolkitCommand):
    help = 'Pré-treino com span masking sobre um corpus de texto; retoma de um checkpoint existente'

    config_fields = MODEL_FIELDS + TRAINING_FIELDS + (
        'mode', 'block', 'mask_ratio', 'corpus', 'vocab_file', 'checkpoint_dir',
    )

    def run(self, **options):
        config = self.effective_config(options)
        if not config['corpus'] or not config['checkpoint_dir']:
            raise ConfigError('pretrain needs --corpus and --checkpoint-dir')
        mode = 'bang' if config['mode'] == 'multi' else config['mode']
        wanted = model_config(config)
        if config['block'] > wanted.max_positions:
            raise ConfigError(f'block {config["block"]} exceeds max_positions {wanted.max_positions}')

        documents = ingest_text(config['corpus'])
        directory = Path(config['checkpoint_dir'])
        with checkpoint_lock(directory):
            model, vocab, trainer_state = self.restore_or_init(directory, wanted, config, documents)
            examples = list(span_mask_batches(
                encode_documents(documents, vocab),
                block=config['block'], ratio=config['mask_ratio'], max_span=wanted.n_streams, rng=wanted.seed,
            ))
            logger.info('Pré-treino (%s): %d exemplos, vocabulário de %d', mode, len(examples), len(vocab))

            if trainer_state is None:
                torch.manual_seed(wanted.seed)
            trainer = Trainer(
                model, lr=config['lr'], warmup_steps=config['warmup_steps'],
                smoothing=config['smoothing'], clip_norm=config['clip_norm'],
            )
            if trainer_state is not None:
                trainer.load_state_dict(trainer_state)
                logger.info('Retomando do passo %d', trainer.step)

            batches = iterate_batches(examples, config['batch_size'], wanted.seed)
            for _ in range(trainer.step):
                next(batches)

            run = open_run('pretrain', mode, config)
            try:
                while trainer.step < config['max_steps']:
                    _, record = trainer.train_step(next(batches), mode)
                    self.emit(record)
                    every = config['eval_every']
                    if every and trainer.step % every == 0 and trainer.step < config['max_steps']:
                        self.save(directory, model, vocab, config, trainer, mode)
                self.save(directory, model, vocab, config, trainer, mode)
            except ToolkitError as exc:
                if run is not None:
                    run.mark_failed(exc, trainer.step)
                raise
            if run is not None:
                run.mark_finished(trainer.step)

        self.emit({'event': 'finished', 'command': 'pretrain', 'step': trainer.step, 'checkpoint': str(directory)})

    def restore_or_init(self, directory, wanted, config, documents):
        """Checkpoint com estado do treinador é retomado; senão parte da inicialização"""
        if (directory / TRAINER_FILE).exists():
            checkpoint = load_checkpoint(directory)
            if checkpoint.model.config != wanted:
                raise ConfigError(f'checkpoint {directory} was written with a different model config')
            state = torch.load(checkpoint.trainer_state_path, weights_only=False)
            return checkpoint.model, checkpoint.vocab, state

        if config['vocab_file']:
            vocab = read_vocab(config['vocab_file'])
        else:
            vocab = build_vocab(documents, wanted.vocab_size)
        if len(vocab) > wanted.vocab_size:
            raise ConfigError(f'vocabulary has {len(vocab)} tokens but vocab_size is {wanted.vocab_size}')
        return BangModel(wanted), vocab, None

    def save(self, directory, model, vocab, config, trainer, mode):
        save_checkpoint(
            directory, model, vocab,
            run_config=config,
            meta={'command': 'pretrain', 'mode': mode, 'step': trainer.step},
            trainer_state=trainer.state_dict(),
        )
