"""
Laço de treino: collate, perda por modo, Adam + clip + warmup/inverse-sqrt.

Modos:
    bang  decodificador n-stream completo (pré-treino e finetune multi-stream)
    ar    um stream de predição (teacher forcing)
    nar   uma passada causal sobre entrada só de [MASK]
"""

import logging
import math
import random
import time
from dataclasses import dataclass
from functools import partial

import torch
from scipy.stats import spearmanr
from torch.optim.lr_scheduler import LambdaLR

from bang_toolkit.exceptions import ConfigError, NonFiniteLossError, ShapeError
from corpus.vocab import MASK_ID, PAD_ID
from masking.layout import StreamLayout

from .losses import bang_loss, nar_breakdown

logger = logging.getLogger(__name__)

MODES = ('bang', 'ar', 'nar')


@dataclass
class Batch:
    source: torch.Tensor
    target: torch.Tensor
    lengths: torch.Tensor

    def __len__(self):
        return self.source.size(0)


def collate(examples):
    """Empilha exemplos (source, decoder_target) com [PAD] à direita"""
    if not examples:
        raise ShapeError('cannot collate an empty batch')
    sources = [list(ex.source) for ex in examples]
    targets = [ex.decoder_target for ex in examples]
    width_src = max(len(s) for s in sources)
    width_tgt = max(len(t) for t in targets)
    return Batch(
        source=torch.tensor([s + [PAD_ID] * (width_src - len(s)) for s in sources], dtype=torch.long),
        target=torch.tensor([t + [PAD_ID] * (width_tgt - len(t)) for t in targets], dtype=torch.long),
        lengths=torch.tensor([len(t) for t in targets], dtype=torch.long),
    )


def iterate_batches(examples, batch_size, seed):
    """Épocas infinitas, embaralhadas de forma determinística pela semente"""
    examples = list(examples)
    if not examples:
        raise ShapeError('no training examples')
    rng = random.Random(seed)
    while True:
        order = list(range(len(examples)))
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            yield collate([examples[i] for i in order[start:start + batch_size]])


def compute_loss(model, batch, mode, smoothing=0.0):
    if mode not in MODES:
        raise ConfigError(f'unknown training mode {mode!r}; expected one of {MODES}')
    states = model.encode(batch.source)
    width = batch.target.size(1)
    if mode == 'nar':
        masks = torch.full_like(batch.target, MASK_ID)
        logits = model.causal_forward(masks, states)
        return nar_breakdown(logits, batch.target, smoothing, batch.lengths)

    n_streams = 1 if mode == 'ar' else model.config.n_streams
    layout = StreamLayout.for_target(width, n_streams)
    logits = model.nstream_forward(batch.target, states, layout)
    return bang_loss(logits, batch.target, layout, smoothing, batch.lengths)


def warmup_inverse_sqrt(step, warmup):
    """Fator de lr: linear até o pico em `warmup` passos, depois 1/sqrt"""
    if warmup < 1:
        return 1.0
    step = max(step, 1)
    if step <= warmup:
        return step / warmup
    return math.sqrt(warmup / step)


class Trainer:
    """Dono exclusivo do otimizador e da agenda de lr de um modelo"""

    def __init__(self, model, lr=1e-4, warmup_steps=1000, smoothing=0.1, clip_norm=1.0):
        if lr <= 0 or clip_norm <= 0:
            raise ConfigError(f'lr and clip_norm must be positive, got {lr}, {clip_norm}')
        if not 0.0 <= smoothing < 1.0:
            raise ConfigError(f'label smoothing must be in [0, 1), got {smoothing}')
        self.model = model
        self.smoothing = smoothing
        self.clip_norm = clip_norm
        self.optimizer = torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)
        self.scheduler = LambdaLR(self.optimizer, partial(warmup_inverse_sqrt, warmup=warmup_steps))
        self.step = 0

    @property
    def lr(self):
        return self.optimizer.param_groups[0]['lr']

    def train_step(self, batch, mode):
        """Um passo de otimização; retorna (LossBreakdown, registro de log)"""
        started = time.perf_counter()
        lr = self.lr
        self.model.train()
        breakdown = compute_loss(self.model, batch, mode, self.smoothing)
        loss = breakdown.mean
        if not torch.isfinite(loss):
            raise NonFiniteLossError(self.step, float(loss))

        self.optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.clip_norm)
        self.optimizer.step()
        self.scheduler.step()
        self.step += 1

        record = {
            'step': self.step,
            'mode': mode,
            'lr': lr,
            **breakdown.as_log_dict(),
            'wall_ms': (time.perf_counter() - started) * 1000.0,
        }
        return breakdown, record

    def fit(self, batches, mode, steps, on_step=None):
        """Executa `steps` passos consumindo o iterador de lotes"""
        records = []
        for _ in range(steps):
            _, record = self.train_step(next(batches), mode)
            records.append(record)
            if on_step is not None:
                on_step(record)
        return records

    def state_dict(self):
        return {
            'step': self.step,
            'optimizer': self.optimizer.state_dict(),
            'scheduler': self.scheduler.state_dict(),
            'torch_rng': torch.get_rng_state(),
        }

    def load_state_dict(self, state):
        self.step = state['step']
        self.optimizer.load_state_dict(state['optimizer'])
        self.scheduler.load_state_dict(state['scheduler'])
        torch.set_rng_state(state['torch_rng'])


@torch.no_grad()
def evaluate_loss(model, examples, mode, smoothing=0.0, batch_size=32):
    """Perda média por célula válida sobre um conjunto (sem dropout)"""
    model.eval()
    examples = list(examples)
    total, terms = 0.0, 0
    for start in range(0, len(examples), batch_size):
        breakdown = compute_loss(model, collate(examples[start:start + batch_size]), mode, smoothing)
        total += float(breakdown.total)
        terms += breakdown.n_terms
    return total / max(terms, 1)


@dataclass
class StreamProfile:
    mean_loss: dict
    spearman: float

    @property
    def increasing(self):
        return self.spearman > 0


@torch.no_grad()
def stream_loss_profile(model, examples, batch_size=32):
    """Perda média por termo em cada stream s e sua correlação de Spearman com s"""
    model.eval()
    examples = list(examples)
    sums, counts = {}, {}
    for start in range(0, len(examples), batch_size):
        breakdown = compute_loss(model, collate(examples[start:start + batch_size]), 'bang')
        per_stream = breakdown.cell_losses.sum(dim=(0, 2))
        per_count = breakdown.valid.sum(dim=(0, 2))
        for index in range(per_stream.size(0)):
            stream = index + 1
            sums[stream] = sums.get(stream, 0.0) + float(per_stream[index])
            counts[stream] = counts.get(stream, 0) + int(per_count[index])

    mean_loss = {s: sums[s] / counts[s] for s in sorted(sums) if counts[s]}
    if len(mean_loss) < 2:
        return StreamProfile(mean_loss=mean_loss, spearman=float('nan'))
    streams = list(mean_loss)
    rho, _ = spearmanr(streams, [mean_loss[s] for s in streams])
    logger.info('Perfil de perda por stream: %s (spearman=%.3f)', mean_loss, rho)
    return StreamProfile(mean_loss=mean_loss, spearman=float(rho))
