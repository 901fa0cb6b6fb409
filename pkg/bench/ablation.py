"""
Ablação de estratégias de pré-treino, todas seguidas do mesmo finetune NAR:

    scratch  sem pré-treino
    ar       pré-treino AR (um stream)
    nar      pré-treino só com [MASK]
    bang     pré-treino n-stream completo
"""

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np
import torch

from bang_toolkit.exceptions import ConfigError
from corpus.ingest import encode_documents
from corpus.synth import toy_text_corpus
from corpus.vocab import tokenize
from decoding.engines import nar_decode
from modeling.network import BangModel
from objectives.pretraining import span_mask_batches
from objectives.training import Trainer, iterate_batches

from .metrics import bleu, exact_match

logger = logging.getLogger(__name__)

ARMS = ('scratch', 'ar', 'nar', 'bang')
PRETRAIN_MODE = {'ar': 'ar', 'nar': 'nar', 'bang': 'bang'}


@dataclass(frozen=True)
class ArmBudget:
    pretrain_steps: int
    finetune_steps: int


@dataclass(frozen=True)
class TrainingPlan:
    lr: float = 1e-3
    warmup_steps: int = 100
    smoothing: float = 0.1
    batch_size: int = 32
    max_len: int = 16


def _budgets(budget_steps):
    """Orçamentos por braço; finetune idêntico em todos e pré-treino idêntico nos pré-treinados"""
    if isinstance(budget_steps, ArmBudget):
        budgets = {arm: budget_steps for arm in ARMS}
        budgets['scratch'] = ArmBudget(0, budget_steps.finetune_steps)
        return budgets
    budgets = dict(budget_steps)
    if set(budgets) != set(ARMS):
        raise ConfigError(f'budgets must cover exactly the arms {ARMS}')
    finetune = {b.finetune_steps for b in budgets.values()}
    pretrain = {budgets[arm].pretrain_steps for arm in PRETRAIN_MODE}
    if len(finetune) != 1 or len(pretrain) != 1 or budgets['scratch'].pretrain_steps != 0:
        raise ConfigError('mismatched budgets')
    return budgets


@dataclass
class AblationTable:
    rows: list

    def values(self, arm, metric):
        return [row['value'] for row in self.rows if row['arm'] == arm and row['metric'] == metric]

    def summary(self):
        """{arm: {metric: (média, desvio padrão amostral)}}"""
        result = {}
        for row in self.rows:
            result.setdefault(row['arm'], {}).setdefault(row['metric'], [])
        for arm, metrics in result.items():
            for metric in metrics:
                values = np.array(self.values(arm, metric), dtype=float)
                stdev = float(values.std(ddof=1)) if values.size > 1 else 0.0
                metrics[metric] = (float(values.mean()), stdev)
        return result

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=['arm', 'seed', 'metric', 'value'], lineterminator='\n')
        writer.writeheader()
        writer.writerows(self.rows)
        return buffer.getvalue()

    def as_table(self):
        lines = [f'{"arm":<8}  {"metric":<12}  {"mean":>8}  {"stdev":>8}']
        for arm, metrics in self.summary().items():
            for metric, (mean, stdev) in metrics.items():
                lines.append(f'{arm:<8}  {metric:<12}  {mean:8.2f}  {stdev:8.2f}')
        return '\n'.join(lines)


def pretraining_examples(dataset, n_streams, seed):
    """Exemplos de span-mask sobre o corpus de texto do split de treino"""
    documents = [tokenize(doc) for doc in toy_text_corpus(dataset.train, dataset.vocab)]
    return list(span_mask_batches(encode_documents(documents, dataset.vocab), max_span=n_streams, rng=seed))


def _train(model, examples, mode, steps, plan, seed):
    if steps == 0:
        return
    trainer = Trainer(model, lr=plan.lr, warmup_steps=plan.warmup_steps, smoothing=plan.smoothing)
    trainer.fit(iterate_batches(examples, plan.batch_size, seed), mode, steps)


def run_arm(arm, dataset, model_config, budget, plan, seed, pretrain_examples):
    """Pré-treina conforme o braço, faz o finetune NAR e avalia no teste"""
    torch.manual_seed(seed)
    model = BangModel(model_config.replace(seed=seed))
    if arm != 'scratch':
        _train(model, pretrain_examples, PRETRAIN_MODE[arm], budget.pretrain_steps, plan, seed)
    _train(model, dataset.train, 'nar', budget.finetune_steps, plan, seed)

    hypotheses = [nar_decode(model, pair.source, plan.max_len).tokens for pair in dataset.test]
    references = [list(pair.target) for pair in dataset.test]
    logger.info('Braço %s semente %s: finetune de %d passos', arm, seed, budget.finetune_steps)
    return {
        'BLEU-4': bleu(hypotheses, references),
        'exact-match': exact_match(hypotheses, references),
        'finetune-steps': float(budget.finetune_steps),
    }


def ablation_run(dataset, model_config, seeds, budget_steps, plan=None):
    """Executa os quatro braços para cada semente; mesmo (semente, dados) gera a mesma tabela"""
    budgets = _budgets(budget_steps)
    plan = plan or TrainingPlan()
    seeds = list(seeds)
    if not seeds:
        raise ConfigError('ablation needs at least one seed')

    rows = []
    for seed in seeds:
        examples = pretraining_examples(dataset, model_config.n_streams, seed)
        for arm in ARMS:
            scores = run_arm(arm, dataset, model_config, budgets[arm], plan, seed, examples)
            rows.extend({'arm': arm, 'seed': seed, 'metric': m, 'value': v} for m, v in scores.items())
    return AblationTable(rows)


def ablation_gate(table, margin):
    """BLEU-4 médio do braço bang supera o de scratch por pelo menos `margin`"""
    summary = table.summary()
    return summary['bang']['BLEU-4'][0] - summary['scratch']['BLEU-4'][0] >= margin
