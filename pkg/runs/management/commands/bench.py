import json
import logging
from pathlib import Path

from django.conf import settings

from bang_toolkit.exceptions import ConfigError, GateFailure
from bench.ablation import ArmBudget, TrainingPlan, ablation_gate, ablation_run
from bench.gates import acceptance_failures
from bench.reports import evaluate_model
from corpus.synth import read_dataset, synth_task
from decoding.engines import DECODE_MODES
from modeling.checkpoint import load_checkpoint
from runs.cli import MODEL_FIELDS, ToolkitCommand, int_list
from runs.serializers import model_config

logger = logging.getLogger(__name__)

DECODE_OPTIONS = ('beam', 'length_penalty', 'max_len', 'n_ar', 'n_nar')


class Command(ToolkitCommand):
    help = 'Benchmark de qualidade e latência dos três modos, ou a ablação de pré-treino; --gate aplica os limiares'

    config_fields = MODEL_FIELDS + ('lr', 'warmup_steps', 'smoothing', 'batch_size') + DECODE_OPTIONS

    def add_command_arguments(self, parser):
        parser.add_argument('--gate', action='store_true', help='Sai com código 1 se algum critério falhar')
        parser.add_argument('--checkpoint', help='Checkpoint multi a medir')
        parser.add_argument('--test-file', help='Dataset de teste JSON-lines')
        parser.add_argument('--samples', type=int, default=10, help='Amostras usadas na medição de latência')
        parser.add_argument(
            '--latency-len', type=int, default=settings.BANG_TOOLKIT['GATES']['LATENCY_MIN_OUTPUT_LEN'],
            help='Comprimento de saída fixo na medição de latência; 0 usa o comprimento natural',
        )
        parser.add_argument('--report', help='Grava o relatório JSON neste caminho')

        ablation = parser.add_argument_group('ablação')
        ablation.add_argument('--ablation', action='store_true', help='Roda os braços scratch/ar/nar/bang')
        ablation.add_argument('--seeds', type=int_list, default=[1, 2, 3])
        ablation.add_argument('--payload', type=int, default=32, help='Tamanho do vocabulário de carga da tarefa sort')
        ablation.add_argument('--len-range', type=int_list, default=[4, 12])
        ablation.add_argument('--pairs', type=int, default=2000)
        ablation.add_argument('--pretrain-steps', type=int, default=300)
        ablation.add_argument('--finetune-steps', type=int, default=600)
        ablation.add_argument('--csv', help='Grava a tabela da ablação em CSV')

    def run(self, **options):
        config = self.effective_config(options)
        if options['ablation']:
            self.run_ablation(config, options)
        else:
            self.run_modes(config, options)

    def run_modes(self, config, options):
        if not options['checkpoint'] or not options['test_file']:
            raise ConfigError('bench needs --checkpoint and --test-file (or --ablation)')
        checkpoint = load_checkpoint(options['checkpoint'])
        pairs = read_dataset(options['test_file'], checkpoint.vocab, checkpoint.model.config.max_positions)
        report = evaluate_model(
            checkpoint.model, pairs, DECODE_MODES, config,
            decode_options={name: config[name] for name in DECODE_OPTIONS},
            with_latency=True, latency_samples=options['samples'], latency_len=options['latency_len'] or None,
        )
        logger.info('Benchmark:\n%s', report.as_table())
        text = report.to_json()
        if options['report']:
            Path(options['report']).write_text(text + '\n', encoding='utf-8')
        self.emit(json.loads(text))

        if options['gate']:
            failures = acceptance_failures(report, config['n_ar'])
            if failures:
                raise GateFailure('; '.join(failures))

    def run_ablation(self, config, options):
        if len(options['len_range']) != 2:
            raise ConfigError(f'--len-range needs two integers, got {options["len_range"]}')
        low, high = options['len_range']
        model = model_config(config)
        dataset = synth_task('sort', options['payload'], (low, high), options['pairs'], config['seed'], model.max_positions)
        plan = TrainingPlan(
            lr=config['lr'], warmup_steps=config['warmup_steps'], smoothing=config['smoothing'],
            batch_size=config['batch_size'], max_len=high,
        )
        table = ablation_run(
            dataset, model, options['seeds'], ArmBudget(options['pretrain_steps'], options['finetune_steps']), plan,
        )
        logger.info('Ablação:\n%s', table.as_table())
        if options['csv']:
            Path(options['csv']).write_text(table.to_csv(), encoding='utf-8')
        summary = {
            arm: {metric: {'mean': mean, 'stdev': stdev} for metric, (mean, stdev) in metrics.items()}
            for arm, metrics in table.summary().items()
        }
        self.emit({'ablation': summary, 'seeds': options['seeds']})

        margin = settings.BANG_TOOLKIT['GATES']['ABLATION_BLEU_MARGIN']
        if options['gate'] and not ablation_gate(table, margin):
            raise GateFailure(f'bang arm does not beat scratch by {margin} BLEU-4')
