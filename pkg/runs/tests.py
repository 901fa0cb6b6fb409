import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path

from django.apps import apps
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings, tag

from bang_toolkit.exceptions import ConfigError
from corpus.vocab import Vocabulary
from modeling.checkpoint import load_checkpoint, weights_bytes
from modeling.config import ModelConfig
from modeling.network import BangModel

from .cli import resolve_run_config
from .models import RunStatus, TrainingRun
from .serializers import RunConfigSerializer

TINY_MODEL = {
    'enc_layers': 1, 'dec_layers': 1, 'd_model': 16, 'n_heads': 2, 'd_ffn': 32, 'vocab_size': 16,
    'max_positions': 80, 'n_streams': 4, 'rel_buckets': 8, 'rel_max_distance': 16, 'dropout': 0.0, 'seed': 0,
}
TINY_TRAINING = {'lr': 1e-3, 'warmup_steps': 2, 'batch_size': 4, 'eval_every': 2}
FAST_LATENCY = {**settings.BANG_TOOLKIT, 'LATENCY': {'WARMUP': 1, 'REPS': 2}}


def json_lines(stream):
    return [json.loads(line) for line in stream.getvalue().splitlines() if line.strip()]


class CommandTestMixin:
    """Diretório temporário com uma tarefa copy pequena e um arquivo de config"""

    def setUp(self):
        super().setUp()
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)
        self.data = self.tmp / 'copy'
        self.call('synth', '--task', 'copy', '--payload', '10', '--len-range', '3,5',
                  '--pairs', '60', '--seed', '0', '--out', str(self.data))
        self.config = self.tmp / 'run.json'
        self.config.write_text(json.dumps({**TINY_MODEL, **TINY_TRAINING}), encoding='utf-8')

    def call(self, name, *args):
        out = StringIO()
        call_command(name, *args, stdout=out, stderr=StringIO())
        return json_lines(out)

    def pretrain(self, directory, steps, *extra):
        return self.call(
            'pretrain', '--config', str(self.config), '--corpus', str(self.data / 'corpus.txt'),
            '--vocab-file', str(self.data / 'vocab.txt'), '--checkpoint-dir', str(directory),
            '--block', '32', '--max-steps', str(steps), *extra,
        )

    def finetune(self, directory, init, mode, steps, *extra):
        args = [
            'finetune', '--config', str(self.config), '--mode', mode,
            '--train-file', str(self.data / 'train.jsonl'), '--dev-file', str(self.data / 'dev.jsonl'),
            '--checkpoint-dir', str(directory), '--max-steps', str(steps), *extra,
        ]
        if init is not None:
            args += ['--init-checkpoint', str(init)]
        return self.call(*args)


class RunConfigTests(SimpleTestCase):
    """Testes da RunConfig"""

    def test_every_field_has_a_default(self):
        serializer = RunConfigSerializer(data={})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        config = serializer.validated_data
        self.assertEqual(ModelConfig.from_dict(config), ModelConfig.desk())
        self.assertEqual((config['lr'], config['beam'], config['n_ar'], config['smoothing']), (1e-4, 4, 5, 0.1))

    def test_unknown_keys_rejected(self):
        serializer = RunConfigSerializer(data={'lr': 1e-3, 'learning_rate': 1e-3})
        self.assertFalse(serializer.is_valid())
        self.assertIn('learning_rate', serializer.errors)

    def test_invalid_values_rejected(self):
        self.assertFalse(RunConfigSerializer(data={'smoothing': 1.0}).is_valid())
        self.assertFalse(RunConfigSerializer(data={'lr': 0.0}).is_valid())
        self.assertFalse(RunConfigSerializer(data={'d_model': 30, 'n_heads': 4}).is_valid())

    def test_flag_beats_file_beats_default(self):
        path = Path(tempfile.mkdtemp()) / 'config.json'
        self.addCleanup(shutil.rmtree, path.parent)
        path.write_text(json.dumps({'lr': 0.5, 'batch_size': 7}), encoding='utf-8')
        options = {'config': str(path), 'lr': 0.25, 'batch_size': None, 'warmup_steps': None}
        config = resolve_run_config(options, ('lr', 'batch_size', 'warmup_steps'))
        self.assertEqual((config['lr'], config['batch_size'], config['warmup_steps']), (0.25, 7, 1000))

    def test_bad_config_file(self):
        with self.assertRaises(ConfigError):
            resolve_run_config({'config': '/nonexistent/run.json'}, ())


class TrainingRunTests(TestCase):
    """Testes do registro de execuções"""

    def make_run(self):
        return TrainingRun.objects.create(
            command='finetune', mode='multi', config={'seed': 1}, config_hash='abc', checkpoint_dir='/tmp/x',
        )

    def test_mark_finished(self):
        run = self.make_run()
        self.assertEqual(run.status, RunStatus.RUNNING)
        run.mark_finished(10, best_dev_loss=0.5)
        run.refresh_from_db()
        self.assertTrue(run.is_finished)
        self.assertEqual((run.steps_completed, run.best_dev_loss), (10, 0.5))
        self.assertIsNotNone(run.finished_at)

    def test_mark_failed_only_from_running(self):
        run = self.make_run()
        run.mark_failed('non-finite loss', steps=3)
        run.mark_finished(5)
        run.refresh_from_db()
        self.assertEqual(run.status, RunStatus.FAILED)
        self.assertEqual((run.steps_completed, run.error), (3, 'non-finite loss'))


class SynthAndMaskCommandTests(CommandTestMixin, SimpleTestCase):
    """Testes dos comandos synth e mask_render"""

    def test_synth_writes_task(self):
        for name in ('train.jsonl', 'dev.jsonl', 'test.jsonl', 'vocab.txt', 'corpus.txt'):
            self.assertTrue((self.data / name).exists(), name)
        self.assertEqual(Vocabulary.load(self.data / 'vocab.txt'), Vocabulary.from_payload(10))

    def test_mask_render_grid(self):
        svg = self.tmp / 'mask.svg'
        [record] = self.call('mask_render', '--T', '4', '--streams', '4', '--out', str(svg))
        self.assertEqual(record['rows'], 20)
        self.assertEqual(len(record['grid']), 20)
        self.assertTrue(all(len(row) == 20 for row in record['grid']))
        self.assertTrue(svg.read_text(encoding='utf-8').startswith('<?xml'))

    def test_mask_render_size_cap(self):
        with self.assertRaisesMessage(CommandError, 'size cap exceeded'):
            self.call('mask_render', '--T', '200', '--streams', '100')

    def test_unknown_config_key_is_an_error(self):
        self.config.write_text(json.dumps({'learning_rate': 1.0}), encoding='utf-8')
        with self.assertRaisesMessage(CommandError, 'learning_rate'):
            self.pretrain(self.tmp / 'ckpt', 0)


class PretrainCommandTests(CommandTestMixin, TestCase):
    """Testes do comando pretrain"""

    def test_zero_steps_keeps_initialization(self):
        directory = self.tmp / 'zero'
        records = self.pretrain(directory, 0)
        self.assertEqual(records[-1]['event'], 'finished')
        checkpoint = load_checkpoint(directory)
        self.assertEqual(weights_bytes(checkpoint.model), weights_bytes(BangModel(ModelConfig(**TINY_MODEL))))
        self.assertEqual(checkpoint.run_config['max_steps'], 0)

    def test_records_and_registry(self):
        records = self.pretrain(self.tmp / 'run', 3)
        steps = [record for record in records if 'loss_total' in record]
        self.assertEqual([record['step'] for record in steps], [1, 2, 3])
        self.assertTrue(all(record['loss_total'] > 0 for record in steps))
        run = TrainingRun.objects.get(command='pretrain')
        self.assertEqual((run.status, run.steps_completed), (RunStatus.FINISHED, 3))

    def test_resumed_run_matches_uninterrupted(self):
        straight, resumed = self.tmp / 'straight', self.tmp / 'resumed'
        self.pretrain(straight, 4, '--dropout', '0.1')
        self.pretrain(resumed, 2, '--dropout', '0.1')
        self.pretrain(resumed, 4, '--dropout', '0.1')
        self.assertEqual(
            weights_bytes(load_checkpoint(straight).model),
            weights_bytes(load_checkpoint(resumed).model),
        )
        self.assertEqual(load_checkpoint(resumed).meta['step'], 4)

    def test_resume_rejects_other_model_config(self):
        directory = self.tmp / 'run'
        self.pretrain(directory, 1)
        with self.assertRaisesMessage(CommandError, 'different model config'):
            self.pretrain(directory, 2, '--d-ffn', '64')

    def test_missing_corpus(self):
        with self.assertRaises(CommandError):
            self.call('pretrain', '--config', str(self.config), '--corpus', str(self.tmp / 'nope.txt'),
                      '--checkpoint-dir', str(self.tmp / 'run'))


@override_settings(BANG_TOOLKIT=FAST_LATENCY)
class FinetuneDecodeEvalTests(CommandTestMixin, TestCase):
    """Finetune multi seguido de decode, eval e bench"""

    def setUp(self):
        super().setUp()
        self.pretrained = self.tmp / 'pretrained'
        self.pretrain(self.pretrained, 2)
        self.model_dir = self.tmp / 'multi'
        self.records = self.finetune(self.model_dir, self.pretrained, 'multi', 4)

    def decode(self, *args):
        return self.call('decode', '--checkpoint', str(self.model_dir), '--input', str(self.data / 'test.jsonl'), *args)

    def test_best_checkpoint_selected_on_dev(self):
        evals = [record for record in self.records if record.get('event') == 'eval']
        self.assertEqual([record['step'] for record in evals], [2, 4])
        final = load_checkpoint(self.model_dir).meta
        best = load_checkpoint(self.model_dir / 'best').meta
        self.assertLessEqual(best['dev_loss'], final['dev_loss'])
        self.assertEqual(best['dev_loss'], min(record['dev_loss'] for record in evals))
        self.assertEqual(TrainingRun.objects.get(command='finetune').best_dev_loss, best['dev_loss'])

    def test_multi_checkpoint_serves_every_mode(self):
        n_test = len((self.data / 'test.jsonl').read_text(encoding='utf-8').splitlines())
        ar = self.decode('--mode', 'ar', '--beam', '1', '--max-len', '8')
        nar = self.decode('--mode', 'nar', '--max-len', '8')
        semi = self.decode('--mode', 'semi', '--n-ar', '2', '--n-nar', '6')
        self.assertEqual(len(ar), n_test)
        self.assertEqual([record['forward_passes'] for record in nar], [1] * n_test)
        self.assertTrue(all(record['forward_passes'] <= 3 for record in semi))
        self.assertEqual([record['id'] for record in semi], [record['id'] for record in ar])
        self.assertNotIn('latency_ms', ar[0])

    def test_decode_is_reproducible(self):
        first = self.decode('--mode', 'ar', '--beam', '2', '--max-len', '8')
        self.assertEqual(self.decode('--mode', 'ar', '--beam', '2', '--max-len', '8'), first)

    def test_overlong_line_is_skipped(self):
        inputs = self.tmp / 'inputs.txt'
        inputs.write_text('w1 w2\n' + 'w3 ' * 100 + '\nw4\n', encoding='utf-8')
        records = self.call('decode', '--checkpoint', str(self.model_dir), '--input', str(inputs),
                            '--mode', 'nar', '--max-len', '8')
        self.assertEqual([record['id'] for record in records], ['1', '3'])

    def test_ar_finetuned_checkpoint_decodes_ar(self):
        directory = self.tmp / 'ar'
        self.finetune(directory, self.pretrained, 'ar', 2)
        records = self.call('decode', '--checkpoint', str(directory), '--input', str(self.data / 'test.jsonl'),
                            '--mode', 'ar', '--max-len', '8')
        self.assertTrue(records)

    def test_vocab_mismatch(self):
        other = self.tmp / 'other'
        shutil.copytree(self.data, other)
        Vocabulary.from_payload(9).save(other / 'vocab.txt')
        with self.assertRaisesMessage(CommandError, 'vocab mismatch'):
            self.call('finetune', '--config', str(self.config), '--train-file', str(other / 'train.jsonl'),
                      '--init-checkpoint', str(self.pretrained), '--checkpoint-dir', str(self.tmp / 'x'))

    def test_eval_report(self):
        [report] = self.call('eval', '--checkpoint', str(self.model_dir), '--test-file', str(self.data / 'test.jsonl'),
                             '--modes', 'ar,nar', '--beam', '1', '--max-len', '8')
        self.assertEqual(set(report['metrics']), {'ar', 'nar'})
        self.assertEqual(report['forward_passes']['nar'], 1.0)
        self.assertIn('BLEU-4', report['metrics']['ar'])

    def test_eval_scores_decoded_hypotheses(self):
        hypotheses = self.tmp / 'hyp.jsonl'
        hypotheses.write_text(
            '\n'.join(json.dumps(r) for r in self.decode('--mode', 'nar', '--max-len', '8')) + '\n', encoding='utf-8',
        )
        [record] = self.call('eval', '--test-file', str(self.data / 'test.jsonl'), '--hypotheses', str(hypotheses))
        self.assertTrue(0.0 <= record['metrics']['BLEU-4'] <= 100.0)

    def test_eval_empty_hypotheses(self):
        empty = self.tmp / 'empty.txt'
        empty.write_text('', encoding='utf-8')
        with self.assertRaisesMessage(CommandError, 'empty corpus'):
            self.call('eval', '--test-file', str(self.data / 'test.jsonl'), '--hypotheses', str(empty))

    def test_bench_gate_fails_on_undertrained_model(self):
        with self.assertRaisesMessage(CommandError, 'GateFailure'):
            self.call('bench', '--checkpoint', str(self.model_dir), '--test-file', str(self.data / 'test.jsonl'),
                      '--samples', '2', '--beam', '1', '--max-len', '8', '--n-ar', '2', '--n-nar', '6', '--gate')

    def test_bench_times_fixed_length_greedy_ar(self):
        [report] = self.call('bench', '--checkpoint', str(self.model_dir), '--test-file', str(self.data / 'test.jsonl'),
                             '--samples', '1', '--beam', '4', '--max-len', '8', '--n-ar', '2', '--n-nar', '6')
        self.assertEqual(report['latency']['ar']['mean_forward_passes'], 16.0)
        self.assertEqual(report['latency']['nar']['mean_forward_passes'], 1.0)
        self.assertEqual(report['latency']['semi']['mean_forward_passes'], 3.0)
        self.assertEqual(report['metadata']['latency_len'], 16)


class AblationCommandTests(CommandTestMixin, SimpleTestCase):
    """Testes do bench --ablation com orçamentos mínimos"""

    def test_quick_ablation_table(self):
        table = self.tmp / 'ablation.csv'
        [record] = self.call(
            'bench', '--ablation', '--config', str(self.config), '--seeds', '0', '--payload', '10',
            '--len-range', '3,5', '--pairs', '40', '--pretrain-steps', '1', '--finetune-steps', '1',
            '--csv', str(table),
        )
        self.assertEqual(set(record['ablation']), {'scratch', 'ar', 'nar', 'bang'})
        self.assertEqual(record['ablation']['bang']['finetune-steps']['mean'], 1.0)
        self.assertEqual(table.read_text(encoding='utf-8').splitlines()[0], 'arm,seed,metric,value')


class SettingsTests(SimpleTestCase):

    def test_only_used_apps_and_formatters(self):
        self.assertFalse(apps.is_installed('django.contrib.auth'))
        self.assertEqual(set(settings.LOGGING['formatters']), {'verbose'})


@tag('slow')
class CopyAcceptanceTests(TestCase):
    """Tarefa copy de ponta a ponta no preset de mesa: limiares de exact-match e latência"""

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)

    def call(self, name, *args):
        out = StringIO()
        call_command(name, *args, stdout=out, stderr=StringIO())
        return json_lines(out)

    def test_multi_model_meets_copy_thresholds(self):
        gates = settings.BANG_TOOLKIT['GATES']
        data, model_dir = self.tmp / 'copy', self.tmp / 'multi'
        self.call('synth', '--task', 'copy', '--payload', '32', '--len-range', '4,12',
                  '--pairs', '5000', '--seed', '1', '--out', str(data))
        self.call('finetune', '--mode', 'multi', '--train-file', str(data / 'train.jsonl'),
                  '--dev-file', str(data / 'dev.jsonl'), '--checkpoint-dir', str(model_dir),
                  '--lr', '5e-4', '--warmup-steps', '200', '--max-steps', '3000', '--eval-every', '500')
        [report] = self.call('bench', '--checkpoint', str(model_dir / 'best'), '--test-file', str(data / 'test.jsonl'),
                             '--beam', '4', '--max-len', '13', '--n-ar', '5', '--n-nar', '8', '--gate')

        ar, nar, semi = (report['metrics'][mode]['exact-match'] for mode in ('ar', 'nar', 'semi'))
        self.assertGreaterEqual(ar, gates['AR_EXACT_MATCH'])
        self.assertGreaterEqual(nar, gates['NAR_EXACT_MATCH'])
        self.assertGreaterEqual(semi, nar - gates['SEMI_NAR_SLACK'])
        self.assertEqual(report['forward_passes']['nar'], 1.0)
        self.assertLessEqual(report['forward_passes']['semi'], 6.0)
        self.assertEqual(report['latency']['ar']['mean_forward_passes'], gates['LATENCY_MIN_OUTPUT_LEN'])
        self.assertEqual(report['latency']['ar']['runs'], 10 * settings.BANG_TOOLKIT['LATENCY']['REPS'])
        self.assertLess(report['latency']['nar']['median_ms'], report['latency']['ar']['median_ms'])

    def test_bang_pretraining_beats_scratch_on_sort(self):
        [record] = self.call('bench', '--ablation', '--gate', '--seeds', '1,2,3', '--lr', '5e-4', '--warmup-steps', '100')
        bleu = {arm: record['ablation'][arm]['BLEU-4']['mean'] for arm in record['ablation']}
        margin = settings.BANG_TOOLKIT['GATES']['ABLATION_BLEU_MARGIN']
        self.assertGreaterEqual(bleu['bang'], bleu['scratch'] + margin)
        self.assertEqual(record['seeds'], [1, 2, 3])
