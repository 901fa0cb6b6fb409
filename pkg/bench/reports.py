"""Relatório de avaliação: métricas por modo, latência e metadados da execução"""

import hashlib
import json
import logging
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from django.conf import settings

from decoding.engines import decode

from .latency import measure_latency, speedups, timing_decoders
from .metrics import score_all

logger = logging.getLogger(__name__)

BLEU_SMOOTHING = 'add-one on n>=2'


@dataclass
class EvalReport:
    metrics: dict
    forward_passes: dict
    metadata: dict
    latency: dict = field(default_factory=dict)
    speedup: dict = field(default_factory=dict)

    def to_json(self):
        from .serializers import EvalReportSerializer
        return json.dumps(EvalReportSerializer(self).data, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        from .serializers import EvalReportSerializer
        serializer = EvalReportSerializer(data=json.loads(text))
        serializer.is_valid(raise_exception=True)
        return serializer.save()

    def as_table(self):
        """Tabela de texto alinhada: uma linha por métrica, uma coluna por modo"""
        modes = list(self.metrics)
        names = list(dict.fromkeys(name for mode in modes for name in self.metrics[mode]))
        rows = [[name] + [f'{self.metrics[mode].get(name, float("nan")):.2f}' for mode in modes] for name in names]
        rows.append(['forward passes'] + [f'{self.forward_passes.get(mode, 0.0):.2f}' for mode in modes])
        if self.latency:
            rows.append(['median ms'] + [_latency_cell(self, mode, 'median_ms') for mode in modes])
            rows.append(['p90 ms'] + [_latency_cell(self, mode, 'p90_ms') for mode in modes])
        header = ['metric'] + modes
        widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]

        def line(cells):
            return '  '.join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(cells))

        return '\n'.join([line(header), line(['-' * w for w in widths])] + [line(row) for row in rows])


def _latency_cell(report, mode, key):
    stats = report.latency.get(mode)
    if stats is None:
        return '-'
    cell = f'{stats[key]:.2f}'
    if key == 'median_ms' and mode in report.speedup:
        cell += f' ({report.speedup[mode]:.1f}x)'
    return cell


def config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode('utf-8')).hexdigest()[:12]


def revision():
    """Revisão curta do git do projeto, ou 'unversioned' fora de um repositório"""
    try:
        completed = subprocess.run(
            ['git', 'rev-parse', '--short', 'HEAD'],
            cwd=Path(settings.BASE_DIR), capture_output=True, text=True, check=True, timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return 'unversioned'
    return completed.stdout.strip() or 'unversioned'


def evaluate_model(
    model, pairs, modes, run_config, decode_options=None, with_latency=False, latency_samples=None, latency_len=None,
):
    """
    Decodifica cada par em cada modo e monta o EvalReport. A latência usa AR
    guloso; latency_len fixa o comprimento de saída cronometrado.
    """
    decode_options = decode_options or {}
    pairs = list(pairs)
    references = [list(pair.target) for pair in pairs]
    metrics, passes, latency = {}, {}, {}
    timed = timing_decoders(model, modes, decode_options, latency_len) if with_latency else {}
    for mode in modes:
        results = [decode(model, pair.source, mode, **decode_options) for pair in pairs]
        metrics[mode] = score_all([r.tokens for r in results], references)
        passes[mode] = sum(r.forward_passes for r in results) / max(len(results), 1)
        if with_latency:
            samples = [pair.source for pair in pairs[:latency_samples]] if latency_samples else [pairs[0].source]
            latency[mode] = measure_latency(timed[mode], samples)
        logger.info('Modo %s: %s', mode, {k: round(v, 2) for k, v in metrics[mode].items()})

    return EvalReport(
        metrics=metrics,
        forward_passes=passes,
        latency={mode: stats.as_dict() for mode, stats in latency.items()},
        speedup=speedups(latency) if latency else {},
        metadata={
            'config_hash': config_hash(run_config),
            'seed': int(run_config.get('seed', model.config.seed)),
            'revision': revision(),
            'bleu_smoothing': BLEU_SMOOTHING,
            'n_samples': len(pairs),
            'latency_len': latency_len,
        },
    )
