import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import torch
from django.conf import settings

from bang_toolkit.exceptions import ConfigError
from decoding.engines import ar_greedy, decode, nar_decode, semi_nar_decode

logger = logging.getLogger(__name__)


@dataclass
class LatencyStats:
    median_ms: float
    p90_ms: float
    runs: int
    forward_passes: list = field(default_factory=list)

    @property
    def mean_forward_passes(self):
        return float(np.mean(self.forward_passes)) if self.forward_passes else 0.0

    def as_dict(self):
        return {
            'median_ms': self.median_ms,
            'p90_ms': self.p90_ms,
            'runs': self.runs,
            'mean_forward_passes': self.mean_forward_passes,
        }


@contextmanager
def single_thread():
    """Fixa o torch em uma thread durante a medição"""
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def measure_latency(decode_fn, samples, warmup=None, reps=None):
    """
    Tempo de parede por amostra (lote 1). decode_fn(amostra) deve devolver um
    DecodeResult; só a chamada é cronometrada. As execuções de aquecimento são
    descartadas; mediana e p90 são tomados sobre todas as execuções medidas.
    """
    defaults = settings.BANG_TOOLKIT['LATENCY']
    warmup = defaults['WARMUP'] if warmup is None else warmup
    reps = defaults['REPS'] if reps is None else reps
    samples = list(samples)
    if not samples:
        raise ConfigError('latency measurement needs at least one sample')
    if reps < 1 or warmup < 0:
        raise ConfigError(f'invalid latency plan: warmup={warmup}, reps={reps}')

    timings, passes = [], []
    with single_thread():
        for sample in samples:
            for _ in range(warmup):
                decode_fn(sample)
            for _ in range(reps):
                started = time.perf_counter_ns()
                result = decode_fn(sample)
                timings.append((time.perf_counter_ns() - started) / 1e6)
            passes.append(result.forward_passes)

    stats = LatencyStats(
        median_ms=float(np.median(timings)),
        p90_ms=float(np.percentile(timings, 90)),
        runs=len(timings),
        forward_passes=passes,
    )
    logger.debug('Latência: %s', stats.as_dict())
    return stats


def speedups(latency_by_mode):
    """Aceleração de cada modo relativa ao mais lento"""
    slowest = max(stats.median_ms for stats in latency_by_mode.values())
    return {mode: slowest / stats.median_ms for mode, stats in latency_by_mode.items()}


def timing_decoders(model, modes, decode_options, latency_len=None):
    """
    Funções cronometradas por modo. A linha de base AR é sempre gulosa. Com
    latency_len, cada modo emite exatamente latency_len posições ignorando
    [EOS], de modo que AR faz latency_len passadas e NAR uma.
    """
    if latency_len is None:
        options = {mode: dict(decode_options, beam=1) if mode == 'ar' else decode_options for mode in modes}
        return {mode: lambda source, mode=mode: decode(model, source, mode, **options[mode]) for mode in modes}

    if latency_len < 2:
        raise ConfigError(f'latency_len must be >= 2, got {latency_len}')
    n_ar = min(decode_options.get('n_ar', 5), latency_len - 1)
    fixed = {
        'ar': lambda source: ar_greedy(model, source, latency_len, stop_at_eos=False),
        'nar': lambda source: nar_decode(model, source, latency_len),
        'semi': lambda source: semi_nar_decode(model, source, n_ar, latency_len - n_ar, stop_at_eos=False),
    }
    return {mode: fixed[mode] for mode in modes}
