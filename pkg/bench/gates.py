"""Limiares de aceitação aplicados a um EvalReport (bench --gate)"""

import logging

from django.conf import settings

logger = logging.getLogger(__name__)


def acceptance_failures(report, n_ar, gates=None):
    """Lista de critérios não atendidos; vazia quando o relatório passa"""
    gates = gates or settings.BANG_TOOLKIT['GATES']
    metrics, passes = report.metrics, report.forward_passes
    failures = []

    ar_em, nar_em, semi_em = (metrics[mode]['exact-match'] for mode in ('ar', 'nar', 'semi'))
    if ar_em < gates['AR_EXACT_MATCH']:
        failures.append(f'AR exact-match {ar_em:.2f} below {gates["AR_EXACT_MATCH"]}')
    if nar_em < gates['NAR_EXACT_MATCH']:
        failures.append(f'NAR exact-match {nar_em:.2f} below {gates["NAR_EXACT_MATCH"]}')
    if semi_em < nar_em - gates['SEMI_NAR_SLACK']:
        failures.append(f'semi-NAR exact-match {semi_em:.2f} more than {gates["SEMI_NAR_SLACK"]} below NAR')

    if passes['nar'] != 1.0:
        failures.append(f'NAR used {passes["nar"]} forward passes per sample')
    if passes['semi'] > n_ar + 1:
        failures.append(f'semi-NAR used {passes["semi"]} forward passes, more than n_ar + 1 = {n_ar + 1}')

    # Latência só é comparada quando as saídas AR gulosas cronometradas são longas o bastante
    if report.latency and report.latency['ar']['mean_forward_passes'] >= gates['LATENCY_MIN_OUTPUT_LEN']:
        ar_ms, nar_ms = report.latency['ar']['median_ms'], report.latency['nar']['median_ms']
        if nar_ms >= ar_ms:
            failures.append(f'NAR median latency {nar_ms:.2f} ms not below AR {ar_ms:.2f} ms')

    for failure in failures:
        logger.warning('Critério não atendido: %s', failure)
    return failures
