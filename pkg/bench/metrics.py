"""
Métricas de qualidade em porcentagem (0..100).

Entradas são listas de sequências de tokens (strings ou ids); hipóteses e
referências são pareadas por índice.
"""

from collections import Counter

from sacrebleu.metrics import BLEU

from bang_toolkit.exceptions import CorpusError

ROUGE_L_BETA = 1.2

# Métricas que compõem o `overall` de um modo
HEADLINE_METRICS = ('ROUGE-1', 'ROUGE-2', 'ROUGE-L', 'BLEU-4')


def _check_pairs(hypotheses, references):
    if len(hypotheses) != len(references):
        raise CorpusError(f'{len(hypotheses)} hypotheses but {len(references)} references')
    if not hypotheses:
        raise CorpusError('empty corpus')


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def _joined(sequence):
    return ' '.join(str(token) for token in sequence)


def bleu(hypotheses, references, max_n=4):
    """
    BLEU de corpus com pesos uniformes até max_n, contagens recortadas e
    penalidade de brevidade exp(1 - r/c). Suavização add-one só para n >= 2.
    """
    _check_pairs(hypotheses, references)
    scorer = BLEU(tokenize='none', smooth_method='add-k', smooth_value=1, max_ngram_order=max_n)
    result = scorer.corpus_score([_joined(h) for h in hypotheses], [[_joined(r) for r in references]])
    # sacrebleu pode devolver 100.00000000000001
    return min(100.0, float(result.score))


def lcs_length(a, b):
    """Maior subsequência comum por programação dinâmica em uma linha"""
    if not a or not b:
        return 0
    row = [0] * (len(b) + 1)
    for x in a:
        previous = 0
        for j, y in enumerate(b, start=1):
            current = row[j]
            row[j] = previous + 1 if x == y else max(row[j], row[j - 1])
            previous = current
    return row[-1]


def _f_measure(precision, recall, beta=1.0):
    if precision == 0 or recall == 0:
        return 0.0
    beta2 = beta * beta
    return (1 + beta2) * precision * recall / (recall + beta2 * precision)


def rouge_l(hypotheses, references):
    """Média por par do F-measure baseado em LCS (beta = 1.2)"""
    _check_pairs(hypotheses, references)
    total = 0.0
    for hyp, ref in zip(hypotheses, references):
        common = lcs_length(list(hyp), list(ref))
        if common:
            total += _f_measure(common / len(hyp), common / len(ref), ROUGE_L_BETA)
    return 100.0 * total / len(hypotheses)


def rouge_n(hypotheses, references, n):
    """Média por par do F1 sobre n-gramas recortados"""
    _check_pairs(hypotheses, references)
    total = 0.0
    for hyp, ref in zip(hypotheses, references):
        hyp_counts, ref_counts = Counter(ngrams(list(hyp), n)), Counter(ngrams(list(ref), n))
        overlap = sum((hyp_counts & ref_counts).values())
        if overlap:
            total += _f_measure(overlap / sum(hyp_counts.values()), overlap / sum(ref_counts.values()))
    return 100.0 * total / len(hypotheses)


def distinct_n(hypotheses, n):
    """n-gramas únicos / n-gramas totais sobre todas as hipóteses, x100"""
    if not hypotheses:
        raise CorpusError('empty corpus')
    grams = [gram for hyp in hypotheses for gram in ngrams(list(hyp), n)]
    if not grams:
        return 0.0
    return 100.0 * len(set(grams)) / len(grams)


def exact_match(hypotheses, references):
    _check_pairs(hypotheses, references)
    hits = sum(list(h) == list(r) for h, r in zip(hypotheses, references))
    return 100.0 * hits / len(hypotheses)


def overall(metrics):
    """Média aritmética das métricas principais presentes"""
    values = [metrics[name] for name in HEADLINE_METRICS if name in metrics]
    return sum(values) / len(values) if values else 0.0


def score_all(hypotheses, references):
    """Mapa completo de métricas de um modo de decodificação"""
    metrics = {f'BLEU-{n}': bleu(hypotheses, references, max_n=n) for n in range(1, 5)}
    metrics['ROUGE-1'] = rouge_n(hypotheses, references, 1)
    metrics['ROUGE-2'] = rouge_n(hypotheses, references, 2)
    metrics['ROUGE-L'] = rouge_l(hypotheses, references)
    metrics['Distinct-1'] = distinct_n(hypotheses, 1)
    metrics['Distinct-2'] = distinct_n(hypotheses, 2)
    metrics['exact-match'] = exact_match(hypotheses, references)
    metrics['overall'] = overall(metrics)
    return metrics
