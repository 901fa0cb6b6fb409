"""
Motores de inferência sobre um BangModel:

    ar_greedy        passo a passo com cache K/V
    ar_beam          busca em feixe (hipóteses empilhadas no lote)
    nar_decode       uma passada sobre max_len [MASK]
    semi_nar_decode  n_ar passos gulosos e depois uma passada com n_nar [MASK]
"""

import logging
import time
from dataclasses import dataclass, field
from itertools import groupby

import torch
import torch.nn.functional as F

from bang_toolkit.exceptions import ConfigError
from corpus.vocab import EOS_ID, MASK_ID, PAD_ID

from .cache import KVCache

logger = logging.getLogger(__name__)

DECODE_MODES = ('ar', 'nar', 'semi')

# Nunca aparecem na saída; [UNK], [BOS] e [SEP] previstos são mantidos
STRIPPED_IDS = frozenset({PAD_ID, EOS_ID, MASK_ID})


@dataclass
class DecodeResult:
    tokens: list
    score: float
    forward_passes: int
    latency_ms: float = 0.0
    per_position_logprobs: list = field(default_factory=list)

    def to_json(self, sample_id, mode, vocab):
        return {
            'id': sample_id,
            'mode': mode,
            'tokens': vocab.decode(self.tokens),
            'detokenized': vocab.detokenize(self.tokens),
            'score': self.score,
            'forward_passes': self.forward_passes,
            'latency_ms': self.latency_ms,
        }


def collapse_repeats(tokens):
    """Reduz cada sequência de tokens idênticos adjacentes a um só"""
    return [token for token, _ in groupby(tokens)]


def truncate_at_eos(tokens, logprobs):
    """Corta no primeiro [EOS]; a log-prob do [EOS] entra no score"""
    if EOS_ID in tokens:
        end = tokens.index(EOS_ID)
        return tokens[:end], logprobs[:end], sum(logprobs[:end + 1])
    return tokens, logprobs, sum(logprobs)


def _clean(tokens):
    return [token for token in tokens if token not in STRIPPED_IDS]


def _check_max_len(model, max_len):
    if max_len < 1:
        raise ConfigError(f'max_len must be >= 1, got {max_len}')
    if max_len > model.config.max_positions:
        raise ConfigError(f'max_len {max_len} exceeds max_positions {model.config.max_positions}')


def _greedy_steps(model, states, cache, limit, use_cache=True, stop_at_eos=True):
    """
    Até `limit` passos gulosos. Retorna (tokens, logprobs, passos, terminou_em_eos);
    o último token emitido ainda não está no cache. Com stop_at_eos=False roda
    sempre `limit` passos (medição de latência em comprimento fixo).
    """
    tokens, logprobs, passes = [], [], 0
    for _ in range(limit):
        if use_cache:
            new_tokens = torch.tensor([tokens[-1:]], dtype=torch.long)
            logits = model.decode_step(states, cache, new_tokens, 1)[:, -1]
        else:
            logits = model.oracle_forward(tokens + [MASK_ID], states)
        passes += 1
        log_probs = F.log_softmax(logits[0], dim=-1)
        token = int(log_probs.argmax())
        tokens.append(token)
        logprobs.append(float(log_probs[token]))
        if token == EOS_ID and stop_at_eos:
            return tokens, logprobs, passes, True
    return tokens, logprobs, passes, False


@torch.no_grad()
def ar_greedy(model, source, max_len, use_cache=True, stop_at_eos=True):
    """Decodificação AR gulosa; use_cache=False recalcula o prefixo inteiro a cada passo"""
    _check_max_len(model, max_len)
    model.eval()
    started = time.perf_counter()
    states = model.encode(source)
    tokens, logprobs, passes, _ = _greedy_steps(
        model, states, KVCache(len(model.decoder_layers)), max_len, use_cache, stop_at_eos,
    )
    tokens, logprobs, score = truncate_at_eos(tokens, logprobs)
    return DecodeResult(
        tokens=_clean(tokens),
        score=score,
        forward_passes=passes,
        latency_ms=(time.perf_counter() - started) * 1000.0,
        per_position_logprobs=logprobs,
    )


@dataclass
class Hypothesis:
    tokens: list
    score: float
    logprobs: list


@dataclass
class BeamOutcome:
    hypothesis: Hypothesis
    finished: bool
    forward_passes: int


def beam_search(scorer, beam, length_penalty, max_len, eos_id=EOS_ID):
    """
    Busca em feixe genérica. scorer(prefixos, pais) devolve log-probs [k x V]
    para os k prefixos vivos; pais indexa a chamada anterior.

    Hipótese finalizada: (soma das log-probs incluindo [EOS]) / len^length_penalty.
    Empates: passo de término mais cedo, depois menor posto no feixe.
    """
    if beam < 1:
        raise ConfigError(f'beam must be >= 1, got {beam}')
    if max_len < 1:
        raise ConfigError(f'max_len must be >= 1, got {max_len}')

    def normalized(hyp):
        return hyp.score / (max(len(hyp.tokens), 1) ** length_penalty)

    live = [Hypothesis([], 0.0, [])]
    parents = [0]
    finished = []
    passes = 0
    for step in range(1, max_len + 1):
        log_probs = scorer([h.tokens for h in live], torch.tensor(parents, dtype=torch.long))
        passes += 1
        vocab_size = log_probs.size(-1)
        totals = torch.tensor([h.score for h in live], dtype=torch.float64)[:, None] + log_probs.double()
        ranked = torch.sort(totals.view(-1), descending=True, stable=True).indices[:2 * beam]

        next_live, next_parents = [], []
        for rank, flat in enumerate(ranked.tolist()):
            origin, token = divmod(flat, vocab_size)
            parent = live[origin]
            lp = float(log_probs[origin, token])
            hyp = Hypothesis(parent.tokens + [token], parent.score + lp, parent.logprobs + [lp])
            if token == eos_id:
                if rank < beam:
                    finished.append((hyp, step, rank))
            elif len(next_live) < beam:
                next_live.append(hyp)
                next_parents.append(origin)

        if len(finished) >= beam or not next_live:
            break
        live, parents = next_live, next_parents

    if finished:
        best, _, _ = min(finished, key=lambda item: (-normalized(item[0]), item[1], item[2]))
        return BeamOutcome(best, True, passes)
    best = min(enumerate(live), key=lambda item: (-normalized(item[1]), item[0]))[1]
    return BeamOutcome(best, False, passes)


class CachedScorer:
    """Scorer de beam_search sobre o modelo: reordena o cache pelos pais e dá um passo"""

    def __init__(self, model, states):
        self.model = model
        self.states = states
        self.cache = KVCache(len(model.decoder_layers))

    def __call__(self, prefixes, parents):
        self.cache.reorder(parents)
        states = self.states.index_select(torch.zeros(len(prefixes), dtype=torch.long))
        new_tokens = torch.tensor([prefix[-1:] for prefix in prefixes], dtype=torch.long)
        logits = self.model.decode_step(states, self.cache, new_tokens, 1)[:, -1]
        return F.log_softmax(logits, dim=-1)


@torch.no_grad()
def ar_beam(model, source, beam=4, length_penalty=1.0, max_len=50):
    _check_max_len(model, max_len)
    model.eval()
    started = time.perf_counter()
    outcome = beam_search(CachedScorer(model, model.encode(source)), beam, length_penalty, max_len)
    hyp = outcome.hypothesis
    tokens, logprobs, score = truncate_at_eos(hyp.tokens, hyp.logprobs)
    return DecodeResult(
        tokens=_clean(tokens),
        score=score,
        forward_passes=outcome.forward_passes,
        latency_ms=(time.perf_counter() - started) * 1000.0,
        per_position_logprobs=logprobs,
    )


def parallel_pass(model, states, cache, new_tokens, n_masks):
    """Argmax e log-probs das n_masks posições previstas numa única passada"""
    logits = model.decode_step(states, cache, torch.tensor([new_tokens], dtype=torch.long), n_masks)
    log_probs = F.log_softmax(logits[0], dim=-1)
    best = log_probs.argmax(dim=-1)
    tokens = best.tolist()
    return tokens, log_probs.gather(-1, best[:, None]).squeeze(-1).tolist()


@torch.no_grad()
def nar_decode(model, source, max_len):
    """Uma passada; corta no primeiro [EOS] e funde repetições adjacentes"""
    _check_max_len(model, max_len)
    model.eval()
    started = time.perf_counter()
    states = model.encode(source)
    tokens, logprobs = parallel_pass(model, states, KVCache(len(model.decoder_layers)), [], max_len)
    tokens, logprobs, score = truncate_at_eos(tokens, logprobs)
    return DecodeResult(
        tokens=collapse_repeats(_clean(tokens)),
        score=score,
        forward_passes=1,
        latency_ms=(time.perf_counter() - started) * 1000.0,
        per_position_logprobs=logprobs,
    )


@torch.no_grad()
def semi_nar_decode(model, source, n_ar=5, n_nar=25, max_len=None, stop_at_eos=True):
    """
    Prefixo guloso de até n_ar tokens e depois uma passada com n_nar [MASK].
    [EOS] no prefixo encerra sem a fase paralela. A fase paralela nunca
    reescreve o prefixo.
    """
    if n_ar < 0 or n_nar < 1:
        raise ConfigError(f'need n_ar >= 0 and n_nar >= 1, got {n_ar}, {n_nar}')
    max_len = n_ar + n_nar if max_len is None else max_len
    if max_len != n_ar + n_nar:
        raise ConfigError(f'max_len ({max_len}) must equal n_ar + n_nar ({n_ar + n_nar})')
    _check_max_len(model, max_len)
    model.eval()
    started = time.perf_counter()
    states = model.encode(source)
    cache = KVCache(len(model.decoder_layers))

    prefix, prefix_logprobs, passes, stopped = _greedy_steps(model, states, cache, n_ar, stop_at_eos=stop_at_eos)
    if stopped:
        tokens, logprobs, score = truncate_at_eos(prefix, prefix_logprobs)
    else:
        rest, rest_logprobs = parallel_pass(model, states, cache, prefix[-1:], n_nar)
        passes += 1
        rest, rest_logprobs, rest_score = truncate_at_eos(rest, rest_logprobs)
        # Fusão só na parte paralela, já sem especiais, ancorada no último token do prefixo
        prefix = _clean(prefix)
        anchor = prefix[-1:]
        rest = collapse_repeats(anchor + _clean(rest))[len(anchor):]
        tokens = prefix + rest
        logprobs = prefix_logprobs + rest_logprobs
        score = sum(prefix_logprobs) + rest_score

    return DecodeResult(
        tokens=_clean(tokens),
        score=score,
        forward_passes=passes,
        latency_ms=(time.perf_counter() - started) * 1000.0,
        per_position_logprobs=logprobs,
    )


def decode(model, source, mode, beam=4, length_penalty=1.0, max_len=50, n_ar=5, n_nar=25):
    """Despacha pelo modo de inferência"""
    if mode == 'ar':
        if beam == 1:
            return ar_greedy(model, source, max_len)
        return ar_beam(model, source, beam, length_penalty, max_len)
    if mode == 'nar':
        return nar_decode(model, source, max_len)
    if mode == 'semi':
        return semi_nar_decode(model, source, n_ar, n_nar)
    raise ConfigError(f'unknown decode mode {mode!r}; expected one of {DECODE_MODES}')
