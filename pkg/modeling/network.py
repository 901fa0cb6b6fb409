"""
Codificador Transformer e decodificador n-stream com visibilidade entre streams.

O decodificador tem três caminhos que compartilham os mesmos pesos:
- nstream_forward: stream principal + n streams de predição (treino);
- causal_forward: um único stream causal sobre uma sequência literal (oráculo);
- decode_step: passo incremental com cache de chaves/valores (inferência).
"""

import logging
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from bang_toolkit.exceptions import ShapeError
from corpus.vocab import MASK_ID, PAD_ID
from masking.layout import MASK_SENTINEL, build_mask

logger = logging.getLogger(__name__)


def attention(q, k, v, bias=None, dropout=0.0, training=False):
    """softmax(QK^T / sqrt(d) + L) V, com L = viés relativo + máscara"""
    if q.size(-1) != k.size(-1) or k.size(-2) != v.size(-2):
        raise ShapeError(f'attention shape mismatch: Q {tuple(q.shape)}, K {tuple(k.shape)}, V {tuple(v.shape)}')
    if bias is not None and (bias.size(-1) != k.size(-2) or bias.size(-2) not in (1, q.size(-2))):
        raise ShapeError(f'attention bias {tuple(bias.shape)} does not match scores [{q.size(-2)} x {k.size(-2)}]')

    scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(q.size(-1))
    if bias is not None:
        scores = scores + bias
    weights = F.softmax(scores, dim=-1)
    if dropout > 0.0:
        weights = F.dropout(weights, p=dropout, training=training)
    return torch.matmul(weights, v)


def relative_bucket(distance, num_buckets, max_distance):
    """
    Mapeia distância com sinal (chave - consulta) para um balde.

    Metade dos baldes para cada sinal; dentro de cada metade, exato abaixo de
    num_buckets / 4 e logarítmico até max_distance, saturando depois.
    """
    half = num_buckets // 2
    bucket = (distance > 0).long() * half
    n = distance.abs()
    max_exact = half // 2
    is_small = n < max_exact
    large = max_exact + (
        torch.log(n.double().clamp(min=1) / max_exact)
        / math.log(max_distance / max_exact)
        * (half - max_exact)
    ).long()
    large = large.clamp(max=half - 1)
    return bucket + torch.where(is_small, n, large)


def causal_bias(query_len, key_len, dtype=torch.float32):
    """Máscara causal para as últimas query_len posições de uma sequência de key_len chaves"""
    offset = key_len - query_len
    bias = torch.full((query_len, key_len), MASK_SENTINEL, dtype=dtype)
    return torch.triu(bias, diagonal=offset + 1)


@dataclass
class EncoderStates:
    """H_enc mais as flags de padding da fonte"""

    hidden: torch.Tensor
    padding: torch.Tensor

    @property
    def source_len(self):
        return self.hidden.size(1)

    def key_bias(self):
        """Viés [B, 1, 1, S] que esconde as posições de padding"""
        bias = torch.zeros(self.padding.shape, dtype=self.hidden.dtype)
        bias = bias.masked_fill(self.padding, MASK_SENTINEL)
        return bias[:, None, None, :]

    def index_select(self, index):
        return EncoderStates(self.hidden.index_select(0, index), self.padding.index_select(0, index))

    def repeat(self, count):
        index = torch.zeros(count, dtype=torch.long)
        return self.index_select(index)


class RelativePositionBias(nn.Module):
    """Escalar aprendido por cabeça e por balde de distância, compartilhado entre camadas"""

    def __init__(self, n_heads, num_buckets, max_distance):
        super().__init__()
        self.num_buckets = num_buckets
        self.max_distance = max_distance
        self.embedding = nn.Embedding(num_buckets, n_heads)

    def buckets(self, query_positions, key_positions):
        distance = key_positions[None, :] - query_positions[:, None]
        return relative_bucket(distance, self.num_buckets, self.max_distance)

    def forward(self, query_positions, key_positions):
        """Retorna [heads, m, k]; streams não entram no viés, só posições-alvo"""
        values = self.embedding(self.buckets(query_positions, key_positions))
        return values.permute(2, 0, 1)


class MultiHeadAttention(nn.Module):

    def __init__(self, d_model, n_heads, dropout):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.dropout = dropout
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def split(self, x):
        batch, length, _ = x.shape
        return x.view(batch, length, self.n_heads, self.d_head).transpose(1, 2)

    def merge(self, x):
        batch, _, length, _ = x.shape
        return x.transpose(1, 2).reshape(batch, length, self.n_heads * self.d_head)

    def project_qkv(self, x):
        return self.split(self.q_proj(x)), self.split(self.k_proj(x)), self.split(self.v_proj(x))

    def attend(self, q, k, v, bias):
        return attention(q, k, v, bias, dropout=self.dropout, training=self.training)

    def forward(self, query_in, memory, bias):
        q = self.split(self.q_proj(query_in))
        k = self.split(self.k_proj(memory))
        v = self.split(self.v_proj(memory))
        return self.out_proj(self.merge(self.attend(q, k, v, bias)))


class FeedForward(nn.Module):

    def __init__(self, d_model, d_ffn, dropout):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ffn)
        self.fc2 = nn.Linear(d_ffn, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.dropout(F.gelu(self.fc1(x))))


class EncoderLayer(nn.Module):
    """Camada pré-norm: auto-atenção bidirecional + FFN"""

    def __init__(self, config):
        super().__init__()
        self.self_attn = MultiHeadAttention(config.d_model, config.n_heads, config.dropout)
        self.ffn = FeedForward(config.d_model, config.d_ffn, config.dropout)
        self.ln_self = nn.LayerNorm(config.d_model)
        self.ln_ffn = nn.LayerNorm(config.d_model)

    def forward(self, h, key_bias):
        x = self.ln_self(h)
        h = h + self.self_attn(x, x, key_bias)
        return h + self.ffn(self.ln_ffn(h))


class DecoderLayer(nn.Module):
    """Camada pré-norm: auto-atenção entre streams, atenção cruzada e FFN"""

    def __init__(self, config):
        super().__init__()
        self.self_attn = MultiHeadAttention(config.d_model, config.n_heads, config.dropout)
        self.cross_attn = MultiHeadAttention(config.d_model, config.n_heads, config.dropout)
        self.ffn = FeedForward(config.d_model, config.d_ffn, config.dropout)
        self.ln_self = nn.LayerNorm(config.d_model)
        self.ln_cross = nn.LayerNorm(config.d_model)
        self.ln_ffn = nn.LayerNorm(config.d_model)

    def stream_self_attention(self, h, bias, layout):
        """
        Auto-atenção n-stream em blocos: cada stream concatena suas chaves e
        valores ao cache dos streams anteriores e atende só a esse cache.
        """
        q, k, v = self.self_attn.project_qkv(self.ln_self(h))
        width = layout.target_len
        k_cache, v_cache, outputs = None, None, []
        for stream in range(layout.n_streams + 1):
            rows = layout.stream_rows(stream)
            k_i, v_i = k[:, :, rows], v[:, :, rows]
            k_cache = k_i if k_cache is None else torch.cat([k_cache, k_i], dim=2)
            v_cache = v_i if v_cache is None else torch.cat([v_cache, v_i], dim=2)
            end = (stream + 1) * width
            outputs.append(self.self_attn.attend(q[:, :, rows], k_cache, v_cache, bias[:, :, rows, :end]))
        return h + self.self_attn.out_proj(self.self_attn.merge(torch.cat(outputs, dim=2)))

    def cross_and_ffn(self, h, encoder_states):
        h = h + self.cross_attn(self.ln_cross(h), encoder_states.hidden, encoder_states.key_bias())
        return h + self.ffn(self.ln_ffn(h))


class BangModel(nn.Module):
    """Codificador-decodificador com decodificador n-stream e embeddings amarrados"""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab_size, config.d_model)
        self.enc_pos = nn.Embedding(config.max_positions, config.d_model)
        self.dec_pos = nn.Embedding(config.max_positions, config.d_model)
        self.encoder_layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.enc_layers))
        self.enc_norm = nn.LayerNorm(config.d_model)
        self.rel_bias = RelativePositionBias(config.n_heads, config.rel_buckets, config.rel_max_distance)
        self.decoder_layers = nn.ModuleList(DecoderLayer(config) for _ in range(config.dec_layers))
        self.dec_norm = nn.LayerNorm(config.d_model)
        self.emb_dropout = nn.Dropout(config.dropout)
        self.reset_parameters(config.seed)

    def reset_parameters(self, seed):
        """Inicialização determinística a partir da semente"""
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if '.ln_' in name or name.startswith(('enc_norm.', 'dec_norm.')):
                    param.fill_(1.0 if name.endswith('.weight') else 0.0)
                elif name.endswith('.bias'):
                    param.zero_()
                else:
                    param.normal_(0.0, 0.02, generator=generator)

    # -- validação --------------------------------------------------------

    def _check_tokens(self, tokens, what):
        if tokens.dim() != 2:
            raise ShapeError(f'{what} must be [batch x length], got {tuple(tokens.shape)}')
        if tokens.size(1) > self.config.max_positions:
            raise ShapeError(f'{what} length {tokens.size(1)} exceeds max_positions {self.config.max_positions}')
        if tokens.numel() and int(tokens.max()) >= self.config.vocab_size:
            raise ShapeError(f'{what} contains token id >= vocab_size ({self.config.vocab_size})')

    @staticmethod
    def _as_batch(tokens):
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        return tokens.unsqueeze(0) if tokens.dim() == 1 else tokens

    # -- codificador ------------------------------------------------------

    def encode(self, source_tokens):
        """Codifica a fonte em H_enc [B x S x d_model]"""
        tokens = self._as_batch(source_tokens)
        self._check_tokens(tokens, 'source')
        if tokens.size(1) < 1:
            raise ShapeError('source must contain at least one token')

        positions = torch.arange(tokens.size(1))
        h = self.emb_dropout(self.tok_emb(tokens) + self.enc_pos(positions)[None])
        states = EncoderStates(hidden=h, padding=tokens.eq(PAD_ID))
        key_bias = states.key_bias()
        for layer in self.encoder_layers:
            h = layer(h, key_bias)
        return EncoderStates(hidden=self.enc_norm(h), padding=states.padding)

    # -- decodificador ----------------------------------------------------

    def _embed_decoder(self, tokens, positions):
        # positions começam em 1
        return self.emb_dropout(self.tok_emb(tokens) + self.dec_pos(positions - 1)[None])

    def _logits(self, h):
        return F.linear(self.dec_norm(h), self.tok_emb.weight)

    def nstream_forward(self, golden_tokens, encoder_states, layout):
        """
        Passo completo com stream principal (tokens dourados) e n streams de
        predição ([MASK]). Retorna logits [B x (n+1)T x V]; a linha (s, t)
        prevê y_t a partir de y_1..y_{t-s}.
        """
        golden = self._as_batch(golden_tokens)
        self._check_tokens(golden, 'target')
        if golden.size(1) != layout.target_len:
            raise ShapeError(f'target length {golden.size(1)} does not match layout {layout}')
        if layout.n_streams > self.config.n_streams:
            raise ShapeError(f'layout has {layout.n_streams} streams, config allows {self.config.n_streams}')

        batch, width = golden.shape
        positions = torch.arange(1, width + 1)
        main = self._embed_decoder(golden, positions)
        masks = self._embed_decoder(torch.full_like(golden, MASK_ID), positions)
        h = torch.cat([main] + [masks] * layout.n_streams, dim=1)

        row_positions = positions.repeat(layout.n_streams + 1)
        bias = self.rel_bias(row_positions, row_positions).to(h.dtype)
        bias = (bias + build_mask(layout, dtype=h.dtype).bias)[None]

        for layer in self.decoder_layers:
            h = layer.stream_self_attention(h, bias, layout)
            h = layer.cross_and_ffn(h, encoder_states)
        return self._logits(h)

    def causal_forward(self, tokens, encoder_states):
        """Decodificador de stream único e causal sobre a sequência literal"""
        tokens = self._as_batch(tokens)
        self._check_tokens(tokens, 'decoder input')
        length = tokens.size(1)
        positions = torch.arange(1, length + 1)
        h = self._embed_decoder(tokens, positions)
        bias = (self.rel_bias(positions, positions).to(h.dtype) + causal_bias(length, length, h.dtype))[None]

        for layer in self.decoder_layers:
            q, k, v = layer.self_attn.project_qkv(layer.ln_self(h))
            h = h + layer.self_attn.out_proj(layer.self_attn.merge(layer.self_attn.attend(q, k, v, bias)))
            h = layer.cross_and_ffn(h, encoder_states)
        return self._logits(h)

    def oracle_forward(self, prefix_tokens, encoder_states):
        """Logits da última posição de um prefixo [dourados..., MASK...]"""
        tokens = self._as_batch(prefix_tokens)
        if tokens.size(1) < 1:
            raise ShapeError('empty prefix')
        return self.causal_forward(tokens, encoder_states)[:, -1]

    def decode_step(self, encoder_states, cache, new_tokens, n_masks):
        """
        Passo incremental: anexa new_tokens (stream principal) ao cache e
        prevê n_masks posições seguintes com [MASK], cada uma vendo o cache,
        os novos tokens e as máscaras anteriores. Retorna logits [B x n_masks x V].
        """
        new_tokens = self._as_batch(new_tokens)
        batch = encoder_states.hidden.size(0)
        if new_tokens.size(0) != batch:
            new_tokens = new_tokens.expand(batch, -1)
        past = cache.length
        n_new = new_tokens.size(1)
        length = n_new + n_masks
        if past + length > self.config.max_positions:
            raise ShapeError(f'decoding past max_positions ({self.config.max_positions})')

        tokens = torch.cat([new_tokens, torch.full((batch, n_masks), MASK_ID, dtype=torch.long)], dim=1)
        positions = torch.arange(past + 1, past + length + 1)
        h = self._embed_decoder(tokens, positions)
        key_positions = torch.arange(1, past + length + 1)
        bias = self.rel_bias(positions, key_positions).to(h.dtype)
        bias = (bias + causal_bias(length, past + length, h.dtype))[None]

        for index, layer in enumerate(self.decoder_layers):
            q, k, v = layer.self_attn.project_qkv(layer.ln_self(h))
            k_past, v_past = cache.get(index)
            keys = k if k_past is None else torch.cat([k_past, k], dim=2)
            values = v if v_past is None else torch.cat([v_past, v], dim=2)
            h = h + layer.self_attn.out_proj(layer.self_attn.merge(layer.self_attn.attend(q, keys, values, bias)))
            # Só o stream principal entra no cache; máscaras nunca são contexto futuro
            cache.append(index, k[:, :, :n_new], v[:, :, :n_new])
            h = layer.cross_and_ffn(h, encoder_states)
        return self._logits(h[:, n_new:])


def relative_bias(query_target_pos, key_target_pos, head, model):
    """Escalar de viés relativo para um par de posições-alvo e uma cabeça"""
    buckets = model.rel_bias.buckets(torch.tensor([query_target_pos]), torch.tensor([key_target_pos]))
    return model.rel_bias.embedding.weight[buckets[0, 0], head]
