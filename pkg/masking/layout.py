"""
Geometria de streams e máscaras de visibilidade do decodificador n-stream.

Linhas são indexadas por (stream s, posição t): s=0 é o stream principal
(tokens dourados), s>=1 são os streams de predição (tokens [MASK]).
Posições começam em 1.
"""

from dataclasses import dataclass

import torch

from bang_toolkit.exceptions import LayoutError

# Sentinela finita no lugar de -inf: linhas totalmente mascaradas não geram NaN
MASK_SENTINEL = -1e9


@dataclass(frozen=True)
class StreamLayout:
    """Um stream principal mais n streams de predição sobre um alvo de tamanho T"""

    target_len: int
    n_streams: int

    def __post_init__(self):
        if self.target_len < 1 or self.n_streams < 1:
            raise LayoutError(
                f'target_len and n_streams must be positive, got {self.target_len}, {self.n_streams}'
            )
        if self.n_streams > self.target_len:
            raise LayoutError(
                f'n_streams ({self.n_streams}) exceeds target_len ({self.target_len})'
            )

    @classmethod
    def for_target(cls, target_len, max_streams):
        """Layout com o maior número de streams que cabe no alvo"""
        return cls(target_len, min(target_len, max_streams))

    @property
    def n_rows(self):
        return (self.n_streams + 1) * self.target_len

    def row_index(self, s, t):
        """Bijeção (s, t) -> linha; cobre células válidas e inválidas"""
        if not (0 <= s <= self.n_streams and 1 <= t <= self.target_len):
            raise LayoutError(f'cell ({s}, {t}) outside layout {self}')
        return s * self.target_len + (t - 1)

    def cell(self, row):
        """Inversa de row_index"""
        if not 0 <= row < self.n_rows:
            raise LayoutError(f'row {row} outside layout {self}')
        return row // self.target_len, row % self.target_len + 1

    def is_valid(self, s, t):
        # Célula preditora precisa de t - s >= 0 antecessores dourados
        return s == 0 or t >= s

    def cells(self):
        """Todas as células em ordem de linha"""
        return [(s, t) for s in range(self.n_streams + 1) for t in range(1, self.target_len + 1)]

    def valid_predicting_cells(self):
        return [(s, t) for s, t in self.cells() if s >= 1 and self.is_valid(s, t)]

    @property
    def valid_predicting_count(self):
        return sum(min(t, self.n_streams) for t in range(1, self.target_len + 1))

    def stream_rows(self, s):
        """Fatia de linhas do bloco do stream s"""
        start = s * self.target_len
        return slice(start, start + self.target_len)


@dataclass(frozen=True)
class VisibilityMask:
    """Viés aditivo (0 ou sentinela) sobre linhas do layout, mais validade por linha"""

    layout: StreamLayout
    bias: torch.Tensor
    valid: torch.Tensor

    @property
    def visible(self):
        return self.bias == 0

    def block(self, query_stream, key_streams_upto):
        """Recorte do viés para o bloco de consulta s contra os streams 0..k do cache"""
        rows = self.layout.stream_rows(query_stream)
        cols = slice(0, (key_streams_upto + 1) * self.layout.target_len)
        return self.bias[rows, cols]


def visible_set(layout, s, t):
    """Conjunto de células (stream, posição) visíveis para a célula (s, t)"""
    if not (0 <= s <= layout.n_streams and 1 <= t <= layout.target_len) or not layout.is_valid(s, t):
        raise LayoutError('invalid stream cell')

    if s == 0:
        return frozenset((0, u) for u in range(1, t + 1))

    golden = {(0, u) for u in range(1, t - s + 1)}
    masks = {(j, t - s + j) for j in range(1, s)}
    return frozenset(golden | masks | {(s, t)})


def validity_mask(layout):
    """Vetor booleano por linha: verdadeiro se t >= s ou s = 0"""
    rows = torch.arange(layout.n_rows)
    s = rows // layout.target_len
    t = rows % layout.target_len + 1
    return (s == 0) | (t >= s)


def build_mask(layout, dtype=torch.float32):
    """Constrói a matriz de visibilidade completa de forma vetorizada"""
    rows = torch.arange(layout.n_rows)
    s = rows // layout.target_len
    t = rows % layout.target_len + 1
    qs, qt = s[:, None], t[:, None]
    ks, kt = s[None, :], t[None, :]

    main_query = (qs == 0) & (ks == 0) & (kt <= qt)
    golden_prefix = (qs >= 1) & (ks == 0) & (kt <= qt - qs)
    # Antecessores [MASK]: um por stream j <= s, na diagonal t' - j == t - s
    mask_chain = (qs >= 1) & (ks >= 1) & (ks <= qs) & (kt - ks == qt - qs)

    valid = (s == 0) | (t >= s)
    visible = (main_query | golden_prefix | mask_chain) & valid[:, None] & valid[None, :]

    bias = torch.full((layout.n_rows, layout.n_rows), MASK_SENTINEL, dtype=dtype)
    bias.masked_fill_(visible, 0.0)
    return VisibilityMask(layout=layout, bias=bias, valid=valid)


def mask_from_visible_sets(layout, dtype=torch.float32):
    """Oráculo lento: monta a máscara chamando visible_set célula a célula"""
    bias = torch.full((layout.n_rows, layout.n_rows), MASK_SENTINEL, dtype=dtype)
    for s, t in layout.cells():
        if not layout.is_valid(s, t):
            continue
        q = layout.row_index(s, t)
        for ks, kt in visible_set(layout, s, t):
            bias[q, layout.row_index(ks, kt)] = 0.0
    return VisibilityMask(layout=layout, bias=bias, valid=validity_mask(layout))
