from dataclasses import asdict, dataclass, fields

from django.conf import settings

from bang_toolkit.exceptions import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    """Hiperparâmetros de arquitetura do codificador-decodificador"""

    enc_layers: int = 2
    dec_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 128
    vocab_size: int = 64
    max_positions: int = 128
    n_streams: int = 8
    rel_buckets: int = 32
    rel_max_distance: int = 64
    dropout: float = 0.1
    seed: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def d_head(self):
        return self.d_model // self.n_heads

    def validate(self):
        """Valida contagens positivas e divisibilidade das cabeças"""
        counts = [
            'enc_layers', 'dec_layers', 'd_model', 'n_heads', 'd_ffn',
            'vocab_size', 'max_positions', 'n_streams', 'rel_buckets', 'rel_max_distance',
        ]
        for name in counts:
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f'{name} must be a positive integer, got {value!r}')
        if self.d_model % self.n_heads:
            raise ConfigError(f'd_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})')
        if self.n_streams > self.max_positions:
            raise ConfigError(f'n_streams ({self.n_streams}) exceeds max_positions ({self.max_positions})')
        if self.rel_buckets < 4 or self.rel_buckets % 2:
            raise ConfigError(f'rel_buckets must be an even number >= 4, got {self.rel_buckets}')
        if self.rel_max_distance <= self.rel_buckets // 4:
            raise ConfigError(
                f'rel_max_distance ({self.rel_max_distance}) must exceed rel_buckets // 4 ({self.rel_buckets // 4})'
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f'dropout must be in [0, 1), got {self.dropout}')
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f'seed must fit in 64 bits, got {self.seed}')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        """Constrói a partir de um dicionário, ignorando chaves de treino/decodificação"""
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    @classmethod
    def desk(cls, **overrides):
        return cls(**{**settings.BANG_TOOLKIT['DESK_MODEL'], **overrides})

    @classmethod
    def full(cls, **overrides):
        return cls(**{**settings.BANG_TOOLKIT['FULL_MODEL'], **overrides})

    def replace(self, **changes):
        return type(self)(**{**self.to_dict(), **changes})
