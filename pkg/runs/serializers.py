from django.conf import settings
from rest_framework import serializers

from bang_toolkit.exceptions import ConfigError
from decoding.engines import DECODE_MODES
from modeling.config import ModelConfig

TRAIN_MODES = ('bang', 'ar', 'nar', 'multi')


def desk_default(name):
    """Padrão lido da configuração de mesa no momento da validação"""
    return lambda: settings.BANG_TOOLKIT['DESK_MODEL'][name]


class RunConfigSerializer(serializers.Serializer):
    """
    Configuração efetiva de uma execução: campos do ModelConfig, de treino e
    de decodificação. Todo campo tem padrão; chaves desconhecidas são rejeitadas.
    """

    # Arquitetura
    enc_layers = serializers.IntegerField(min_value=1, default=desk_default('enc_layers'))
    dec_layers = serializers.IntegerField(min_value=1, default=desk_default('dec_layers'))
    d_model = serializers.IntegerField(min_value=1, default=desk_default('d_model'))
    n_heads = serializers.IntegerField(min_value=1, default=desk_default('n_heads'))
    d_ffn = serializers.IntegerField(min_value=1, default=desk_default('d_ffn'))
    vocab_size = serializers.IntegerField(min_value=1, default=desk_default('vocab_size'))
    max_positions = serializers.IntegerField(min_value=1, default=desk_default('max_positions'))
    n_streams = serializers.IntegerField(min_value=1, default=desk_default('n_streams'))
    rel_buckets = serializers.IntegerField(min_value=4, default=desk_default('rel_buckets'))
    rel_max_distance = serializers.IntegerField(min_value=1, default=desk_default('rel_max_distance'))
    dropout = serializers.FloatField(min_value=0.0, default=desk_default('dropout'))
    seed = serializers.IntegerField(min_value=0, default=desk_default('seed'))

    # Treino
    mode = serializers.ChoiceField(choices=TRAIN_MODES, default='bang')
    lr = serializers.FloatField(default=1e-4)
    warmup_steps = serializers.IntegerField(min_value=0, default=1000)
    smoothing = serializers.FloatField(min_value=0.0, default=0.1)
    clip_norm = serializers.FloatField(default=1.0)
    batch_size = serializers.IntegerField(min_value=1, default=32)
    max_steps = serializers.IntegerField(min_value=0, default=1000)
    eval_every = serializers.IntegerField(min_value=0, default=200)
    block = serializers.IntegerField(min_value=1, default=64)
    mask_ratio = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.15)

    # Dados e checkpoints
    corpus = serializers.CharField(default='', allow_blank=True)
    train_file = serializers.CharField(default='', allow_blank=True)
    dev_file = serializers.CharField(default='', allow_blank=True)
    vocab_file = serializers.CharField(default='', allow_blank=True)
    checkpoint_dir = serializers.CharField(default='', allow_blank=True)
    init_checkpoint = serializers.CharField(default='', allow_blank=True)

    # Decodificação
    decode_mode = serializers.ChoiceField(choices=DECODE_MODES, default='ar')
    beam = serializers.IntegerField(min_value=1, default=4)
    length_penalty = serializers.FloatField(default=1.0)
    max_len = serializers.IntegerField(min_value=1, default=50)
    n_ar = serializers.IntegerField(min_value=0, default=5)
    n_nar = serializers.IntegerField(min_value=0, default=25)

    def to_internal_value(self, data):
        """Rejeita chaves que não são campos"""
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown configuration key.'] for key in unknown})
        return super().to_internal_value(data)

    def validate_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError('Learning rate must be positive.')
        return value

    def validate_clip_norm(self, value):
        if value <= 0:
            raise serializers.ValidationError('Clip norm must be positive.')
        return value

    def validate_smoothing(self, value):
        if value >= 1.0:
            raise serializers.ValidationError('Label smoothing must be below 1.')
        return value

    def validate(self, attrs):
        """Valida o ModelConfig contido na configuração"""
        try:
            ModelConfig.from_dict(attrs)
        except ConfigError as exc:
            raise serializers.ValidationError(str(exc))
        return attrs


def model_config(run_config):
    return ModelConfig.from_dict(run_config)
