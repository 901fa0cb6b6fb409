from rest_framework import serializers

from .reports import EvalReport


class LatencySerializer(serializers.Serializer):
    """Serializer para estatísticas de latência de um modo"""
    median_ms = serializers.FloatField()
    p90_ms = serializers.FloatField()
    runs = serializers.IntegerField(min_value=1)
    mean_forward_passes = serializers.FloatField(min_value=0)

    def validate(self, attrs):
        """Latência precisa ser positiva"""
        if attrs['median_ms'] <= 0 or attrs['p90_ms'] <= 0:
            raise serializers.ValidationError('Latency must be positive.')
        return attrs


class ReportMetadataSerializer(serializers.Serializer):
    config_hash = serializers.CharField()
    seed = serializers.IntegerField()
    revision = serializers.CharField()
    bleu_smoothing = serializers.CharField()
    n_samples = serializers.IntegerField(min_value=0)


class EvalReportSerializer(serializers.Serializer):
    """Serializer para EvalReport (JSON sem perdas nos dois sentidos)"""
    metrics = serializers.DictField(
        child=serializers.DictField(child=serializers.FloatField(min_value=0.0, max_value=100.0))
    )
    forward_passes = serializers.DictField(child=serializers.FloatField(min_value=0.0))
    latency = serializers.DictField(child=LatencySerializer(), required=False, default=dict)
    speedup = serializers.DictField(child=serializers.FloatField(), required=False, default=dict)
    metadata = ReportMetadataSerializer()

    def create(self, validated_data):
        return EvalReport(**validated_data)
