"""Exceções compartilhadas entre os apps do toolkit"""


class ToolkitError(Exception):
    """Erro base do toolkit"""


class ConfigError(ToolkitError, ValueError):
    """Configuração inválida (ModelConfig ou RunConfig)"""


class ShapeError(ToolkitError, ValueError):
    """Formas de tensores incompatíveis"""


class LayoutError(ToolkitError, ValueError):
    """Célula ou layout de streams inválido"""


class CorpusError(ToolkitError, ValueError):
    """Corpus vazio, mal codificado ou fora dos limites"""


class CheckpointError(ToolkitError):
    """Checkpoint ilegível, incompleto ou incompatível"""


class NonFiniteLossError(ToolkitError):
    """Perda NaN/inf durante o treino"""

    def __init__(self, batch_index, value):
        self.batch_index = batch_index
        self.value = value
        super().__init__(f'non-finite loss {value!r} at batch index {batch_index}')


class GateFailure(ToolkitError):
    """Critério de aceitação não atendido"""
