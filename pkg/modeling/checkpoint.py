"""
Diretório de checkpoint autodescritivo:

    config.json      campos de ModelConfig
    manifest.json    [{name, shape, dtype: "f32"}, ...] em ordem
    weights.bin      f32 little-endian concatenado na ordem do manifesto
    vocab.txt        um token por linha
    run_config.json  RunConfig efetiva (opcional, proveniência)
    trainer.pt       estado do otimizador/agenda para retomar (opcional)
    meta.json        passo, perda de dev etc. (opcional)
"""

import json
import logging
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import jsonschema
import numpy as np
import torch
from django.core.files import locks

from bang_toolkit.exceptions import CheckpointError, ConfigError
from corpus.vocab import Vocabulary

from .config import ModelConfig
from .network import BangModel

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = {
    'type': 'array',
    'items': {
        'type': 'object',
        'required': ['name', 'shape', 'dtype'],
        'additionalProperties': False,
        'properties': {
            'name': {'type': 'string', 'minLength': 1},
            'shape': {'type': 'array', 'items': {'type': 'integer', 'minimum': 0}},
            'dtype': {'const': 'f32'},
        },
    },
}

TRAINER_FILE = 'trainer.pt'


@dataclass
class Checkpoint:
    model: BangModel
    vocab: Vocabulary
    run_config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    path: Path = None

    @property
    def trainer_state_path(self):
        path = self.path / TRAINER_FILE
        return path if path.exists() else None


def _dump_json(path, data):
    path.write_text(json.dumps(data, indent=2) + '\n', encoding='utf-8')


def manifest_for(model):
    return [
        {'name': name, 'shape': list(tensor.shape), 'dtype': 'f32'}
        for name, tensor in model.state_dict().items()
    ]


def weights_bytes(model):
    """Pesos concatenados em f32 little-endian, sem padding"""
    return b''.join(
        tensor.detach().cpu().to(torch.float32).contiguous().numpy().astype('<f4', copy=False).tobytes()
        for tensor in model.state_dict().values()
    )


@contextmanager
def checkpoint_lock(directory):
    """Trava exclusiva por diretório de checkpoint (um escritor por vez)"""
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    lock_path = directory.with_name(directory.name + '.lock')
    with open(lock_path, 'a') as handle:
        if not locks.lock(handle, locks.LOCK_EX | locks.LOCK_NB):
            raise CheckpointError(f'checkpoint directory {directory} is locked by another process')
        try:
            yield
        finally:
            locks.unlock(handle)


def save_checkpoint(directory, model, vocab, run_config=None, meta=None, trainer_state=None):
    """Grava o checkpoint de forma atômica (diretório temporário + rename)"""
    target = Path(directory)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f'.{target.name}.', dir=target.parent))
    try:
        _dump_json(staging / 'config.json', model.config.to_dict())
        _dump_json(staging / 'manifest.json', manifest_for(model))
        (staging / 'weights.bin').write_bytes(weights_bytes(model))
        vocab.save(staging / 'vocab.txt')
        if run_config is not None:
            _dump_json(staging / 'run_config.json', run_config)
        if meta is not None:
            _dump_json(staging / 'meta.json', meta)
        if trainer_state is not None:
            torch.save(trainer_state, staging / TRAINER_FILE)

        if target.exists():
            retired = target.with_name(f'.{target.name}.retired')
            if retired.exists():
                shutil.rmtree(retired)
            target.rename(retired)
            staging.rename(target)
            shutil.rmtree(retired)
        else:
            staging.rename(target)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise

    logger.info('Checkpoint gravado em %s', target)
    return target


def _read_json(path):
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise CheckpointError(f'missing checkpoint file {path.name} in {path.parent}') from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f'malformed {path.name}: {exc}') from exc


def load_checkpoint(directory):
    """Carrega modelo, vocabulário e proveniência; não precisa de outros parâmetros"""
    path = Path(directory)
    if not path.is_dir():
        raise CheckpointError(f'checkpoint directory {path} does not exist')

    config_data = _read_json(path / 'config.json')
    expected = {f.name for f in fields(ModelConfig)}
    if set(config_data) != expected:
        raise CheckpointError(f'config.json keys {sorted(config_data)} differ from {sorted(expected)}')
    try:
        config = ModelConfig(**config_data)
    except ConfigError as exc:
        raise CheckpointError(f'invalid config.json: {exc}') from exc

    manifest = _read_json(path / 'manifest.json')
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CheckpointError(f'invalid manifest.json: {exc.message}') from exc

    model = BangModel(config)
    own = model.state_dict()
    if [entry['name'] for entry in manifest] != list(own):
        raise CheckpointError('manifest tensor names do not match the model built from config.json')

    raw = (path / 'weights.bin').read_bytes()
    expected_bytes = 4 * sum(int(np.prod(entry['shape'], dtype=np.int64)) for entry in manifest)
    if len(raw) != expected_bytes:
        raise CheckpointError(f'weights.bin has {len(raw)} bytes, manifest needs {expected_bytes}')

    state, offset = {}, 0
    for entry in manifest:
        count = int(np.prod(entry['shape'], dtype=np.int64))
        array = np.frombuffer(raw, dtype='<f4', count=count, offset=offset).astype(np.float32)
        tensor = torch.from_numpy(array).reshape(entry['shape'])
        if tuple(tensor.shape) != tuple(own[entry['name']].shape):
            raise CheckpointError(f'shape mismatch for {entry["name"]}')
        state[entry['name']] = tensor
        offset += 4 * count
    model.load_state_dict(state, strict=True)

    vocab = Vocabulary.load(path / 'vocab.txt')
    if len(vocab) > config.vocab_size:
        raise CheckpointError(f'vocab.txt has {len(vocab)} tokens but vocab_size is {config.vocab_size}')

    run_config = _read_json(path / 'run_config.json') if (path / 'run_config.json').exists() else {}
    meta = _read_json(path / 'meta.json') if (path / 'meta.json').exists() else {}
    return Checkpoint(model=model, vocab=vocab, run_config=run_config, meta=meta, path=path)
