"""Checkpoint file: one line of JSON manifest followed by little-endian float32 blobs.

Manifest fields: format_version, config (ModelConfig), total_bytes and
tensors [{name, shape, dtype, byte_offset, byte_len}], offsets relative to
the first blob byte and contiguous in state order.
"""
import json
import logging

import numpy as np
import torch

from wsa_separation.errors import (CheckpointError, CheckpointShapeError,
                                   CheckpointTruncatedError, CheckpointVersionError)
from wsa_separation.model import ModelConfig, SepModel
from wsa_separation.storage import LocalStorage

LOGGER = logging.getLogger(__name__)

FORMAT_VERSION = 1
_DTYPE = 'f32'


def checkpoint_bytes(model):
    tensors = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        data = tensor.detach().cpu().to(torch.float32).numpy().astype('<f4').tobytes()
        tensors.append({'name': name, 'shape': list(tensor.shape), 'dtype': _DTYPE,
                        'byte_offset': offset, 'byte_len': len(data)})
        blobs.append(data)
        offset += len(data)
    manifest = {'format_version': FORMAT_VERSION, 'config': model.config.to_dict(),
                'total_bytes': offset, 'tensors': tensors}
    header = json.dumps(manifest, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return header + b'\n' + b''.join(blobs)


def save_checkpoint(model, path, storage=None):
    storage = storage or LocalStorage()
    path = storage.write_bytes(path, checkpoint_bytes(model))
    LOGGER.info('Saved checkpoint %s', path)
    return path


def _parse_manifest(data, path):
    newline = data.find(b'\n')
    if newline < 0:
        raise CheckpointTruncatedError('%s: manifest is not terminated' % path)
    try:
        manifest = json.loads(data[:newline].decode('utf-8'))
    except ValueError as e:
        raise CheckpointError('%s: unreadable manifest (%s)' % (path, e))
    version = manifest.get('format_version')
    if version != FORMAT_VERSION:
        raise CheckpointVersionError('%s: format_version %s, expected %d'
                                     % (path, version, FORMAT_VERSION))
    return manifest, data[newline + 1:]


def load_checkpoint(path, storage=None):
    """Loads a SepModel, validating every tensor against the manifest config."""
    storage = storage or LocalStorage()
    manifest, blob = _parse_manifest(storage.read_bytes(path), path)
    model = SepModel(ModelConfig.from_dict(manifest['config']))
    expected = model.state_dict()

    names = [entry['name'] for entry in manifest['tensors']]
    if names != list(expected.keys()):
        missing = sorted(set(expected) - set(names))
        unexpected = sorted(set(names) - set(expected))
        raise CheckpointShapeError('%s: tensors do not match the configuration (missing %s, '
                                   'unexpected %s)' % (path, missing, unexpected))

    state = {}
    offset = 0
    for entry in manifest['tensors']:
        name = entry['name']
        shape = tuple(entry['shape'])
        if entry.get('dtype') != _DTYPE:
            raise CheckpointShapeError('%s: tensor %s has dtype %s' % (path, name, entry.get('dtype')))
        if tuple(expected[name].shape) != shape:
            raise CheckpointShapeError('%s: tensor %s has shape %s, configuration expects %s'
                                       % (path, name, shape, tuple(expected[name].shape)))
        count = int(np.prod(shape, dtype=np.int64))
        if entry['byte_len'] != 4 * count:
            raise CheckpointShapeError('%s: tensor %s declares %d bytes for shape %s'
                                       % (path, name, entry['byte_len'], shape))
        if entry['byte_offset'] != offset:
            raise CheckpointError('%s: tensor %s at offset %d, expected %d'
                                  % (path, name, entry['byte_offset'], offset))
        if offset + entry['byte_len'] > len(blob):
            raise CheckpointTruncatedError('%s: data of tensor %s is truncated' % (path, name))
        values = np.frombuffer(blob, dtype='<f4', count=count, offset=offset)
        state[name] = torch.from_numpy(values.astype(np.float32)).reshape(shape)
        offset += entry['byte_len']

    if manifest.get('total_bytes') != offset:
        raise CheckpointError('%s: header declares %s bytes, tensors hold %d'
                              % (path, manifest.get('total_bytes'), offset))
    if len(blob) != offset:
        raise CheckpointError('%s: %d trailing byte(s) after the last tensor'
                              % (path, len(blob) - offset))
    model.load_state_dict(state)
    LOGGER.info('Loaded %s checkpoint %s', model.config.attention_mode, path)
    return model
