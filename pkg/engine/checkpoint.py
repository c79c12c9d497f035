"""Versioned binary checkpoints.

Layout::

    b"BUNT"                      magic
    u8                           format version
    u32 little-endian            header length in bytes
    header                       UTF-8 JSON: network spec, tensor manifest, metadata
    payload                      little-endian float32 tensors, in manifest order

The manifest lists every parameter and buffer with its shape, byte offset into
the payload and byte length. Serialization is deterministic: the same network
and metadata always produce the same bytes.
"""
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .exceptions import ConfigError, ContractError, FormatError, IoError
from .unet import UNet, UNetSpec, build

logger = logging.getLogger(__name__)

MAGIC = b'BUNT'
FORMAT_VERSION = 1
_PREFIX = struct.Struct('<4sBI')


@dataclass
class TrainingMetadata:
    epoch: int = 0
    val_loss: Optional[float] = None
    seed: int = 0
    threshold: Optional[float] = None
    stage: str = ''


@dataclass
class Checkpoint:
    net: UNet
    metadata: TrainingMetadata


def checkpoint_bytes(net: UNet, metadata: Optional[TrainingMetadata] = None) -> bytes:
    metadata = metadata or TrainingMetadata()
    manifest, chunks, offset = [], [], 0
    for name, array in net.named_state():
        payload = np.ascontiguousarray(array, dtype='<f4').tobytes()
        manifest.append({'name': name, 'shape': list(array.shape), 'offset': offset, 'nbytes': len(payload)})
        chunks.append(payload)
        offset += len(payload)
    header = json.dumps(
        {'spec': net.spec.to_dict(), 'tensors': manifest, 'metadata': asdict(metadata)},
        sort_keys=True, separators=(',', ':'),
    ).encode('utf-8')
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b''.join(chunks)


def save_checkpoint(net: UNet, path: Union[str, Path], metadata: Optional[TrainingMetadata] = None) -> Path:
    path = Path(path)
    blob = checkpoint_bytes(net, metadata)
    partial = path.with_name(path.name + '.partial')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        partial.write_bytes(blob)
        os.replace(partial, path)
    except OSError as exc:
        raise IoError(f'cannot write checkpoint {path}: {exc}') from exc
    logger.info('saved checkpoint %s (%d bytes)', path, len(blob))
    return path


def _manifest_entries(manifest) -> List[Tuple[str, Tuple[int, ...], int, int]]:
    """(name, shape, offset, nbytes) per tensor entry; anything malformed is a FormatError."""
    if not isinstance(manifest, list):
        raise FormatError(f'corrupt checkpoint header: tensors must be a list, got {type(manifest).__name__}')
    entries = []
    for entry in manifest:
        try:
            name, shape = entry['name'], tuple(entry['shape'])
            offset, nbytes = entry['offset'], entry['nbytes']
        except (KeyError, TypeError) as exc:
            raise FormatError(f'corrupt checkpoint tensor entry {entry!r}: {exc}') from exc
        fields = (offset, nbytes) + shape
        if not isinstance(name, str) or not all(isinstance(v, int) and not isinstance(v, bool) for v in fields):
            raise FormatError(f'corrupt checkpoint tensor entry {entry!r}')
        entries.append((name, shape, offset, nbytes))
    return entries


def parse_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise FormatError('checkpoint is truncated')
    magic, version, header_length = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f'not a checkpoint: bad magic bytes {magic!r}')
    if version != FORMAT_VERSION:
        raise FormatError(f'unsupported checkpoint version {version} (expected {FORMAT_VERSION})')
    header_end = _PREFIX.size + header_length
    if header_end > len(blob):
        raise FormatError('checkpoint header is truncated')
    try:
        header = json.loads(blob[_PREFIX.size:header_end].decode('utf-8'))
        spec = UNetSpec.from_dict(header['spec'])
        net = build(spec)
        metadata = TrainingMetadata(**header['metadata'])
        manifest = header['tensors']
    except (UnicodeDecodeError, ValueError, KeyError, TypeError, ConfigError) as exc:
        raise FormatError(f'corrupt checkpoint header: {exc}') from exc

    expected = {name: array.shape for name, array in net.named_state()}
    payload = memoryview(blob)[header_end:]
    state = {}
    for name, shape, start, length in _manifest_entries(manifest):
        if expected.get(name) != shape:
            raise FormatError(f'tensor {name} with shape {shape} does not match the header spec')
        if length != 4 * int(np.prod(shape, dtype=np.int64)) or start < 0 or start + length > len(payload):
            raise FormatError(f'tensor {name} payload is out of bounds')
        state[name] = np.frombuffer(payload[start:start + length], dtype='<f4').reshape(shape).astype(np.float32)
    try:
        net.load_state_dict(state)
    except ContractError as exc:
        raise FormatError(f'checkpoint tensors do not match the header spec: {exc}') from exc
    return Checkpoint(net=net, metadata=metadata)


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f'cannot read checkpoint {path}: {exc}') from exc
    return parse_checkpoint(blob)


def load_checkpoint(path: Union[str, Path]) -> UNet:
    return read_checkpoint(path).net
