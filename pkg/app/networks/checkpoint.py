"""
Checkpoint binário de redes: magic `UMSN`, cabeçalho u32 e camadas em
float64 little-endian, row-major.
"""

from pathlib import Path
from typing import Union
import struct

import numpy as np
from loguru import logger

from app.core.errors import ArtifactIOError
from app.core.storage import atomic_write_bytes
from app.networks.mlp import ACTIVATIONS, DenseLayer, Mlp

MAGIC = b"UMSN"
VERSION = 1
_HEADER = struct.Struct("<5I")  # version, layers, data_dim, label_width, time_embed_width
_SHAPE = struct.Struct("<2I")
_TAGS = {name: tag for tag, name in enumerate(ACTIVATIONS)}


def encode_network(net: Mlp) -> bytes:
    parts = [MAGIC, _HEADER.pack(VERSION, len(net.layers), net.data_dim, net.label_width, net.time_embed_width)]
    for layer in net.layers:
        parts.append(_SHAPE.pack(*layer.weight.shape))
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
        parts.append(struct.pack("<B", _TAGS[layer.activation]))
    return b"".join(parts)


def decode_network(payload: bytes) -> Mlp:
    """
    Reconstrói a rede a partir dos bytes do checkpoint.

    Raises:
        ArtifactIOError: Magic, versão ou tamanho inválidos
    """
    if payload[:4] != MAGIC:
        raise ArtifactIOError("Checkpoint sem magic UMSN")
    try:
        version, count, data_dim, label_width, embed_width = _HEADER.unpack_from(payload, 4)
        if version != VERSION:
            raise ArtifactIOError(f"Versão de checkpoint não suportada: {version}")
        offset = 4 + _HEADER.size
        layers = []
        for _ in range(count):
            rows, cols = _SHAPE.unpack_from(payload, offset)
            offset += _SHAPE.size
            weight = _read_floats(payload, offset, rows * cols).reshape(rows, cols)
            offset += 8 * rows * cols
            bias = _read_floats(payload, offset, cols)
            offset += 8 * cols
            (tag,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            if tag >= len(ACTIVATIONS):
                raise ArtifactIOError(f"Tag de ativação desconhecida: {tag}")
            layers.append(DenseLayer(weight, bias, ACTIVATIONS[tag]))
    except struct.error as e:
        raise ArtifactIOError(f"Checkpoint truncado: {e}")
    if offset != len(payload):
        raise ArtifactIOError(f"Checkpoint com {len(payload) - offset} bytes sobrando")
    return Mlp(layers, data_dim, label_width, embed_width)


def _read_floats(payload: bytes, offset: int, count: int) -> np.ndarray:
    end = offset + 8 * count
    if end > len(payload):
        raise ArtifactIOError("Checkpoint truncado")
    return np.frombuffer(payload[offset:end], dtype="<f8").astype(np.float64)


def save_network(net: Mlp, path: Union[str, Path]) -> None:
    atomic_write_bytes(path, encode_network(net))
    logger.debug(f"Checkpoint gravado em {path}")


def load_network(path: Union[str, Path]) -> Mlp:
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"Erro ao ler checkpoint {path}: {e}")
    return decode_network(payload)
