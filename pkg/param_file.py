#!/usr/bin/env python3
"""
Fichiers de modèle : conteneur binaire des paramètres ternaires et
fichier JSON d'architecture.

Format des paramètres (petit-boutiste) :
    b'TGCP'  u16 version  u16 len(nom)  nom utf-8  f64 facteur d'échelle
    u16 nombre de couches
    par couche :
        u8 code du type   u8 ndim   ndim x u32 dimensions
        u32 octets empaquetés, poids sur 2 bits (4 par octet, bits de poids faible
            d'abord ; 00=0, 01=+1, 10=-1)
        u32 nombre de seuils, seuils en i32
    Les couches MAXPOOL/IDENTITY ont ndim=0, 0 octet et 0 seuil.
"""

import json
import logging
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from model_core import (Architecture, LayerKind, LayerSpec, ModelParams, ShapeError,
                        TernaryTensor)
import model_zoo

logger = logging.getLogger(__name__)

MAGIC = b'TGCP'
FORMAT_VERSION = 1

KIND_CODES = {
    LayerKind.CONV1x1: 1,
    LayerKind.CONV3x3: 3,
    LayerKind.CONV5x5: 5,
    LayerKind.FC: 10,
    LayerKind.MAXPOOL2x2: 20,
    LayerKind.IDENTITY: 30,
}
CODE_KINDS = {code: kind for kind, code in KIND_CODES.items()}

# Code 2 bits -> valeur ternaire (0b11 est invalide)
_DECODE = np.array([0, 1, -1, 127], dtype=np.int8)


class ParamFileError(ValueError):
    """Fichier de paramètres corrompu ou incompatible."""


def pack_ternary(values: np.ndarray) -> bytes:
    """Empaquette des valeurs ternaires, 4 par octet."""
    codes = np.zeros(values.size, dtype=np.uint8)
    flat = values.reshape(-1)
    codes[flat == 1] = 0b01
    codes[flat == -1] = 0b10
    padded = np.zeros((codes.size + 3) // 4 * 4, dtype=np.uint8)
    padded[:codes.size] = codes
    quads = padded.reshape(-1, 4)
    packed = quads[:, 0] | (quads[:, 1] << 2) | (quads[:, 2] << 4) | (quads[:, 3] << 6)
    return packed.astype(np.uint8).tobytes()


def unpack_ternary(data: bytes, count: int) -> np.ndarray:
    packed = np.frombuffer(data, dtype=np.uint8)
    if packed.size != (count + 3) // 4:
        raise ParamFileError(f"{packed.size} octets pour {count} poids")
    codes = np.stack([(packed >> shift) & 0b11 for shift in (0, 2, 4, 6)], axis=1).reshape(-1)
    values = _DECODE[codes]
    if (values[:count] == 127).any():
        raise ParamFileError("code de poids 0b11 invalide")
    if codes[count:].any():
        raise ParamFileError("bits de bourrage non nuls")
    return values[:count].copy()


def write_params(params: ModelParams, sink):
    """Écrit les paramètres dans un chemin ou un flux binaire."""
    if isinstance(sink, (str, Path)):
        with open(sink, 'wb') as f:
            write_params(params, f)
        logger.info(f"Paramètres écrits: {sink} ({params.arch.describe()})")
        return
    arch = params.arch
    name = arch.name.encode('utf-8')
    out: BinaryIO = sink
    out.write(MAGIC)
    out.write(struct.pack('<HH', FORMAT_VERSION, len(name)))
    out.write(name)
    out.write(struct.pack('<dH', float(arch.scaling_factor), len(arch.layers)))
    for layer, tensor, theta in zip(arch.effective_layers(), params.weights, params.thresholds):
        if tensor is None:
            out.write(struct.pack('<BB', KIND_CODES[layer.kind], 0))
            out.write(struct.pack('<I', 0))
            out.write(struct.pack('<I', 0))
            continue
        out.write(struct.pack('<BB', KIND_CODES[layer.kind], len(tensor.shape)))
        out.write(struct.pack(f'<{len(tensor.shape)}I', *tensor.shape))
        packed = pack_ternary(tensor.values)
        out.write(struct.pack('<I', len(packed)))
        out.write(packed)
        out.write(struct.pack('<I', theta.size))
        out.write(theta.astype('<i4').tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise ParamFileError(f"fichier tronqué à l'octet {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_params(source, arch: Architecture = None) -> ModelParams:
    """
    Relit un fichier de paramètres. L'architecture est retrouvée par son nom
    dans le zoo si elle n'est pas fournie.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise ParamFileError(f"fichier de paramètres introuvable: {source}")
        data = path.read_bytes()
    else:
        data = source.read()

    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise ParamFileError("signature TGCP absente")
    version, name_length = reader.unpack('<HH')
    if version != FORMAT_VERSION:
        raise ParamFileError(f"version de format non supportée: {version}")
    name = reader.take(name_length).decode('utf-8')
    scale, layer_count = reader.unpack('<dH')

    if arch is None:
        try:
            arch = model_zoo.get_architecture(name, scale)
        except ShapeError as e:
            raise ParamFileError(str(e))
    if arch.name != name or abs(arch.scaling_factor - scale) > 1e-12:
        raise ParamFileError(f"fichier pour {name}@{scale:g}, architecture {arch.name}@{arch.scaling_factor:g}")
    if layer_count != len(arch.layers):
        raise ParamFileError(f"{layer_count} couches dans le fichier, {len(arch.layers)} attendues")

    weights, thresholds = [], []
    for index, layer in enumerate(arch.effective_layers()):
        code, ndim = reader.unpack('<BB')
        if CODE_KINDS.get(code) is not layer.kind:
            raise ParamFileError(f"couche {index}: type {code} au lieu de {layer.kind.value}")
        shape = reader.unpack(f'<{ndim}I') if ndim else ()
        (packed_length,) = reader.unpack('<I')
        packed = reader.take(packed_length)
        (theta_count,) = reader.unpack('<I')
        theta = np.frombuffer(reader.take(4 * theta_count), dtype='<i4').astype(np.int32)
        if ndim == 0:
            if packed_length or theta_count:
                raise ParamFileError(f"couche {index}: données pour une couche sans poids")
            weights.append(None)
            thresholds.append(None)
            continue
        count = int(np.prod(shape))
        weights.append(TernaryTensor(shape, unpack_ternary(packed, count)))
        thresholds.append(theta)
    if reader.offset != len(data):
        raise ParamFileError(f"{len(data) - reader.offset} octets en trop en fin de fichier")

    try:
        return ModelParams(arch, tuple(weights), tuple(thresholds))
    except ShapeError as e:
        raise ParamFileError(f"paramètres incompatibles avec {arch.name}: {e}")


def architecture_to_dict(arch: Architecture) -> dict:
    return {
        'name': arch.name,
        'scaling_factor': arch.scaling_factor,
        'input_shape': list(arch.input_shape),
        'num_classes': arch.num_classes,
        'layers': [
            {'kind': layer.kind.value, 'kernels_or_nodes': layer.kernels_or_nodes,
             'padding': layer.padding, 'stride': layer.stride}
            for layer in arch.layers
        ],
    }


def architecture_from_dict(data: dict) -> Architecture:
    try:
        layers = tuple(
            LayerSpec(LayerKind(entry['kind']), entry.get('kernels_or_nodes'),
                      entry.get('padding', 0), entry.get('stride', 1))
            for entry in data['layers']
        )
        return Architecture(data['name'], layers, float(data.get('scaling_factor', 1.0)),
                            tuple(data.get('input_shape', (28, 28, 1))),
                            int(data.get('num_classes', 10)))
    except (KeyError, TypeError, ValueError) as e:
        raise ParamFileError(f"fichier d'architecture invalide: {e}")


def write_architecture(arch: Architecture, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(architecture_to_dict(arch), f, indent=2, ensure_ascii=False)
    logger.info(f"Architecture écrite: {path}")


def read_architecture(path) -> Architecture:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return architecture_from_dict(json.load(f))
    except (OSError, json.JSONDecodeError) as e:
        raise ParamFileError(f"lecture de l'architecture {path} impossible: {e}")
