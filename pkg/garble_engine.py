#!/usr/bin/env python3
"""
Garbling à 4 lignes avec free-XOR et point-and-permute.

Labels de 128 bits stockés en deux uint64 petit-boutistes (lo, hi) ; le bit de
permutation est le bit de poids faible de l'octet 0. Pour chaque fil,
label1 = label0 ⊕ Δ, et le bit de permutation de Δ vaut 1.

Hachage des lignes : H(A, B, T) = AES_k(K) ⊕ K avec K = 2A ⊕ 4B ⊕ T (doublement
dans GF(2^128)), clé AES fixe propre à la version du format.
"""

import hashlib
import logging
import time
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from netlist import GateKind, Netlist
from wire_protocol import GARBLED_HEADER, LABEL_BYTES

logger = logging.getLogger(__name__)

GARBLE_VERSION = 1
# Clé publique fixe du hachage des tables (version 1)
FIXED_AES_KEY = bytes.fromhex('7465726e67632d676172626c652d7631')
ROW_BYTES = 4 * LABEL_BYTES

_ONE = np.uint64(1)
_SHIFT_63 = np.uint64(63)
_REDUCTION = np.uint64(0x87)


class IntegrityError(Exception):
    """Circuit garbled ou label incohérent avec la netlist attendue."""


class MissingLabelError(Exception):
    """Label d'entrée absent à l'évaluation."""


def _aes_blocks(blocks: np.ndarray) -> np.ndarray:
    """Chiffre des blocs (m, 2) uint64 avec la clé fixe (ECB, un appel par lot)."""
    if not len(blocks):
        return blocks.copy()
    encryptor = Cipher(algorithms.AES(FIXED_AES_KEY), modes.ECB()).encryptor()
    data = encryptor.update(np.ascontiguousarray(blocks, dtype='<u8').tobytes()) + encryptor.finalize()
    return np.frombuffer(data, dtype='<u8').reshape(-1, 2).astype(np.uint64)


def _double(blocks: np.ndarray) -> np.ndarray:
    """Multiplication par x dans GF(2^128) (polynôme x^128 + x^7 + x^2 + x + 1)."""
    lo, hi = blocks[:, 0], blocks[:, 1]
    carry = hi >> _SHIFT_63
    result = np.empty_like(blocks)
    result[:, 1] = (hi << _ONE) | (lo >> _SHIFT_63)
    result[:, 0] = (lo << _ONE) ^ (carry * _REDUCTION)
    return result


def row_hash(a: np.ndarray, b: np.ndarray, tweaks: np.ndarray) -> np.ndarray:
    """H(A, B, T) pour des lots alignés de labels et d'identifiants de portes."""
    key = _double(a) ^ _double(_double(b))
    key[:, 0] ^= tweaks.astype(np.uint64)
    return _aes_blocks(key) ^ key


def derive_labels(seed: bytes, count: int) -> np.ndarray:
    """`count` labels pseudo-aléatoires tirés de la graine par AES-CTR."""
    key = hashlib.sha256(b'terngc-labels' + seed).digest()[:16]
    encryptor = Cipher(algorithms.AES(key), modes.CTR(b'\x00' * 16)).encryptor()
    stream = encryptor.update(b'\x00' * (count * LABEL_BYTES)) + encryptor.finalize()
    return np.frombuffer(stream, dtype='<u8').reshape(count, 2).astype(np.uint64)


def _seed_bytes(seed: Union[bytes, int]) -> bytes:
    if isinstance(seed, (bytes, bytearray)):
        return bytes(seed)
    return int(seed).to_bytes(16, 'little', signed=False)


def permute_bits(labels: np.ndarray) -> np.ndarray:
    return (labels[:, 0] & _ONE).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class GarbledCircuit:
    """Tables (n_non_xor, 4, 2) dans l'ordre des portes, liées à l'empreinte de la netlist."""
    tables: np.ndarray
    circuit_hash: bytes

    @property
    def gate_count(self) -> int:
        return int(self.tables.shape[0])

    @property
    def table_bytes(self) -> int:
        return self.gate_count * ROW_BYTES

    def serialize(self) -> bytes:
        header = GARBLED_HEADER.pack(GARBLE_VERSION, self.circuit_hash, self.gate_count)
        return header + np.ascontiguousarray(self.tables, dtype='<u8').tobytes()

    @classmethod
    def deserialize(cls, data: bytes, expected_hash: Optional[bytes] = None) -> 'GarbledCircuit':
        if len(data) < GARBLED_HEADER.size:
            raise IntegrityError("en-tête de circuit garbled tronqué")
        version, circuit_hash, count = GARBLED_HEADER.unpack_from(data)
        if version != GARBLE_VERSION:
            raise IntegrityError(f"version de garbling {version} non supportée")
        if expected_hash is not None and circuit_hash != expected_hash:
            raise IntegrityError("empreinte du circuit différente de la netlist attendue")
        body = data[GARBLED_HEADER.size:]
        if len(body) != count * ROW_BYTES:
            raise IntegrityError(f"{len(body)} octets de tables pour {count} portes")
        tables = np.frombuffer(body, dtype='<u8').reshape(count, 4, 2).astype(np.uint64)
        return cls(tables, circuit_hash)


@dataclass(frozen=True, eq=False)
class InputEncoding:
    """Labels 0 des entrées (constantes, client, serveur) et Δ global."""
    input_wires: np.ndarray
    zero_labels: np.ndarray
    delta: np.ndarray

    def positions(self, wires) -> np.ndarray:
        wires = np.asarray(wires, dtype=np.int64).reshape(-1)
        order = np.argsort(self.input_wires)
        sorted_wires = self.input_wires[order]
        index = np.searchsorted(sorted_wires, wires)
        index = np.clip(index, 0, max(len(sorted_wires) - 1, 0))
        if not len(sorted_wires) or (sorted_wires[index] != wires).any():
            raise MissingLabelError("fil hors des entrées du circuit")
        return order[index]

    def pairs(self, wires) -> np.ndarray:
        """(n, 2, 2) : label0 et label1 de chaque fil."""
        zero = self.zero_labels[self.positions(wires)]
        return np.stack([zero, zero ^ self.delta], axis=1)


@dataclass(frozen=True, eq=False)
class OutputDecoding:
    output_wires: np.ndarray
    zero_labels: np.ndarray
    one_labels: np.ndarray


def garble(netlist: Netlist, seed: Union[bytes, int]):
    """
    Garble la netlist. Retourne (GarbledCircuit, InputEncoding, OutputDecoding),
    identiques octet pour octet pour une même graine.
    """
    started = time.time()
    stream = derive_labels(_seed_bytes(seed), netlist.num_wires + 1)
    delta = stream[0].copy()
    delta[0] |= _ONE
    zero = stream[1:].copy()

    non_free = netlist.non_free_gates()
    table_index = np.full(netlist.num_gates, -1, dtype=np.int64)
    table_index[non_free] = np.arange(non_free.size)
    tables = np.zeros((non_free.size, 4, 2), dtype=np.uint64)

    for level in netlist.schedule():
        for kind, gates, a, b, out in level.groups:
            if kind is GateKind.XOR:
                zero[out] = zero[a] ^ zero[b]
            elif kind is GateKind.XNOR:
                zero[out] = zero[a] ^ zero[b] ^ delta
            elif kind is GateKind.NOT:
                zero[out] = zero[a] ^ delta
            else:
                tables[table_index[gates]] = _garble_tables(kind, gates, zero[a], zero[b],
                                                            zero[out], delta)

    circuit = GarbledCircuit(tables, netlist.digest())
    inputs = netlist.input_wires
    encoding = InputEncoding(inputs, zero[inputs].copy(), delta)
    outputs = netlist.output_wires
    decoding = OutputDecoding(outputs, zero[outputs].copy(), zero[outputs] ^ delta)
    logger.debug(f"Garbling: {non_free.size} tables en {time.time() - started:.3f}s")
    return circuit, encoding, decoding


def _garble_tables(kind: GateKind, gates, a0, b0, c0, delta) -> np.ndarray:
    """Ligne 2·pa + pb = H(A, B, id) ⊕ label de sortie, pa/pb bits de permutation de A/B."""
    count = len(gates)
    pa = permute_bits(a0)
    pb = permute_bits(b0)
    keys_a, keys_b, outputs = [], [], []
    for i in (0, 1):
        for j in (0, 1):
            x = (pa ^ i).astype(bool)
            y = (pb ^ j).astype(bool)
            z = (x & y) if kind is GateKind.AND else (x | y)
            keys_a.append(np.where(x[:, None], a0 ^ delta, a0))
            keys_b.append(np.where(y[:, None], b0 ^ delta, b0))
            outputs.append(np.where(z[:, None], c0 ^ delta, c0))
    tweaks = np.tile(np.asarray(gates, dtype=np.uint64), 4)
    masks = row_hash(np.concatenate(keys_a), np.concatenate(keys_b), tweaks)
    rows = masks ^ np.concatenate(outputs)
    return rows.reshape(4, count, 2).transpose(1, 0, 2)


def encode_inputs(encoding: InputEncoding, bits, wires) -> np.ndarray:
    """Label du bit b sur le fil w : label0 ⊕ b·Δ."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    wires = np.asarray(wires, dtype=np.int64).reshape(-1)
    if bits.size != wires.size:
        raise MissingLabelError(f"{bits.size} bits pour {wires.size} fils")
    zero = encoding.zero_labels[encoding.positions(wires)] if wires.size else \
        np.zeros((0, 2), dtype=np.uint64)
    return np.where(bits[:, None].astype(bool), zero ^ encoding.delta, zero)


def constant_labels(encoding: InputEncoding) -> np.ndarray:
    """Labels des fils constants : 0 sur le fil 0, 1 sur le fil 1."""
    return encode_inputs(encoding, [0, 1], [0, 1])


def decode_outputs(decoding: OutputDecoding, labels) -> np.ndarray:
    """Retrouve les bits de sortie ; un label inconnu lève IntegrityError."""
    labels = np.asarray(labels, dtype=np.uint64).reshape(-1, 2)
    if len(labels) != len(decoding.output_wires):
        raise IntegrityError(f"{len(labels)} labels de sortie, {len(decoding.output_wires)} attendus")
    is_zero = (labels == decoding.zero_labels).all(axis=1)
    is_one = (labels == decoding.one_labels).all(axis=1)
    if not (is_zero | is_one).all():
        bad = int(np.flatnonzero(~(is_zero | is_one))[0])
        raise IntegrityError(f"label de sortie inconnu sur la sortie {bad}")
    return is_one.astype(np.uint8)


def assemble_input_labels(netlist: Netlist, labels: Union[np.ndarray, Dict[int, np.ndarray]]) -> np.ndarray:
    """Aligne les labels d'entrée sur netlist.input_wires (tableau ou dict fil -> label)."""
    inputs = netlist.input_wires
    if isinstance(labels, dict):
        missing = [int(w) for w in inputs if int(w) not in labels]
        if missing:
            raise MissingLabelError(f"{len(missing)} labels d'entrée manquants (fil {missing[0]}...)")
        return np.array([np.asarray(labels[int(w)], dtype=np.uint64) for w in inputs],
                        dtype=np.uint64).reshape(-1, 2)
    labels = np.asarray(labels, dtype=np.uint64)
    if labels.shape != (inputs.size, 2):
        raise MissingLabelError(f"labels d'entrée {labels.shape}, attendu ({inputs.size}, 2)")
    return labels


def evaluate(garbled: GarbledCircuit, netlist: Netlist, input_labels,
             return_all: bool = False) -> np.ndarray:
    """
    Évalue le circuit sur un label par entrée. Retourne les labels de sortie
    (ou les labels de tous les fils si return_all).
    """
    if garbled.circuit_hash != netlist.digest():
        raise IntegrityError("le circuit garbled ne correspond pas à la netlist")
    non_free = netlist.non_free_gates()
    if garbled.gate_count != non_free.size:
        raise IntegrityError(f"{garbled.gate_count} tables pour {non_free.size} portes non-XOR")

    labels = np.zeros((netlist.num_wires, 2), dtype=np.uint64)
    labels[netlist.input_wires] = assemble_input_labels(netlist, input_labels)
    table_index = np.full(netlist.num_gates, -1, dtype=np.int64)
    table_index[non_free] = np.arange(non_free.size)

    for level in netlist.schedule():
        for kind, gates, a, b, out in level.groups:
            if kind is GateKind.XOR or kind is GateKind.XNOR:
                labels[out] = labels[a] ^ labels[b]
            elif kind is GateKind.NOT:
                labels[out] = labels[a]
            else:
                la, lb = labels[a], labels[b]
                rows = 2 * permute_bits(la).astype(np.int64) + permute_bits(lb)
                cipher = garbled.tables[table_index[gates], rows]
                labels[out] = cipher ^ row_hash(la, lb, np.asarray(gates, dtype=np.uint64))

    if return_all:
        return labels
    return labels[netlist.output_wires]
