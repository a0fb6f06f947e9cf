#!/usr/bin/env python3
"""
Protocole filaire v1 : trames préfixées par leur longueur et tailles exactes
des messages d'une session d'inférence privée.

Trame : longueur du contenu (4 octets big-endian), type (1 octet), contenu.
"""

import json
import logging
import socket
import struct
from enum import IntEnum
from typing import Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
LABEL_BYTES = 16
POINT_BYTES = 32
TAG_BYTES = 16

FRAME_HEADER = struct.Struct('>IB')
FRAME_HEADER_BYTES = FRAME_HEADER.size
MAX_PAYLOAD_BYTES = 1 << 31

# En-tête d'un circuit garbled sérialisé : version, empreinte sha256, nombre de tables
GARBLED_HEADER = struct.Struct('>H32sI')
COUNT_PREFIX = struct.Struct('>I')
OT_PREFIX = struct.Struct('>BI')

# HELLO, HELLO_ACK, GARBLED_CIRCUIT, CLIENT_INPUT_LABELS, OT_SENDER (engagement),
# OT_RECEIVER, OT_SENDER (chiffrés), OUTPUT_LABELS
SESSION_FRAMES = 8

OT_PHASE_COMMIT = 0
OT_PHASE_CIPHERTEXTS = 1


class MessageType(IntEnum):
    HELLO = 0x01
    HELLO_ACK = 0x02
    GARBLED_CIRCUIT = 0x10
    CLIENT_INPUT_LABELS = 0x11
    OT_RECEIVER = 0x20
    OT_SENDER = 0x21
    OUTPUT_LABELS = 0x30
    ABORT = 0x7F


class AbortReason(IntEnum):
    VERSION_MISMATCH = 1
    ARCHITECTURE_MISMATCH = 2
    HASH_MISMATCH = 3
    FRAME_ERROR = 4
    OT_FAILURE = 5
    INTEGRITY = 6
    INSECURE_OT_REFUSED = 7
    BUSY = 8
    INTERNAL = 9


class ProtocolError(Exception):
    """Erreur de protocole ; `reason` est transmis au pair dans la trame ABORT."""

    def __init__(self, message: str, reason: AbortReason = AbortReason.FRAME_ERROR,
                 from_peer: bool = False):
        super().__init__(message)
        self.reason = AbortReason(reason)
        self.from_peer = from_peer


def encode_frame(message_type: MessageType, payload: bytes = b'') -> bytes:
    if len(payload) >= MAX_PAYLOAD_BYTES:
        raise ProtocolError(f"contenu trop long: {len(payload)} octets")
    return FRAME_HEADER.pack(len(payload), int(message_type)) + payload


def decode_frame_header(header: bytes) -> Tuple[int, MessageType]:
    if len(header) != FRAME_HEADER_BYTES:
        raise ProtocolError("en-tête de trame tronqué")
    length, raw_type = FRAME_HEADER.unpack(header)
    try:
        message_type = MessageType(raw_type)
    except ValueError:
        raise ProtocolError(f"type de message inconnu: 0x{raw_type:02x}")
    if length >= MAX_PAYLOAD_BYTES:
        raise ProtocolError(f"longueur de trame invalide: {length}")
    return length, message_type


def encode_abort(reason: AbortReason, message: str = '') -> bytes:
    return bytes([int(reason)]) + message.encode('utf-8')[:512]


def decode_abort(payload: bytes) -> Tuple[AbortReason, str]:
    if not payload:
        return AbortReason.INTERNAL, ''
    try:
        reason = AbortReason(payload[0])
    except ValueError:
        reason = AbortReason.INTERNAL
    return reason, payload[1:].decode('utf-8', errors='replace')


class FramedSocket:
    """
    Flux de trames sur une socket. Compte les octets envoyés et reçus
    (en-têtes compris) et le nombre de trames de chaque sens.
    """

    def __init__(self, sock: socket.socket, io_timeout: Optional[float] = None):
        self.sock = sock
        self.logger = logging.getLogger(__name__)
        if io_timeout:
            sock.settimeout(io_timeout)
        self.bytes_sent = 0
        self.bytes_received = 0
        self.frames_sent = 0
        self.frames_received = 0
        self.sent_by_type = {}
        self.received_by_type = {}

    def send(self, message_type: MessageType, payload: bytes = b''):
        frame = encode_frame(message_type, payload)
        try:
            self.sock.sendall(frame)
        except OSError as e:
            raise ProtocolError(f"envoi impossible ({message_type.name}): {e}")
        self.bytes_sent += len(frame)
        self.frames_sent += 1
        self.sent_by_type[message_type] = self.sent_by_type.get(message_type, 0) + len(frame)
        self.logger.debug(f"→ {message_type.name} ({len(payload)} octets)")

    def _recv_exact(self, size: int) -> bytes:
        chunks = []
        remaining = size
        while remaining:
            try:
                chunk = self.sock.recv(min(remaining, 1 << 20))
            except socket.timeout:
                raise ProtocolError("délai de lecture dépassé")
            except OSError as e:
                raise ProtocolError(f"lecture impossible: {e}")
            if not chunk:
                raise ProtocolError("connexion fermée pendant la lecture")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b''.join(chunks)

    def recv(self, *expected: MessageType) -> Tuple[MessageType, bytes]:
        """
        Reçoit une trame. Une trame ABORT lève ProtocolError(from_peer=True) ;
        un type hors de `expected` lève ProtocolError.
        """
        length, message_type = decode_frame_header(self._recv_exact(FRAME_HEADER_BYTES))
        payload = self._recv_exact(length) if length else b''
        size = FRAME_HEADER_BYTES + length
        self.bytes_received += size
        self.frames_received += 1
        self.received_by_type[message_type] = self.received_by_type.get(message_type, 0) + size
        self.logger.debug(f"← {message_type.name} ({length} octets)")
        if message_type is MessageType.ABORT:
            reason, text = decode_abort(payload)
            raise ProtocolError(f"session interrompue par le pair: {reason.name} {text}".strip(),
                                reason, from_peer=True)
        if expected and message_type not in expected:
            names = '/'.join(t.name for t in expected)
            raise ProtocolError(f"message {message_type.name} reçu, {names} attendu")
        return message_type, payload

    def send_abort(self, reason: AbortReason, message: str = ''):
        """Envoie ABORT sans lever d'erreur si la socket est déjà fermée."""
        try:
            self.send(MessageType.ABORT, encode_abort(reason, message))
        except ProtocolError:
            self.logger.debug("ABORT non transmis (connexion fermée)")

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


# Contenus structurés

def encode_json(data: dict) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(',', ':')).encode('utf-8')


def decode_json(payload: bytes) -> dict:
    try:
        data = json.loads(payload.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"JSON de poignée de main invalide: {e}")
    if not isinstance(data, dict):
        raise ProtocolError("objet JSON attendu")
    return data


def labels_to_bytes(labels: np.ndarray) -> bytes:
    """Labels (n, 2) uint64 -> n x 16 octets (petit-boutiste)."""
    return np.ascontiguousarray(labels, dtype='<u8').tobytes()


def labels_from_bytes(data: bytes, count: int) -> np.ndarray:
    if len(data) != count * LABEL_BYTES:
        raise ProtocolError(f"{len(data)} octets pour {count} labels")
    return np.frombuffer(data, dtype='<u8').reshape(count, 2).astype(np.uint64)


def encode_labels(labels: np.ndarray) -> bytes:
    return COUNT_PREFIX.pack(len(labels)) + labels_to_bytes(labels)


def decode_labels(payload: bytes, expected: Optional[int] = None) -> np.ndarray:
    if len(payload) < COUNT_PREFIX.size:
        raise ProtocolError("message de labels tronqué")
    (count,) = COUNT_PREFIX.unpack_from(payload)
    if expected is not None and count != expected:
        raise ProtocolError(f"{count} labels reçus, {expected} attendus", AbortReason.FRAME_ERROR)
    return labels_from_bytes(payload[COUNT_PREFIX.size:], count)


def encode_ot(phase: int, count: int, body: bytes) -> bytes:
    return OT_PREFIX.pack(phase, count) + body


def decode_ot(payload: bytes, phase: int, expected: int) -> bytes:
    if len(payload) < OT_PREFIX.size:
        raise ProtocolError("message OT tronqué", AbortReason.OT_FAILURE)
    got_phase, count = OT_PREFIX.unpack_from(payload)
    if got_phase != phase:
        raise ProtocolError(f"phase OT {got_phase}, {phase} attendue", AbortReason.OT_FAILURE)
    if count != expected:
        raise ProtocolError(f"{count} instances OT, {expected} attendues", AbortReason.OT_FAILURE)
    return payload[OT_PREFIX.size:]


# Tailles exactes (en-têtes de trame exclus)

def ot_body_bytes(count: int, mode: str) -> Tuple[int, int, int]:
    """(engagement, points du receveur, chiffrés) pour `count` instances."""
    if mode == 'simulated':
        return 0, (count + 7) // 8, count * LABEL_BYTES
    return POINT_BYTES, count * POINT_BYTES, count * 2 * (LABEL_BYTES + TAG_BYTES)


def framing_overhead() -> int:
    """Octets hors contenu utile d'une session (en-têtes de trame et de messages)."""
    return (SESSION_FRAMES * FRAME_HEADER_BYTES
            + GARBLED_HEADER.size
            + 2 * COUNT_PREFIX.size       # labels du client, labels de sortie
            + 2 * OT_PREFIX.size          # OT_SENDER x2
            + COUNT_PREFIX.size)          # OT_RECEIVER
