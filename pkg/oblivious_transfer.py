#!/usr/bin/env python3
"""
Transfert inconscient 1 parmi 2 par lots (« simplest OT » sur le groupe
d'ordre premier d'ed25519).

    émetteur :  A = a·G                                   (engagement)
    receveur :  B_i = b_i·G       si choix 0
                B_i = A + b_i·G   si choix 1
    émetteur :  k0 = H(i, A, B_i, a·B_i), k1 = H(i, A, B_i, a·B_i − a·A)
                e0 = AES-GCM(k0, m0), e1 = AES-GCM(k1, m1)
    receveur :  k_c = H(i, A, B_i, b_i·A) ouvre e_c ; l'autre échoue sur son tag.

Chaque clé ne sert qu'une fois : le nonce GCM est fixe. Le mode « simulated »
envoie les choix en clair et n'est accepté qu'avec insecure_ot.
"""

import hashlib
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from nacl import bindings
from nacl.exceptions import RuntimeError as NaclRuntimeError

from wire_protocol import LABEL_BYTES, POINT_BYTES, TAG_BYTES, labels_from_bytes, labels_to_bytes

logger = logging.getLogger(__name__)

OT_MODES = ('group', 'simulated')
CIPHERTEXT_BYTES = LABEL_BYTES + TAG_BYTES
_NONCE = b'\x00' * 12


class OTAbort(Exception):
    """Élément de groupe invalide, nombre d'instances incohérent ou mode refusé."""


@dataclass(frozen=True)
class OtSenderState:
    scalar: bytes
    point: bytes
    cross: bytes  # a·A


@dataclass(frozen=True)
class OtReceiverKeys:
    keys: List[bytes]


def _random_scalar() -> bytes:
    return bindings.crypto_core_ed25519_scalar_reduce(os.urandom(64))


def _check_point(point: bytes, what: str):
    if len(point) != POINT_BYTES or not bindings.crypto_core_ed25519_is_valid_point(point):
        raise OTAbort(f"élément de groupe invalide ({what})")


def _instance_key(index: int, sender_point: bytes, receiver_point: bytes, shared: bytes) -> bytes:
    digest = hashlib.sha256(b'terngc-ot' + struct.pack('<Q', index)
                            + sender_point + receiver_point + shared).digest()
    return digest[:16]


def _chunks(count: int, size: int):
    return [(start, min(start + size, count)) for start in range(0, count, size)]


def check_mode(mode: str, insecure_ot: bool):
    if mode not in OT_MODES:
        raise OTAbort(f"mode OT inconnu: {mode}")
    if mode == 'simulated' and not insecure_ot:
        raise OTAbort("le mode OT simulé (choix en clair) exige insecure_ot")


class ObliviousTransfer:
    """
    Lots d'OT ; les opérations de groupe sont réparties par tranches sur un pool
    de threads sans changer l'ordre ni le contenu des messages.
    """

    def __init__(self, mode: str = 'group', workers: int = 4, chunk_size: int = 2048,
                 insecure_ot: bool = False):
        check_mode(mode, insecure_ot)
        self.mode = mode
        self.workers = max(1, int(workers))
        self.chunk_size = max(1, int(chunk_size))
        self.logger = logging.getLogger(__name__)
        if mode == 'simulated':
            self.logger.warning("OT en mode simulé : les bits de choix circulent en clair")

    def _map(self, function, count: int) -> list:
        chunks = _chunks(count, self.chunk_size)
        if self.workers == 1 or len(chunks) <= 1:
            return [function(start, stop) for start, stop in chunks]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(lambda bounds: function(*bounds), chunks))

    # Émetteur (garbler)

    def sender_setup(self) -> OtSenderState:
        if self.mode == 'simulated':
            return OtSenderState(b'', b'', b'')
        scalar = _random_scalar()
        point = bindings.crypto_scalarmult_ed25519_base_noclamp(scalar)
        cross = bindings.crypto_scalarmult_ed25519_noclamp(scalar, point)
        return OtSenderState(scalar, point, cross)

    def sender_round(self, state: OtSenderState, messages: np.ndarray, receiver_data: bytes) -> bytes:
        """messages (n, 2, 2) uint64 : paires de labels. Retourne les chiffrés (ou labels en simulé)."""
        messages = np.asarray(messages, dtype=np.uint64)
        count = len(messages)
        if self.mode == 'simulated':
            choices = unpack_choices(receiver_data, count)
            chosen = messages[np.arange(count), choices]
            return labels_to_bytes(chosen)

        if len(receiver_data) != count * POINT_BYTES:
            raise OTAbort(f"{len(receiver_data) // POINT_BYTES} points reçus pour {count} instances")
        pairs = [labels_to_bytes(messages[i]) for i in range(count)]

        def encrypt(start: int, stop: int) -> bytes:
            out = []
            for i in range(start, stop):
                point = receiver_data[i * POINT_BYTES:(i + 1) * POINT_BYTES]
                _check_point(point, f"point du receveur {i}")
                try:
                    shared0 = bindings.crypto_scalarmult_ed25519_noclamp(state.scalar, point)
                    shared1 = bindings.crypto_core_ed25519_sub(shared0, state.cross)
                except NaclRuntimeError as e:
                    raise OTAbort(f"instance {i}: {e}")
                key0 = _instance_key(i, state.point, point, shared0)
                key1 = _instance_key(i, state.point, point, shared1)
                out.append(AESGCM(key0).encrypt(_NONCE, pairs[i][:LABEL_BYTES], None))
                out.append(AESGCM(key1).encrypt(_NONCE, pairs[i][LABEL_BYTES:], None))
            return b''.join(out)

        return b''.join(self._map(encrypt, count))

    # Receveur (évaluateur)

    def receiver_round(self, choices: Sequence[int], sender_point: bytes):
        """Retourne (données pour l'émetteur, clés) ; en simulé, les choix empaquetés."""
        choices = np.asarray(choices, dtype=np.uint8).reshape(-1)
        if choices.size and choices.max() > 1:
            raise OTAbort("bits de choix hors de {0, 1}")
        if self.mode == 'simulated':
            return pack_choices(choices), OtReceiverKeys([])
        _check_point(sender_point, "engagement de l'émetteur")
        choice_list = choices.tolist()

        def blind(start: int, stop: int):
            points, keys = [], []
            for i in range(start, stop):
                scalar = _random_scalar()
                point = bindings.crypto_scalarmult_ed25519_base_noclamp(scalar)
                if choice_list[i]:
                    point = bindings.crypto_core_ed25519_add(sender_point, point)
                shared = bindings.crypto_scalarmult_ed25519_noclamp(scalar, sender_point)
                points.append(point)
                keys.append(_instance_key(i, sender_point, point, shared))
            return b''.join(points), keys

        results = self._map(blind, choices.size)
        data = b''.join(points for points, _ in results)
        keys = [key for _, chunk_keys in results for key in chunk_keys]
        return data, OtReceiverKeys(keys)

    def receiver_finish(self, ciphertexts: bytes, keys: OtReceiverKeys, choices) -> np.ndarray:
        """Déchiffre le message choisi de chaque instance ; retourne (n, 2) uint64."""
        choices = np.asarray(choices, dtype=np.uint8).reshape(-1)
        count = choices.size
        if self.mode == 'simulated':
            return labels_from_bytes(ciphertexts, count)
        if len(ciphertexts) != count * 2 * CIPHERTEXT_BYTES:
            raise OTAbort(f"{len(ciphertexts)} octets de chiffrés pour {count} instances")
        if len(keys.keys) != count:
            raise OTAbort(f"{len(keys.keys)} clés pour {count} instances")
        choice_list = choices.tolist()

        def decrypt(start: int, stop: int) -> bytes:
            out = []
            for i in range(start, stop):
                offset = (2 * i + choice_list[i]) * CIPHERTEXT_BYTES
                try:
                    out.append(AESGCM(keys.keys[i]).decrypt(
                        _NONCE, ciphertexts[offset:offset + CIPHERTEXT_BYTES], None))
                except InvalidTag:
                    raise OTAbort(f"instance {i}: authentification du chiffré échouée")
            return b''.join(out)

        return labels_from_bytes(b''.join(self._map(decrypt, count)), count)


def pack_choices(choices) -> bytes:
    return np.packbits(np.asarray(choices, dtype=np.uint8), bitorder='little').tobytes()


def unpack_choices(data: bytes, count: int) -> np.ndarray:
    if len(data) != (count + 7) // 8:
        raise OTAbort(f"{len(data)} octets de choix pour {count} instances")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder='little')
    return bits[:count].astype(np.int64)


_default = None


def _engine(mode: str = 'group', insecure_ot: bool = False) -> ObliviousTransfer:
    global _default
    if mode != 'group':
        return ObliviousTransfer(mode, insecure_ot=insecure_ot)
    if _default is None:
        _default = ObliviousTransfer()
    return _default


def ot_sender_setup(mode: str = 'group', insecure_ot: bool = False) -> OtSenderState:
    return _engine(mode, insecure_ot).sender_setup()


def ot_sender_round(messages, receiver_points: bytes, state: OtSenderState,
                    mode: str = 'group', insecure_ot: bool = False) -> bytes:
    return _engine(mode, insecure_ot).sender_round(state, messages, receiver_points)


def ot_receiver_round(choices, sender_point: bytes, mode: str = 'group', insecure_ot: bool = False):
    return _engine(mode, insecure_ot).receiver_round(choices, sender_point)


def ot_receiver_finish(ciphertexts: bytes, keys: OtReceiverKeys, choices,
                       mode: str = 'group', insecure_ot: bool = False) -> np.ndarray:
    return _engine(mode, insecure_ot).receiver_finish(ciphertexts, keys, choices)
