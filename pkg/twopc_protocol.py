#!/usr/bin/env python3
"""
Session d'inférence privée à deux parties.

Le client garble le circuit public du modèle et détient l'image ; le serveur
détient les signes des poids, les reçoit sous forme de labels par OT, évalue
et renvoie les labels de sortie que seul le client sait décoder.

    C → S  HELLO                 version, architecture, facteur d'échelle, mode OT
    S → C  HELLO_ACK             empreinte de la netlist, structure publique du modèle
    C → S  GARBLED_CIRCUIT       tables (graine neuve à chaque session)
    C → S  CLIENT_INPUT_LABELS   labels des constantes puis des bits de l'image
    C → S  OT_SENDER (phase 0)   engagement A
    S → C  OT_RECEIVER           points B_i (ou choix empaquetés en mode simulé)
    C → S  OT_SENDER (phase 1)   chiffrés des paires de labels des poids
    S → C  OUTPUT_LABELS         labels des bits de score

Fuite connue : HELLO_ACK donne au client l'architecture, le facteur d'échelle,
la position des poids nuls et les seuils. Les signes des poids ne circulent
jamais en clair, sauf en mode OT simulé (autorisé par les deux côtés).
"""

import hashlib
import logging
import os
import socket
import threading
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from circuit_cache import CircuitCache
from garble_engine import (GarbledCircuit, IntegrityError, MissingLabelError, constant_labels,
                           decode_outputs, encode_inputs, evaluate, garble)
from model_core import BinaryTensor, ModelParams, ShapeError, binarize_input
from netlist import CommunicationEstimate, Netlist, scores_from_bits
from netlist_compiler import CircuitStructure, compile_model, weight_bits
from oblivious_transfer import ObliviousTransfer, OTAbort, check_mode
from runtime_config import RuntimeConfig, parse_address
from wire_protocol import (COUNT_PREFIX, GARBLED_HEADER, LABEL_BYTES, OT_PHASE_CIPHERTEXTS,
                           OT_PHASE_COMMIT, PROTOCOL_VERSION, AbortReason, FramedSocket, MessageType,
                           ProtocolError, decode_json, decode_labels, decode_ot, encode_json,
                           encode_labels, encode_ot)

logger = logging.getLogger(__name__)
stats_logger = logging.getLogger('session_stats')

LEAKAGE_NOTICE = ("le client apprend l'architecture, le facteur d'échelle, "
                  "la position des poids nuls et les seuils")


class SessionAbort(ProtocolError):
    """Session interrompue ; `reason` est le code transmis (ou reçu) dans ABORT."""


@dataclass(frozen=True)
class SessionConfig:
    role: str
    address: Tuple[str, int]
    architecture: str = ''
    scaling_factor: float = 1.0
    netlist_hash: Optional[str] = None
    ot_mode: str = 'group'
    insecure_ot: bool = False
    connect_timeout: float = 30.0
    retry_delay: float = 2.0
    max_connect_attempts: int = 3
    io_timeout: float = 300.0
    max_sessions: int = 1
    ot_workers: int = 4
    ot_chunk_size: int = 2048

    def __post_init__(self):
        if self.role not in ('client', 'server'):
            raise ValueError(f"rôle inconnu: {self.role}")

    @classmethod
    def from_runtime(cls, runtime: RuntimeConfig, role: str, **overrides) -> 'SessionConfig':
        """Construit la configuration de session depuis les sections protocol et ot."""
        protocol = runtime.get_protocol_settings()
        ot = runtime.get_ot_settings()
        address = protocol['connect'] if role == 'client' else protocol['listen']
        values = dict(
            role=role,
            address=parse_address(address),
            ot_mode=ot['mode'],
            insecure_ot=bool(protocol['insecure_ot']),
            connect_timeout=float(protocol['connect_timeout']),
            retry_delay=float(protocol['retry_delay']),
            max_connect_attempts=int(protocol['max_connect_attempts']),
            io_timeout=float(protocol['io_timeout']),
            max_sessions=int(protocol['max_sessions']),
            ot_workers=int(ot['workers']),
            ot_chunk_size=int(ot['chunk_size']),
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        if isinstance(values['address'], str):
            values['address'] = parse_address(values['address'])
        return cls(**values)

    def oblivious_transfer(self) -> ObliviousTransfer:
        return ObliviousTransfer(self.ot_mode, self.ot_workers, self.ot_chunk_size, self.insecure_ot)


@dataclass
class SessionMetrics:
    """Temps et octets d'une session, vus d'un côté de la connexion."""
    offline_seconds: float = 0.0
    online_seconds: float = 0.0
    bytes_sent: int = 0
    bytes_received: int = 0
    frames: int = 0
    ot_instances: int = 0
    communication: Optional[CommunicationEstimate] = None

    @property
    def total_seconds(self) -> float:
        return self.offline_seconds + self.online_seconds

    @property
    def total_bytes(self) -> int:
        return self.bytes_sent + self.bytes_received

    def as_row(self) -> str:
        """Ligne offline / online / total (s) / communication (Mo), séparée par des tabulations."""
        return (f"{self.offline_seconds:.3f}\t{self.online_seconds:.3f}\t"
                f"{self.total_seconds:.3f}\t{self.total_bytes / 1e6:.3f}")

    def as_dict(self) -> dict:
        data = {
            'offline_seconds': round(self.offline_seconds, 6),
            'online_seconds': round(self.online_seconds, 6),
            'total_seconds': round(self.total_seconds, 6),
            'bytes_sent': self.bytes_sent,
            'bytes_received': self.bytes_received,
            'frames': self.frames,
            'ot_instances': self.ot_instances,
        }
        if self.communication is not None:
            data['communication'] = self.communication.as_dict()
        return data


@dataclass(frozen=True)
class InferenceResult:
    predicted_class: int
    scores: np.ndarray
    metrics: SessionMetrics
    garbled_digest: str


@dataclass
class _PayloadSizes:
    """Tailles des contenus utiles, pour le découpage exact des octets mesurés."""
    handshake: int = 0
    tables: int = 0
    client_labels: int = 0
    ot: int = 0
    output_labels: int = 0

    def communication(self, total_bytes: int) -> CommunicationEstimate:
        useful = self.handshake + self.tables + self.client_labels + self.ot + self.output_labels
        return CommunicationEstimate(
            tables=self.tables,
            client_labels=self.client_labels,
            ot=self.ot,
            output_labels=self.output_labels,
            framing=total_bytes - useful,
            handshake=self.handshake,
        )


_ERROR_REASONS = (
    (IntegrityError, AbortReason.INTEGRITY),
    (OTAbort, AbortReason.OT_FAILURE),
    (MissingLabelError, AbortReason.FRAME_ERROR),
    (ShapeError, AbortReason.ARCHITECTURE_MISMATCH),
)


@contextmanager
def abort_on_error(channel: FramedSocket):
    """
    Convertit toute erreur de session en SessionAbort après avoir prévenu le
    pair par une trame ABORT (sauf si l'interruption vient de lui).
    """
    try:
        yield
    except SessionAbort:
        raise
    except ProtocolError as e:
        if not e.from_peer:
            channel.send_abort(e.reason, str(e))
        raise SessionAbort(str(e), e.reason, from_peer=e.from_peer) from e
    except tuple(error for error, _ in _ERROR_REASONS) as e:
        reason = next(code for error, code in _ERROR_REASONS if isinstance(e, error))
        channel.send_abort(reason, str(e))
        raise SessionAbort(str(e), reason) from e


# Échanges sur une netlist déjà convenue

def garbler_exchange(channel: FramedSocket, netlist: Netlist, client_bits, ot: ObliviousTransfer,
                     seed: Optional[bytes] = None, sizes: Optional[_PayloadSizes] = None):
    """
    Côté client : garble, envoie tables et labels, mène l'OT en émetteur puis
    décode les labels de sortie. Retourne (bits de sortie, empreinte du circuit
    garbled, secondes offline, secondes online).
    """
    sizes = sizes if sizes is not None else _PayloadSizes()
    client_bits = np.asarray(client_bits, dtype=np.uint8).reshape(-1)
    if client_bits.size != netlist.client_inputs.size:
        raise ShapeError(f"{client_bits.size} bits client, {netlist.client_inputs.size} attendus")
    count = int(netlist.server_inputs.size)

    started = time.time()
    circuit, encoding, decoding = garble(netlist, seed if seed is not None else os.urandom(16))
    garbled = circuit.serialize()
    channel.send(MessageType.GARBLED_CIRCUIT, garbled)
    sizes.tables = len(garbled) - GARBLED_HEADER.size

    labels = np.concatenate([constant_labels(encoding),
                             encode_inputs(encoding, client_bits, netlist.client_inputs)])
    channel.send(MessageType.CLIENT_INPUT_LABELS, encode_labels(labels))
    sizes.client_labels = len(labels) * LABEL_BYTES

    state = ot.sender_setup()
    channel.send(MessageType.OT_SENDER, encode_ot(OT_PHASE_COMMIT, count, state.point))
    _, payload = channel.recv(MessageType.OT_RECEIVER)
    receiver_data = _decode_receiver(payload, count)
    ciphertexts = ot.sender_round(state, encoding.pairs(netlist.server_inputs), receiver_data)
    channel.send(MessageType.OT_SENDER, encode_ot(OT_PHASE_CIPHERTEXTS, count, ciphertexts))
    sizes.ot = len(state.point) + len(receiver_data) + len(ciphertexts)
    offline = time.time() - started

    started = time.time()
    _, payload = channel.recv(MessageType.OUTPUT_LABELS)
    output_labels = decode_labels(payload, expected=int(netlist.output_wires.size))
    sizes.output_labels = len(payload) - COUNT_PREFIX.size
    bits = decode_outputs(decoding, output_labels)
    online = time.time() - started
    return bits, hashlib.sha256(garbled).hexdigest(), offline, online


def evaluator_exchange(channel: FramedSocket, netlist: Netlist, server_bits, ot: ObliviousTransfer,
                       sizes: Optional[_PayloadSizes] = None):
    """
    Côté serveur : reçoit le circuit et les labels du client, obtient par OT les
    labels de ses propres bits, évalue et renvoie les labels de sortie.
    Retourne (secondes offline, secondes online).
    """
    sizes = sizes if sizes is not None else _PayloadSizes()
    server_bits = np.asarray(server_bits, dtype=np.uint8).reshape(-1)
    count = int(netlist.server_inputs.size)
    if server_bits.size != count:
        raise ShapeError(f"{server_bits.size} bits serveur, {count} attendus")

    started = time.time()
    _, payload = channel.recv(MessageType.GARBLED_CIRCUIT)
    circuit = GarbledCircuit.deserialize(payload, expected_hash=netlist.digest())
    sizes.tables = len(payload) - GARBLED_HEADER.size
    _, payload = channel.recv(MessageType.CLIENT_INPUT_LABELS)
    client_labels = decode_labels(payload, expected=2 + int(netlist.client_inputs.size))
    sizes.client_labels = len(client_labels) * LABEL_BYTES

    _, payload = channel.recv(MessageType.OT_SENDER)
    sender_point = decode_ot(payload, OT_PHASE_COMMIT, count)
    receiver_data, keys = ot.receiver_round(server_bits, sender_point)
    channel.send(MessageType.OT_RECEIVER, COUNT_PREFIX.pack(count) + receiver_data)
    _, payload = channel.recv(MessageType.OT_SENDER)
    ciphertexts = decode_ot(payload, OT_PHASE_CIPHERTEXTS, count)
    server_labels = ot.receiver_finish(ciphertexts, keys, server_bits)
    sizes.ot = len(sender_point) + len(receiver_data) + len(ciphertexts)
    offline = time.time() - started

    started = time.time()
    outputs = evaluate(circuit, netlist, np.concatenate([client_labels, server_labels]))
    encoded = encode_labels(outputs)
    channel.send(MessageType.OUTPUT_LABELS, encoded)
    sizes.output_labels = len(encoded) - COUNT_PREFIX.size
    online = time.time() - started
    return offline, online


def _decode_receiver(payload: bytes, count: int) -> bytes:
    if len(payload) < COUNT_PREFIX.size:
        raise ProtocolError("message OT_RECEIVER tronqué", AbortReason.OT_FAILURE)
    (got,) = COUNT_PREFIX.unpack_from(payload)
    if got != count:
        raise ProtocolError(f"{got} instances OT, {count} attendues", AbortReason.OT_FAILURE)
    return payload[COUNT_PREFIX.size:]


# Client

_default_cache = None


def _client_cache() -> CircuitCache:
    global _default_cache
    if _default_cache is None:
        _default_cache = CircuitCache()
    return _default_cache


def connect(config: SessionConfig) -> socket.socket:
    """
    Ouvre la connexion vers le serveur, avec nouvelles tentatives espacées
    de retry_delay × tentative (plafonné à 5 minutes).
    """
    host, port = config.address
    attempts = max(1, config.max_connect_attempts)
    for attempt in range(1, attempts + 1):
        try:
            sock = socket.create_connection((host, port), timeout=config.connect_timeout)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError as e:
            if attempt == attempts:
                raise SessionAbort(f"connexion à {host}:{port} impossible après {attempts} "
                                   f"tentative(s): {e}", AbortReason.INTERNAL)
            delay = min(config.retry_delay * attempt, 300)
            logger.warning(f"Connexion à {host}:{port} échouée ({e}), "
                           f"nouvelle tentative dans {delay}s (tentative {attempt})")
            time.sleep(delay)


def run_client(config: SessionConfig, image, cache: Optional[CircuitCache] = None) -> InferenceResult:
    """
    Inférence privée d'une image. `image` est un BinaryTensor ou une image
    8 bits (binarisée au seuil fixe de 50 % de 255). Retourne classe, scores et métriques.
    """
    if config.role != 'client':
        raise ValueError("run_client exige une configuration de rôle client")
    try:
        check_mode(config.ot_mode, config.insecure_ot)
    except OTAbort as e:
        raise SessionAbort(str(e), AbortReason.INSECURE_OT_REFUSED)
    image_bits = image if isinstance(image, BinaryTensor) else binarize_input(image)
    cache = cache if cache is not None else _client_cache()

    channel = FramedSocket(connect(config), config.io_timeout)
    sizes = _PayloadSizes()
    try:
        with abort_on_error(channel):
            hello = encode_json({
                'version': PROTOCOL_VERSION,
                'architecture': config.architecture,
                'scaling_factor': config.scaling_factor,
                'ot_mode': config.ot_mode,
            })
            channel.send(MessageType.HELLO, hello)
            _, ack_payload = channel.recv(MessageType.HELLO_ACK)
            sizes.handshake = len(hello) + len(ack_payload)
            netlist, structure = _accept_handshake(config, decode_json(ack_payload), cache)

            if tuple(image_bits.shape) != structure.arch.input_shape:
                raise ShapeError(f"image {image_bits.shape}, le modèle attend "
                                 f"{structure.arch.input_shape}")

            ot = config.oblivious_transfer()
            bits, digest, offline, online = garbler_exchange(channel, netlist, image_bits.bits,
                                                             ot, sizes=sizes)
    finally:
        channel.close()

    scores = scores_from_bits(netlist, bits)
    metrics = SessionMetrics(
        offline_seconds=offline,
        online_seconds=online,
        bytes_sent=channel.bytes_sent,
        bytes_received=channel.bytes_received,
        frames=channel.frames_sent + channel.frames_received,
        ot_instances=int(netlist.server_inputs.size),
        communication=sizes.communication(channel.bytes_sent + channel.bytes_received),
    )
    predicted = int(np.argmax(scores))
    logger.info(f"Inférence privée terminée: classe {predicted} "
                f"({metrics.total_seconds:.3f}s, {metrics.total_bytes} octets)")
    return InferenceResult(predicted, scores, metrics, digest)


def _accept_handshake(config: SessionConfig, ack: dict, cache: CircuitCache):
    """Vérifie HELLO_ACK et retourne (netlist recompilée localement, structure)."""
    if ack.get('version') != PROTOCOL_VERSION:
        raise ProtocolError(f"version de protocole {ack.get('version')} non supportée",
                            AbortReason.VERSION_MISMATCH)
    try:
        structure = CircuitStructure.from_dict(ack['structure'])
    except KeyError:
        raise ProtocolError("HELLO_ACK sans structure de circuit")
    arch = structure.arch
    if arch.name != config.architecture or arch.scaling_factor != config.scaling_factor:
        raise ProtocolError(f"le serveur annonce {arch.name}@{arch.scaling_factor:g}, "
                            f"{config.architecture}@{config.scaling_factor:g} demandé",
                            AbortReason.ARCHITECTURE_MISMATCH)
    logger.warning(f"Structure publique reçue pour {arch.describe()}: {LEAKAGE_NOTICE}")

    announced = ack.get('netlist_hash')
    if config.netlist_hash and config.netlist_hash != announced:
        raise ProtocolError("le serveur annonce une autre netlist que celle attendue",
                            AbortReason.HASH_MISMATCH)
    netlist = cache.get_or_compile(structure)
    if netlist.hexdigest() != announced:
        raise ProtocolError("empreinte de netlist différente de celle du serveur",
                            AbortReason.HASH_MISMATCH)
    return netlist, structure


# Serveur

class InferenceServer:
    """
    Serveur d'inférence : compile une fois le circuit du modèle puis sert les
    sessions, séquentiellement ou sur un pool de max_sessions threads.
    """

    def __init__(self, config: SessionConfig, params: ModelParams):
        if config.role != 'server':
            raise ValueError("InferenceServer exige une configuration de rôle serveur")
        self.config = config
        self.params = params
        self.logger = logging.getLogger(__name__)

        self.structure = CircuitStructure.from_params(params)
        self.netlist = compile_model(params.arch, self.structure)
        self.server_bits = weight_bits(params)
        if config.netlist_hash and config.netlist_hash != self.netlist.hexdigest():
            raise ProtocolError("l'empreinte configurée ne correspond pas au modèle",
                                AbortReason.HASH_MISMATCH)
        self.hello_ack = encode_json({
            'version': PROTOCOL_VERSION,
            'netlist_hash': self.netlist.hexdigest(),
            'structure': self.structure.to_dict(),
            'notice': LEAKAGE_NOTICE,
        })

        self.sock: Optional[socket.socket] = None
        self.address: Optional[Tuple[str, int]] = None
        self.session_logs: List[dict] = []
        self._session_counter = 0
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._slots = threading.BoundedSemaphore(max(1, config.max_sessions))

    def bind(self) -> Tuple[str, int]:
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(self.config.address)
        self.sock.listen(max(4, self.config.max_sessions))
        self.sock.settimeout(0.5)
        self.address = self.sock.getsockname()[:2]
        self.logger.info(f"Serveur en écoute sur {self.address[0]}:{self.address[1]} "
                         f"({self.params.arch.describe()}, {self.server_bits.size} poids non nuls, "
                         f"netlist {self.netlist.hexdigest()[:12]})")
        self.logger.warning(f"Annoncé à chaque client: {LEAKAGE_NOTICE}")
        return self.address

    def serve(self, session_limit: Optional[int] = None,
              ready: Optional[threading.Event] = None) -> List[dict]:
        """Boucle d'acceptation ; s'arrête après session_limit sessions ou sur stop()."""
        if self.sock is None:
            self.bind()
        if ready is not None:
            ready.set()
        pool = ThreadPoolExecutor(self.config.max_sessions) if self.config.max_sessions > 1 else None
        accepted = 0
        try:
            while not self._stop.is_set() and (session_limit is None or accepted < session_limit):
                try:
                    conn, peer = self.sock.accept()
                except socket.timeout:
                    continue
                except OSError:
                    if self._stop.is_set():
                        break
                    self.logger.error(f"Erreur d'acceptation: {traceback.format_exc()}")
                    continue
                accepted += 1
                if pool is None:
                    self._run_session(conn, peer)
                elif self._slots.acquire(blocking=False):
                    pool.submit(self._run_pooled, conn, peer)
                else:
                    self._refuse_busy(conn, peer)
        finally:
            if pool is not None:
                pool.shutdown(wait=True)
            self._close_socket()
        return list(self.session_logs)

    def stop(self):
        self._stop.set()
        self._close_socket()

    def _close_socket(self):
        if self.sock is not None:
            try:
                self.sock.close()
            except OSError:
                pass
            self.sock = None

    def _run_pooled(self, conn: socket.socket, peer):
        try:
            self._run_session(conn, peer)
        finally:
            self._slots.release()

    def _refuse_busy(self, conn: socket.socket, peer):
        channel = FramedSocket(conn, self.config.io_timeout)
        channel.send_abort(AbortReason.BUSY, "serveur occupé")
        channel.close()
        self.logger.warning(f"Session refusée pour {peer[0]}:{peer[1]}: serveur occupé")

    def _run_session(self, conn: socket.socket, peer) -> dict:
        """Une session ; les erreurs sont journalisées, jamais propagées à la boucle."""
        with self._lock:
            self._session_counter += 1
            session_id = self._session_counter
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        channel = FramedSocket(conn, self.config.io_timeout)
        metrics = SessionMetrics()
        sizes = _PayloadSizes()
        status = 'ok'
        try:
            with abort_on_error(channel):
                self.handle_session(channel, metrics, sizes)
        except SessionAbort as e:
            status = f"abort:{e.reason.name}"
            self.logger.warning(f"Session {session_id} interrompue ({e.reason.name}): {e}")
        except Exception:
            status = 'error'
            channel.send_abort(AbortReason.INTERNAL, "erreur interne")
            self.logger.error(f"Session {session_id}: erreur inattendue: {traceback.format_exc()}")
        finally:
            channel.close()

        metrics.bytes_sent = channel.bytes_sent
        metrics.bytes_received = channel.bytes_received
        metrics.frames = channel.frames_sent + channel.frames_received
        metrics.communication = sizes.communication(metrics.total_bytes)
        record = {'session': session_id, 'peer': f"{peer[0]}:{peer[1]}", 'status': status}
        record.update(metrics.as_dict())
        with self._lock:
            self.session_logs.append(record)
        stats_logger.info(f"session={session_id} peer={record['peer']} status={status} "
                          f"ot={metrics.ot_instances} sent={metrics.bytes_sent} "
                          f"received={metrics.bytes_received} "
                          f"tables={metrics.communication.tables} ot_bytes={metrics.communication.ot} "
                          f"framing={metrics.communication.framing} "
                          f"offline={metrics.offline_seconds:.3f}s online={metrics.online_seconds:.3f}s")
        return record

    def handle_session(self, channel: FramedSocket, metrics: SessionMetrics,
                       sizes: Optional[_PayloadSizes] = None):
        sizes = sizes if sizes is not None else _PayloadSizes()
        _, payload = channel.recv(MessageType.HELLO)
        hello = decode_json(payload)
        mode = self._check_hello(hello)
        channel.send(MessageType.HELLO_ACK, self.hello_ack)
        sizes.handshake = len(payload) + len(self.hello_ack)

        config = self.config
        ot = ObliviousTransfer(mode, config.ot_workers, config.ot_chunk_size, insecure_ot=config.insecure_ot)
        metrics.ot_instances = int(self.server_bits.size)
        metrics.offline_seconds, metrics.online_seconds = evaluator_exchange(
            channel, self.netlist, self.server_bits, ot, sizes=sizes)

    def _check_hello(self, hello: dict) -> str:
        if hello.get('version') != PROTOCOL_VERSION:
            raise ProtocolError(f"version de protocole {hello.get('version')} non supportée",
                                AbortReason.VERSION_MISMATCH)
        arch = self.params.arch
        if hello.get('architecture') != arch.name or hello.get('scaling_factor') != arch.scaling_factor:
            raise ProtocolError(f"architecture {hello.get('architecture')}@{hello.get('scaling_factor')} "
                                f"demandée, ce serveur sert {arch.name}@{arch.scaling_factor:g}",
                                AbortReason.ARCHITECTURE_MISMATCH)
        mode = hello.get('ot_mode')
        if not isinstance(mode, str):
            raise ProtocolError("HELLO sans mode OT", AbortReason.FRAME_ERROR)
        try:
            check_mode(mode, self.config.insecure_ot)
        except OTAbort as e:
            raise ProtocolError(str(e), AbortReason.INSECURE_OT_REFUSED)
        return mode


def run_server(config: SessionConfig, params: ModelParams, session_limit: Optional[int] = None,
               ready: Optional[Callable[[Tuple[str, int]], None]] = None) -> List[dict]:
    """Sert des sessions jusqu'à session_limit (ou indéfiniment) ; retourne le journal."""
    server = InferenceServer(config, params)
    address = server.bind()
    if ready is not None:
        ready(address)
    return server.serve(session_limit)
