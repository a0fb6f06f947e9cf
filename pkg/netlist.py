#!/usr/bin/env python3
"""
Netlist booléenne : portes XOR/XNOR/NOT (gratuites) et AND/OR (coûteuses),
statistiques, estimation des communications, format texte et évaluateur
en clair bit-slicé (64 affectations par mot machine).

Convention des fils : 0 = constante 0, 1 = constante 1 (entrées du garbler),
puis entrées du client (bits de l'image, HWC), entrées du serveur (un bit de
signe par poids non nul), puis sorties des portes.
"""

import hashlib
import logging
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

import wire_protocol

logger = logging.getLogger(__name__)

CONST0_WIRE = 0
CONST1_WIRE = 1
FORMAT_HEADER = 'terngc-netlist 1'


class NetlistFormatError(ValueError):
    """Netlist invalide ; `line` donne la ligne fautive lors d'une lecture."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"ligne {line}: {message}" if line is not None else message)
        self.line = line


class GateKind(IntEnum):
    XOR = 0
    XNOR = 1
    NOT = 2
    AND = 3
    OR = 4

    @property
    def is_free(self) -> bool:
        return self in (GateKind.XOR, GateKind.XNOR, GateKind.NOT)

    @property
    def arity(self) -> int:
        return 1 if self is GateKind.NOT else 2


@dataclass(frozen=True)
class GateStats:
    non_xor: int
    free: int
    total: int = -1

    def __post_init__(self):
        if self.total == -1:
            object.__setattr__(self, 'total', self.non_xor + self.free)
        if self.non_xor + self.free != self.total:
            raise ValueError("non_xor + free doit valoir total")

    def __add__(self, other: 'GateStats') -> 'GateStats':
        return GateStats(self.non_xor + other.non_xor, self.free + other.free)


@dataclass(frozen=True)
class OutputGroup:
    """Bits de sortie d'une classe (poids faible d'abord) et N_eff public."""
    wires: Tuple[int, ...]
    n_eff: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'wires', tuple(int(w) for w in self.wires))


@dataclass(frozen=True)
class CommunicationEstimate:
    """Octets prévus d'une session, par poste."""
    tables: int
    client_labels: int
    ot: int
    output_labels: int
    framing: int
    handshake: int = 0

    @property
    def total(self) -> int:
        return (self.tables + self.client_labels + self.ot + self.output_labels
                + self.framing + self.handshake)

    @property
    def online(self) -> int:
        """Trame OUTPUT_LABELS, seule trame postérieure à l'évaluation."""
        return (self.output_labels + wire_protocol.COUNT_PREFIX.size
                + wire_protocol.FRAME_HEADER_BYTES)

    @property
    def offline(self) -> int:
        return self.total - self.online

    def as_dict(self) -> Dict[str, int]:
        return {'tables': self.tables, 'client_labels': self.client_labels, 'ot': self.ot,
                'output_labels': self.output_labels, 'framing': self.framing,
                'handshake': self.handshake, 'total': self.total}


@dataclass(frozen=True)
class Level:
    """Portes d'un même niveau topologique, regroupées par type."""
    groups: Tuple[Tuple[GateKind, np.ndarray, np.ndarray, np.ndarray, np.ndarray], ...]


class Netlist:
    """
    Netlist immuable et ordonnée topologiquement. Les portes sont stockées en
    tableaux numpy (type, entrée a, entrée b ou -1, sortie).
    """

    def __init__(self, num_wires: int, kinds, in_a, in_b, out,
                 client_inputs, server_inputs, outputs: Sequence[OutputGroup],
                 layer_stats: Sequence[Tuple[str, GateStats]] = (), validate: bool = True):
        self.num_wires = int(num_wires)
        self.kinds = _frozen(kinds, np.uint8)
        self.in_a = _frozen(in_a, np.int64)
        self.in_b = _frozen(in_b, np.int64)
        self.out = _frozen(out, np.int64)
        self.client_inputs = _frozen(client_inputs, np.int64)
        self.server_inputs = _frozen(server_inputs, np.int64)
        self.outputs = tuple(outputs)
        self.layer_stats = tuple(layer_stats)
        self._schedule: Optional[List[Level]] = None
        self._digest: Optional[bytes] = None
        if validate:
            self.validate()

    @property
    def num_gates(self) -> int:
        return int(self.kinds.size)

    @property
    def output_wires(self) -> np.ndarray:
        wires = [w for group in self.outputs for w in group.wires]
        return np.array(wires, dtype=np.int64)

    @property
    def input_wires(self) -> np.ndarray:
        """Toutes les entrées : constantes, client puis serveur."""
        return np.concatenate([np.array([CONST0_WIRE, CONST1_WIRE], dtype=np.int64),
                               self.client_inputs, self.server_inputs])

    def non_free_gates(self) -> np.ndarray:
        """Identifiants des portes AND/OR, dans l'ordre des portes."""
        return np.flatnonzero(self.kinds >= GateKind.AND)

    def validate(self):
        """
        Vérifie : un seul pilote par fil, entrées définies avant usage
        (un cycle apparaît comme une référence en avant), fils dans les bornes.
        """
        n = self.num_gates
        if not (self.in_a.size == self.in_b.size == self.out.size == n):
            raise NetlistFormatError("tableaux de portes de longueurs différentes")
        if n and self.kinds.max() > GateKind.OR:
            raise NetlistFormatError("type de porte inconnu")

        all_wires = [self.in_a, self.out, self.client_inputs, self.server_inputs, self.output_wires]
        for wires in all_wires:
            if wires.size and (wires.min() < 0 or wires.max() >= self.num_wires):
                raise NetlistFormatError(f"fil hors de [0, {self.num_wires})")
        unary = self.kinds == GateKind.NOT
        if (self.in_b[~unary] < 0).any() or (self.in_b[~unary] >= self.num_wires).any():
            gate = int(np.flatnonzero(~unary & ((self.in_b < 0) | (self.in_b >= self.num_wires)))[0])
            raise NetlistFormatError(f"porte {gate}: seconde entrée invalide")

        drivers = np.concatenate([self.input_wires, self.out])
        counts = np.bincount(drivers, minlength=self.num_wires)
        if (counts != 1).any():
            wire = int(np.flatnonzero(counts != 1)[0])
            raise NetlistFormatError(f"le fil {wire} a {int(counts[wire])} pilotes (1 attendu)")

        # Instant de définition de chaque fil : -1 pour les entrées, index de la porte sinon
        defined_at = np.full(self.num_wires, -1, dtype=np.int64)
        defined_at[self.out] = np.arange(n, dtype=np.int64)
        gate_ids = np.arange(n, dtype=np.int64)
        late = defined_at[self.in_a] >= gate_ids
        late |= ~unary & (defined_at[np.where(unary, 0, self.in_b)] >= gate_ids)
        if late.any():
            gate = int(np.flatnonzero(late)[0])
            raise NetlistFormatError(f"porte {gate}: entrée utilisée avant sa définition (cycle ?)")

    def schedule(self) -> List[Level]:
        """Niveaux topologiques : les portes d'un niveau ne dépendent que des niveaux précédents."""
        if self._schedule is None:
            self._schedule = _compute_schedule(self)
        return self._schedule

    def digest(self) -> bytes:
        """Empreinte sha256 de la structure (identique chez les deux parties)."""
        if self._digest is None:
            h = hashlib.sha256()
            h.update(FORMAT_HEADER.encode('ascii'))
            h.update(np.int64(self.num_wires).tobytes())
            for array in (self.client_inputs, self.server_inputs, self.kinds,
                          self.in_a, self.in_b, self.out):
                h.update(np.int64(array.size).tobytes())
                h.update(array.astype('<i8').tobytes())
            for group in self.outputs:
                h.update(np.array([group.n_eff, len(group.wires)] + list(group.wires),
                                  dtype='<i8').tobytes())
            self._digest = h.digest()
        return self._digest

    def hexdigest(self) -> str:
        return self.digest().hex()

    def __repr__(self) -> str:
        stats = count_gates(self)
        return (f"Netlist({self.num_wires} fils, {stats.total} portes dont {stats.non_xor} non-XOR, "
                f"{self.client_inputs.size} entrées client, {self.server_inputs.size} entrées serveur)")


def _frozen(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype).reshape(-1)
    array.flags.writeable = False
    return array


def _compute_schedule(netlist: Netlist) -> List[Level]:
    wire_level = [0] * netlist.num_wires
    levels = [0] * netlist.num_gates
    kinds = netlist.kinds.tolist()
    in_a = netlist.in_a.tolist()
    in_b = netlist.in_b.tolist()
    out = netlist.out.tolist()
    for gate in range(netlist.num_gates):
        level = wire_level[in_a[gate]]
        if kinds[gate] != GateKind.NOT:
            level = max(level, wire_level[in_b[gate]])
        level += 1
        wire_level[out[gate]] = level
        levels[gate] = level

    if not levels:
        return []
    level_array = np.array(levels, dtype=np.int64)
    order = np.argsort(level_array * 8 + netlist.kinds, kind='stable')
    sorted_levels = level_array[order]
    sorted_kinds = netlist.kinds[order]
    schedule = []
    boundaries = np.flatnonzero(np.diff(sorted_levels)) + 1
    for chunk in np.split(np.arange(order.size), boundaries):
        groups = []
        chunk_kinds = sorted_kinds[chunk]
        for kind in np.unique(chunk_kinds):
            gates = order[chunk[chunk_kinds == kind]]
            groups.append((GateKind(int(kind)), gates, netlist.in_a[gates],
                           netlist.in_b[gates], netlist.out[gates]))
        schedule.append(Level(tuple(groups)))
    return schedule


def count_gates(netlist: Netlist) -> GateStats:
    non_xor = int(np.count_nonzero(netlist.kinds >= GateKind.AND))
    return GateStats(non_xor, netlist.num_gates - non_xor)


def estimate_communication(netlist: Netlist, label_bytes: int = wire_protocol.LABEL_BYTES,
                           ot_mode: str = 'group', handshake_bytes: int = 0) -> CommunicationEstimate:
    """
    Octets d'une session : tables (4 lignes par porte non-XOR), labels du client
    (constantes comprises), OT des bits de poids, labels de sortie, en-têtes.
    """
    stats = count_gates(netlist)
    commit, receiver, sender = wire_protocol.ot_body_bytes(int(netlist.server_inputs.size), ot_mode)
    return CommunicationEstimate(
        tables=stats.non_xor * 4 * label_bytes,
        client_labels=(2 + int(netlist.client_inputs.size)) * label_bytes,
        ot=commit + receiver + sender,
        output_labels=int(netlist.output_wires.size) * label_bytes,
        framing=wire_protocol.framing_overhead(),
        handshake=handshake_bytes,
    )


# Format texte

def _compress(wires: Iterable[int]) -> List[str]:
    """Écrit les suites contiguës sous la forme début:fin (fin exclue)."""
    tokens = []
    run_start = previous = None
    for wire in wires:
        wire = int(wire)
        if previous is not None and wire == previous + 1:
            previous = wire
            continue
        if run_start is not None:
            tokens.append(_run(run_start, previous))
        run_start = previous = wire
    if run_start is not None:
        tokens.append(_run(run_start, previous))
    return tokens


def _run(start: int, last: int) -> str:
    return str(start) if start == last else f"{start}:{last + 1}"


def _expand(tokens: Sequence[str], line: int) -> List[int]:
    wires = []
    for token in tokens:
        try:
            if ':' in token:
                start, stop = (int(part) for part in token.split(':', 1))
                if stop < start:
                    raise ValueError
                wires.extend(range(start, stop))
            else:
                wires.append(int(token))
        except ValueError:
            raise NetlistFormatError(f"identifiant de fil invalide: {token!r}", line)
    return wires


def emit_netlist(netlist: Netlist, sink):
    """Écrit la netlist au format texte dans un chemin ou un flux texte."""
    if isinstance(sink, (str, Path)):
        with open(sink, 'w', encoding='ascii') as f:
            emit_netlist(netlist, f)
        logger.info(f"Netlist écrite: {sink} ({netlist.num_gates} portes)")
        return
    out: TextIO = sink
    out.write(FORMAT_HEADER + '\n')
    out.write(f"wires {netlist.num_wires}\n")
    out.write(f"const {CONST0_WIRE} {CONST1_WIRE}\n")
    out.write(' '.join(['client'] + _compress(netlist.client_inputs)) + '\n')
    out.write(' '.join(['server'] + _compress(netlist.server_inputs)) + '\n')
    for group in netlist.outputs:
        out.write(' '.join(['output', str(group.n_eff)] + [str(w) for w in group.wires]) + '\n')
    out.write(f"gates {netlist.num_gates}\n")
    names = [kind.name for kind in GateKind]
    for kind, a, b, o in zip(netlist.kinds.tolist(), netlist.in_a.tolist(),
                             netlist.in_b.tolist(), netlist.out.tolist()):
        if kind == GateKind.NOT:
            out.write(f"{names[kind]} {a} {o}\n")
        else:
            out.write(f"{names[kind]} {a} {b} {o}\n")


def parse_netlist(source) -> Netlist:
    """Relit le format texte ; toute ligne mal formée lève NetlistFormatError avec son numéro."""
    if isinstance(source, Path) or (isinstance(source, str) and '\n' not in source):
        try:
            with open(source, 'r', encoding='ascii') as f:
                return parse_netlist(f)
        except OSError as e:
            raise NetlistFormatError(f"lecture impossible de {source}: {e}")
    lines = source.splitlines() if isinstance(source, str) else source.read().splitlines()

    num_wires = None
    client: List[int] = []
    server: List[int] = []
    outputs: List[OutputGroup] = []
    kinds: List[int] = []
    in_a: List[int] = []
    in_b: List[int] = []
    out: List[int] = []
    expected_gates = None
    seen_header = False

    for number, raw in enumerate(lines, start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if not seen_header:
            if line != FORMAT_HEADER:
                raise NetlistFormatError(f"en-tête {FORMAT_HEADER!r} attendu", number)
            seen_header = True
            continue
        tokens = line.split()
        keyword = tokens[0]
        if expected_gates is not None:
            try:
                kind = GateKind[keyword]
            except KeyError:
                raise NetlistFormatError(f"type de porte inconnu: {keyword}", number)
            if len(tokens) != kind.arity + 2:
                raise NetlistFormatError(f"{keyword}: {kind.arity + 1} fils attendus", number)
            try:
                wires = [int(t) for t in tokens[1:]]
            except ValueError:
                raise NetlistFormatError(f"identifiant de fil invalide: {line}", number)
            kinds.append(int(kind))
            in_a.append(wires[0])
            in_b.append(wires[1] if kind.arity == 2 else -1)
            out.append(wires[-1])
            continue
        try:
            if keyword == 'wires':
                num_wires = int(tokens[1])
            elif keyword == 'const':
                if _expand(tokens[1:], number) != [CONST0_WIRE, CONST1_WIRE]:
                    raise NetlistFormatError("les constantes doivent être les fils 0 et 1", number)
            elif keyword == 'client':
                client = _expand(tokens[1:], number)
            elif keyword == 'server':
                server = _expand(tokens[1:], number)
            elif keyword == 'output':
                outputs.append(OutputGroup(tuple(_expand(tokens[2:], number)), int(tokens[1])))
            elif keyword == 'gates':
                expected_gates = int(tokens[1])
            else:
                raise NetlistFormatError(f"mot-clé inconnu: {keyword}", number)
        except (IndexError, ValueError) as e:
            if isinstance(e, NetlistFormatError):
                raise
            raise NetlistFormatError(f"ligne mal formée: {line}", number)

    if not seen_header:
        raise NetlistFormatError("fichier vide")
    if num_wires is None:
        raise NetlistFormatError("ligne 'wires' absente")
    if expected_gates is None:
        raise NetlistFormatError("ligne 'gates' absente")
    if expected_gates != len(kinds):
        raise NetlistFormatError(f"{len(kinds)} portes lues, {expected_gates} annoncées")

    netlist = Netlist(num_wires, kinds, in_a, in_b, out, client, server, outputs, validate=False)
    try:
        netlist.validate()
    except NetlistFormatError as e:
        gate = _gate_of(str(e))
        if gate is not None:
            raise NetlistFormatError(str(e), _gate_line(lines, gate))
        raise
    return netlist


def _gate_of(message: str) -> Optional[int]:
    if message.startswith('porte '):
        try:
            return int(message.split()[1].rstrip(':'))
        except (IndexError, ValueError):
            return None
    return None


def _gate_line(lines: Sequence[str], gate: int) -> Optional[int]:
    """Numéro de la ligne de la porte `gate` (commentaires et lignes vides ignorés)."""
    in_gates = False
    index = 0
    for number, raw in enumerate(lines, start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if not in_gates:
            in_gates = line.startswith('gates ')
            continue
        if index == gate:
            return number
        index += 1
    return None


# Évaluation en clair bit-slicée

def pack_trials(bits: np.ndarray) -> np.ndarray:
    """(T, n) bits -> (n, ⌈T/64⌉) mots uint64, l'essai t au bit t % 64 du mot t // 64."""
    bits = np.asarray(bits, dtype=np.uint8)
    trials, count = bits.shape
    words = max(1, (trials + 63) // 64)
    padded = np.zeros((count, words * 64), dtype=np.uint8)
    padded[:, :trials] = bits.T
    packed = np.packbits(padded, axis=1, bitorder='little')
    return np.ascontiguousarray(packed).view('<u8').astype(np.uint64)


def unpack_trials(words: np.ndarray, trials: int) -> np.ndarray:
    raw = np.ascontiguousarray(words.astype('<u8')).view(np.uint8)
    return np.unpackbits(raw, axis=1, bitorder='little')[:, :trials].T.copy()


def evaluate_batch(netlist: Netlist, client_bits, server_bits) -> np.ndarray:
    """
    Évalue T affectations à la fois. client_bits (T, n_client) ; server_bits
    (T, n_server) ou (n_server,) partagé. Retourne les bits de sortie (T, n_out).
    """
    client_bits = np.atleast_2d(np.asarray(client_bits, dtype=np.uint8))
    trials = client_bits.shape[0]
    server_bits = np.asarray(server_bits, dtype=np.uint8)
    if server_bits.ndim == 1:
        server_bits = np.broadcast_to(server_bits, (trials, server_bits.size))
    if client_bits.shape[1] != netlist.client_inputs.size:
        raise NetlistFormatError(f"{client_bits.shape[1]} bits client pour "
                                 f"{netlist.client_inputs.size} entrées")
    if server_bits.shape != (trials, netlist.server_inputs.size):
        raise NetlistFormatError(f"bits serveur {server_bits.shape}, "
                                 f"attendu ({trials}, {netlist.server_inputs.size})")

    words = max(1, (trials + 63) // 64)
    values = np.zeros((netlist.num_wires, words), dtype=np.uint64)
    values[CONST1_WIRE] = np.uint64(0xFFFFFFFFFFFFFFFF)
    if netlist.client_inputs.size:
        values[netlist.client_inputs] = pack_trials(client_bits)
    if netlist.server_inputs.size:
        values[netlist.server_inputs] = pack_trials(server_bits)

    for level in netlist.schedule():
        for kind, _, a, b, out in level.groups:
            if kind is GateKind.XOR:
                values[out] = values[a] ^ values[b]
            elif kind is GateKind.XNOR:
                values[out] = ~(values[a] ^ values[b])
            elif kind is GateKind.NOT:
                values[out] = ~values[a]
            elif kind is GateKind.AND:
                values[out] = values[a] & values[b]
            else:
                values[out] = values[a] | values[b]

    return unpack_trials(values[netlist.output_wires], trials)


def evaluate(netlist: Netlist, client_bits, server_bits) -> np.ndarray:
    """Évalue une seule affectation ; retourne les bits de sortie."""
    client = np.asarray(client_bits, dtype=np.uint8).reshape(1, -1)
    return evaluate_batch(netlist, client, np.asarray(server_bits, dtype=np.uint8).reshape(-1))[0]


def scores_from_bits(netlist: Netlist, output_bits) -> np.ndarray:
    """Scores entiers 2·popcount − N_eff par groupe ; accepte (n_out,) ou (T, n_out)."""
    bits = np.asarray(output_bits, dtype=np.int64)
    single = bits.ndim == 1
    bits = np.atleast_2d(bits)
    scores = np.zeros((bits.shape[0], len(netlist.outputs)), dtype=np.int64)
    offset = 0
    for index, group in enumerate(netlist.outputs):
        width = len(group.wires)
        weights = np.int64(1) << np.arange(width, dtype=np.int64)
        value = bits[:, offset:offset + width] @ weights if width else 0
        scores[:, index] = 2 * value - group.n_eff
        offset += width
    return scores[0] if single else scores
