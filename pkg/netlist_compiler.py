#!/usr/bin/env python3
"""
Compilation d'un modèle ternaire en netlist booléenne.

Par neurone CONV/FC : un XNOR par poids non nul (activation XNOR bit de signe
du poids, entrée du serveur), un arbre d'additionneurs pour le popcount, puis
un comparateur au seuil. Les poids nuls ne produisent ni porte ni entrée.
MAXPOOL2x2 devient un arbre de OU ; la dernière couche sort les bits du popcount.
"""

import base64
import logging
import time
from array import array
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from model_core import (Architecture, LayerKind, LayerSpec, ModelParams, ShapeError, TernaryTensor,
                        infer_shapes, weight_shape)
from netlist import CONST0_WIRE, CONST1_WIRE, GateKind, GateStats, Netlist, OutputGroup
from param_file import architecture_from_dict, architecture_to_dict

logger = logging.getLogger(__name__)


class UnsupportedLayerError(ValueError):
    """Type de couche sans traduction en circuit."""


@dataclass(frozen=True, eq=False)
class CircuitStructure:
    """
    Partie publique d'un modèle : architecture, motif des poids non nuls et
    seuils. C'est tout ce qui façonne le circuit ; les signes restent privés.
    """
    arch: Architecture
    masks: Tuple[Optional[np.ndarray], ...]
    thresholds: Tuple[Optional[np.ndarray], ...]

    @classmethod
    def from_params(cls, params: ModelParams) -> 'CircuitStructure':
        masks = tuple(None if t is None else t.array() != 0 for t in params.weights)
        return cls(params.arch, masks, params.thresholds)

    def nonzero_count(self) -> int:
        return int(sum(int(m.sum()) for m in self.masks if m is not None))

    def to_dict(self) -> dict:
        flat = [m.reshape(-1) for m in self.masks if m is not None]
        bits = np.concatenate(flat) if flat else np.zeros(0, dtype=bool)
        return {
            'architecture': architecture_to_dict(self.arch),
            'mask': base64.b64encode(np.packbits(bits).tobytes()).decode('ascii'),
            'thresholds': [None if t is None else [int(v) for v in t] for t in self.thresholds],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'CircuitStructure':
        try:
            arch = architecture_from_dict(data['architecture'])
            packed = np.frombuffer(base64.b64decode(data['mask']), dtype=np.uint8)
            raw_thresholds = data['thresholds']
        except (KeyError, TypeError, ValueError) as e:
            raise ShapeError(f"structure de circuit invalide: {e}")
        bits = np.unpackbits(packed).astype(bool)
        masks, thresholds, offset = [], [], 0
        shapes = infer_shapes(arch)
        if len(raw_thresholds) != len(shapes):
            raise ShapeError("un tableau de seuils par couche est requis")
        for layer, (in_shape, _), theta in zip(arch.effective_layers(), shapes, raw_thresholds):
            shape = weight_shape(layer, in_shape)
            if shape is None:
                masks.append(None)
                thresholds.append(None)
                continue
            size = int(np.prod(shape))
            if offset + size > bits.size:
                raise ShapeError("masque de poids trop court")
            masks.append(bits[offset:offset + size].reshape(shape))
            thresholds.append(np.asarray(theta, dtype=np.int32) if theta is not None
                              else np.zeros(shape[0], dtype=np.int32))
            offset += size
        if bits.size - offset >= 8 or bits[offset:].any():
            raise ShapeError("masque de poids trop long")
        return cls(arch, tuple(masks), tuple(thresholds))


def weight_bits(params: ModelParams) -> np.ndarray:
    """Bits de signe des poids non nuls (1 => +1), dans l'ordre des entrées du serveur."""
    parts = [t.values[t.values != 0] > 0 for t in params.weights if t is not None]
    if not parts:
        return np.zeros(0, dtype=np.uint8)
    return np.concatenate(parts).astype(np.uint8)


class NetlistBuilder:
    """Émet les portes en ordre topologique et alloue les fils."""

    def __init__(self, num_client: int, num_server: int):
        self.client_inputs = list(range(2, 2 + num_client))
        self.server_inputs = list(range(2 + num_client, 2 + num_client + num_server))
        self.next_wire = 2 + num_client + num_server
        # Tableaux compacts : les grands modèles comptent des dizaines de millions de portes
        self.kinds = array('B')
        self.in_a = array('q')
        self.in_b = array('q')
        self.out = array('q')

    def gate(self, kind: GateKind, a: int, b: int = -1) -> int:
        wire = self.next_wire
        self.next_wire += 1
        self.kinds.append(int(kind))
        self.in_a.append(a)
        self.in_b.append(b)
        self.out.append(wire)
        return wire

    def xor(self, a: int, b: int) -> int:
        return self.gate(GateKind.XOR, a, b)

    def xnor(self, a: int, b: int) -> int:
        return self.gate(GateKind.XNOR, a, b)

    def and_(self, a: int, b: int) -> int:
        return self.gate(GateKind.AND, a, b)

    def or_(self, a: int, b: int) -> int:
        return self.gate(GateKind.OR, a, b)

    def not_(self, a: int) -> int:
        return self.gate(GateKind.NOT, a)

    def full_adder(self, a: int, b: int, c: int) -> Tuple[int, int]:
        """Somme a⊕b⊕c ; retenue a ⊕ ((a⊕b) ∧ (a⊕c)) : une seule porte AND."""
        ab = self.xor(a, b)
        ac = self.xor(a, c)
        total = self.xor(ab, c)
        carry = self.xor(a, self.and_(ab, ac))
        return total, carry

    def half_adder(self, a: int, b: int) -> Tuple[int, int]:
        return self.xor(a, b), self.and_(a, b)

    def mark(self) -> int:
        return len(self.kinds)

    def stats_since(self, mark: int) -> GateStats:
        kinds = np.array(self.kinds[mark:], dtype=np.uint8)
        non_xor = int(np.count_nonzero(kinds >= GateKind.AND))
        return GateStats(non_xor, int(kinds.size) - non_xor)

    def build(self, outputs: Sequence[OutputGroup],
              layer_stats: Sequence[Tuple[str, GateStats]] = ()) -> Netlist:
        return Netlist(self.next_wire, self.kinds, self.in_a, self.in_b, self.out,
                       self.client_inputs, self.server_inputs, outputs, layer_stats)


def compile_popcount(builder: NetlistBuilder, wires: Sequence[int]) -> List[int]:
    """
    Popcount par compression de colonnes : chaque colonne est réduite en file
    (additionneurs complets par 3, demi-additionneur pour 2) jusqu'à un bit,
    les retenues passant à la colonne suivante. Retourne les bits de somme,
    poids faible d'abord, sur ⌈log2(N+1)⌉ bits.
    """
    if not wires:
        return []
    columns = [deque(wires)]
    index = 0
    while index < len(columns):
        column = columns[index]
        while len(column) > 1:
            if len(column) >= 3:
                total, carry = builder.full_adder(column.popleft(), column.popleft(), column.popleft())
            else:
                total, carry = builder.half_adder(column.popleft(), column.popleft())
            column.append(total)
            if index + 1 == len(columns):
                columns.append(deque())
            columns[index + 1].append(carry)
        index += 1
    return [column[0] for column in columns]


def popcount_cost(count: int) -> int:
    """Portes AND du popcount de `count` bits : Σ_k≥1 ⌊count/2^k⌋."""
    total = 0
    count //= 2
    while count:
        total += count
        count //= 2
    return total


def comparator_cost(t: int, width: int) -> int:
    """Portes du comparateur ≥ t sur `width` bits (les zéros de poids faible de t sont gratuits)."""
    if t <= 0 or t >= (1 << width):
        return 0
    lowest = (t & -t).bit_length() - 1
    return width - 1 - lowest


def compile_threshold(builder: NetlistBuilder, sum_wires: Sequence[int], t: int,
                      n_eff: Optional[int] = None) -> int:
    """
    Comparateur non signé popcount ≥ t, une porte par bit au-dessus du bit de
    poids faible de t (AND si le bit de t vaut 1, OR sinon). t ≤ 0 donne le fil
    constant 1, t > N_eff le fil constant 0.
    """
    width = len(sum_wires)
    limit = (1 << width) - 1 if n_eff is None else n_eff
    if t <= 0:
        return CONST1_WIRE
    if t > limit or t >= (1 << width):
        return CONST0_WIRE
    lowest = (t & -t).bit_length() - 1
    ge = sum_wires[lowest]
    for bit in range(lowest + 1, width):
        if (t >> bit) & 1:
            ge = builder.and_(sum_wires[bit], ge)
        else:
            ge = builder.or_(sum_wires[bit], ge)
    return ge


@lru_cache(maxsize=None)
def threshold_padding(n_eff: int, t: int) -> int:
    """
    Nombre de fils constants 1 à ajouter au popcount (seuil décalé d'autant)
    pour minimiser popcount + comparateur. Le coût minimal obtenu ne croît
    jamais quand N_eff diminue.
    """
    best_cost, best_pad, pad = None, 0, 0
    while True:
        count = n_eff + pad
        adders = popcount_cost(count)
        if best_cost is not None and adders >= best_cost:
            return best_pad
        cost = adders + comparator_cost(t + pad, count.bit_length())
        if best_cost is None or cost < best_cost:
            best_cost, best_pad = cost, pad
        pad += 1


def activation_threshold(n_eff: int, theta: int) -> int:
    """popcount ≥ ⌈(N_eff + θ)/2⌉  ⇔  2·popcount − N_eff ≥ θ."""
    return -((-(n_eff + theta)) // 2)


def compile_neuron(builder: NetlistBuilder, activation_wires: Sequence[int],
                   weight_wires: Sequence[int], theta: int = 0) -> int:
    """Neurone binaire : XNOR, popcount, comparaison au seuil entier θ."""
    n_eff = len(activation_wires)
    t = activation_threshold(n_eff, int(theta))
    if t <= 0:
        return CONST1_WIRE
    if t > n_eff:
        return CONST0_WIRE
    bits = [builder.xnor(a, w) for a, w in zip(activation_wires, weight_wires)]
    pad = threshold_padding(n_eff, t)
    sum_wires = compile_popcount(builder, bits + [CONST1_WIRE] * pad)
    return compile_threshold(builder, sum_wires, t + pad, n_eff + pad)


def compile_score(builder: NetlistBuilder, activation_wires: Sequence[int],
                  weight_wires: Sequence[int]) -> OutputGroup:
    bits = [builder.xnor(a, w) for a, w in zip(activation_wires, weight_wires)]
    return OutputGroup(tuple(compile_popcount(builder, bits)), len(bits))


def _dense_layer(builder, activations: np.ndarray, weight_ids: np.ndarray,
                 thresholds: np.ndarray, final: bool):
    flat = activations.reshape(-1)
    results = []
    for node in range(weight_ids.shape[0]):
        row = weight_ids[node]
        nz = np.flatnonzero(row >= 0)
        acts, weights = flat[nz].tolist(), row[nz].tolist()
        if final:
            results.append(compile_score(builder, acts, weights))
        else:
            results.append(compile_neuron(builder, acts, weights, int(thresholds[node])))
    return results if final else np.array(results, dtype=np.int64)


def _conv_layer(builder, activations: np.ndarray, weight_ids: np.ndarray,
                thresholds: np.ndarray, padding: int, stride: int, out_shape) -> np.ndarray:
    h, w, c = activations.shape
    padded = np.full((h + 2 * padding, w + 2 * padding, c), -1, dtype=np.int64)
    padded[padding:padding + h, padding:padding + w, :] = activations
    out_h, out_w, kernels = out_shape
    taps = []
    for kernel in range(kernels):
        dy, dx, ch = np.nonzero(weight_ids[kernel] >= 0)
        taps.append((dy, dx, ch, weight_ids[kernel][dy, dx, ch]))

    result = np.zeros(out_shape, dtype=np.int64)
    for oy in range(out_h):
        for ox in range(out_w):
            for kernel, (dy, dx, ch, wires) in enumerate(taps):
                acts = padded[oy * stride + dy, ox * stride + dx, ch]
                inside = acts >= 0
                result[oy, ox, kernel] = compile_neuron(
                    builder, acts[inside].tolist(), wires[inside].tolist(), int(thresholds[kernel]))
    return result


def _maxpool_layer(builder, activations: np.ndarray) -> np.ndarray:
    h, w, c = activations.shape
    result = np.zeros((h // 2, w // 2, c), dtype=np.int64)
    for y in range(h // 2):
        for x in range(w // 2):
            for ch in range(c):
                top = builder.or_(int(activations[2 * y, 2 * x, ch]), int(activations[2 * y, 2 * x + 1, ch]))
                bottom = builder.or_(int(activations[2 * y + 1, 2 * x, ch]),
                                     int(activations[2 * y + 1, 2 * x + 1, ch]))
                result[y, x, ch] = builder.or_(top, bottom)
    return result


def compile_model(arch: Architecture, structure: Union[ModelParams, CircuitStructure]) -> Netlist:
    """
    Compile l'architecture avec le motif de poids non nuls et les seuils de
    `structure`. Les entrées du serveur suivent l'ordre des couches puis
    l'ordre ligne par ligne des poids non nuls de chaque tenseur.
    """
    if isinstance(structure, ModelParams):
        structure = CircuitStructure.from_params(structure)
    if structure.arch != arch:
        raise ShapeError(f"structure pour {structure.arch.name}, architecture {arch.name}")

    started = time.time()
    layers = arch.effective_layers()
    shapes = infer_shapes(arch)
    num_client = int(np.prod(arch.input_shape))
    builder = NetlistBuilder(num_client, structure.nonzero_count())

    activations = np.array(builder.client_inputs, dtype=np.int64).reshape(arch.input_shape)
    next_server = builder.server_inputs[0] if builder.server_inputs else 0
    layer_stats = []
    outputs: List[OutputGroup] = []
    last = len(layers) - 1

    for index, (layer, (_, out_shape)) in enumerate(zip(layers, shapes)):
        mark = builder.mark()
        mask = structure.masks[index]
        if layer.kind.has_weights:
            weight_ids = np.full(mask.shape, -1, dtype=np.int64)
            count = int(mask.sum())
            weight_ids[mask] = np.arange(next_server, next_server + count, dtype=np.int64)
            next_server += count
            thresholds = structure.thresholds[index]
            if layer.kind is LayerKind.FC:
                result = _dense_layer(builder, activations, weight_ids, thresholds, index == last)
                if index == last:
                    outputs = result
                else:
                    activations = result
            else:
                activations = _conv_layer(builder, activations, weight_ids, thresholds,
                                          layer.padding, layer.stride, out_shape)
        elif layer.kind is LayerKind.MAXPOOL2x2:
            activations = _maxpool_layer(builder, activations)
        elif layer.kind is LayerKind.IDENTITY:
            pass
        else:
            raise UnsupportedLayerError(f"couche {index}: type {layer.kind} non compilable")
        layer_stats.append((f"{index}:{layer.describe()}", builder.stats_since(mark)))

    netlist = builder.build(outputs, layer_stats)
    stats = builder.stats_since(0)
    logger.info(f"Compilation {arch.describe()}: {stats.total} portes, {stats.non_xor} non-XOR, "
                f"{len(builder.server_inputs)} entrées serveur ({time.time() - started:.2f}s)")
    return netlist


def popcount_netlist(count: int) -> Netlist:
    """Netlist autonome : popcount de `count` entrées client."""
    builder = NetlistBuilder(count, 0)
    wires = compile_popcount(builder, builder.client_inputs)
    return builder.build([OutputGroup(tuple(wires), 0)])


def threshold_netlist(width: int, t: int, n_eff: Optional[int] = None) -> Netlist:
    """Netlist autonome : comparateur ≥ t sur `width` bits d'entrée (poids faible d'abord)."""
    builder = NetlistBuilder(width, 0)
    wire = compile_threshold(builder, builder.client_inputs, t, n_eff)
    return builder.build([OutputGroup((wire,), 0)])


def neuron_netlist(count: int, theta: int = 0) -> Netlist:
    """Un neurone binaire : `count` activations client, `count` signes de poids serveur."""
    builder = NetlistBuilder(count, count)
    wire = compile_neuron(builder, builder.client_inputs, builder.server_inputs, theta)
    return builder.build([OutputGroup((wire,), 0)])


def compile_layer(layer: LayerSpec, in_shape: Tuple[int, ...], weights: Optional[TernaryTensor] = None,
                  thresholds=None) -> Netlist:
    """
    Netlist d'une seule couche non finale : bits d'activation du client en
    entrée, bits d'activation de sortie (un groupe par bit) en sortie.
    """
    num_client = int(np.prod(in_shape))
    mask = None if weights is None else weights.array() != 0
    builder = NetlistBuilder(num_client, 0 if mask is None else int(mask.sum()))
    activations = np.array(builder.client_inputs, dtype=np.int64).reshape(in_shape)
    out_shape = in_shape
    if layer.kind.has_weights:
        expected = weight_shape(layer, in_shape)
        if mask is None or mask.shape != expected:
            raise ShapeError(f"{layer.describe()}: poids {None if mask is None else mask.shape}, "
                             f"attendu {expected}")
        weight_ids = np.full(mask.shape, -1, dtype=np.int64)
        weight_ids[mask] = np.array(builder.server_inputs, dtype=np.int64)
        if thresholds is None:
            thresholds = np.zeros(expected[0], dtype=np.int32)
        if layer.kind is LayerKind.FC:
            activations = _dense_layer(builder, activations, weight_ids, thresholds, final=False)
        else:
            h, w, _ = in_shape
            k = layer.kernel_size
            out_shape = ((h + 2 * layer.padding - k) // layer.stride + 1,
                         (w + 2 * layer.padding - k) // layer.stride + 1, layer.kernels_or_nodes)
            activations = _conv_layer(builder, activations, weight_ids, thresholds,
                                      layer.padding, layer.stride, out_shape)
    elif layer.kind is LayerKind.MAXPOOL2x2:
        activations = _maxpool_layer(builder, activations)
    elif layer.kind is not LayerKind.IDENTITY:
        raise UnsupportedLayerError(f"type {layer.kind} non compilable")
    outputs = [OutputGroup((int(wire),), 0) for wire in activations.reshape(-1)]
    return builder.build(outputs, [(layer.describe(), builder.stats_since(0))])
