#!/usr/bin/env python3
"""
Coût garbled des opérations candidates de la recherche d'architecture.

Chaque opération est compilée seule à une forme de référence, garblée puis
évaluée en local ; le temps et les octets de tables donnent le facteur de
pénalité γ(o) = ½·(temps(o)/temps_max + comm(o)/comm_max).
"""

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from garble_engine import constant_labels, encode_inputs, evaluate, garble
from model_core import LayerKind, LayerSpec, TernaryTensor, weight_shape
from netlist import count_gates
from netlist_compiler import compile_layer

logger = logging.getLogger(__name__)

# Forme de référence (H, W, C) et nombre de noyaux des convolutions mesurées
REFERENCE_SHAPE = (32, 32, 16)
REFERENCE_KERNELS = 16

CANDIDATE_OPS = (LayerKind.CONV5x5, LayerKind.CONV3x3, LayerKind.MAXPOOL2x2, LayerKind.IDENTITY)


class CostModelError(ValueError):
    """Coûts inexploitables (tous nuls, négatifs ou incomplets)."""


@dataclass(frozen=True)
class OpCost:
    runtime_ms: float
    comm_kb: float
    penalty: float = 0.0
    non_xor: int = 0


class CostTable:
    """Coûts bruts et facteurs de pénalité par opération candidate."""

    def __init__(self, costs: Mapping[LayerKind, OpCost], shape: Tuple[int, ...] = REFERENCE_SHAPE):
        self.costs: Dict[LayerKind, OpCost] = {LayerKind(op): cost for op, cost in costs.items()}
        self.shape = tuple(shape)
        self.logger = logging.getLogger(__name__)
        for op, cost in self.costs.items():
            if cost.runtime_ms < 0 or cost.comm_kb < 0:
                raise CostModelError(f"{op.value}: coût négatif")

    @classmethod
    def from_raw(cls, raw: Mapping[LayerKind, Tuple[float, float]],
                 shape: Tuple[int, ...] = REFERENCE_SHAPE,
                 gates: Optional[Mapping[LayerKind, int]] = None) -> 'CostTable':
        """Construit la table à partir de (temps ms, comm Ko) et calcule γ."""
        penalties = penalty_factors(raw)
        gates = gates or {}
        return cls({LayerKind(op): OpCost(float(runtime), float(comm), penalties[LayerKind(op)],
                                          int(gates.get(op, 0)))
                    for op, (runtime, comm) in raw.items()}, shape)

    @property
    def ops(self) -> Tuple[LayerKind, ...]:
        return tuple(self.costs)

    def penalty(self, op: LayerKind) -> float:
        return self.costs[LayerKind(op)].penalty

    def penalties(self, ops: Sequence[LayerKind] = CANDIDATE_OPS) -> np.ndarray:
        missing = [op.value for op in ops if op not in self.costs]
        if missing:
            raise CostModelError(f"coûts manquants pour {', '.join(missing)}")
        return np.array([self.costs[op].penalty for op in ops], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            'shape': list(self.shape),
            'ops': {op.value: {'runtime_ms': cost.runtime_ms, 'comm_kb': cost.comm_kb,
                               'penalty': cost.penalty, 'non_xor': cost.non_xor}
                    for op, cost in self.costs.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'CostTable':
        try:
            raw = {LayerKind(name): (entry['runtime_ms'], entry['comm_kb'])
                   for name, entry in data['ops'].items()}
            gates = {LayerKind(name): entry.get('non_xor', 0) for name, entry in data['ops'].items()}
            shape = tuple(data.get('shape', REFERENCE_SHAPE))
        except (KeyError, TypeError, ValueError) as e:
            raise CostModelError(f"table de coûts invalide: {e}")
        return cls.from_raw(raw, shape, gates)

    def save(self, path):
        with open(Path(path), 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)

    @classmethod
    def load(cls, path) -> 'CostTable':
        try:
            with open(Path(path), 'r', encoding='utf-8') as f:
                return cls.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise CostModelError(f"lecture de {path} impossible: {e}")

    def format_report(self) -> str:
        lines = [f"Opération\tTemps (ms)\tComm. (Ko)\tPénalité   [forme {self.shape}]"]
        for op, cost in self.costs.items():
            lines.append(f"{op.value}\t{cost.runtime_ms:.2f}\t{cost.comm_kb:.0f}\t{cost.penalty:.2f}")
        return '\n'.join(lines)


def penalty_factors(raw: Mapping[LayerKind, Tuple[float, float]]) -> Dict[LayerKind, float]:
    """
    γ(o) = moyenne des coûts relatifs à l'opération la plus chère sur chaque axe.
    Un axe entièrement nul est ignoré ; tous les coûts nuls lèvent CostModelError.
    """
    if not raw:
        raise CostModelError("aucune opération")
    ops = [LayerKind(op) for op in raw]
    values = np.array([raw[op] for op in raw], dtype=np.float64).reshape(len(ops), 2)
    if (values < 0).any() or not np.isfinite(values).all():
        raise CostModelError("coûts négatifs ou non finis")
    maxima = values.max(axis=0)
    axes = maxima > 0
    if not axes.any():
        raise CostModelError("tous les coûts sont nuls")
    relative = values[:, axes] / maxima[axes]
    return {op: float(gamma) for op, gamma in zip(ops, relative.mean(axis=1))}


def candidate_layer(op: LayerKind, kernels: int) -> LayerSpec:
    if op is LayerKind.CONV5x5:
        return LayerSpec(op, kernels, padding=2)
    if op is LayerKind.CONV3x3:
        return LayerSpec(op, kernels, padding=1)
    return LayerSpec(op)


def measure_op_costs(ops: Sequence[LayerKind] = CANDIDATE_OPS, shape: Tuple[int, int, int] = REFERENCE_SHAPE,
                     kernels: int = REFERENCE_KERNELS, seed: int = 0, repeats: int = 1) -> CostTable:
    """
    Compile chaque opération à `shape` avec des poids ±1 denses tirés de `seed`,
    garble et évalue en local. Le temps retenu est le minimum sur `repeats`
    essais ; les octets (4 lignes de 16 octets par porte non-XOR) sont exacts.
    """
    rng = np.random.default_rng(seed)
    raw, gates = {}, {}
    for op in ops:
        op = LayerKind(op)
        layer = candidate_layer(op, kernels)
        weights = None
        if op.has_weights:
            w_shape = weight_shape(layer, shape)
            weights = TernaryTensor(w_shape, rng.choice(np.array([-1, 1], dtype=np.int8), size=w_shape))
        netlist = compile_layer(layer, shape, weights)
        stats = count_gates(netlist)

        runtime = 0.0
        table_bytes = 0
        if stats.total:
            client_bits = rng.integers(0, 2, size=netlist.client_inputs.size, dtype=np.uint8)
            server_bits = (weights.values[weights.values != 0] > 0).astype(np.uint8) \
                if weights is not None else np.zeros(0, dtype=np.uint8)
            timings = []
            for _ in range(max(1, repeats)):
                started = time.perf_counter()
                circuit, encoding, _ = garble(netlist, rng.bytes(16))
                labels = np.concatenate([
                    constant_labels(encoding),
                    encode_inputs(encoding, client_bits, netlist.client_inputs),
                    encode_inputs(encoding, server_bits, netlist.server_inputs),
                ])
                evaluate(circuit, netlist, labels)
                timings.append(time.perf_counter() - started)
            runtime = min(timings) * 1000.0
            table_bytes = circuit.table_bytes
        raw[op] = (runtime, table_bytes / 1024.0)
        gates[op] = stats.non_xor
        logger.info(f"Coût {op.value} à {shape}: {stats.non_xor} portes non-XOR, "
                    f"{table_bytes} octets de tables, {runtime:.2f} ms")
    return CostTable.from_raw(raw, shape, gates)
