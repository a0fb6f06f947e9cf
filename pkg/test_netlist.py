#!/usr/bin/env python3
"""
Tests de la netlist et du compilateur : nombres de portes, équivalence avec
l'inférence en clair, format texte.
"""

import io
import itertools
import unittest

import numpy as np

from model_core import (BinaryTensor, LayerKind, LayerSpec, ModelParams, TernaryTensor, forward,
                        random_params)
from model_zoo import get_architecture
from netlist import (CONST0_WIRE, CONST1_WIRE, GateKind, GateStats, NetlistFormatError, OutputGroup,
                     count_gates, emit_netlist, estimate_communication, evaluate, evaluate_batch,
                     parse_netlist, scores_from_bits)
from netlist_compiler import (CircuitStructure, NetlistBuilder, compile_layer, compile_model,
                              compile_popcount, compile_threshold, neuron_netlist, popcount_netlist,
                              weight_bits)

ALL_BITS_3 = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.uint8)


def _popcount_value(bits: np.ndarray) -> np.ndarray:
    weights = 1 << np.arange(bits.shape[1])
    return bits.astype(np.int64) @ weights


def _text(netlist) -> str:
    buffer = io.StringIO()
    emit_netlist(netlist, buffer)
    return buffer.getvalue()


class TestPrimitives(unittest.TestCase):

    def test_majority_costs_one_and(self):
        netlist = neuron_netlist(3)
        self.assertEqual(count_gates(netlist).non_xor, 1)
        outputs = evaluate_batch(netlist, ALL_BITS_3, np.ones(3, dtype=np.uint8))
        self.assertEqual(outputs[:, 0].tolist(), (ALL_BITS_3.sum(axis=1) >= 2).astype(int).tolist())

    def test_neuron_with_weight_signs(self):
        netlist = neuron_netlist(3)
        for signs in itertools.product((0, 1), repeat=3):
            w = np.array(signs) * 2 - 1
            outputs = evaluate_batch(netlist, ALL_BITS_3, np.array(signs, dtype=np.uint8))
            expected = ((ALL_BITS_3 * 2 - 1) @ w >= 0).astype(int)
            self.assertEqual(outputs[:, 0].tolist(), expected.tolist())

    def test_neuron_threshold(self):
        for theta in range(-4, 5):
            netlist = neuron_netlist(3, theta)
            outputs = evaluate_batch(netlist, ALL_BITS_3, np.array([1, 0, 1], dtype=np.uint8))
            expected = ((ALL_BITS_3 * 2 - 1) @ np.array([1, -1, 1]) >= theta).astype(int)
            self.assertEqual(outputs[:, 0].tolist(), expected.tolist(), f"θ={theta}")

    def test_popcount_single_wire(self):
        netlist = popcount_netlist(1)
        self.assertEqual(netlist.num_gates, 0)
        self.assertEqual(netlist.outputs[0].wires, tuple(netlist.client_inputs.tolist()))

    def test_popcount_three_and_seven(self):
        self.assertEqual(count_gates(popcount_netlist(3)).non_xor, 1)
        netlist = popcount_netlist(7)
        bits = np.array(list(itertools.product((0, 1), repeat=7)), dtype=np.uint8)
        outputs = evaluate_batch(netlist, bits, np.zeros(0, dtype=np.uint8))
        self.assertEqual(outputs.shape[1], 3)
        self.assertEqual(_popcount_value(outputs).tolist(), bits.sum(axis=1).tolist())

    def test_popcount_widths(self):
        for count in (1, 2, 3, 4, 8, 15, 16, 100):
            builder = NetlistBuilder(count, 0)
            self.assertEqual(len(compile_popcount(builder, builder.client_inputs)), count.bit_length())

    def test_threshold_five_inputs(self):
        builder = NetlistBuilder(5, 0)
        sums = compile_popcount(builder, builder.client_inputs)
        wire = compile_threshold(builder, sums, 3, 5)
        netlist = builder.build([OutputGroup((wire,))])
        bits = np.array(list(itertools.product((0, 1), repeat=5)), dtype=np.uint8)
        outputs = evaluate_batch(netlist, bits, np.zeros(0, dtype=np.uint8))
        self.assertEqual(outputs[:, 0].tolist(), (bits.sum(axis=1) >= 3).astype(int).tolist())

    def test_threshold_reads_carry_for_majority(self):
        builder = NetlistBuilder(3, 0)
        sums = compile_popcount(builder, builder.client_inputs)
        mark = builder.mark()
        self.assertEqual(compile_threshold(builder, sums, 2, 3), sums[1])
        self.assertEqual(builder.mark(), mark)

    def test_threshold_constants(self):
        builder = NetlistBuilder(3, 0)
        sums = compile_popcount(builder, builder.client_inputs)
        self.assertEqual(compile_threshold(builder, sums, 0, 3), CONST1_WIRE)
        self.assertEqual(compile_threshold(builder, sums, 4, 3), CONST0_WIRE)


class TestLayers(unittest.TestCase):

    def test_maxpool_or_gates(self):
        netlist = compile_layer(LayerSpec(LayerKind.MAXPOOL2x2), (8, 8, 16))
        stats = count_gates(netlist)
        self.assertEqual(stats, GateStats(768, 0))
        self.assertEqual(estimate_communication(netlist).tables, 49152)

    def test_all_zero_layer(self):
        weights = TernaryTensor((4, 6), np.zeros(24, dtype=np.int8))
        netlist = compile_layer(LayerSpec(LayerKind.FC, 4), (6,), weights)
        self.assertEqual(netlist.num_gates, 0)
        self.assertEqual(netlist.server_inputs.size, 0)

    def test_sparsity_never_adds_gates(self):
        rng = np.random.default_rng(0)
        layers = [
            (LayerSpec(LayerKind.FC, 1), (16,), (1, 16)),
            (LayerSpec(LayerKind.CONV3x3, 1, padding=1), (5, 5, 1), (1, 3, 3, 1)),
        ]
        for layer, in_shape, shape in layers:
            values = rng.choice(np.array([-1, 1], dtype=np.int8), size=int(np.prod(shape)))
            previous = None
            for position in rng.permutation(values.size):
                non_xor = count_gates(compile_layer(layer, in_shape, TernaryTensor(shape, values))).non_xor
                if previous is not None:
                    self.assertLessEqual(non_xor, previous)
                previous = non_xor
                values = values.copy()
                values[position] = 0

    def test_sparse_conv_scales_with_density(self):
        layer = LayerSpec(LayerKind.CONV3x3, 4, padding=1)
        rng = np.random.default_rng(1)
        signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=(4, 27))
        dense = count_gates(compile_layer(layer, (32, 32, 3), TernaryTensor((4, 3, 3, 3), signs))).non_xor
        for s in (0.11, 0.22, 0.33):
            values = signs.copy()
            zeros = int(round(s * 27))
            for kernel in range(4):
                values[kernel, rng.choice(27, size=zeros, replace=False)] = 0
            sparse = count_gates(compile_layer(layer, (32, 32, 3), TernaryTensor((4, 3, 3, 3), values))).non_xor
            self.assertAlmostEqual(sparse / dense, 1 - s, delta=0.15)

    def test_server_inputs_only_feed_xnor(self):
        arch = get_architecture('m3', 0.25)
        netlist = compile_model(arch, random_params(arch, np.random.default_rng(2)))
        server = np.isin(netlist.in_a, netlist.server_inputs) | np.isin(netlist.in_b, netlist.server_inputs)
        self.assertTrue((netlist.kinds[server] == GateKind.XNOR).all())

    def test_server_inputs_match_nonzero_weights(self):
        arch = get_architecture('m1', 0.25)
        params = random_params(arch, np.random.default_rng(3), sparsity=0.5)
        netlist = compile_model(arch, params)
        self.assertEqual(netlist.server_inputs.size, params.nonzero_count())
        self.assertEqual(weight_bits(params).size, params.nonzero_count())


class TestModelEquivalence(unittest.TestCase):

    def _check(self, arch, params, trials, seed):
        netlist = compile_model(arch, params)
        rng = np.random.default_rng(seed)
        size = int(np.prod(arch.input_shape))
        images = rng.integers(0, 2, size=(trials, size)).astype(np.uint8)
        outputs = evaluate_batch(netlist, images, weight_bits(params))
        scores = scores_from_bits(netlist, outputs)
        for index in range(trials):
            expected = forward(params, BinaryTensor(arch.input_shape, images[index]))
            self.assertEqual(scores[index].tolist(), expected.tolist())
        return netlist, images

    def _with_thresholds(self, params, seed):
        rng = np.random.default_rng(seed)
        thresholds = tuple(None if t is None else rng.integers(-4, 5, size=t.size) for t in params.thresholds)
        return ModelParams(params.arch, params.weights, thresholds)

    def test_fc_model(self):
        arch = get_architecture('m1', 0.25)
        params = self._with_thresholds(random_params(arch, np.random.default_rng(4)), 5)
        self._check(arch, params, 200, 6)

    def test_conv_pool_model(self):
        arch = get_architecture('m3', 0.25)
        params = self._with_thresholds(random_params(arch, np.random.default_rng(7)), 8)
        self._check(arch, params, 100, 9)

    def test_padded_strided_conv(self):
        arch = get_architecture('m2', 0.4)
        params = self._with_thresholds(random_params(arch, np.random.default_rng(10)), 11)
        self._check(arch, params, 100, 12)

    def test_structure_alone_gives_same_netlist(self):
        arch = get_architecture('m3', 0.25)
        params = random_params(arch, np.random.default_rng(13))
        structure = CircuitStructure.from_dict(CircuitStructure.from_params(params).to_dict())
        self.assertEqual(compile_model(arch, structure).digest(), compile_model(arch, params).digest())

    def test_text_format_preserves_evaluation(self):
        arch = get_architecture('m1', 0.25)
        params = random_params(arch, np.random.default_rng(14))
        netlist, images = self._check(arch, params, 100, 15)
        restored = parse_netlist(_text(netlist))
        self.assertEqual(restored.digest(), netlist.digest())
        bits = weight_bits(params)
        self.assertTrue(np.array_equal(evaluate_batch(restored, images, bits),
                                       evaluate_batch(netlist, images, bits)))

    def test_single_evaluation(self):
        netlist = neuron_netlist(3)
        self.assertEqual(evaluate(netlist, [1, 1, 0], [1, 1, 1]).tolist(), [1])


class TestStatsAndFormat(unittest.TestCase):

    def test_empty_netlist(self):
        netlist = NetlistBuilder(0, 0).build([])
        self.assertEqual(count_gates(netlist), GateStats(0, 0))
        self.assertEqual(estimate_communication(netlist).tables, 0)

    def test_counts_by_kind(self):
        builder = NetlistBuilder(2, 0)
        a, b = builder.client_inputs
        wire = a
        for _ in range(5):
            wire = builder.xor(wire, b)
        for _ in range(3):
            wire = builder.and_(wire, a)
        stats = count_gates(builder.build([OutputGroup((wire,))]))
        self.assertEqual((stats.non_xor, stats.free, stats.total), (3, 5, 8))

    def test_gate_stats_invariant(self):
        with self.assertRaises(ValueError):
            GateStats(1, 1, 3)

    def test_communication_breakdown(self):
        netlist = neuron_netlist(3)
        estimate = estimate_communication(netlist)
        self.assertEqual(estimate.tables, 64)
        self.assertEqual(estimate.client_labels, 5 * 16)
        self.assertEqual(estimate.output_labels, 16)
        self.assertEqual(estimate.total, estimate.offline + estimate.online)

    def test_round_trip_majority(self):
        netlist = neuron_netlist(3)
        restored = parse_netlist(_text(netlist))
        self.assertEqual(restored.digest(), netlist.digest())
        self.assertEqual(_text(restored), _text(netlist))

    def test_cycle_is_rejected(self):
        text = ("terngc-netlist 1\nwires 5\nconst 0 1\nclient 2\nserver\n"
                "output 0 4\ngates 2\nXOR 2 4 3\nXOR 2 3 4\n")
        with self.assertRaises(NetlistFormatError) as ctx:
            parse_netlist(text)
        self.assertEqual(ctx.exception.line, 8)

    def test_malformed_line_reports_number(self):
        text = _text(neuron_netlist(3)).splitlines()
        text[-1] = 'MUX 1 2 3 4'
        with self.assertRaises(NetlistFormatError) as ctx:
            parse_netlist('\n'.join(text) + '\n')
        self.assertEqual(ctx.exception.line, len(text))

    def test_two_drivers_rejected(self):
        text = ("terngc-netlist 1\nwires 4\nconst 0 1\nclient 2\nserver\n"
                "output 0 3\ngates 2\nXOR 2 1 3\nAND 2 1 3\n")
        with self.assertRaises(NetlistFormatError):
            parse_netlist(text)


if __name__ == '__main__':
    unittest.main()
