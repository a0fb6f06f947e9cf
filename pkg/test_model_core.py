#!/usr/bin/env python3
"""
Tests des types du modèle et de l'inférence de référence en clair.
"""

import itertools
import unittest

import numpy as np

from model_core import (Architecture, BinaryTensor, LayerKind, LayerSpec, ModelParams, QuantizationError,
                        ShapeError, TernaryTensor, binarize, binarize_input, binarize_weights, count_params,
                        forward_layer, infer_shapes, maxpool_bits, predict, random_params, scale_architecture,
                        scale_count, sparsity, ternarize, ternary_delta, xnor_popcount_dot)
from model_zoo import get_architecture, list_architectures


def _fc(nodes):
    return LayerSpec(LayerKind.FC, nodes)


class TestQuantization(unittest.TestCase):

    def test_binarize_zero_maps_to_one(self):
        self.assertEqual(binarize([3, -1, 0]).bits.tolist(), [1, 0, 1])
        self.assertEqual(binarize([-5, -1, -2]).bits.tolist(), [0, 0, 0])
        self.assertEqual(binarize([4, 1, 2]).bits.tolist(), [1, 1, 1])

    def test_binarize_is_monotone(self):
        rng = np.random.default_rng(3)
        low = rng.integers(-20, 20, size=200)
        high = low + rng.integers(0, 5, size=200)
        self.assertTrue((binarize(high).bits >= binarize(low).bits).all())

    def test_ternarize_threshold(self):
        w = np.array([0.9, -0.8, 0.05, -0.02, 0.4, -0.5])
        delta = ternary_delta(w)
        tensor = ternarize(w)
        self.assertEqual(np.count_nonzero(tensor.values), int(np.count_nonzero(np.abs(w) > delta)))
        self.assertEqual(tensor.values.tolist(), [1, -1, 0, 0, 1, -1])

    def test_ternarize_counts_match_on_random_tensors(self):
        rng = np.random.default_rng(0)
        for size in (1, 7, 64, 513):
            w = rng.normal(size=size)
            tensor = ternarize(w)
            self.assertEqual(tensor.nonzero_count(), int(np.count_nonzero(np.abs(w) > ternary_delta(w))))

    def test_ternarize_rejects_empty_and_non_finite(self):
        with self.assertRaises(QuantizationError):
            ternarize([])
        with self.assertRaises(QuantizationError):
            ternarize([1.0, float('nan')])

    def test_binary_weights_have_no_zero(self):
        tensor = binarize_weights([0.0, -0.1, 0.3])
        self.assertEqual(tensor.values.tolist(), [1, -1, 1])

    def test_ternary_tensor_rejects_other_values(self):
        with self.assertRaises(QuantizationError):
            TernaryTensor((2,), np.array([2, 0]))
        with self.assertRaises(ShapeError):
            TernaryTensor((3,), np.array([1, 0]))

    def test_binarize_input_half_intensity(self):
        bits = binarize_input(np.array([[0, 127], [128, 255]], dtype=np.uint8))
        self.assertEqual(bits.shape, (2, 2, 1))
        self.assertEqual(bits.bits.tolist(), [0, 0, 1, 1])

    def test_binarize_input_fixed_threshold(self):
        self.assertFalse(binarize_input(np.zeros((28, 28), dtype=np.uint8)).bits.any())
        # Seuil fixe à 127.5 : une image sombre ne s'allume pas relativement à son maximum
        dim = np.full((4, 4, 3), 100, dtype=np.uint8)
        self.assertFalse(binarize_input(dim).bits.any())
        self.assertTrue(binarize_input(np.full((2, 2), 255, dtype=np.uint8)).bits.all())


class TestXnorPopcount(unittest.TestCase):

    def test_worked_example(self):
        x = BinaryTensor((4,), np.array([1, 0, 1, 1]))
        self.assertEqual(xnor_popcount_dot(x, np.array([1, 1, 1, -1])), 0)

    def test_perfect_agreement_gives_n(self):
        w = np.array([1, -1, -1, 1, 1])
        x = BinaryTensor((5,), (w > 0).astype(np.uint8))
        self.assertEqual(xnor_popcount_dot(x, w), 5)

    def test_all_zero_weights(self):
        x = BinaryTensor((3,), np.array([1, 0, 1]))
        self.assertEqual(xnor_popcount_dot(x, np.zeros(3, dtype=np.int8)), 0)

    def test_matches_integer_dot_product(self):
        rng = np.random.default_rng(42)
        for length in (1, 2, 17, 128, 512):
            bits = rng.integers(0, 2, size=length)
            w = rng.integers(-1, 2, size=length)
            expected = int(((2 * bits - 1) * w).sum())
            self.assertEqual(xnor_popcount_dot(BinaryTensor((length,), bits), w), expected)

    def test_length_mismatch(self):
        with self.assertRaises(ShapeError):
            xnor_popcount_dot(BinaryTensor((2,), np.array([1, 0])), np.array([1, 1, 1]))


class TestForward(unittest.TestCase):

    def test_maxpool_is_or(self):
        for window in itertools.product((0, 1), repeat=4):
            pooled = maxpool_bits(BinaryTensor((2, 2, 1), np.array(window)))
            self.assertEqual(pooled.bits.tolist(), [max(window)])

    def test_fc_majority(self):
        layer = _fc(1)
        weights = TernaryTensor((1, 3), np.array([1, 1, 1]))
        out = forward_layer(layer, weights, None, BinaryTensor((3,), np.array([1, 1, 0])))
        self.assertEqual(out.bits.tolist(), [1])
        out = forward_layer(layer, weights, None, BinaryTensor((3,), np.array([1, 0, 0])))
        self.assertEqual(out.bits.tolist(), [0])

    def test_threshold_shifts_activation(self):
        layer = _fc(1)
        weights = TernaryTensor((1, 3), np.array([1, 1, 1]))
        out = forward_layer(layer, weights, np.array([2]), BinaryTensor((3,), np.array([1, 1, 0])))
        self.assertEqual(out.bits.tolist(), [0])

    def test_zero_last_layer_predicts_class_zero(self):
        arch = get_architecture('m1', 0.25)
        params = random_params(arch, np.random.default_rng(1))
        weights = list(params.weights)
        weights[-1] = TernaryTensor(weights[-1].shape, np.zeros(weights[-1].size, dtype=np.int8))
        zeroed = ModelParams(arch, tuple(weights), params.thresholds)
        image = BinaryTensor((28, 28, 1), np.random.default_rng(2).integers(0, 2, size=784))
        predicted, scores = predict(arch, zeroed, image)
        self.assertEqual(predicted, 0)
        self.assertTrue((scores == 0).all())

    def test_predicted_class_is_argmax(self):
        arch = get_architecture('m3', 0.5)
        params = random_params(arch, np.random.default_rng(5))
        rng = np.random.default_rng(6)
        for _ in range(3):
            image = BinaryTensor((28, 28, 1), rng.integers(0, 2, size=784))
            predicted, scores = predict(arch, params, image)
            self.assertEqual(predicted, int(np.argmax(scores)))

    def test_small_model_against_scripted_forward(self):
        arch = Architecture('tiny', (_fc(3), _fc(2)), 1.0, (2, 2, 1), num_classes=2)
        hidden = np.array([[1, -1, 0, 1], [0, 1, 1, -1], [-1, -1, 1, 0]])
        last = np.array([[1, 0, -1], [-1, 1, 1]])
        theta = np.array([0, 1, -1])
        params = ModelParams(arch, (TernaryTensor(hidden.shape, hidden), TernaryTensor(last.shape, last)),
                             (theta, None))
        for bits in itertools.product((0, 1), repeat=4):
            signs = 2 * np.array(bits) - 1
            h = (hidden @ signs >= theta).astype(int)
            expected = last @ (2 * h - 1)
            predicted, scores = predict(arch, params, BinaryTensor((2, 2, 1), np.array(bits)))
            self.assertEqual(scores.tolist(), expected.tolist())
            self.assertEqual(predicted, int(np.argmax(expected)))

    def test_padding_contributes_nothing(self):
        # Un noyau 3x3 de +1 sur une image 1x1 avec padding 1 : seul le centre compte
        arch = Architecture('pad', (LayerSpec(LayerKind.CONV3x3, 1, padding=1), _fc(2)), 1.0, (1, 1, 1), 2)
        conv = TernaryTensor((1, 3, 3, 1), np.ones(9, dtype=np.int8))
        out = forward_layer(arch.layers[0], conv, np.array([1]), BinaryTensor((1, 1, 1), np.array([1])))
        self.assertEqual(out.bits.tolist(), [1])
        out = forward_layer(arch.layers[0], conv, np.array([0]), BinaryTensor((1, 1, 1), np.array([0])))
        self.assertEqual(out.bits.tolist(), [0])

    def test_image_shape_mismatch(self):
        arch = get_architecture('m1', 0.25)
        params = random_params(arch, np.random.default_rng(0))
        with self.assertRaises(ShapeError):
            predict(arch, params, BinaryTensor((4,), np.zeros(4, dtype=np.uint8)))


class TestArchitecture(unittest.TestCase):

    def test_m1_parameter_counts(self):
        self.assertEqual(count_params(get_architecture('m1', 0.25)), 26432)
        self.assertEqual(count_params(get_architecture('m1', 1.0)), 118016)
        self.assertEqual(count_params(get_architecture('m1', 3.0)), 452352)

    def test_m1_closed_form(self):
        for s in (0.5, 1.25, 1.75, 2.0, 4.0):
            n = scale_count(128, s)
            self.assertEqual(count_params(get_architecture('m1', s)), 784 * n + n * n + n * 10)

    def test_scaling_rounds_half_up(self):
        self.assertEqual(scale_count(5, 0.5), 3)
        self.assertEqual(scale_count(1, 0.1), 1)
        self.assertEqual(scale_count(128, 1.75), 224)

    def test_scaling_keeps_class_count(self):
        arch = scale_architecture(get_architecture('m3'), 2.0)
        layers = arch.effective_layers()
        self.assertEqual(layers[-1].kernels_or_nodes, 10)
        self.assertEqual(layers[0].kernels_or_nodes, 32)

    def test_invalid_scale(self):
        with self.assertRaises(ShapeError):
            scale_architecture(get_architecture('m1'), 0)

    def test_shapes(self):
        shapes = infer_shapes(get_architecture('m3'))
        self.assertEqual(shapes[0][1], (24, 24, 16))
        self.assertEqual(shapes[1][1], (12, 12, 16))
        self.assertEqual(shapes[3][1], (4, 4, 16))
        self.assertEqual(shapes[-1][1], (10,))

    def test_zoo_architectures_are_consistent(self):
        for name in list_architectures():
            arch = get_architecture(name)
            self.assertGreater(count_params(arch), 0, name)
            self.assertEqual(len(infer_shapes(arch)), len(arch.layers))

    def test_last_layer_must_be_class_fc(self):
        with self.assertRaises(ShapeError):
            Architecture('bad', (_fc(4),), 1.0, (2, 2, 1), num_classes=10)

    def test_sparsity(self):
        arch = get_architecture('m1', 0.25)
        params = random_params(arch, np.random.default_rng(0), sparsity=0.0)
        self.assertEqual(sparsity(params), 0.0)
        self.assertEqual(sparsity(np.array([0, 1, 0, -1])), 0.5)


if __name__ == '__main__':
    unittest.main()
