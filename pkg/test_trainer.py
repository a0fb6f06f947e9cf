#!/usr/bin/env python3
"""
Tests de l'entraînement STE et de l'export vers les paramètres ternaires.
"""

import json
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch

from datasets import load_dataset, load_mnist, write_synthetic_mnist
from model_core import BinaryTensor, forward, sparsity, ternarize
from model_zoo import get_architecture
from runtime_config import RuntimeConfig, load_config
from trainer import (LatentModel, TernarizeSTE, TrainConfig, evaluate, images_to_tensor, params_forward,
                     scaling_sweep, train)

ACCEPTANCE = os.environ.get('TERNGC_ACCEPTANCE') == '1'


class TestStraightThrough(unittest.TestCase):

    def test_ternarize_matches_numpy_rule(self):
        torch.manual_seed(0)
        weight = torch.randn(64)
        expected = ternarize(weight.double().numpy()).values
        got = TernarizeSTE.apply(weight).numpy().astype(np.int8)
        self.assertTrue(np.array_equal(got, expected))

    def test_gradient_window(self):
        weight = torch.tensor([0.5, -2.0, 1.0, -0.1], requires_grad=True)
        TernarizeSTE.apply(weight).sum().backward()
        self.assertEqual(weight.grad.tolist(), [1.0, 0.0, 1.0, 1.0])

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            TrainConfig(epochs=-1)
        with self.assertRaises(ValueError):
            TrainConfig(weight_mode='quaternary')
        with self.assertRaises(ValueError):
            TrainConfig(optimizer='rmsprop')


class TestExport(unittest.TestCase):

    def test_threshold_is_ceil_of_negative_bias(self):
        arch = get_architecture('m1', 0.05)
        model = LatentModel(arch)
        with torch.no_grad():
            model.biases[0].fill_(-2.5)
            model.biases[1].fill_(1.5)
        params = model.export()
        self.assertTrue((params.thresholds[0] == 3).all())
        self.assertTrue((params.thresholds[1] == -1).all())
        self.assertTrue((params.thresholds[2] == 0).all())

    def test_batched_forward_matches_reference(self):
        arch = get_architecture('m3', 0.25)
        model = LatentModel(arch)
        with torch.no_grad():
            for bias in model.biases:
                bias.uniform_(-3.0, 3.0)
        params = model.export()
        rng = np.random.default_rng(0)
        bits = rng.integers(0, 2, size=(4, 28, 28, 1)).astype(np.uint8)
        scores = params_forward(params, images_to_tensor(bits)).numpy()
        for index in range(4):
            expected = forward(params, BinaryTensor((28, 28, 1), bits[index]))
            self.assertEqual(scores[index].astype(np.int64).tolist(), expected.tolist())

    def test_binary_mode_has_no_zero(self):
        params = LatentModel(get_architecture('m1', 0.05), 'binary').export()
        self.assertEqual(params.nonzero_count(), params.all_weights().size)


class TestTraining(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        write_synthetic_mnist(cls.tmp.name, train_size=120, test_size=40, seed=0)
        cls.train_set = load_mnist(cls.tmp.name, 'train')
        cls.test_set = load_mnist(cls.tmp.name, 'test')

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_history_and_log_file(self):
        arch = get_architecture('m1', 0.1)
        config = TrainConfig(epochs=2, batch_size=20, validation_size=20, seed=1)
        log_path = Path(self.tmp.name) / 'training.jsonl'
        params, history = train(arch, config, self.train_set, log_path=str(log_path))
        self.assertEqual([record['epoch'] for record in history], [1, 2])
        for record in history:
            self.assertEqual(set(record), {'epoch', 'loss', 'val_acc', 'sparsity'})
            self.assertTrue(0.0 <= record['val_acc'] <= 1.0)
        lines = log_path.read_text(encoding='utf-8').splitlines()
        self.assertEqual(json.loads(lines[-1])['epoch'], 2)
        self.assertEqual(params.arch, arch)
        accuracy = evaluate(arch, params, self.test_set)
        self.assertTrue(0.0 <= accuracy <= 1.0)

    def test_same_seed_same_parameters(self):
        arch = get_architecture('m1', 0.1)
        config = TrainConfig(epochs=1, batch_size=30, validation_size=20, seed=7)
        first, _ = train(arch, config, self.train_set)
        second, _ = train(arch, config, self.train_set)
        self.assertTrue(np.array_equal(first.all_weights(), second.all_weights()))

    def test_zero_epochs_returns_initial_model(self):
        arch = get_architecture('m1', 0.1)
        params, history = train(arch, TrainConfig(epochs=0, validation_size=20), self.train_set)
        self.assertEqual(history, [])
        self.assertEqual(len(params.weights), 3)

    def test_learns_synthetic_bands(self):
        arch = get_architecture('m1', 0.25)
        config = TrainConfig(epochs=15, batch_size=20, validation_size=20, learning_rate=1e-2, seed=0)
        params, _ = train(arch, config, self.train_set)
        # Dix classes : le hasard est à 0.1
        self.assertGreater(evaluate(arch, params, self.test_set), 0.2)

    def test_scaling_sweep_rows(self):
        config = TrainConfig(epochs=1, batch_size=20, validation_size=20)
        rows = scaling_sweep(get_architecture('m1'), config, self.train_set, self.test_set,
                             (0.05, 0.1, 0.25), seeds=(0, 1))
        self.assertEqual([row['scale'] for row in rows], [0.05, 0.1, 0.25])
        params = [row['params'] for row in rows]
        self.assertEqual(params, sorted(set(params)))
        for row in rows:
            self.assertEqual(len(row['accuracies']), 2)
            self.assertAlmostEqual(row['accuracy'], float(np.median(row['accuracies'])))
            self.assertTrue(0.0 <= row['sparsity'] <= 1.0)


@unittest.skipUnless(ACCEPTANCE, "entraînement MNIST complet (TERNGC_ACCEPTANCE=1)")
class TestMnistAcceptance(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        paths = RuntimeConfig(load_config(Path(__file__).with_name('config.json'))).get_paths()
        if not Path(paths['mnist_path']).exists():
            raise unittest.SkipTest(f"MNIST absent de {paths['mnist_path']}")
        cls.train_set = load_dataset('mnist', paths, 'train')
        cls.test_set = load_dataset('mnist', paths, 'test')

    def test_m1_accuracy_and_sparsity(self):
        arch = get_architecture('m1')
        params, _ = train(arch, TrainConfig(epochs=30, seed=0), self.train_set)
        self.assertGreaterEqual(evaluate(arch, params, self.test_set), 0.90)
        self.assertTrue(0.10 <= sparsity(params) <= 0.40)

    def test_accuracy_non_decreasing_with_scale(self):
        rows = scaling_sweep(get_architecture('m1'), TrainConfig(epochs=30), self.train_set, self.test_set,
                             (0.25, 0.5, 1.0), seeds=(0, 1, 2))
        accuracies = [row['accuracy'] for row in rows]
        self.assertEqual(accuracies, sorted(accuracies))


if __name__ == '__main__':
    unittest.main()
