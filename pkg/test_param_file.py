#!/usr/bin/env python3
"""
Tests du conteneur de paramètres TGCP et du fichier d'architecture.
"""

import io
import tempfile
import unittest
from pathlib import Path

import numpy as np

from model_core import LayerKind, ModelParams, TernaryTensor, random_params
from model_zoo import get_architecture
from param_file import (ParamFileError, architecture_from_dict, architecture_to_dict, pack_ternary,
                        read_architecture, read_params, unpack_ternary, write_architecture, write_params)


def _same_params(test, a: ModelParams, b: ModelParams):
    test.assertEqual(a.arch, b.arch)
    for wa, wb in zip(a.weights, b.weights):
        if wa is None:
            test.assertIsNone(wb)
            continue
        test.assertEqual(wa.shape, wb.shape)
        test.assertTrue(np.array_equal(wa.values, wb.values))
    for ta, tb in zip(a.thresholds, b.thresholds):
        if ta is None:
            test.assertIsNone(tb)
        else:
            test.assertTrue(np.array_equal(ta, tb))


class TestPacking(unittest.TestCase):

    def test_two_bit_codes(self):
        packed = pack_ternary(np.array([0, 1, -1, 1, -1], dtype=np.int8))
        self.assertEqual(packed, bytes([0b01100100, 0b00000010]))
        self.assertEqual(unpack_ternary(packed, 5).tolist(), [0, 1, -1, 1, -1])

    def test_invalid_code(self):
        with self.assertRaises(ParamFileError):
            unpack_ternary(bytes([0b11]), 1)

    def test_non_zero_padding(self):
        with self.assertRaises(ParamFileError):
            unpack_ternary(bytes([0b01000000]), 3)

    def test_wrong_length(self):
        with self.assertRaises(ParamFileError):
            unpack_ternary(bytes(2), 3)


class TestParamFile(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.directory = Path(self.tmp.name)

    def test_conv_model_with_thresholds(self):
        arch = get_architecture('m3', 0.5)
        params = random_params(arch, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        thresholds = tuple(None if t is None else rng.integers(-50, 50, size=t.size)
                           for t in params.thresholds)
        params = ModelParams(arch, params.weights, thresholds)
        path = self.directory / 'm3.tgcp'
        write_params(params, path)
        _same_params(self, params, read_params(path))

    def test_stream(self):
        arch = get_architecture('m1', 0.25)
        params = random_params(arch, np.random.default_rng(2))
        buffer = io.BytesIO()
        write_params(params, buffer)
        buffer.seek(0)
        _same_params(self, params, read_params(buffer, arch))

    def test_scale_is_read_from_file(self):
        arch = get_architecture('m1', 0.5)
        path = self.directory / 'm1.tgcp'
        write_params(random_params(arch, np.random.default_rng(3)), path)
        self.assertEqual(read_params(path).arch.scaling_factor, 0.5)

    def test_architecture_mismatch(self):
        path = self.directory / 'm1.tgcp'
        write_params(random_params(get_architecture('m1', 0.25), np.random.default_rng(3)), path)
        with self.assertRaises(ParamFileError):
            read_params(path, get_architecture('m1', 0.5))
        with self.assertRaises(ParamFileError):
            read_params(path, get_architecture('m3'))

    def test_corrupted_files(self):
        path = self.directory / 'm1.tgcp'
        write_params(random_params(get_architecture('m1', 0.25), np.random.default_rng(4)), path)
        data = path.read_bytes()
        cases = {
            'magic': b'XXXX' + data[4:],
            'truncated': data[:-3],
            'trailing': data + b'\x00',
        }
        for label, content in cases.items():
            with self.subTest(label):
                broken = self.directory / f'{label}.tgcp'
                broken.write_bytes(content)
                with self.assertRaises(ParamFileError):
                    read_params(broken)

    def test_missing_file(self):
        with self.assertRaises(ParamFileError):
            read_params(self.directory / 'absent.tgcp')

    def test_weightless_layers(self):
        arch = get_architecture('m3', 0.25)
        params = random_params(arch, np.random.default_rng(5))
        buffer = io.BytesIO()
        write_params(params, buffer)
        buffer.seek(0)
        restored = read_params(buffer)
        for layer, tensor in zip(arch.effective_layers(), restored.weights):
            self.assertEqual(tensor is None, layer.kind is LayerKind.MAXPOOL2x2)


class TestArchitectureFile(unittest.TestCase):

    def test_dict_keeps_base_counts(self):
        arch = get_architecture('m3', 2.0)
        data = architecture_to_dict(arch)
        self.assertEqual(data['layers'][0], {'kind': 'CONV5x5', 'kernels_or_nodes': 16,
                                             'padding': 0, 'stride': 1})
        self.assertEqual(architecture_from_dict(data), arch)

    def test_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'm2.arch.json'
            arch = get_architecture('m2')
            write_architecture(arch, path)
            self.assertEqual(read_architecture(path), arch)

    def test_invalid_dict(self):
        with self.assertRaises(ParamFileError):
            architecture_from_dict({'name': 'x'})
        with self.assertRaises(ParamFileError):
            architecture_from_dict({'name': 'x', 'layers': [{'kind': 'FC', 'kernels_or_nodes': 3}]})

    def test_unreadable_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'bad.json'
            path.write_text('{', encoding='utf-8')
            with self.assertRaises(ParamFileError):
                read_architecture(path)

    def test_ternary_tensor_layout_is_preserved(self):
        arch = get_architecture('m2', 0.2)
        params = random_params(arch, np.random.default_rng(9))
        buffer = io.BytesIO()
        write_params(params, buffer)
        buffer.seek(0)
        restored = read_params(buffer)
        first = restored.weights[0]
        self.assertIsInstance(first, TernaryTensor)
        self.assertEqual(first.shape, (1, 5, 5, 1))


if __name__ == '__main__':
    unittest.main()
