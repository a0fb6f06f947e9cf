#!/usr/bin/env python3
"""
Tests du transfert inconscient par lots (mode groupe et mode simulé).
"""

import os
import unittest

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from oblivious_transfer import (CIPHERTEXT_BYTES, ObliviousTransfer, OTAbort, check_mode, ot_receiver_finish,
                                ot_receiver_round, ot_sender_round, ot_sender_setup, pack_choices,
                                unpack_choices)
from wire_protocol import POINT_BYTES

ACCEPTANCE = os.environ.get('TERNGC_ACCEPTANCE') == '1'


def _messages(rng, count):
    return rng.integers(0, 2 ** 63, size=(count, 2, 2), dtype=np.uint64)


def _transfer(engine, messages, choices):
    state = engine.sender_setup()
    receiver_data, keys = engine.receiver_round(choices, state.point)
    ciphertexts = engine.sender_round(state, messages, receiver_data)
    return engine.receiver_finish(ciphertexts, keys, choices)


class TestGroupMode(unittest.TestCase):

    def test_batch_round_trip(self):
        rng = np.random.default_rng(0)
        messages = _messages(rng, 256)
        choices = rng.integers(0, 2, size=256)
        received = _transfer(ObliviousTransfer(), messages, choices)
        self.assertTrue(np.array_equal(received, messages[np.arange(256), choices]))

    def test_chunked_workers_give_same_result(self):
        rng = np.random.default_rng(1)
        messages = _messages(rng, 100)
        choices = rng.integers(0, 2, size=100)
        received = _transfer(ObliviousTransfer(workers=3, chunk_size=16), messages, choices)
        self.assertTrue(np.array_equal(received, messages[np.arange(100), choices]))

    def test_other_ciphertext_fails_authentication(self):
        rng = np.random.default_rng(2)
        engine = ObliviousTransfer(workers=1)
        messages = _messages(rng, 4)
        choices = np.array([0, 1, 1, 0])
        state = engine.sender_setup()
        receiver_data, keys = engine.receiver_round(choices, state.point)
        ciphertexts = engine.sender_round(state, messages, receiver_data)
        self.assertEqual(len(ciphertexts), 4 * 2 * CIPHERTEXT_BYTES)
        for i, choice in enumerate(choices):
            offset = (2 * i + 1 - choice) * CIPHERTEXT_BYTES
            with self.assertRaises(InvalidTag):
                AESGCM(keys.keys[i]).decrypt(b'\x00' * 12, ciphertexts[offset:offset + CIPHERTEXT_BYTES], None)

    def test_invalid_points(self):
        engine = ObliviousTransfer()
        with self.assertRaises(OTAbort):
            engine.receiver_round([0, 1], b'\x00' * POINT_BYTES)
        state = engine.sender_setup()
        with self.assertRaises(OTAbort):
            engine.sender_round(state, np.zeros((1, 2, 2), dtype=np.uint64), b'\xff' * POINT_BYTES)

    def test_count_mismatch(self):
        engine = ObliviousTransfer()
        state = engine.sender_setup()
        receiver_data, keys = engine.receiver_round([0, 1, 0], state.point)
        with self.assertRaises(OTAbort):
            engine.sender_round(state, np.zeros((2, 2, 2), dtype=np.uint64), receiver_data)
        ciphertexts = engine.sender_round(state, np.zeros((3, 2, 2), dtype=np.uint64), receiver_data)
        with self.assertRaises(OTAbort):
            engine.receiver_finish(ciphertexts[:-1], keys, [0, 1, 0])

    def test_choice_bits_validated(self):
        engine = ObliviousTransfer()
        with self.assertRaises(OTAbort):
            engine.receiver_round([0, 2], engine.sender_setup().point)

    def test_module_functions(self):
        rng = np.random.default_rng(3)
        messages = _messages(rng, 8)
        choices = rng.integers(0, 2, size=8)
        state = ot_sender_setup()
        receiver_data, keys = ot_receiver_round(choices, state.point)
        ciphertexts = ot_sender_round(messages, receiver_data, state)
        received = ot_receiver_finish(ciphertexts, keys, choices)
        self.assertTrue(np.array_equal(received, messages[np.arange(8), choices]))

    @unittest.skipUnless(ACCEPTANCE, "lot de 10^4 instances (TERNGC_ACCEPTANCE=1)")
    def test_large_batch(self):
        rng = np.random.default_rng(4)
        messages = _messages(rng, 10000)
        choices = rng.integers(0, 2, size=10000)
        received = _transfer(ObliviousTransfer(), messages, choices)
        self.assertTrue(np.array_equal(received, messages[np.arange(10000), choices]))


class TestSimulatedMode(unittest.TestCase):

    def test_refused_without_flag(self):
        with self.assertRaises(OTAbort):
            ObliviousTransfer('simulated')
        with self.assertRaises(OTAbort):
            check_mode('plaintext', True)

    def test_choice_zero_gives_first_message(self):
        engine = ObliviousTransfer('simulated', insecure_ot=True)
        messages = np.array([[[1, 2], [3, 4]]], dtype=np.uint64)
        self.assertEqual(_transfer(engine, messages, [0]).tolist(), [[1, 2]])
        self.assertEqual(_transfer(engine, messages, [1]).tolist(), [[3, 4]])

    def test_choice_packing(self):
        choices = np.array([1, 0, 1, 1, 0, 0, 0, 0, 1])
        packed = pack_choices(choices)
        self.assertEqual(len(packed), 2)
        self.assertEqual(unpack_choices(packed, 9).tolist(), choices.tolist())
        with self.assertRaises(OTAbort):
            unpack_choices(packed, 20)


if __name__ == '__main__':
    unittest.main()
