#!/usr/bin/env python3
"""
Tests du tramage et des contenus du protocole filaire.
"""

import socket
import unittest

import numpy as np

from wire_protocol import (FRAME_HEADER_BYTES, OT_PHASE_CIPHERTEXTS, OT_PHASE_COMMIT, AbortReason,
                           FramedSocket, MessageType, ProtocolError, decode_abort, decode_frame_header,
                           decode_json, decode_labels, decode_ot, encode_abort, encode_frame, encode_json,
                           encode_labels, encode_ot, framing_overhead, ot_body_bytes)


class TestFrames(unittest.TestCase):

    def test_header_layout(self):
        frame = encode_frame(MessageType.GARBLED_CIRCUIT, b'abc')
        self.assertEqual(frame, b'\x00\x00\x00\x03\x10abc')
        self.assertEqual(decode_frame_header(frame[:FRAME_HEADER_BYTES]), (3, MessageType.GARBLED_CIRCUIT))

    def test_unknown_type(self):
        with self.assertRaises(ProtocolError):
            decode_frame_header(b'\x00\x00\x00\x00\x55')

    def test_truncated_header(self):
        with self.assertRaises(ProtocolError):
            decode_frame_header(b'\x00\x00')

    def test_abort_payload(self):
        self.assertEqual(decode_abort(encode_abort(AbortReason.HASH_MISMATCH, 'autre netlist')),
                         (AbortReason.HASH_MISMATCH, 'autre netlist'))
        self.assertEqual(decode_abort(b''), (AbortReason.INTERNAL, ''))
        self.assertEqual(decode_abort(b'\xee')[0], AbortReason.INTERNAL)


class TestPayloads(unittest.TestCase):

    def test_labels(self):
        labels = np.array([[1, 2], [3, 2 ** 64 - 1]], dtype=np.uint64)
        payload = encode_labels(labels)
        self.assertEqual(len(payload), 4 + 2 * 16)
        self.assertTrue(np.array_equal(decode_labels(payload, expected=2), labels))
        with self.assertRaises(ProtocolError):
            decode_labels(payload, expected=3)
        with self.assertRaises(ProtocolError):
            decode_labels(payload[:-1])

    def test_ot_prefix(self):
        payload = encode_ot(OT_PHASE_COMMIT, 7, b'x' * 32)
        self.assertEqual(decode_ot(payload, OT_PHASE_COMMIT, 7), b'x' * 32)
        with self.assertRaises(ProtocolError) as ctx:
            decode_ot(payload, OT_PHASE_CIPHERTEXTS, 7)
        self.assertEqual(ctx.exception.reason, AbortReason.OT_FAILURE)
        with self.assertRaises(ProtocolError):
            decode_ot(payload, OT_PHASE_COMMIT, 8)

    def test_json(self):
        self.assertEqual(decode_json(encode_json({'b': 1, 'a': [1, 2]})), {'a': [1, 2], 'b': 1})
        with self.assertRaises(ProtocolError):
            decode_json(b'[1, 2]')
        with self.assertRaises(ProtocolError):
            decode_json(b'\xff')

    def test_ot_sizes(self):
        self.assertEqual(ot_body_bytes(10, 'group'), (32, 320, 640))
        self.assertEqual(ot_body_bytes(10, 'simulated'), (0, 2, 160))

    def test_framing_overhead(self):
        # 8 en-têtes de trame, en-tête du circuit, 3 compteurs, 2 préfixes OT
        self.assertEqual(framing_overhead(), 8 * 5 + 38 + 3 * 4 + 2 * 5)


class TestFramedSocket(unittest.TestCase):

    def setUp(self):
        left, right = socket.socketpair()
        self.left = FramedSocket(left, io_timeout=5)
        self.right = FramedSocket(right, io_timeout=5)
        self.addCleanup(self.left.close)
        self.addCleanup(self.right.close)

    def test_counts_bytes_both_ways(self):
        self.left.send(MessageType.HELLO, b'{}')
        message_type, payload = self.right.recv(MessageType.HELLO)
        self.assertEqual((message_type, payload), (MessageType.HELLO, b'{}'))
        self.assertEqual(self.left.bytes_sent, 7)
        self.assertEqual(self.right.bytes_received, 7)
        self.assertEqual(self.right.received_by_type[MessageType.HELLO], 7)

    def test_empty_payload(self):
        self.left.send(MessageType.HELLO_ACK)
        self.assertEqual(self.right.recv(), (MessageType.HELLO_ACK, b''))

    def test_abort_from_peer(self):
        self.left.send_abort(AbortReason.BUSY, 'occupé')
        with self.assertRaises(ProtocolError) as ctx:
            self.right.recv(MessageType.HELLO_ACK)
        self.assertTrue(ctx.exception.from_peer)
        self.assertEqual(ctx.exception.reason, AbortReason.BUSY)

    def test_unexpected_type(self):
        self.left.send(MessageType.OUTPUT_LABELS, b'')
        with self.assertRaises(ProtocolError) as ctx:
            self.right.recv(MessageType.HELLO)
        self.assertFalse(ctx.exception.from_peer)

    def test_closed_connection(self):
        self.left.sock.sendall(b'\x00\x00\x00\x09\x10ab')
        self.left.close()
        with self.assertRaises(ProtocolError):
            self.right.recv()


if __name__ == '__main__':
    unittest.main()
