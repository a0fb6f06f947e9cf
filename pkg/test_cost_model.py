#!/usr/bin/env python3
"""
Tests des facteurs de pénalité et de la mesure des coûts garbled.
"""

import tempfile
import unittest
from pathlib import Path

from cost_model import CostModelError, CostTable, measure_op_costs, penalty_factors
from model_core import LayerKind

REFERENCE_COSTS = {
    LayerKind.CONV5x5: (55.40, 7942),
    LayerKind.CONV3x3: (23.10, 3190),
    LayerKind.MAXPOOL2x2: (3.23, 145),
    LayerKind.IDENTITY: (0.0, 0.0),
}


class TestPenaltyFactors(unittest.TestCase):

    def test_reference_table(self):
        gamma = penalty_factors(REFERENCE_COSTS)
        self.assertAlmostEqual(gamma[LayerKind.CONV5x5], 1.0)
        self.assertAlmostEqual(gamma[LayerKind.CONV3x3], 0.41, places=2)
        self.assertAlmostEqual(gamma[LayerKind.MAXPOOL2x2], 0.04, places=2)
        self.assertEqual(gamma[LayerKind.IDENTITY], 0.0)

    def test_all_zero(self):
        with self.assertRaises(CostModelError):
            penalty_factors({LayerKind.IDENTITY: (0.0, 0.0), LayerKind.MAXPOOL2x2: (0.0, 0.0)})
        with self.assertRaises(CostModelError):
            penalty_factors({})

    def test_single_operation(self):
        self.assertEqual(penalty_factors({LayerKind.CONV3x3: (4.0, 2.0)}), {LayerKind.CONV3x3: 1.0})

    def test_zero_axis_ignored(self):
        gamma = penalty_factors({LayerKind.CONV3x3: (4.0, 0.0), LayerKind.MAXPOOL2x2: (1.0, 0.0)})
        self.assertAlmostEqual(gamma[LayerKind.MAXPOOL2x2], 0.25)

    def test_negative_cost(self):
        with self.assertRaises(CostModelError):
            penalty_factors({LayerKind.CONV3x3: (-1.0, 2.0)})


class TestCostTable(unittest.TestCase):

    def test_penalties_in_candidate_order(self):
        table = CostTable.from_raw(REFERENCE_COSTS)
        penalties = table.penalties()
        self.assertEqual(len(penalties), 4)
        self.assertAlmostEqual(penalties[0], 1.0)
        self.assertEqual(penalties[3], 0.0)

    def test_missing_operation(self):
        table = CostTable.from_raw({LayerKind.CONV3x3: (1.0, 1.0)})
        with self.assertRaises(CostModelError):
            table.penalties()

    def test_save_and_load(self):
        table = CostTable.from_raw(REFERENCE_COSTS, gates={LayerKind.CONV5x5: 127072})
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'costs.json'
            table.save(path)
            restored = CostTable.load(path)
        self.assertEqual(restored.to_dict(), table.to_dict())
        self.assertIn('CONV5x5', table.format_report())

    def test_invalid_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'costs.json'
            path.write_text('{"ops": {"CONV7x7": {}}}', encoding='utf-8')
            with self.assertRaises(CostModelError):
                CostTable.load(path)
            with self.assertRaises(CostModelError):
                CostTable.load(Path(tmp) / 'absent.json')


class TestMeasurement(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.table = measure_op_costs(shape=(6, 6, 2), kernels=2, seed=1)

    def test_table_bytes_follow_gate_count(self):
        for cost in self.table.costs.values():
            self.assertAlmostEqual(cost.comm_kb * 1024, cost.non_xor * 64)

    def test_identity_is_free(self):
        identity = self.table.costs[LayerKind.IDENTITY]
        self.assertEqual((identity.non_xor, identity.runtime_ms, identity.penalty), (0, 0.0, 0.0))

    def test_gate_ordering(self):
        costs = self.table.costs
        # 3×3×2 sorties, trois OR par fenêtre
        self.assertEqual(costs[LayerKind.MAXPOOL2x2].non_xor, 54)
        self.assertGreater(costs[LayerKind.CONV5x5].non_xor, costs[LayerKind.CONV3x3].non_xor)
        self.assertGreater(costs[LayerKind.CONV3x3].non_xor, costs[LayerKind.MAXPOOL2x2].non_xor)
        penalties = self.table.penalties()
        self.assertTrue(((penalties >= 0.0) & (penalties <= 1.0)).all())
        # La convolution 5×5 a le plus d'octets de tables
        self.assertGreaterEqual(self.table.penalty(LayerKind.CONV5x5), 0.5)


if __name__ == '__main__':
    unittest.main()
