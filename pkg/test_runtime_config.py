#!/usr/bin/env python3
"""
Tests du chargement et de la validation de la configuration.
"""

import json
import logging
import tempfile
import unittest
from pathlib import Path

from logger_config import level_from_name
from runtime_config import (DATA_ROOT_ENV, ConfigError, RuntimeConfig, deep_merge, load_config,
                            load_override_file, parse_address)
from twopc_protocol import SessionConfig


class TestLoading(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def _write(self, name, text):
        path = self.dir / name
        path.write_text(text, encoding='utf-8')
        return path

    def test_deep_merge(self):
        base = {'ot': {'mode': 'group', 'workers': 4}, 'paths': {'data_root': 'data'}}
        deep_merge(base, {'ot': {'workers': 8}, 'logging': {'level': 'DEBUG'}})
        self.assertEqual(base, {'ot': {'mode': 'group', 'workers': 8}, 'paths': {'data_root': 'data'},
                                'logging': {'level': 'DEBUG'}})

    def test_override_file(self):
        path = self._write('local.conf', "# surcharge locale\nprotocol.insecure_ot = true\n"
                                         "ot.workers=2\nprotocol.listen = 0.0.0.0:9000\n\n")
        self.assertEqual(load_override_file(path), {
            'protocol': {'insecure_ot': True, 'listen': '0.0.0.0:9000'},
            'ot': {'workers': 2},
        })

    def test_override_errors(self):
        with self.assertRaises(ConfigError):
            load_override_file(self.dir / 'absent.conf')
        with self.assertRaises(ConfigError) as ctx:
            load_override_file(self._write('bad.conf', "ot.workers=2\nsans egal\n"))
        self.assertIn(':2:', str(ctx.exception))
        with self.assertRaises(ConfigError):
            load_override_file(self._write('conflict.conf', "ot=1\not.workers=2\n"))

    def test_load_config_layers(self):
        config_path = self._write('config.json', json.dumps({'ot': {'mode': 'group', 'workers': 4}}))
        override = self._write('local.conf', "ot.workers=6\n")
        config = load_config(config_path, override, environ={DATA_ROOT_ENV: '/srv/donnees'})
        self.assertEqual(config['ot'], {'mode': 'group', 'workers': 6})
        self.assertEqual(config['paths']['data_root'], '/srv/donnees')

    def test_missing_and_invalid_json(self):
        self.assertEqual(load_config(self.dir / 'absent.json', environ={}), {})
        with self.assertRaises(ConfigError):
            load_config(self._write('config.json', '{invalide'), environ={})

    def test_repository_config_is_valid(self):
        config = load_config(Path(__file__).with_name('config.json'), environ={})
        self.assertEqual(RuntimeConfig(config).validate_config(), [])


class TestRuntimeConfig(unittest.TestCase):

    def test_defaults_and_sections(self):
        runtime = RuntimeConfig({'training': {'epochs': 3}})
        self.assertEqual(runtime.get_training_settings()['epochs'], 3)
        self.assertEqual(runtime.training_batch_size, 100)
        self.assertEqual(runtime.get_search_settings()['lambda'], 0.6)
        paths = runtime.get_paths()
        self.assertEqual(Path(paths['mnist_path']), Path('data') / 'mnist')

    def test_section_copies(self):
        runtime = RuntimeConfig({})
        runtime.get_ot_settings()['workers'] = 99
        self.assertEqual(runtime.get_ot_settings()['workers'], 4)

    def test_unknown_key_is_ignored(self):
        with self.assertLogs('runtime_config', level='WARNING'):
            runtime = RuntimeConfig({'ot': {'colour': 'bleu'}})
        self.assertNotIn('colour', runtime.get_ot_settings())

    def test_section_must_be_object(self):
        with self.assertRaises(ConfigError):
            RuntimeConfig({'ot': 'group'})

    def test_validation_errors(self):
        runtime = RuntimeConfig({
            'training': {'batch_size': 0, 'optimizer': 'rmsprop'},
            'ot': {'mode': 'plaintext'},
            'protocol': {'listen': 'localhost', 'max_sessions': 0},
            'search': {'lambda': 1.5, 'measure_shape': [8, 8], 'measure_kernels': 0},
            'garbling': {'label_bytes': 32},
            'logging': {'level': 'bavard'},
        })
        errors = runtime.validate_config()
        for fragment in ('training.batch_size', 'training.optimizer', 'ot.mode', 'protocol.listen',
                         'protocol.max_sessions', 'search.lambda', 'garbling.label_bytes',
                         'search.measure_shape', 'search.measure_kernels', 'logging.level'):
            self.assertTrue(any(fragment in error for error in errors), fragment)

    def test_level_names(self):
        self.assertEqual(level_from_name('debug'), logging.DEBUG)
        self.assertEqual(level_from_name('WARNING'), logging.WARNING)
        self.assertIsNone(level_from_name('bavard'))
        self.assertIsNone(level_from_name('Level 5'))

    def test_reload(self):
        runtime = RuntimeConfig({})
        runtime.reload_from_config({'ot': {'workers': 2}})
        self.assertEqual(runtime.ot_workers, 2)


class TestAddresses(unittest.TestCase):

    def test_parse(self):
        self.assertEqual(parse_address('127.0.0.1:7766'), ('127.0.0.1', 7766))
        self.assertEqual(parse_address(':9000'), ('127.0.0.1', 9000))
        for bad in ('localhost', 'hote:port', 'hote:70000', 7766):
            with self.assertRaises(ConfigError):
                parse_address(bad)

    def test_session_config_from_runtime(self):
        runtime = RuntimeConfig({'protocol': {'connect': '10.0.0.2:8000', 'insecure_ot': True},
                                 'ot': {'mode': 'simulated'}})
        config = SessionConfig.from_runtime(runtime, 'client', architecture='m1', netlist_hash=None)
        self.assertEqual(config.address, ('10.0.0.2', 8000))
        self.assertEqual((config.ot_mode, config.insecure_ot, config.architecture), ('simulated', True, 'm1'))
        self.assertIsNone(config.netlist_hash)
        server = SessionConfig.from_runtime(runtime, 'server', address='0.0.0.0:0')
        self.assertEqual(server.address, ('0.0.0.0', 0))


if __name__ == '__main__':
    unittest.main()
