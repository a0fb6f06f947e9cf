#!/usr/bin/env python3
"""
Configuration centralisée de terngc.
Charge config.json, applique les surcharges clé=valeur et l'environnement,
puis expose toutes les constantes réglables avec leurs valeurs par défaut.
"""

import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from logger_config import level_from_name

DATA_ROOT_ENV = 'TERNGC_DATA_ROOT'


class ConfigError(ValueError):
    """Configuration illisible ou invalide."""


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Fusionne récursivement override dans base (override écrase base)."""
    for key, value in override.items():
        if key in base and isinstance(base[key], dict) and isinstance(value, dict):
            deep_merge(base[key], value)
        else:
            base[key] = value
    return base


def _parse_scalar(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_override_file(path) -> Dict[str, Any]:
    """
    Lit un fichier clé=valeur (`section.cle=valeur`, commentaires `#`).
    Les valeurs sont interprétées comme des scalaires JSON quand c'est possible.
    """
    config_file = Path(path)
    if not config_file.exists():
        raise ConfigError(f"Fichier de configuration non trouvé: {path}")

    overrides: Dict[str, Any] = {}
    with open(config_file, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' not in line:
                raise ConfigError(f"{path}:{line_number}: ligne sans '=': {line}")
            key, raw_value = (part.strip() for part in line.split('=', 1))
            if not key:
                raise ConfigError(f"{path}:{line_number}: clé vide")
            node = overrides
            parts = key.split('.')
            for part in parts[:-1]:
                node = node.setdefault(part, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"{path}:{line_number}: clé en conflit: {key}")
            node[parts[-1]] = _parse_scalar(raw_value)
    return overrides


def load_config(config_path='config.json', override_path: Optional[str] = None,
                environ: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    """Charge la configuration publique puis applique les surcharges."""
    config: Dict[str, Any] = {}
    config_file = Path(config_path)
    if config_file.exists():
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config.json invalide ({config_path}): {e}")

    if override_path:
        deep_merge(config, load_override_file(override_path))

    environ = os.environ if environ is None else environ
    if environ.get(DATA_ROOT_ENV):
        config.setdefault('paths', {})['data_root'] = environ[DATA_ROOT_ENV]

    return config


class RuntimeConfig:
    """
    Gestionnaire centralisé des paramètres réglables.
    Chaque valeur par défaut peut être surchargée par section dans la config.
    """

    defaults = {
        'paths': {
            'data_root': 'data',
            'mnist_dir': 'mnist',
            'cifar_dir': 'cifar-10-batches-bin',
            'output_dir': 'output',
            'log_dir': 'logs',
        },
        'training': {
            'epochs': 30,                   # Époques d'entraînement
            'batch_size': 100,              # Taille de batch
            'learning_rate': 1e-3,          # Pas de l'optimiseur
            'optimizer': 'adam',            # adam | sgd
            'seed': 0,                      # Graine (fixe tous les tirages)
            'dataset': 'mnist',             # mnist | cifar10
            'scaling_factor': 1.0,          # Facteur d'échelle de l'architecture
            'weight_mode': 'ternary',       # ternary | binary
            'validation_size': 5000,        # Dernières images d'entraînement réservées
            'num_threads': 1,               # Threads torch (reproductibilité)
        },
        'garbling': {
            'label_bytes': 16,              # Taille d'un label de fil
        },
        'ot': {
            'mode': 'group',                # group | simulated
            'workers': 4,                   # Threads pour les opérations de groupe
            'chunk_size': 2048,             # Instances par tâche
        },
        'protocol': {
            'listen': '127.0.0.1:7766',
            'connect': '127.0.0.1:7766',
            'connect_timeout': 30,          # Timeout connexion (s)
            'retry_delay': 2,               # Délai entre tentatives (s)
            'max_connect_attempts': 3,      # Tentatives avant abandon
            'io_timeout': 300,              # Timeout lecture/écriture (s)
            'max_sessions': 1,              # Sessions simultanées côté serveur
            'insecure_ot': False,           # Autorise le mode OT simulé
        },
        'circuit_cache': {
            'cache_size': 8,                # Circuits compilés gardés en mémoire
        },
        'search': {
            'dataset': 'mnist',
            'cells': 1,
            'lambda': 0.6,
            'budget_epochs': 10,
            'seed': 0,
            'scaling_factor': 3.0,
            'alpha_learning_rate': 3e-3,
            'budget_seconds': 0,            # Limite de temps (0 = aucune)
            'retrain_epochs': 30,
            'cost_table': '',               # Table de coûts JSON (vide = mesurée)
            'measure_shape': [8, 8, 4],     # Forme de mesure quand aucune table n'est fournie
            'measure_kernels': 4,
            'checkpoint_file': 'search_checkpoint.json',
            'checkpoint_backup_file': 'search_checkpoint_backup.json',
        },
        'logging': {
            'level': 'INFO',
        },
    }

    def __init__(self, config: Dict[str, Any]):
        self.config = config
        self.logger = logging.getLogger(__name__)
        self.values: Dict[str, Dict[str, Any]] = {}
        self._load_from_config()

    def _load_from_config(self):
        """Charge les valeurs depuis la configuration principale."""
        self.values = copy.deepcopy(self.defaults)
        for section, section_defaults in self.defaults.items():
            section_config = self.config.get(section, {}) or {}
            if not isinstance(section_config, dict):
                raise ConfigError(f"Section {section} doit être un objet")
            for key in section_config:
                if key not in section_defaults:
                    self.logger.warning(f"Clé de configuration inconnue ignorée: {section}.{key}")
            for key, default_value in section_defaults.items():
                value = section_config.get(key, default_value)
                self.values[section][key] = value
                setattr(self, f'{section}_{key}', value)

    def section(self, name: str) -> Dict[str, Any]:
        return dict(self.values[name])

    def get_paths(self) -> Dict[str, Any]:
        """Retourne les chemins résolus (racine des données incluse)."""
        paths = self.section('paths')
        root = Path(paths['data_root'])
        paths['mnist_path'] = str(root / paths['mnist_dir'])
        paths['cifar_path'] = str(root / paths['cifar_dir'])
        return paths

    def get_training_settings(self) -> Dict[str, Any]:
        return self.section('training')

    def get_garbling_settings(self) -> Dict[str, Any]:
        return self.section('garbling')

    def get_ot_settings(self) -> Dict[str, Any]:
        return self.section('ot')

    def get_protocol_settings(self) -> Dict[str, Any]:
        return self.section('protocol')

    def get_search_settings(self) -> Dict[str, Any]:
        return self.section('search')

    def reload_from_config(self, new_config: Dict[str, Any]):
        """Recharge la configuration depuis un nouveau dict."""
        self.config = new_config
        self._load_from_config()
        self.logger.info("Configuration rechargée")

    def validate_config(self) -> List[str]:
        """Valide la configuration et retourne les erreurs trouvées."""
        errors = []
        training = self.values['training']

        for key in ('epochs', 'batch_size', 'validation_size', 'num_threads'):
            if not isinstance(training[key], int) or training[key] < 0:
                errors.append(f"training.{key} doit être un entier >= 0")
        if training['batch_size'] == 0:
            errors.append("training.batch_size doit être > 0")
        if not _positive_number(training['learning_rate']):
            errors.append("training.learning_rate doit être > 0")
        if not _positive_number(training['scaling_factor']):
            errors.append("training.scaling_factor doit être > 0")
        if training['optimizer'] not in ('adam', 'sgd'):
            errors.append("training.optimizer doit être 'adam' ou 'sgd'")
        if training['dataset'] not in ('mnist', 'cifar10'):
            errors.append("training.dataset doit être 'mnist' ou 'cifar10'")
        if training['weight_mode'] not in ('ternary', 'binary'):
            errors.append("training.weight_mode doit être 'ternary' ou 'binary'")

        if self.values['garbling']['label_bytes'] != 16:
            errors.append("garbling.label_bytes: seuls les labels de 16 octets sont supportés")

        ot = self.values['ot']
        if ot['mode'] not in ('group', 'simulated'):
            errors.append("ot.mode doit être 'group' ou 'simulated'")
        if not isinstance(ot['workers'], int) or ot['workers'] < 1:
            errors.append("ot.workers doit être >= 1")
        if not isinstance(ot['chunk_size'], int) or ot['chunk_size'] < 1:
            errors.append("ot.chunk_size doit être >= 1")

        protocol = self.values['protocol']
        for key in ('listen', 'connect'):
            try:
                parse_address(protocol[key])
            except ConfigError as e:
                errors.append(f"protocol.{key}: {e}")
        for key in ('connect_timeout', 'io_timeout'):
            if not _positive_number(protocol[key]):
                errors.append(f"protocol.{key} doit être > 0")
        if not isinstance(protocol['max_sessions'], int) or protocol['max_sessions'] < 1:
            errors.append("protocol.max_sessions doit être >= 1")

        search = self.values['search']
        if not isinstance(search['lambda'], (int, float)) or not 0.0 <= search['lambda'] <= 1.0:
            errors.append("search.lambda doit être entre 0 et 1")
        if not isinstance(search['cells'], int) or search['cells'] < 1:
            errors.append("search.cells doit être >= 1")
        if search['dataset'] not in ('mnist', 'cifar10'):
            errors.append("search.dataset doit être 'mnist' ou 'cifar10'")
        if not isinstance(search['budget_seconds'], (int, float)) or search['budget_seconds'] < 0:
            errors.append("search.budget_seconds doit être >= 0")
        if not isinstance(search['cost_table'], str):
            errors.append("search.cost_table doit être un chemin (vide = mesure)")
        shape = search['measure_shape']
        if (not isinstance(shape, (list, tuple)) or len(shape) != 3
                or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in shape)):
            errors.append("search.measure_shape doit être [H, W, C] entiers >= 1")
        if not isinstance(search['measure_kernels'], int) or search['measure_kernels'] < 1:
            errors.append("search.measure_kernels doit être >= 1")

        if level_from_name(self.values['logging']['level']) is None:
            errors.append("logging.level inconnu")

        return errors

    def __str__(self) -> str:
        count = sum(len(section) for section in self.defaults.values())
        return f"RuntimeConfig({count} settings)"


def _positive_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0


def parse_address(address: str):
    """Découpe 'hote:port' en (hote, port)."""
    if not isinstance(address, str) or ':' not in address:
        raise ConfigError(f"adresse invalide (hote:port attendu): {address!r}")
    host, _, port_text = address.rpartition(':')
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigError(f"port invalide: {address!r}")
    if not 0 <= port <= 65535:
        raise ConfigError(f"port hors limites: {address!r}")
    return host or '127.0.0.1', port
