#!/usr/bin/env python3
"""
Zoo de modèles : architectures m1-m6 des travaux antérieurs et modèles
trouvés par la recherche d'architecture régularisée.
"""

from typing import Dict, List, Optional

from model_core import Architecture, LayerKind, LayerSpec, ShapeError, scale_architecture

MNIST_SHAPE = (28, 28, 1)
CIFAR_SHAPE = (32, 32, 3)


def _conv3(kernels):
    return LayerSpec(LayerKind.CONV3x3, kernels, padding=1)


def _conv5(kernels, padding=0, stride=1):
    return LayerSpec(LayerKind.CONV5x5, kernels, padding=padding, stride=stride)


def _conv1(kernels):
    return LayerSpec(LayerKind.CONV1x1, kernels)


def _fc(nodes):
    return LayerSpec(LayerKind.FC, nodes)


POOL = LayerSpec(LayerKind.MAXPOOL2x2)

_ZOO = {
    'm1': Architecture('m1', (_fc(128), _fc(128), _fc(10)), 1.0, MNIST_SHAPE),
    'm2': Architecture('m2', (_conv5(5, padding=1, stride=2), _fc(100), _fc(10)), 1.0, MNIST_SHAPE),
    'm3': Architecture('m3', (_conv5(16), POOL, _conv5(16), POOL, _fc(100), _fc(10)),
                       1.0, MNIST_SHAPE),
    'm4': Architecture('m4', (_conv3(64), _conv3(64), POOL, _conv3(64), _conv3(64), POOL,
                              _conv3(64), _conv1(64), _conv1(16), _fc(10)),
                       1.0, CIFAR_SHAPE),
    'm5': Architecture('m5', (_conv3(16), _conv3(16), _conv3(16), POOL,
                              _conv3(32), _conv3(32), _conv3(32), POOL,
                              _conv3(48), _conv3(48), _conv3(64), POOL, _fc(10)),
                       1.0, CIFAR_SHAPE),
    'm6': Architecture('m6', (_conv3(16), _conv3(32), _conv3(32), POOL,
                              _conv3(48), _conv3(64), _conv3(80), POOL,
                              _conv3(96), _conv3(96), _conv3(128), POOL, _fc(10)),
                       1.0, CIFAR_SHAPE),
    # Modèles trouvés par la recherche (1 cellule de 4 opérations pour MNIST)
    'mnist-search-l0': Architecture(
        'mnist-search-l0',
        (_conv5(16, padding=2), _conv5(16, padding=2), _conv5(16, padding=2),
         _conv5(16, padding=2), _fc(100), _fc(10)),
        1.0, MNIST_SHAPE),
    'mnist-search-l06': Architecture(
        'mnist-search-l06',
        (_conv3(16), _conv3(16), POOL, _conv5(16, padding=2), _fc(100), _fc(10)),
        1.0, MNIST_SHAPE),
    # 3 cellules de 4 opérations pour CIFAR10
    'cifar-search-l0': Architecture(
        'cifar-search-l0',
        (_conv5(16, padding=2), POOL, _conv5(16, padding=2), _conv5(16, padding=2),
         _conv5(32, padding=2), POOL, _conv5(32, padding=2), _conv5(32, padding=2),
         _conv5(64, padding=2), POOL, _conv5(64, padding=2), _conv5(64, padding=2), _fc(10)),
        1.0, CIFAR_SHAPE),
    'cifar-search-l06': Architecture(
        'cifar-search-l06',
        (_conv3(16), _conv3(16), _conv3(16), POOL,
         _conv3(32), _conv3(32), _conv3(32), POOL,
         _conv3(64), _conv3(64), _conv3(64), POOL, _fc(10)),
        1.0, CIFAR_SHAPE),
}

# Facteurs d'échelle des comparaisons de bout en bout
REFERENCE_SCALES = {
    'm1': 1.75, 'm2': 4.0, 'm3': 2.0, 'm4': 2.0, 'm5': 3.0, 'm6': 2.0,
    'mnist-search-l0': 3.0, 'mnist-search-l06': 3.0,
    'cifar-search-l0': 3.0, 'cifar-search-l06': 3.0,
}

_registered: Dict[str, Architecture] = {}


def list_architectures() -> List[str]:
    return list(_ZOO) + [name for name in _registered if name not in _ZOO]


def register_architecture(arch: Architecture):
    """Ajoute une architecture (par exemple issue d'un fichier de recherche)."""
    _registered[arch.name] = Architecture(arch.name, arch.layers, 1.0,
                                          arch.input_shape, arch.num_classes)


def get_architecture(name: str, scale: Optional[float] = None) -> Architecture:
    """Retourne l'architecture `name` au facteur d'échelle `scale` (1.0 par défaut)."""
    base = _registered.get(name) or _ZOO.get(name)
    if base is None:
        raise ShapeError(f"architecture inconnue: {name} (connues: {', '.join(list_architectures())})")
    if scale is None or scale == 1.0:
        return base
    return scale_architecture(base, scale)


def dataset_for(arch: Architecture) -> str:
    return 'cifar10' if tuple(arch.input_shape) == CIFAR_SHAPE else 'mnist'
