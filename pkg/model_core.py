#!/usr/bin/env python3
"""
Types du domaine pour les modèles ternaires et inférence de référence en clair.
Poids dans {-1, 0, +1}, activations binaires codées en bits {0, 1} (bit b <=> 2b-1).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

# Seuil de ternarisation : Δ = DELTA_FACTOR / n * Σ|w|
DELTA_FACTOR = 0.7

# Intensité maximale d'un pixel 8 bits ; binarisation à 50 %
MAX_PIXEL_INTENSITY = 255
INPUT_BINARIZATION_RATIO = 0.5


class ShapeError(ValueError):
    """Formes incompatibles entre couches, poids ou entrées."""


class QuantizationError(ValueError):
    """Tenseur impossible à quantifier (vide, non fini)."""


class LayerKind(str, Enum):
    CONV1x1 = 'CONV1x1'
    CONV3x3 = 'CONV3x3'
    CONV5x5 = 'CONV5x5'
    FC = 'FC'
    MAXPOOL2x2 = 'MAXPOOL2x2'
    IDENTITY = 'IDENTITY'

    @property
    def is_conv(self) -> bool:
        return self in CONV_KERNEL_SIZES

    @property
    def has_weights(self) -> bool:
        return self.is_conv or self is LayerKind.FC


CONV_KERNEL_SIZES = {
    LayerKind.CONV1x1: 1,
    LayerKind.CONV3x3: 3,
    LayerKind.CONV5x5: 5,
}


@dataclass(frozen=True, eq=False)
class TernaryTensor:
    """Paramètres ternaires avec leur forme."""
    shape: Tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.int8).reshape(-1)
        shape = tuple(int(d) for d in self.shape)
        if int(np.prod(shape, dtype=np.int64)) != values.size:
            raise ShapeError(f"forme {shape} incompatible avec {values.size} éléments")
        if values.size and not np.isin(values, (-1, 0, 1)).all():
            raise QuantizationError("un tenseur ternaire ne contient que -1, 0 et +1")
        values.flags.writeable = False
        object.__setattr__(self, 'shape', shape)
        object.__setattr__(self, 'values', values)

    @property
    def size(self) -> int:
        return int(self.values.size)

    def array(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass(frozen=True, eq=False)
class BinaryTensor:
    """Activations binaires ; le bit b code la valeur 2b-1."""
    shape: Tuple[int, ...]
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits).reshape(-1)
        shape = tuple(int(d) for d in self.shape)
        if int(np.prod(shape, dtype=np.int64)) != bits.size:
            raise ShapeError(f"forme {shape} incompatible avec {bits.size} bits")
        if bits.size and not np.isin(bits, (0, 1)).all():
            raise QuantizationError("un tenseur binaire ne contient que 0 et 1")
        bits = bits.astype(np.uint8)
        bits.flags.writeable = False
        object.__setattr__(self, 'shape', shape)
        object.__setattr__(self, 'bits', bits)

    def array(self) -> np.ndarray:
        return self.bits.reshape(self.shape)

    def signs(self) -> np.ndarray:
        return self.bits.astype(np.int32) * 2 - 1


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    kernels_or_nodes: Optional[int] = None
    padding: int = 0
    stride: int = 1

    def __post_init__(self):
        kind = LayerKind(self.kind)
        object.__setattr__(self, 'kind', kind)
        if kind.has_weights:
            if not isinstance(self.kernels_or_nodes, int) or self.kernels_or_nodes < 1:
                raise ShapeError(f"{kind.value}: nombre de noyaux/neurones positif requis")
        elif self.kernels_or_nodes is not None:
            raise ShapeError(f"{kind.value}: pas de nombre de noyaux/neurones")
        if kind.is_conv:
            if self.padding < 0 or self.stride < 1:
                raise ShapeError(f"{kind.value}: padding >= 0 et stride >= 1 requis")
        elif self.padding != 0 or self.stride != 1:
            raise ShapeError(f"{kind.value}: padding/stride réservés aux convolutions")

    @property
    def kernel_size(self) -> int:
        return CONV_KERNEL_SIZES[self.kind]

    def scaled(self, factor: float) -> 'LayerSpec':
        if not self.kind.has_weights:
            return self
        return LayerSpec(self.kind, scale_count(self.kernels_or_nodes, factor),
                         self.padding, self.stride)

    def describe(self) -> str:
        if self.kernels_or_nodes is None:
            return self.kind.value
        return f"{self.kind.value} {self.kernels_or_nodes}"


def scale_count(count: int, factor: float) -> int:
    """Arrondi au plus proche (demi vers le haut), minimum 1."""
    return max(1, int(math.floor(count * factor + 0.5)))


@dataclass(frozen=True)
class Architecture:
    """
    Description ordonnée des couches. `layers` garde les effectifs de base ;
    effective_layers() applique le facteur d'échelle à toutes les couches
    à poids sauf la dernière (qui garde le nombre de classes).
    """
    name: str
    layers: Tuple[LayerSpec, ...]
    scaling_factor: float = 1.0
    input_shape: Tuple[int, int, int] = (28, 28, 1)
    num_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, 'layers', tuple(self.layers))
        object.__setattr__(self, 'input_shape', tuple(int(d) for d in self.input_shape))
        if not self.scaling_factor > 0:
            raise ShapeError("le facteur d'échelle doit être > 0")
        if not self.layers:
            raise ShapeError(f"{self.name}: architecture vide")
        last = self.layers[-1]
        if last.kind is not LayerKind.FC or last.kernels_or_nodes != self.num_classes:
            raise ShapeError(f"{self.name}: la dernière couche doit être FC {self.num_classes}")
        # Vérifie la compatibilité des formes successives
        infer_shapes(self)

    def effective_layers(self) -> List[LayerSpec]:
        last = len(self.layers) - 1
        return [layer if i == last else layer.scaled(self.scaling_factor)
                for i, layer in enumerate(self.layers)]

    def describe(self) -> str:
        body = ', '.join(layer.describe() for layer in self.effective_layers())
        return f"{self.name}@{self.scaling_factor:g} [{body}]"


def infer_shapes(arch: Architecture) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """Retourne (forme d'entrée, forme de sortie) pour chaque couche effective."""
    shapes = []
    shape: Tuple[int, ...] = arch.input_shape
    for index, layer in enumerate(arch.effective_layers()):
        in_shape = shape
        if layer.kind.is_conv:
            if len(shape) != 3:
                raise ShapeError(f"couche {index}: convolution après une couche FC")
            h, w, _ = shape
            k = layer.kernel_size
            out_h = (h + 2 * layer.padding - k) // layer.stride + 1
            out_w = (w + 2 * layer.padding - k) // layer.stride + 1
            if out_h < 1 or out_w < 1:
                raise ShapeError(f"couche {index}: entrée {shape} trop petite pour {layer.kind.value}")
            shape = (out_h, out_w, layer.kernels_or_nodes)
        elif layer.kind is LayerKind.MAXPOOL2x2:
            if len(shape) != 3 or shape[0] < 2 or shape[1] < 2:
                raise ShapeError(f"couche {index}: MAXPOOL2x2 sur une forme {shape}")
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif layer.kind is LayerKind.FC:
            shape = (layer.kernels_or_nodes,)
        shapes.append((in_shape, shape))
    return shapes


def weight_shape(layer: LayerSpec, in_shape: Tuple[int, ...]) -> Optional[Tuple[int, ...]]:
    """Forme des poids d'une couche effective : (K, k, k, C) ou (nœuds, entrées)."""
    if layer.kind.is_conv:
        k = layer.kernel_size
        return (layer.kernels_or_nodes, k, k, in_shape[2])
    if layer.kind is LayerKind.FC:
        return (layer.kernels_or_nodes, int(np.prod(in_shape)))
    return None


def scale_architecture(arch: Architecture, factor: float) -> Architecture:
    """Multiplie les effectifs par `factor` (cumulatif avec le facteur existant)."""
    if not isinstance(factor, (int, float)) or not factor > 0:
        raise ShapeError(f"facteur d'échelle invalide: {factor}")
    return Architecture(arch.name, arch.layers, arch.scaling_factor * factor,
                        arch.input_shape, arch.num_classes)


def count_params(arch: Architecture) -> int:
    """Nombre de poids (aucun biais n'existe)."""
    total = 0
    for layer, (in_shape, _) in zip(arch.effective_layers(), infer_shapes(arch)):
        shape = weight_shape(layer, in_shape)
        if shape is not None:
            total += int(np.prod(shape))
    return total


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Poids ternaires par couche (None sans poids) et seuils entiers par neurone."""
    arch: Architecture
    weights: Tuple[Optional[TernaryTensor], ...]
    thresholds: Tuple[Optional[np.ndarray], ...] = field(default=())

    def __post_init__(self):
        layers = self.arch.effective_layers()
        weights = tuple(self.weights)
        if len(weights) != len(layers):
            raise ShapeError(f"{len(weights)} tenseurs de poids pour {len(layers)} couches")
        thresholds = tuple(self.thresholds) if self.thresholds else (None,) * len(layers)
        if len(thresholds) != len(layers):
            raise ShapeError("un tableau de seuils par couche est requis")

        normalized = []
        for index, (layer, (in_shape, _), tensor, theta) in enumerate(
                zip(layers, infer_shapes(self.arch), weights, thresholds)):
            expected = weight_shape(layer, in_shape)
            if expected is None:
                if tensor is not None:
                    raise ShapeError(f"couche {index} ({layer.kind.value}) sans poids")
                normalized.append(None)
                continue
            if tensor is None or tensor.shape != expected:
                got = None if tensor is None else tensor.shape
                raise ShapeError(f"couche {index}: poids {got}, attendu {expected}")
            if theta is None:
                theta = np.zeros(expected[0], dtype=np.int32)
            theta = np.asarray(theta, dtype=np.int32).reshape(-1)
            if theta.size != expected[0]:
                raise ShapeError(f"couche {index}: {theta.size} seuils pour {expected[0]} neurones")
            theta.flags.writeable = False
            normalized.append(theta)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'thresholds', tuple(normalized))

    def all_weights(self) -> np.ndarray:
        parts = [t.values for t in self.weights if t is not None]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int8)

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.all_weights()))


def ternarize(weights) -> TernaryTensor:
    """
    Quantifie un tenseur réel en {-1, 0, +1} avec Δ = 0.7/n Σ|w| (par couche).
    Strictement supérieur à Δ => +1, strictement inférieur à -Δ => -1.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise QuantizationError("impossible de ternariser un tenseur vide")
    if not np.isfinite(w).all():
        raise QuantizationError("poids non finis")
    delta = DELTA_FACTOR / w.size * np.abs(w).sum()
    out = np.zeros(w.shape, dtype=np.int8)
    out[w > delta] = 1
    out[w < -delta] = -1
    return TernaryTensor(w.shape, out)


def ternary_delta(weights) -> float:
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise QuantizationError("tenseur vide")
    return float(DELTA_FACTOR / w.size * np.abs(w).sum())


def binarize_weights(weights) -> TernaryTensor:
    """Variante binaire (BNN) : signe, zéro => +1 ; aucun poids nul."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise QuantizationError("impossible de binariser un tenseur vide")
    return TernaryTensor(w.shape, np.where(w >= 0, 1, -1).astype(np.int8))


def binarize(pre_activations) -> BinaryTensor:
    """bit = 1 ssi valeur >= 0 (zéro => +1)."""
    v = np.asarray(pre_activations)
    return BinaryTensor(v.shape, (v >= 0).astype(np.uint8))


def binarize_input(pixels) -> BinaryTensor:
    """
    Binarise une image 8 bits au seuil fixe de 50 % de 255, par canal.
    Accepte (H, W) ou (H, W, C) ; la sortie est toujours HWC.
    """
    p = np.asarray(pixels)
    if p.ndim == 2:
        p = p[:, :, None]
    if p.ndim != 3:
        raise ShapeError(f"image HW ou HWC attendue, forme {p.shape}")
    bits = (p.astype(np.float64) >= INPUT_BINARIZATION_RATIO * MAX_PIXEL_INTENSITY)
    return BinaryTensor(p.shape, bits.astype(np.uint8))


def xnor_popcount_dot(x: BinaryTensor, w) -> int:
    """
    Produit scalaire ±1 via 2·popcount(xnor(x', w')) − N_eff, où x', w' sont
    restreints aux poids non nuls et le bit de w' code le signe (1 => +1).
    """
    x_bits = x.bits if isinstance(x, BinaryTensor) else np.asarray(x, dtype=np.uint8).reshape(-1)
    w_values = w.values if isinstance(w, TernaryTensor) else np.asarray(w, dtype=np.int8).reshape(-1)
    if x_bits.size != w_values.size:
        raise ShapeError(f"longueurs différentes: {x_bits.size} bits, {w_values.size} poids")
    mask = w_values != 0
    n_eff = int(mask.sum())
    x_eff = x_bits[mask].astype(bool)
    w_eff = w_values[mask] > 0
    popcount = int(np.count_nonzero(~(x_eff ^ w_eff)))
    return 2 * popcount - n_eff


def _conv_dot(signs: np.ndarray, kernel: np.ndarray, padding: int, stride: int) -> np.ndarray:
    """Convolution entière ; les positions de padding valent 0 (aucune contribution)."""
    h, w, c = signs.shape
    k_out, k, _, _ = kernel.shape
    padded = np.zeros((h + 2 * padding, w + 2 * padding, c), dtype=np.int32)
    padded[padding:padding + h, padding:padding + w, :] = signs
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    # windows: (H', W', C, k, k) -> échantillonnage selon le stride
    windows = windows[::stride, ::stride][:out_h, :out_w]
    patches = windows.transpose(0, 1, 3, 4, 2).reshape(out_h * out_w, k * k * c)
    flat_kernel = kernel.reshape(k_out, k * k * c).astype(np.int32)
    return (patches @ flat_kernel.T).reshape(out_h, out_w, k_out)


def layer_pre_activations(layer: LayerSpec, weights: TernaryTensor, inputs: BinaryTensor) -> np.ndarray:
    """Produits scalaires entiers d'une couche CONV/FC."""
    signs = inputs.signs()
    kernel = weights.array()
    if layer.kind is LayerKind.FC:
        if kernel.shape[1] != signs.size:
            raise ShapeError(f"FC: {signs.size} entrées pour des poids {kernel.shape}")
        return kernel.astype(np.int32) @ signs
    if len(inputs.shape) != 3 or inputs.shape[2] != kernel.shape[3]:
        raise ShapeError(f"{layer.kind.value}: entrée {inputs.shape} pour des poids {kernel.shape}")
    return _conv_dot(signs.reshape(inputs.shape), kernel, layer.padding, layer.stride)


def maxpool_bits(inputs: BinaryTensor) -> BinaryTensor:
    """OU sur chaque fenêtre 2x2 (équivaut au max sur {0, 1})."""
    if len(inputs.shape) != 3:
        raise ShapeError(f"MAXPOOL2x2: entrée HWC attendue, forme {inputs.shape}")
    h, w, c = inputs.shape
    oh, ow = h // 2, w // 2
    x = inputs.array()[:oh * 2, :ow * 2, :].reshape(oh, 2, ow, 2, c)
    return BinaryTensor((oh, ow, c), x.max(axis=(1, 3)))


def forward_layer(layer: LayerSpec, weights: Optional[TernaryTensor], thresholds,
                  inputs: BinaryTensor, final: bool = False):
    """
    Applique une couche. CONV/FC : produit XNOR-popcount puis comparaison au
    seuil entier du neurone (bit = dot >= seuil) ; la couche finale retourne
    les scores entiers. MAXPOOL2x2 : OU par fenêtre. IDENTITY : inchangé.
    """
    if layer.kind is LayerKind.IDENTITY:
        return inputs
    if layer.kind is LayerKind.MAXPOOL2x2:
        return maxpool_bits(inputs)
    if weights is None:
        raise ShapeError(f"{layer.kind.value}: poids manquants")
    pre = layer_pre_activations(layer, weights, inputs)
    if final:
        return pre.astype(np.int64)
    theta = np.zeros(pre.shape[-1], dtype=np.int32) if thresholds is None else np.asarray(thresholds)
    return binarize(pre - theta)


def forward(params: ModelParams, image_bits: BinaryTensor) -> np.ndarray:
    """Passe avant complète ; retourne les scores entiers de la dernière couche."""
    if tuple(image_bits.shape) != params.arch.input_shape:
        raise ShapeError(f"image {image_bits.shape}, attendu {params.arch.input_shape}")
    layers = params.arch.effective_layers()
    activation = image_bits
    last = len(layers) - 1
    for index, layer in enumerate(layers):
        activation = forward_layer(layer, params.weights[index], params.thresholds[index],
                                   activation, final=(index == last))
    return activation


def predict(arch: Architecture, params: ModelParams, image_bits: BinaryTensor) -> Tuple[int, np.ndarray]:
    """Classe prédite (argmax, égalité => plus petit indice) et scores entiers."""
    if params.arch != arch:
        raise ShapeError(f"paramètres pour {params.arch.name}, architecture {arch.name}")
    scores = forward(params, image_bits)
    return int(np.argmax(scores)), scores


def random_params(arch: Architecture, rng: np.random.Generator,
                  sparsity: float = 1.0 / 3.0) -> ModelParams:
    """Paramètres ternaires aléatoires (fraction `sparsity` de zéros attendue)."""
    weights = []
    for layer, (in_shape, _) in zip(arch.effective_layers(), infer_shapes(arch)):
        shape = weight_shape(layer, in_shape)
        if shape is None:
            weights.append(None)
            continue
        signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=shape)
        zeros = rng.random(shape) < sparsity
        weights.append(TernaryTensor(shape, np.where(zeros, 0, signs)))
    return ModelParams(arch, tuple(weights))


def sparsity(params) -> float:
    """Fraction de poids nuls."""
    values = params.all_weights() if isinstance(params, ModelParams) else \
        np.concatenate([np.asarray(t.values if isinstance(t, TernaryTensor) else t).reshape(-1)
                        for t in _as_sequence(params)])
    if values.size == 0:
        return 0.0
    return float(np.count_nonzero(values == 0)) / float(values.size)


def _as_sequence(params) -> Sequence:
    if isinstance(params, (TernaryTensor, np.ndarray)):
        return [params]
    return [p for p in params if p is not None]
