#!/usr/bin/env python3
"""
Entraînement de modèles à poids ternaires et activations binaires.

Passe avant : ternarize(latent) pour les poids, signe pour les activations.
Passe arrière (estimateur straight-through) : identité pour les poids tant que
|latent| <= 1, fenêtre hard-tanh pour les activations. Les pré-activations sont
divisées par sqrt(fan-in) avant la fenêtre et avant l'entropie croisée ; ce
facteur positif ne change ni les signes ni l'argmax, le modèle exporté garde
donc exactement la sémantique du circuit.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import autograd, nn

from datasets import Dataset, DatasetError
from model_core import (DELTA_FACTOR, Architecture, LayerKind, LayerSpec, ModelParams, ShapeError,
                        TernaryTensor, infer_shapes, scale_architecture, sparsity, weight_shape)
from runtime_config import RuntimeConfig

logger = logging.getLogger(__name__)
training_log = logging.getLogger('training_log')

__all__ = ['TrainConfig', 'LatentModel', 'TrainingDivergedError', 'train', 'evaluate',
           'sparsity', 'scaling_sweep']


class TrainingDivergedError(RuntimeError):
    """La perte est devenue non finie."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"entraînement divergent à l'époque {epoch} (perte {loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 100
    learning_rate: float = 1e-3
    optimizer: str = 'adam'
    seed: int = 0
    dataset: str = 'mnist'
    scaling_factor: float = 1.0
    weight_mode: str = 'ternary'
    validation_size: int = 5000
    num_threads: int = 1

    def __post_init__(self):
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ValueError("epochs doit être un entier >= 0")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ValueError("batch_size doit être un entier > 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate doit être > 0")
        if not self.scaling_factor > 0:
            raise ValueError("scaling_factor doit être > 0")
        if self.optimizer not in ('adam', 'sgd'):
            raise ValueError(f"optimiseur inconnu: {self.optimizer}")
        if self.weight_mode not in ('ternary', 'binary'):
            raise ValueError(f"mode de poids inconnu: {self.weight_mode}")
        if self.validation_size < 0 or self.num_threads < 1:
            raise ValueError("validation_size >= 0 et num_threads >= 1 requis")

    @classmethod
    def from_runtime(cls, runtime: RuntimeConfig, **overrides) -> 'TrainConfig':
        values = runtime.get_training_settings()
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


# Estimateurs straight-through

class TernarizeSTE(autograd.Function):
    """{-1, 0, +1} avec Δ = 0.7·mean|w| ; gradient identité dans |w| <= 1."""

    @staticmethod
    def forward(ctx, weight):
        ctx.save_for_backward(weight)
        delta = DELTA_FACTOR * weight.abs().mean()
        return (weight > delta).to(weight.dtype) - (weight < -delta).to(weight.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        (weight,) = ctx.saved_tensors
        return grad_output * (weight.abs() <= 1).to(grad_output.dtype)


class BinarizeWeightSTE(autograd.Function):
    """Signe, zéro => +1 (variante BNN)."""

    @staticmethod
    def forward(ctx, weight):
        ctx.save_for_backward(weight)
        return torch.where(weight >= 0, torch.ones_like(weight), -torch.ones_like(weight))

    @staticmethod
    def backward(ctx, grad_output):
        (weight,) = ctx.saved_tensors
        return grad_output * (weight.abs() <= 1).to(grad_output.dtype)


class BinarizeSTE(autograd.Function):
    """Activation ±1 (zéro => +1) ; gradient fenêtre hard-tanh."""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, torch.ones_like(x), -torch.ones_like(x))

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        return grad_output * (x.abs() <= 1).to(grad_output.dtype)


def quantize_weight(weight: torch.Tensor, weight_mode: str = 'ternary') -> torch.Tensor:
    if weight_mode == 'binary':
        return BinarizeWeightSTE.apply(weight)
    return TernarizeSTE.apply(weight)


def layer_dot(layer: LayerSpec, x: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    if layer.kind is LayerKind.FC:
        if x.dim() == 4:
            # Aplatissement HWC, comme les poids FC exportés
            x = x.permute(0, 2, 3, 1).reshape(x.shape[0], -1)
        return F.linear(x, weight)
    return F.conv2d(x, weight, padding=layer.padding, stride=layer.stride)


def apply_layer(layer: LayerSpec, x: torch.Tensor, weight: Optional[torch.Tensor] = None,
                bias: Optional[torch.Tensor] = None, final: bool = False) -> torch.Tensor:
    """
    Une couche sur des activations ±1 NCHW (ou (N, entrées) après FC).
    CONV/FC : signe((dot + biais) / sqrt(fan-in)) ; couche finale : dot / sqrt(fan-in).
    """
    if layer.kind is LayerKind.IDENTITY:
        return x
    if layer.kind is LayerKind.MAXPOOL2x2:
        return F.max_pool2d(x, 2)
    dot = layer_dot(layer, x, weight)
    scale = math.sqrt(weight[0].numel())
    if final:
        return dot / scale
    if bias is not None:
        dot = dot + (bias.view(1, -1, 1, 1) if dot.dim() == 4 else bias)
    return BinarizeSTE.apply(dot / scale)


def to_torch_layout(values: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """(K, k, k, C) -> (K, C, k, k) pour les convolutions ; FC inchangé."""
    return values.transpose(0, 3, 1, 2) if layer.kind.is_conv else values


def from_torch_layout(values: np.ndarray, layer: LayerSpec) -> np.ndarray:
    return values.transpose(0, 2, 3, 1) if layer.kind.is_conv else values


def images_to_tensor(bits: np.ndarray) -> torch.Tensor:
    """Bits d'entrée (N, H, W, C) -> activations ±1 (N, C, H, W)."""
    signs = bits.astype(np.float32) * 2.0 - 1.0
    return torch.from_numpy(np.ascontiguousarray(signs.transpose(0, 3, 1, 2)))


class LatentModel(nn.Module):
    """
    Poids latents réels (ombre pleine précision des tenseurs ternaires) et
    biais réels par neurone, exprimés dans l'unité du produit scalaire entier.
    """

    def __init__(self, arch: Architecture, weight_mode: str = 'ternary'):
        super().__init__()
        self.arch = arch
        self.weight_mode = weight_mode
        self.layers = arch.effective_layers()
        self.shapes = infer_shapes(arch)
        self.latent = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.slots: List[Optional[int]] = []
        last = len(self.layers) - 1
        for index, (layer, (in_shape, _)) in enumerate(zip(self.layers, self.shapes)):
            shape = weight_shape(layer, in_shape)
            if shape is None:
                self.slots.append(None)
                continue
            torch_shape = to_torch_layout(np.empty(shape, dtype=np.int8), layer).shape
            weight = torch.empty(torch_shape)
            nn.init.kaiming_uniform_(weight, a=math.sqrt(5))
            self.slots.append(len(self.latent))
            self.latent.append(nn.Parameter(weight))
            # La couche finale n'a pas de seuil
            self.biases.append(nn.Parameter(torch.zeros(0 if index == last else shape[0])))

    def quantized(self) -> List[Optional[torch.Tensor]]:
        return [None if slot is None else quantize_weight(self.latent[slot], self.weight_mode)
                for slot in self.slots]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        weights = self.quantized()
        last = len(self.layers) - 1
        for index, layer in enumerate(self.layers):
            slot = self.slots[index]
            bias = None if slot is None or index == last else self.biases[slot]
            x = apply_layer(layer, x, weights[index], bias, final=(index == last))
        return x

    @torch.no_grad()
    def clip_(self):
        for weight in self.latent:
            weight.clamp_(-1.0, 1.0)

    @torch.no_grad()
    def export(self) -> ModelParams:
        """ModelParams quantifiés ; seuil θ = ceil(-biais), soit dot + biais >= 0 <=> dot >= θ."""
        weights, thresholds = [], []
        quantized = self.quantized()
        last = len(self.layers) - 1
        for index, layer in enumerate(self.layers):
            slot = self.slots[index]
            if slot is None:
                weights.append(None)
                thresholds.append(None)
                continue
            values = from_torch_layout(quantized[index].cpu().numpy(), layer)
            values = np.rint(values).astype(np.int8)
            weights.append(TernaryTensor(values.shape, values))
            if index == last:
                thresholds.append(np.zeros(values.shape[0], dtype=np.int32))
            else:
                bias = self.biases[slot].detach().cpu().numpy().astype(np.float64)
                thresholds.append(np.ceil(-bias).astype(np.int32))
        return ModelParams(self.arch, tuple(weights), tuple(thresholds))


def params_forward(params: ModelParams, x: torch.Tensor) -> torch.Tensor:
    """Scores entiers (en flottants exacts) d'un modèle quantifié, par lot."""
    layers = params.arch.effective_layers()
    last = len(layers) - 1
    for index, layer in enumerate(layers):
        tensor = params.weights[index]
        if tensor is None:
            x = apply_layer(layer, x)
            continue
        weight = torch.from_numpy(np.ascontiguousarray(
            to_torch_layout(tensor.array(), layer)).astype(np.float32))
        if index == last:
            x = layer_dot(layer, x, weight)
        else:
            bias = -torch.from_numpy(params.thresholds[index].astype(np.float32))
            x = apply_layer(layer, x, weight, bias)
    return x


def _check_dataset(arch: Architecture, dataset: Dataset):
    if len(dataset) == 0:
        raise DatasetError(f"{dataset.name}: jeu de données vide")
    if tuple(dataset.image_shape) != arch.input_shape:
        raise ShapeError(f"images {dataset.image_shape}, {arch.name} attend {arch.input_shape}")


@torch.no_grad()
def evaluate(arch: Architecture, params: ModelParams, dataset: Dataset, batch_size: int = 500) -> float:
    """Fraction de prédictions argmax correctes (égalité => plus petit indice)."""
    if params.arch != arch:
        raise ShapeError(f"paramètres pour {params.arch.name}, architecture {arch.name}")
    _check_dataset(arch, dataset)
    bits = dataset.binarized()
    correct = 0
    for start in range(0, len(dataset), batch_size):
        scores = params_forward(params, images_to_tensor(bits[start:start + batch_size]))
        predicted = scores.argmax(dim=1).numpy()
        correct += int((predicted == dataset.labels[start:start + batch_size]).sum())
    return correct / len(dataset)


def _make_optimizer(model: nn.Module, config: TrainConfig):
    if config.optimizer == 'sgd':
        return torch.optim.SGD(model.parameters(), lr=config.learning_rate, momentum=0.9)
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate)


def seed_everything(seed: int, num_threads: int = 1) -> np.random.Generator:
    torch.manual_seed(seed)
    torch.set_num_threads(num_threads)
    torch.use_deterministic_algorithms(True, warn_only=True)
    return np.random.default_rng(seed)


def train(arch: Architecture, config: TrainConfig, dataset: Dataset,
          validation: Optional[Dataset] = None,
          log_path: Optional[str] = None) -> Tuple[ModelParams, List[Dict]]:
    """
    Entraîne `arch` et retourne les paramètres quantifiés de la meilleure époque
    (précision de validation) ainsi que le journal {epoch, loss, val_acc, sparsity}.
    """
    _check_dataset(arch, dataset)
    if validation is None:
        dataset, validation = dataset.split_validation(config.validation_size)
    rng = seed_everything(config.seed, config.num_threads)

    model = LatentModel(arch, config.weight_mode)
    optimizer = _make_optimizer(model, config)
    inputs = images_to_tensor(dataset.binarized())
    targets = torch.from_numpy(dataset.labels.astype(np.int64))

    best_params = model.export()
    best_accuracy = evaluate(arch, best_params, validation) if config.epochs == 0 else -1.0
    history: List[Dict] = []
    log_file = open(log_path, 'a', encoding='utf-8') if log_path else None
    logger.info(f"Entraînement {arch.describe()} sur {dataset.name} ({len(dataset)} exemples, "
                f"{config.epochs} époques, poids {config.weight_mode})")
    try:
        for epoch in range(1, config.epochs + 1):
            started = time.time()
            model.train()
            order = torch.from_numpy(rng.permutation(len(dataset)))
            total_loss = 0.0
            for start in range(0, len(dataset), config.batch_size):
                batch = order[start:start + config.batch_size]
                optimizer.zero_grad()
                loss = F.cross_entropy(model(inputs[batch]), targets[batch])
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(epoch, float(loss))
                loss.backward()
                optimizer.step()
                model.clip_()
                total_loss += float(loss) * len(batch)

            model.eval()
            params = model.export()
            accuracy = evaluate(arch, params, validation)
            record = {
                'epoch': epoch,
                'loss': round(total_loss / len(dataset), 6),
                'val_acc': round(accuracy, 6),
                'sparsity': round(sparsity(params), 6),
            }
            history.append(record)
            line = json.dumps(record, sort_keys=True)
            training_log.info(line)
            if log_file:
                log_file.write(line + '\n')
                log_file.flush()
            logger.info(f"Époque {epoch}/{config.epochs}: perte {record['loss']:.4f}, "
                        f"validation {accuracy:.4f}, sparsité {record['sparsity']:.3f} "
                        f"({time.time() - started:.1f}s)")
            if accuracy > best_accuracy:
                best_accuracy = accuracy
                best_params = params
    finally:
        if log_file:
            log_file.close()

    logger.info(f"Meilleure validation: {best_accuracy:.4f}, sparsité {sparsity(best_params):.3f}")
    return best_params, history


def scaling_sweep(arch: Architecture, config: TrainConfig, dataset: Dataset, test: Dataset,
                  scales: Sequence[float], seeds: Sequence[int] = (0,)) -> List[Dict]:
    """
    Précision en fonction du facteur d'échelle : une ligne par facteur avec la
    médiane sur les graines, le nombre de paramètres et la sparsité.
    """
    rows = []
    for scale in scales:
        scaled = scale_architecture(arch, scale)
        accuracies, sparsities, params = [], [], None
        for seed in seeds:
            seeded = TrainConfig(**{**asdict(config), 'seed': seed, 'scaling_factor': scaled.scaling_factor})
            params, _ = train(scaled, seeded, dataset)
            accuracies.append(evaluate(scaled, params, test))
            sparsities.append(sparsity(params))
        rows.append({
            'scale': scale,
            'params': int(params.all_weights().size),
            'accuracy': float(np.median(accuracies)),
            'sparsity': float(np.median(sparsities)),
            'accuracies': accuracies,
        })
        logger.info(f"Échelle {scale:g}: précision médiane {rows[-1]['accuracy']:.4f}")
    return rows

