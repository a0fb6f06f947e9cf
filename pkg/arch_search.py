#!/usr/bin/env python3
"""
Recherche d'architecture régularisée par le coût garbled.

Chaque cellule est une suite de positions ; chaque position mélange les
opérations candidates (CONV5x5, CONV3x3, MAXPOOL2x2, IDENTITY) pondérées par
softmax(α̃) avec α̃ = α·(1 − λ·γ(o)). Les poids du réseau mixte et les scores α
sont mis à jour en alternance (poids sur l'entraînement, α sur la validation).
L'architecture finale garde l'argmax de α̃ à chaque position puis est
ré-entraînée depuis zéro.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from checkpoint_manager import CheckpointManager
from cost_model import CANDIDATE_OPS, CostTable, candidate_layer
from datasets import Dataset, DatasetError
from model_core import Architecture, LayerKind, LayerSpec, ModelParams, count_params, scale_count, sparsity
from model_zoo import CIFAR_SHAPE, MNIST_SHAPE
from runtime_config import RuntimeConfig
from trainer import (TrainConfig, TrainingDivergedError, apply_layer, evaluate, images_to_tensor,
                     quantize_weight, seed_everything, train)

logger = logging.getLogger(__name__)
training_log = logging.getLogger('training_log')

POSITIONS_PER_CELL = 4


class SearchError(ValueError):
    """Paramètres de recherche invalides (λ hors [0, 1], scores incohérents)."""


def _check_lambda(lam: float):
    if isinstance(lam, bool) or not isinstance(lam, (int, float)) or not 0.0 <= lam <= 1.0:
        raise SearchError(f"λ doit être dans [0, 1], reçu {lam!r}")


def regularized_scores(alpha, lam: float, gamma) -> Tuple[np.ndarray, np.ndarray]:
    """
    α̃ = α·(1 − λ·γ) et softmax(α̃) sur le dernier axe. `alpha` peut porter des
    axes de tête (cellules, positions) ; `gamma` suit l'ordre des opérations.
    """
    _check_lambda(lam)
    alpha = np.asarray(alpha, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if alpha.shape[-1:] != gamma.shape:
        raise SearchError(f"scores {alpha.shape} et pénalités {gamma.shape} non alignés")
    if not np.isfinite(alpha).all():
        raise SearchError("scores α non finis")
    adjusted = alpha * (1.0 - lam * gamma)
    exp = np.exp(adjusted - adjusted.max(axis=-1, keepdims=True))
    return adjusted, exp / exp.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class SearchPlan:
    """Forme d'entrée, largeurs de cellules et tête FC d'une recherche."""
    dataset: str
    input_shape: Tuple[int, int, int]
    channels: Tuple[int, ...]
    head: Tuple[int, ...]
    num_classes: int = 10

    def cell_channels(self, num_cells: int) -> Tuple[int, ...]:
        # Au-delà de la progression prévue, les cellules gardent la dernière largeur
        return tuple(self.channels[min(i, len(self.channels) - 1)] for i in range(num_cells))

    def head_layers(self) -> Tuple[LayerSpec, ...]:
        return tuple(LayerSpec(LayerKind.FC, nodes) for nodes in self.head + (self.num_classes,))


SEARCH_PLANS = {
    'mnist': SearchPlan('mnist', MNIST_SHAPE, (16,), (100,)),
    'cifar10': SearchPlan('cifar10', CIFAR_SHAPE, (16, 32, 64), ()),
}


def plan_for(input_shape: Sequence[int]) -> SearchPlan:
    for plan in SEARCH_PLANS.values():
        if tuple(plan.input_shape) == tuple(input_shape):
            return plan
    raise DatasetError(f"aucune recherche définie pour des images {tuple(input_shape)}")


@dataclass(frozen=True)
class SearchConfig:
    dataset: str = 'mnist'
    cells: int = 1
    lam: float = 0.6
    budget_epochs: int = 10
    seed: int = 0
    scaling_factor: float = 3.0
    alpha_learning_rate: float = 3e-3
    retrain_epochs: int = 30
    budget_seconds: float = 0
    learning_rate: float = 1e-3
    batch_size: int = 100
    validation_size: int = 5000
    num_threads: int = 1
    weight_mode: str = 'ternary'

    def __post_init__(self):
        _check_lambda(self.lam)
        if not isinstance(self.cells, int) or self.cells < 1:
            raise SearchError("cells doit être un entier >= 1")
        if not isinstance(self.budget_epochs, int) or self.budget_epochs < 0:
            raise SearchError("budget_epochs doit être un entier >= 0")
        if not self.scaling_factor > 0 or not self.alpha_learning_rate > 0:
            raise SearchError("scaling_factor et alpha_learning_rate doivent être > 0")
        if self.budget_seconds < 0 or self.retrain_epochs < 0:
            raise SearchError("budget_seconds et retrain_epochs doivent être >= 0")

    @classmethod
    def from_runtime(cls, runtime: RuntimeConfig, **overrides) -> 'SearchConfig':
        search = runtime.get_search_settings()
        training = runtime.get_training_settings()
        values = {
            'dataset': search['dataset'],
            'cells': search['cells'],
            'lam': search['lambda'],
            'budget_epochs': search['budget_epochs'],
            'seed': search['seed'],
            'scaling_factor': search['scaling_factor'],
            'alpha_learning_rate': search['alpha_learning_rate'],
            'retrain_epochs': search['retrain_epochs'],
            'budget_seconds': search['budget_seconds'],
        }
        for key in ('learning_rate', 'batch_size', 'validation_size', 'num_threads', 'weight_mode'):
            values[key] = training[key]
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    def train_config(self, epochs: int) -> TrainConfig:
        return TrainConfig(epochs=epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           seed=self.seed, dataset=self.dataset, scaling_factor=self.scaling_factor,
                           weight_mode=self.weight_mode, validation_size=self.validation_size,
                           num_threads=self.num_threads)


@dataclass
class SearchState:
    """État reprenable d'une recherche : scores bruts α par (cellule, position, opération)."""
    dataset: str
    cells: int
    lam: float
    seed: int
    scaling_factor: float
    alpha_raw: np.ndarray
    epoch: int = 0
    history: List[Dict] = field(default_factory=list)

    def __post_init__(self):
        _check_lambda(self.lam)
        self.alpha_raw = np.asarray(self.alpha_raw, dtype=np.float64)
        if not np.isfinite(self.alpha_raw).all():
            raise SearchError("scores α non finis")

    @property
    def alpha(self) -> np.ndarray:
        """α = softplus(score brut) >= 0."""
        return np.logaddexp(0.0, self.alpha_raw)

    def identity(self) -> Dict:
        return {'dataset': self.dataset, 'cells': self.cells, 'lambda': self.lam,
                'seed': self.seed, 'scaling_factor': self.scaling_factor}

    def to_dict(self) -> Dict:
        data = self.identity()
        data.update({'epoch': self.epoch, 'alpha_raw': self.alpha_raw.tolist(),
                     'ops': [op.value for op in CANDIDATE_OPS], 'history': self.history})
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'SearchState':
        try:
            return cls(data['dataset'], int(data['cells']), float(data['lambda']), int(data['seed']),
                       float(data['scaling_factor']), np.array(data['alpha_raw'], dtype=np.float64),
                       int(data['epoch']), list(data.get('history', [])))
        except (KeyError, TypeError, ValueError) as e:
            raise SearchError(f"état de recherche invalide: {e}")


def _match_channels(x: torch.Tensor, channels: int) -> torch.Tensor:
    """Répète (ou tronque) les canaux pour les opérations sans poids."""
    current = x.shape[1]
    if current == channels:
        return x
    repeats = math.ceil(channels / current)
    return x.repeat(1, repeats, 1, 1)[:, :channels]


class MixedOp(nn.Module):
    """Une position de cellule : somme des candidates pondérée par leurs probabilités."""

    def __init__(self, in_channels: int, out_channels: int, weight_mode: str = 'ternary',
                 ops: Sequence[LayerKind] = CANDIDATE_OPS):
        super().__init__()
        self.ops = tuple(ops)
        self.out_channels = out_channels
        self.weight_mode = weight_mode
        self.latent = nn.ParameterDict()
        self.biases = nn.ParameterDict()
        for op in self.ops:
            if op.has_weights:
                k = candidate_layer(op, out_channels).kernel_size
                weight = torch.empty(out_channels, in_channels, k, k)
                nn.init.kaiming_uniform_(weight, a=math.sqrt(5))
                self.latent[op.value] = nn.Parameter(weight)
                self.biases[op.value] = nn.Parameter(torch.zeros(out_channels))

    def candidate(self, op: LayerKind, x: torch.Tensor) -> torch.Tensor:
        if op.has_weights:
            weight = quantize_weight(self.latent[op.value], self.weight_mode)
            return apply_layer(candidate_layer(op, self.out_channels), x, weight, self.biases[op.value])
        if op is LayerKind.MAXPOOL2x2:
            # Même taille pendant la recherche : fenêtre 2×2 de pas 1, bord à -1
            x = F.max_pool2d(F.pad(x, (0, 1, 0, 1), value=-1.0), 2, stride=1)
        return _match_channels(x, self.out_channels)

    def forward(self, x: torch.Tensor, probabilities: torch.Tensor) -> torch.Tensor:
        return sum(probabilities[i] * self.candidate(op, x) for i, op in enumerate(self.ops))


class MixedNetwork(nn.Module):
    """Réseau de recherche : cellules de positions mixtes puis tête FC."""

    def __init__(self, plan: SearchPlan, num_cells: int, scaling_factor: float,
                 weight_mode: str = 'ternary'):
        super().__init__()
        self.plan = plan
        self.weight_mode = weight_mode
        height, width, channels = plan.input_shape
        self.cells = nn.ModuleList()
        for base in plan.cell_channels(num_cells):
            out_channels = scale_count(base, scaling_factor)
            positions = nn.ModuleList()
            for _ in range(POSITIONS_PER_CELL):
                positions.append(MixedOp(channels, out_channels, weight_mode))
                channels = out_channels
            self.cells.append(positions)
        self.alpha_raw = nn.Parameter(torch.zeros(num_cells, POSITIONS_PER_CELL, len(CANDIDATE_OPS)))

        self.head = [layer if i == len(plan.head) else layer.scaled(scaling_factor)
                     for i, layer in enumerate(plan.head_layers())]
        self.head_latent = nn.ParameterList()
        self.head_biases = nn.ParameterList()
        inputs = height * width * channels
        for i, layer in enumerate(self.head):
            weight = torch.empty(layer.kernels_or_nodes, inputs)
            nn.init.kaiming_uniform_(weight, a=math.sqrt(5))
            self.head_latent.append(nn.Parameter(weight))
            final = i == len(self.head) - 1
            self.head_biases.append(nn.Parameter(torch.zeros(0 if final else layer.kernels_or_nodes)))
            inputs = layer.kernels_or_nodes

    def weight_parameters(self) -> List[nn.Parameter]:
        return [p for name, p in self.named_parameters() if name != 'alpha_raw']

    def probabilities(self, gamma: torch.Tensor, lam: float) -> torch.Tensor:
        adjusted = F.softplus(self.alpha_raw) * (1.0 - lam * gamma)
        return F.softmax(adjusted, dim=-1)

    def forward(self, x: torch.Tensor, gamma: torch.Tensor, lam: float) -> torch.Tensor:
        probabilities = self.probabilities(gamma, lam)
        for c, positions in enumerate(self.cells):
            for p, mixed in enumerate(positions):
                x = mixed(x, probabilities[c, p])
        last = len(self.head) - 1
        for i, layer in enumerate(self.head):
            weight = quantize_weight(self.head_latent[i], self.weight_mode)
            bias = None if i == last else self.head_biases[i]
            x = apply_layer(layer, x, weight, bias, final=(i == last))
        return x

    @torch.no_grad()
    def clip_(self):
        for parameter in self.weight_parameters():
            if parameter.dim() > 1:
                parameter.clamp_(-1.0, 1.0)


def discretize(selected: Sequence[Sequence[LayerKind]], plan: SearchPlan, scaling_factor: float,
               name: str) -> Architecture:
    """
    Architecture finale : une couche par opération retenue (IDENTITY n'en
    produit pas), convolutions à la largeur de base de leur cellule.
    """
    layers: List[LayerSpec] = []
    height, width, _ = plan.input_shape
    for cell, ops in enumerate(selected):
        kernels = plan.channels[min(cell, len(plan.channels) - 1)]
        for op in ops:
            op = LayerKind(op)
            if op is LayerKind.MAXPOOL2x2:
                if height < 2 or width < 2:
                    logger.warning(f"Cellule {cell}: MAXPOOL2x2 impossible sur {height}×{width}, "
                                   f"remplacé par IDENTITY")
                    continue
                height, width = height // 2, width // 2
            if op is LayerKind.IDENTITY:
                continue
            layers.append(candidate_layer(op, kernels) if op.has_weights else LayerSpec(op))
    return Architecture(name, tuple(layers) + plan.head_layers(), scaling_factor,
                        plan.input_shape, plan.num_classes)


@dataclass
class SearchResult:
    architecture: Architecture
    lam: float
    selected: Tuple[Tuple[LayerKind, ...], ...]
    scores: np.ndarray
    probabilities: np.ndarray
    total_penalty: float
    params: int
    budget_exhausted: bool = False
    model: Optional[ModelParams] = None
    accuracy: Optional[float] = None
    sparsity: Optional[float] = None
    history: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'architecture': self.architecture.name,
            'lambda': self.lam,
            'selected': [[op.value for op in cell] for cell in self.selected],
            'scores': np.round(self.scores, 6).tolist(),
            'total_penalty': round(self.total_penalty, 6),
            'params': self.params,
            'accuracy': self.accuracy,
            'sparsity': self.sparsity,
            'budget_exhausted': self.budget_exhausted,
            'epochs': len(self.history),
        }

    def format_report(self) -> str:
        lines = [f"Recherche λ={self.lam:g}: {self.architecture.describe()}"]
        for cell, ops in enumerate(self.selected):
            lines.append(f"  cellule {cell}: {' → '.join(op.value for op in ops)}")
        lines.append(f"  pénalité totale {self.total_penalty:.2f}, {self.params} paramètres")
        if self.accuracy is not None:
            lines.append(f"  précision {self.accuracy:.4f}, sparsité {self.sparsity:.3f}")
        if self.budget_exhausted:
            lines.append("  ATTENTION: budget épuisé, meilleur résultat obtenu jusque-là")
        return '\n'.join(lines)


def _epoch_record(epoch: int, train_loss: float, val_loss: float, network: MixedNetwork,
                  gamma: np.ndarray, lam: float) -> Dict:
    alpha = F.softplus(network.alpha_raw).detach().cpu().numpy()
    adjusted, _ = regularized_scores(alpha, lam, gamma)
    return {
        'epoch': epoch,
        'train_loss': round(train_loss, 6),
        'val_loss': round(val_loss, 6),
        'selected': [[CANDIDATE_OPS[i].value for i in cell] for cell in adjusted.argmax(axis=-1)],
    }


def search(dataset: Dataset, num_cells: int, lam: float, cost_table: CostTable, budget: int,
           config: Optional[SearchConfig] = None, validation: Optional[Dataset] = None,
           test: Optional[Dataset] = None,
           checkpoint: Optional[CheckpointManager] = None) -> SearchResult:
    """
    Recherche sur `budget` époques. À chaque batch : un pas sur les poids
    (entraînement) puis un pas sur α (batch de validation suivant). Avec
    `checkpoint`, l'état est sauvegardé à chaque époque et une recherche
    identique reprend là où elle s'était arrêtée.
    """
    _check_lambda(lam)
    if not isinstance(num_cells, int) or num_cells < 1:
        raise SearchError("num_cells doit être un entier >= 1")
    if not isinstance(budget, int) or budget < 0:
        raise SearchError("budget doit être un nombre d'époques >= 0")
    config = config or SearchConfig()
    plan = plan_for(dataset.image_shape)
    if len(dataset) == 0:
        raise DatasetError(f"{dataset.name}: jeu de données vide")
    gamma = cost_table.penalties(CANDIDATE_OPS)
    if validation is None:
        dataset, validation = dataset.split_validation(config.validation_size)

    seed_everything(config.seed, config.num_threads)
    network = MixedNetwork(plan, num_cells, config.scaling_factor, config.weight_mode)
    weight_optimizer = torch.optim.Adam(network.weight_parameters(), lr=config.learning_rate)
    alpha_optimizer = torch.optim.Adam([network.alpha_raw], lr=config.alpha_learning_rate)
    gamma_tensor = torch.tensor(gamma, dtype=torch.float32)

    state = SearchState(plan.dataset, num_cells, lam, config.seed, config.scaling_factor,
                        np.zeros(tuple(network.alpha_raw.shape)))
    if checkpoint is not None:
        restored = checkpoint.restore(state.identity())
        if restored is not None:
            saved, weights = restored
            state = SearchState.from_dict(saved)
            if weights is not None:
                network.load_state_dict(weights)
            else:
                with torch.no_grad():
                    network.alpha_raw.copy_(torch.from_numpy(state.alpha_raw).float())
            logger.info(f"Reprise de la recherche après l'époque {state.epoch}")

    inputs = images_to_tensor(dataset.binarized())
    targets = torch.from_numpy(dataset.labels.astype(np.int64))
    val_inputs = images_to_tensor(validation.binarized())
    val_targets = torch.from_numpy(validation.labels.astype(np.int64))

    logger.info(f"Recherche {plan.dataset}: {num_cells} cellule(s), λ={lam:g}, {budget} époques, "
                f"échelle {config.scaling_factor:g}")
    started = time.time()
    exhausted = False
    for epoch in range(state.epoch + 1, budget + 1):
        if config.budget_seconds and time.time() - started > config.budget_seconds:
            exhausted = True
            logger.warning(f"Budget de {config.budget_seconds}s épuisé avant l'époque {epoch}")
            break
        # Ordre dérivé de (graine, époque) : une reprise retrouve le même tirage
        rng = np.random.default_rng([config.seed, epoch])
        order = torch.from_numpy(rng.permutation(len(dataset)))
        val_order = torch.from_numpy(rng.permutation(len(validation)))
        network.train()
        train_loss = val_loss = 0.0
        steps = 0
        for start in range(0, len(dataset), config.batch_size):
            batch = order[start:start + config.batch_size]
            weight_optimizer.zero_grad()
            loss = F.cross_entropy(network(inputs[batch], gamma_tensor, lam), targets[batch])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, float(loss))
            loss.backward()
            weight_optimizer.step()
            network.clip_()

            val_start = (steps * config.batch_size) % len(validation)
            val_batch = val_order[val_start:val_start + config.batch_size]
            alpha_optimizer.zero_grad()
            alpha_loss = F.cross_entropy(network(val_inputs[val_batch], gamma_tensor, lam),
                                         val_targets[val_batch])
            alpha_loss.backward()
            alpha_optimizer.step()

            train_loss += float(loss)
            val_loss += float(alpha_loss)
            steps += 1

        record = _epoch_record(epoch, train_loss / steps, val_loss / steps, network, gamma, lam)
        state.history.append(record)
        state.epoch = epoch
        state.alpha_raw = network.alpha_raw.detach().cpu().numpy().astype(np.float64)
        training_log.info(json.dumps({'search': True, 'lambda': lam, **record}, sort_keys=True))
        logger.info(f"Recherche époque {epoch}/{budget}: perte {record['train_loss']:.4f}, "
                    f"validation {record['val_loss']:.4f}")
        if checkpoint is not None:
            checkpoint.save(state.to_dict(), network.state_dict())

    state.alpha_raw = network.alpha_raw.detach().cpu().numpy().astype(np.float64)
    adjusted, probabilities = regularized_scores(state.alpha, lam, gamma)
    selected = tuple(tuple(CANDIDATE_OPS[i] for i in cell) for cell in adjusted.argmax(axis=-1))
    name = f"{plan.dataset}-search-l{lam:g}".replace('.', '')
    arch = discretize(selected, plan, config.scaling_factor, name)
    result = SearchResult(
        architecture=arch,
        lam=lam,
        selected=selected,
        scores=adjusted,
        probabilities=probabilities,
        total_penalty=float(sum(cost_table.penalty(op) for cell in selected for op in cell)),
        params=count_params(arch),
        budget_exhausted=exhausted,
        history=list(state.history),
    )

    if config.retrain_epochs > 0:
        logger.info(f"Ré-entraînement de {arch.describe()} ({config.retrain_epochs} époques)")
        model, _ = train(arch, config.train_config(config.retrain_epochs), dataset, validation)
        result.model = model
        result.accuracy = evaluate(arch, model, test if test is not None else validation)
        result.sparsity = sparsity(model)
    logger.info(f"Recherche λ={lam:g} terminée en {time.time() - started:.1f}s: {arch.describe()}")
    return result


def lambda_sweep(dataset: Dataset, num_cells: int, lambdas: Sequence[float], cost_table: CostTable,
                 budget: int, config: Optional[SearchConfig] = None,
                 validation: Optional[Dataset] = None,
                 test: Optional[Dataset] = None) -> List[SearchResult]:
    """Une recherche par λ, même graine et mêmes données."""
    config = config or SearchConfig()
    results = []
    for lam in lambdas:
        swept = replace(config, lam=lam)
        results.append(search(dataset, num_cells, lam, cost_table, budget, swept, validation, test))
    for result in results:
        logger.info(f"λ={result.lam:g}: pénalité {result.total_penalty:.2f}, {result.params} paramètres, "
                    f"précision {result.accuracy}")
    return results
