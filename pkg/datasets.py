#!/usr/bin/env python3
"""
Lecture des jeux de données : MNIST au format IDX (éventuellement gzip) et
CIFAR10 au format binaire officiel. Les images sont rendues en HWC uint8.
"""

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from model_core import INPUT_BINARIZATION_RATIO, MAX_PIXEL_INTENSITY, BinaryTensor, binarize_input

logger = logging.getLogger(__name__)

MNIST_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}
CIFAR_FILES = {
    'train': tuple(f'data_batch_{i}.bin' for i in range(1, 6)),
    'test': ('test_batch.bin',),
}
CIFAR_RECORD = 1 + 32 * 32 * 3

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(Exception):
    """Fichier de données absent ou corrompu."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images uint8 (N, H, W, C) et étiquettes (N,)."""
    name: str
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DatasetError(f"{self.name}: images (N, H, W, C) attendues, forme {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{self.name}: {len(self.images)} images pour {len(self.labels)} étiquettes")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, start: int, stop: Optional[int] = None, name: Optional[str] = None) -> 'Dataset':
        return Dataset(name or self.name, self.images[start:stop], self.labels[start:stop])

    def split_validation(self, validation_size: int) -> Tuple['Dataset', 'Dataset']:
        """Réserve les `validation_size` dernières images pour la validation."""
        if validation_size <= 0 or validation_size >= len(self):
            # Trop peu d'exemples : la validation réutilise l'entraînement
            logger.warning(f"{self.name}: validation de {validation_size} impossible sur "
                           f"{len(self)} exemples, validation = entraînement")
            return self, self
        cut = len(self) - validation_size
        return self.subset(0, cut, f"{self.name}-train"), self.subset(cut, None, f"{self.name}-val")

    def binarized(self) -> np.ndarray:
        """Bits d'entrée (N, H, W, C) selon la règle des 50 %."""
        threshold = INPUT_BINARIZATION_RATIO * MAX_PIXEL_INTENSITY
        return (self.images.astype(np.float64) >= threshold).astype(np.uint8)

    def image_bits(self, index: int) -> BinaryTensor:
        return binarize_input(self.images[index])


def _open_maybe_gzip(path: Path) -> bytes:
    candidates = [path, path.with_name(path.name + '.gz')]
    for candidate in candidates:
        if candidate.exists():
            try:
                if candidate.suffix == '.gz':
                    with gzip.open(candidate, 'rb') as f:
                        return f.read()
                return candidate.read_bytes()
            except (OSError, EOFError) as e:
                raise DatasetError(f"lecture impossible de {candidate}: {e}")
    raise DatasetError(f"fichier introuvable: {path} (ou {path.name}.gz)")


def read_idx(path) -> np.ndarray:
    """Lit un fichier IDX (uint8) et retourne le tableau avec ses dimensions."""
    path = Path(path)
    data = _open_maybe_gzip(path)
    if len(data) < 4:
        raise DatasetError(f"{path}: en-tête IDX tronqué")
    zero, dtype_code, ndim = struct.unpack('>HBB', data[:4])
    if zero != 0 or dtype_code != 0x08:
        raise DatasetError(f"{path}: seuls les fichiers IDX uint8 sont supportés")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise DatasetError(f"{path}: dimensions IDX tronquées")
    dims = struct.unpack(f'>{ndim}I', data[4:header])
    expected = int(np.prod(dims)) if dims else 0
    if len(data) - header != expected:
        raise DatasetError(f"{path}: {len(data) - header} octets de données, {expected} attendus")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray):
    """Écrit un tableau uint8 au format IDX (fixtures de test, exports)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, 'wb') as f:
        f.write(struct.pack('>HBB', 0, 0x08, array.ndim))
        f.write(struct.pack(f'>{array.ndim}I', *array.shape))
        f.write(array.tobytes())


def load_mnist(directory, split: str = 'train') -> Dataset:
    if split not in MNIST_FILES:
        raise DatasetError(f"split MNIST inconnu: {split}")
    directory = Path(directory)
    images_file, labels_file = MNIST_FILES[split]
    images = read_idx(directory / images_file)
    labels = read_idx(directory / labels_file)
    if images.ndim != 3 or labels.ndim != 1:
        raise DatasetError(f"MNIST {split}: dimensions inattendues {images.shape} / {labels.shape}")
    if labels.size and labels.max() > 9:
        raise DatasetError(f"MNIST {split}: étiquette hors de 0..9")
    dataset = Dataset(f"mnist-{split}", images[:, :, :, None], labels.astype(np.int64))
    logger.info(f"MNIST {split}: {len(dataset)} images chargées depuis {directory}")
    return dataset


def load_cifar10(directory, split: str = 'train') -> Dataset:
    if split not in CIFAR_FILES:
        raise DatasetError(f"split CIFAR10 inconnu: {split}")
    directory = Path(directory)
    images, labels = [], []
    for name in CIFAR_FILES[split]:
        path = directory / name
        if not path.exists():
            raise DatasetError(f"fichier introuvable: {path}")
        data = path.read_bytes()
        if len(data) % CIFAR_RECORD:
            raise DatasetError(f"{path}: taille {len(data)} non multiple de {CIFAR_RECORD}")
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        # CHW sur disque -> HWC
        images.append(records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    dataset = Dataset(f"cifar10-{split}", np.concatenate(images), np.concatenate(labels))
    if len(dataset) and dataset.labels.max() > 9:
        raise DatasetError(f"CIFAR10 {split}: étiquette hors de 0..9")
    logger.info(f"CIFAR10 {split}: {len(dataset)} images chargées depuis {directory}")
    return dataset


def load_dataset(name: str, paths: dict, split: str = 'train') -> Dataset:
    """Charge `mnist` ou `cifar10` depuis les chemins résolus de RuntimeConfig.get_paths()."""
    if name == 'mnist':
        return load_mnist(paths['mnist_path'], split)
    if name == 'cifar10':
        return load_cifar10(paths['cifar_path'], split)
    raise DatasetError(f"jeu de données inconnu: {name}")


def write_synthetic_mnist(directory, train_size: int = 100, test_size: int = 100, seed: int = 0):
    """
    Écrit un petit jeu au format MNIST : chaque classe allume une bande
    horizontale distincte, avec du bruit. Sert de fixture aux tests et à la CLI.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for split, size in (('train', train_size), ('test', test_size)):
        labels = np.arange(size, dtype=np.uint8) % 10
        rng.shuffle(labels)
        images = (rng.random((size, 28, 28)) < 0.05).astype(np.uint8) * 255
        for index, label in enumerate(labels):
            row = 2 + int(label) * 2
            images[index, row:row + 3, 4:24] = 255
        images_file, labels_file = MNIST_FILES[split]
        write_idx(directory / images_file, images)
        write_idx(directory / labels_file, labels)
    return directory


def load_image(path, input_shape: Tuple[int, int, int], index: int = 0) -> np.ndarray:
    """
    Une image 8 bits HWC depuis un fichier IDX ou .npy, seule ou prise à
    l'indice `index` d'un lot.
    """
    path = Path(path)
    try:
        array = np.load(path) if path.suffix == '.npy' else read_idx(path)
    except (OSError, ValueError) as e:
        raise DatasetError(f"lecture de l'image {path} impossible: {e}")
    size = int(np.prod(input_shape))
    if array.size == size:
        return np.asarray(array, dtype=np.uint8).reshape(input_shape)
    if array.ndim >= 3 and int(np.prod(array.shape[1:])) == size:
        if not 0 <= index < array.shape[0]:
            raise DatasetError(f"{path}: indice {index} hors du lot de {array.shape[0]} images")
        return np.asarray(array[index], dtype=np.uint8).reshape(input_shape)
    raise DatasetError(f"{path}: forme {array.shape} incompatible avec {tuple(input_shape)}")
