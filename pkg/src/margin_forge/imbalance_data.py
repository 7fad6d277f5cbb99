"""Imbalanced dataset construction: count profiles, subsampling, synthetic
Gaussian mixtures and a reader for the CIFAR binary format."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InvalidInputError, ParseError
from .margin_losses import ClassCounts

CIFAR_PIXELS = 3072


class ProfileKind(str, enum.Enum):
    LONG_TAILED = "long_tailed"
    STEP = "step"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class CountProfile:
    counts: ClassCounts
    profile_kind: ProfileKind
    rho: float

    def majority_mask(self) -> np.ndarray:
        return majority_mask(self.counts)


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInputError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    @property
    def per_class_counts(self) -> ClassCounts:
        """Class sizes as ``ClassCounts``; fails if some class is empty."""
        return ClassCounts(tuple(self.class_sizes.tolist()))


def majority_mask(counts) -> np.ndarray:
    """Classes at or above the geometric mean of the largest and smallest count.

    For step profiles this is exactly the set of classes at ``n_max``. A
    uniform profile is all majority.
    """
    n = np.asarray(list(counts), dtype=np.int64)
    return n * n >= n.max() * n.min()


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _check_profile_args(K: int, n_max: int, rho: float) -> None:
    if K < 2:
        raise InvalidInputError(f"need K >= 2, got {K}")
    if n_max < 1:
        raise InvalidInputError(f"need n_max >= 1, got {n_max}")
    if not rho >= 1:
        raise InvalidInputError(f"imbalance ratio must be >= 1, got {rho}")
    if _round_half_up(n_max / rho) < 1:
        raise InvalidInputError(f"n_max/rho = {n_max / rho:g} leaves the smallest class empty")


def long_tailed_counts(K: int, n_max: int, rho: float) -> CountProfile:
    """Exponentially decaying counts ``n_i = round(n_max * rho^(-i/(K-1)))``."""
    _check_profile_args(K, n_max, rho)
    counts = [max(1, _round_half_up(n_max * rho ** (-i / (K - 1)))) for i in range(K)]
    kind = ProfileKind.UNIFORM if rho == 1 else ProfileKind.LONG_TAILED
    return CountProfile(ClassCounts(tuple(counts)), kind, float(rho))


def step_counts(K: int, n_max: int, rho: float, majority_frac: float = 0.5) -> CountProfile:
    """First ``floor(K * majority_frac)`` classes at ``n_max``, the rest at ``n_max/rho``."""
    _check_profile_args(K, n_max, rho)
    if not 0 < majority_frac < 1:
        raise InvalidInputError(f"majority_frac must be in (0, 1), got {majority_frac}")
    n_major = int(math.floor(K * majority_frac))
    n_minor = max(1, _round_half_up(n_max / rho))
    counts = [n_max] * n_major + [n_minor] * (K - n_major)
    kind = ProfileKind.UNIFORM if rho == 1 else ProfileKind.STEP
    return CountProfile(ClassCounts(tuple(counts)), kind, float(rho))


def uniform_counts(K: int, n: int) -> CountProfile:
    return CountProfile(ClassCounts((n,) * K), ProfileKind.UNIFORM, 1.0)


def subsample(base: LabeledDataset, profile: CountProfile, seed: int) -> LabeledDataset:
    """Keep the first ``n_i`` examples of each class after a seeded shuffle.

    Output rows keep their shuffled order.
    """
    counts = profile.counts.counts
    if len(counts) != base.num_classes:
        raise InvalidInputError(f"profile has {len(counts)} classes, dataset has {base.num_classes}")
    available = base.class_sizes
    for j, n in enumerate(counts):
        if available[j] < n:
            raise InvalidInputError(f"class {j} has {available[j]} examples, profile needs {n}")
    order = np.random.default_rng(seed).permutation(len(base))
    shuffled_labels = base.labels[order]
    # rank of each row among rows of the same class, in shuffled order
    rank = np.empty(len(order), dtype=np.int64)
    for j in range(base.num_classes):
        rows = np.flatnonzero(shuffled_labels == j)
        rank[rows] = np.arange(rows.size)
    keep = order[rank < np.asarray(counts)[shuffled_labels]]
    return LabeledDataset(base.features[keep], base.labels[keep], base.num_classes)


def class_centers(K: int, d: int) -> np.ndarray:
    """K unit vectors spread as far apart as ``d`` allows.

    One-hot directions when ``d >= K``; otherwise evenly spaced points on the
    unit circle (d >= 2) or on the segment [-1, 1] (d == 1).
    """
    if d < 1:
        raise InvalidInputError(f"feature dimension must be >= 1, got {d}")
    if d >= K:
        return np.eye(K, d)
    U = np.zeros((K, d))
    if d == 1:
        U[:, 0] = np.linspace(-1.0, 1.0, K)
    else:
        angles = 2 * np.pi * np.arange(K) / K
        U[:, 0], U[:, 1] = np.cos(angles), np.sin(angles)
    return U


def gaussian_mixture(K: int, d: int, n_per_class, separation: float, seed: int) -> LabeledDataset:
    """Isotropic unit-variance Gaussians centred at ``separation * u_i``.

    Rows are grouped by class in index order.
    """
    if d < 1:
        raise InvalidInputError(f"feature dimension must be >= 1, got {d}")
    if not separation >= 0:
        raise InvalidInputError(f"separation must be >= 0, got {separation}")
    counts = list(n_per_class.counts if isinstance(n_per_class, ClassCounts) else n_per_class)
    if len(counts) != K:
        raise InvalidInputError(f"got {len(counts)} class sizes for K={K}")
    rng = np.random.default_rng(seed)
    centers = separation * class_centers(K, d)
    labels = np.repeat(np.arange(K), counts)
    X = rng.standard_normal((labels.size, d)) + centers[labels]
    return LabeledDataset(X, labels, K)


def _cifar_files(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        train = sorted(path.glob("data_batch_*.bin"))
        if train:
            return train
        single = [p for p in (path / "train.bin",) if p.exists()]
        if single:
            return single
        raise InvalidInputError(f"no CIFAR binary batches found in {path}")
    return [path]


def load_cifar10_binary(path, num_classes: int = 10, label_bytes: int = 1) -> LabeledDataset:
    """Read CIFAR binary records (label bytes followed by 3072 pixel bytes).

    Args:
        path: A batch file, or a directory holding ``data_batch_*.bin``
            (CIFAR-10) or ``train.bin`` (CIFAR-100).
        num_classes: Labels must be below this.
        label_bytes: 1 for CIFAR-10; 2 for CIFAR-100, whose records carry the
            coarse label first and the fine label second (the fine one is used).

    Returns:
        Features scaled to [0, 1], flattened in file order (R, G, B planes).
    """
    if label_bytes not in (1, 2):
        raise InvalidInputError(f"label_bytes must be 1 or 2, got {label_bytes}")
    record = label_bytes + CIFAR_PIXELS
    feats, labels = [], []
    for file in _cifar_files(path):
        raw = np.fromfile(file, dtype=np.uint8)
        if raw.size % record:
            offset = raw.size - raw.size % record
            raise ParseError(f"{file}: truncated record at byte offset {offset}")
        rows = raw.reshape(-1, record)
        lab = rows[:, label_bytes - 1].astype(np.intp)
        bad = np.flatnonzero(lab >= num_classes)
        if bad.size:
            offset = int(bad[0]) * record + label_bytes - 1
            raise ParseError(f"{file}: label {lab[bad[0]]} >= {num_classes} at byte offset {offset}")
        feats.append(rows[:, label_bytes:].astype(np.float64) / 255.0)
        labels.append(lab)
    X = np.concatenate(feats) if feats else np.zeros((0, CIFAR_PIXELS))
    y = np.concatenate(labels) if labels else np.zeros(0, dtype=np.intp)
    return LabeledDataset(X, y, num_classes)


def load_cifar100_binary(path) -> LabeledDataset:
    return load_cifar10_binary(path, num_classes=100, label_bytes=2)


def write_cifar_binary(path, images: Iterable[np.ndarray], labels: Iterable[int]) -> None:
    """Write CIFAR-10 style records; ``images`` are 3072 uint8 values each."""
    with open(path, "wb") as fh:
        for img, lab in zip(images, labels):
            fh.write(bytes([int(lab)]))
            fh.write(np.asarray(img, dtype=np.uint8).reshape(CIFAR_PIXELS).tobytes())
