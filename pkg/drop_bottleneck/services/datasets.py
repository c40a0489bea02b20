"""
합성 데이터셋
클래스 조건부 가우시안 관련 차원 + 독립 잡음 차원, 주/방해 레이블 데이터
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch

from drop_bottleneck.core.exceptions import DropBottleneckError


@dataclass
class SyntheticDataset:
    """X (n × d), 레이블, 관련 차원 마스크"""
    X: np.ndarray
    labels: np.ndarray
    relevant: np.ndarray
    n_classes: int
    nuisance_labels: Optional[np.ndarray] = None
    n_nuisance_classes: int = 0

    def __len__(self) -> int:
        return int(self.X.shape[0])

    @property
    def d(self) -> int:
        return int(self.X.shape[1])

    def tensors(self, dtype: torch.dtype = torch.float32) -> Tuple[torch.Tensor, torch.Tensor]:
        return torch.as_tensor(self.X, dtype=dtype), torch.as_tensor(self.labels, dtype=torch.int64)

    def one_hot_labels(self) -> np.ndarray:
        return np.eye(self.n_classes, dtype=np.float32)[self.labels]

    def subset(self, index: np.ndarray) -> "SyntheticDataset":
        return SyntheticDataset(
            X=self.X[index], labels=self.labels[index], relevant=self.relevant,
            n_classes=self.n_classes,
            nuisance_labels=None if self.nuisance_labels is None else self.nuisance_labels[index],
            n_nuisance_classes=self.n_nuisance_classes,
        )


def _class_block(labels: np.ndarray, n_classes: int, width: int, separation: float,
                 noise_std: float, rng: np.random.Generator) -> np.ndarray:
    means = rng.normal(0.0, separation, size=(n_classes, width))
    return means[labels] + rng.normal(0.0, noise_std, size=(labels.shape[0], width))


def make_relevance_dataset(n: int, d: int, k: int, n_classes: int, rng: np.random.Generator,
                           separation: float = 2.0, noise_std: float = 1.0,
                           shuffle_dims: bool = True) -> SyntheticDataset:
    """k개 관련 차원은 레이블 조건부 가우시안, 나머지 d − k는 표준정규 잡음"""
    if not 0 <= k <= d:
        raise DropBottleneckError(f"k must be in [0, d], got k={k}, d={d}")
    if n < 2:
        raise DropBottleneckError(f"need at least 2 samples, got {n}")
    labels = rng.integers(n_classes, size=n)
    X = np.empty((n, d))
    relevant = np.zeros(d, dtype=bool)
    dims = rng.permutation(d) if shuffle_dims else np.arange(d)
    relevant_dims, noise_dims = dims[:k], dims[k:]
    relevant[relevant_dims] = True
    X[:, relevant_dims] = _class_block(labels, n_classes, k, separation, noise_std, rng)
    X[:, noise_dims] = rng.standard_normal((n, d - k))
    return SyntheticDataset(X=X.astype(np.float32), labels=labels, relevant=relevant, n_classes=n_classes)


def make_nuisance_dataset(n: int, d_primary: int, d_nuisance: int, d_noise: int,
                          n_classes: int, n_nuisance_classes: int, rng: np.random.Generator,
                          separation: float = 2.0, noise_std: float = 1.0) -> SyntheticDataset:
    """[주 레이블 블록 | 방해 레이블 블록 | 잡음], 두 레이블은 서로 독립"""
    labels = rng.integers(n_classes, size=n)
    nuisance = rng.integers(n_nuisance_classes, size=n)
    X = np.concatenate([
        _class_block(labels, n_classes, d_primary, separation, noise_std, rng),
        _class_block(nuisance, n_nuisance_classes, d_nuisance, separation, noise_std, rng),
        rng.standard_normal((n, d_noise)),
    ], axis=1)
    relevant = np.zeros(X.shape[1], dtype=bool)
    relevant[:d_primary] = True
    return SyntheticDataset(X=X.astype(np.float32), labels=labels, relevant=relevant, n_classes=n_classes,
                            nuisance_labels=nuisance, n_nuisance_classes=n_nuisance_classes)


def train_test_split(dataset: SyntheticDataset, n_test: int,
                     rng: np.random.Generator) -> Tuple[SyntheticDataset, SyntheticDataset]:
    if not 0 < n_test < len(dataset):
        raise DropBottleneckError(f"n_test must be in (0, {len(dataset)}), got {n_test}")
    order = rng.permutation(len(dataset))
    return dataset.subset(order[n_test:]), dataset.subset(order[:n_test])
