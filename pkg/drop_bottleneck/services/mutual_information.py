"""
상호정보량 추정
Deep Infomax JSD 추정기와 판별자, 주변분포 쌍 구성, kNN 기반 특징 점수
"""
import math
from typing import List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.feature_selection import mutual_info_classif

from drop_bottleneck.core.exceptions import (
    CannotShuffleError, DimensionMismatchError, EmptyInputError, InsufficientSamplesError,
    InvalidSelectionError,
)
from drop_bottleneck.core.logging import CustomLogger
from drop_bottleneck.models.domain import PairBatch, PairingMode

logger = CustomLogger(__name__)

DISCRIMINATOR_HIDDEN = (64, 32, 16)
DEFAULT_KNN_NEIGHBORS = 3
CONSTANT_FEATURE_WIDTH = 1e-12
LOG4 = math.log(4.0)


class Discriminator(nn.Module):
    """T_ψ(z, y): 연결된 (z, y)를 실수 점수로"""

    def __init__(self, z_dim: int, y_dim: int, hidden: Sequence[int] = DISCRIMINATOR_HIDDEN,
                 zero_init_output: bool = False):
        super().__init__()
        self.z_dim = z_dim
        self.y_dim = y_dim
        layers: List[nn.Module] = []
        width = z_dim + y_dim
        for units in hidden:
            layers += [nn.Linear(width, units), nn.ReLU()]
            width = units
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(width, 1)
        if zero_init_output:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, z: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.z_dim or y.shape[-1] != self.y_dim:
            raise DimensionMismatchError(
                f"discriminator expects z:{self.z_dim}, y:{self.y_dim}; got z:{z.shape[-1]}, y:{y.shape[-1]}"
            )
        return self.head(self.body(torch.cat([z, y], dim=-1))).squeeze(-1)


def discriminator_score(disc: Discriminator, z: torch.Tensor, y: torch.Tensor) -> float:
    """단일 (z, y) 쌍의 점수"""
    if z.dim() != 1 or y.dim() != 1:
        raise DimensionMismatchError("discriminator_score takes single vectors")
    with torch.no_grad():
        return float(disc(z.unsqueeze(0), y.unsqueeze(0))[0])


def jsd_mi_estimate(joint_scores: torch.Tensor, marginal_scores: torch.Tensor) -> torch.Tensor:
    """½(E_joint[−ζ(−T)] − E_marginal[ζ(T)] + log 4)"""
    if joint_scores.numel() == 0 or marginal_scores.numel() == 0:
        raise EmptyInputError("score vectors must be non-empty")
    joint_term = -F.softplus(-joint_scores).mean()
    marginal_term = F.softplus(marginal_scores).mean()
    return 0.5 * (joint_term - marginal_term + LOG4)


def make_marginal_pairs(batch: PairBatch, rng: Optional[torch.Generator] = None) -> PairBatch:
    """y 행만 균등 순열로 섞음 (자기 자신과의 짝은 허용)"""
    n = batch.y.shape[0]
    if n < 2:
        raise CannotShuffleError(f"need at least 2 rows to shuffle, got {n}")
    permutation = torch.randperm(n, generator=rng, device=batch.y.device)
    return PairBatch(z=batch.z, y=batch.y[permutation], pairing=PairingMode.MARGINAL)


def jsd_from_pairs(disc: Discriminator, batch: PairBatch,
                   rng: Optional[torch.Generator] = None) -> torch.Tensor:
    """결합 쌍과 셔플 쌍 점수로 I^JSD 계산"""
    marginal = make_marginal_pairs(batch, rng)
    return jsd_mi_estimate(disc(batch.z, batch.y), disc(marginal.z, marginal.y))


def train_discriminator(disc: Discriminator, z: torch.Tensor, y: torch.Tensor, epochs: int,
                        lr: float = 1e-3, batch_size: int = 512,
                        rng: Optional[torch.Generator] = None,
                        optimizer: Optional[torch.optim.Optimizer] = None) -> List[float]:
    """고정된 (z, y)에 대해 T_ψ만 학습 (I^JSD 최대화)"""
    z, y = z.detach(), y.detach()
    optimizer = optimizer or torch.optim.Adam(disc.parameters(), lr=lr)
    n = z.shape[0]
    trace = []
    for _ in range(epochs):
        order = torch.randperm(n, generator=rng)
        for start in range(0, n, batch_size):
            index = order[start:start + batch_size]
            if len(index) < 2:
                continue
            estimate = jsd_from_pairs(disc, PairBatch(z=z[index], y=y[index]), rng)
            optimizer.zero_grad()
            (-estimate).backward()
            optimizer.step()
            trace.append(float(estimate.detach()))
    return trace


def estimate_mi(disc: Discriminator, z: torch.Tensor, y: torch.Tensor,
                rng: Optional[torch.Generator] = None) -> float:
    """학습된 판별자로 전체 표본의 I^JSD 평가"""
    with torch.no_grad():
        return float(jsd_from_pairs(disc, PairBatch(z=z, y=y), rng))


def knn_mi_scores(X: Union[np.ndarray, torch.Tensor], labels: Union[np.ndarray, torch.Tensor],
                  k: int = DEFAULT_KNN_NEIGHBORS, random_state: int = 0) -> np.ndarray:
    """연속 특징 X_i와 이산 레이블의 차원별 kNN 상호정보량 (음수는 0으로)"""
    if isinstance(X, torch.Tensor):
        X = X.detach().cpu().numpy()
    if isinstance(labels, torch.Tensor):
        labels = labels.detach().cpu().numpy()
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != labels.shape[0]:
        raise DimensionMismatchError(f"features {X.shape} and labels {labels.shape} are not aligned")
    if k < 1 or X.shape[0] <= k:
        raise InsufficientSamplesError(f"need n > k >= 1, got n={X.shape[0]}, k={k}")
    scores = np.zeros(X.shape[1])
    # 상수 열은 정보가 없다 (sklearn의 미세 잡음 주입 전에 제외)
    varying = np.ptp(X, axis=0) > CONSTANT_FEATURE_WIDTH
    if varying.any():
        scores[varying] = mutual_info_classif(
            X[:, varying], labels,
            discrete_features=False,
            n_neighbors=k,
            random_state=random_state,
        )
    scores = np.maximum(scores, 0.0)
    logger.debug("Computed kNN MI scores", d=X.shape[1], k=k, max_score=float(scores.max()))
    return scores


def select_top_features(scores: Union[np.ndarray, Sequence[float]], m: int) -> List[int]:
    """점수 상위 m개 인덱스, 동점은 낮은 인덱스 우선"""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= m <= scores.shape[0]:
        raise InvalidSelectionError(f"m must be in [1, {scores.shape[0]}], got {m}")
    order = np.argsort(-scores, kind="stable")
    return sorted(int(i) for i in order[:m])
