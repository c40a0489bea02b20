"""
도메인 데이터 타입
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
import torch

from drop_bottleneck.core.exceptions import DimensionMismatchError, DropBottleneckError


class MaskMode(str, Enum):
    """마스크 샘플링 모드"""
    HARD = "hard"
    RELAXED = "relaxed"


class PairingMode(str, Enum):
    """(z, y) 쌍 구성 방식"""
    JOINT = "joint"
    MARGINAL = "marginal"


class VIBMode(str, Enum):
    """VIB 출력 모드"""
    SAMPLE = "sample"
    MODE = "mode"


class RepresentationVariant(str, Enum):
    """탐험용 표현 학습 방식"""
    DB = "db"
    VIB = "vib"
    NO_DROP = "no_drop"


class SpawnPolicy(str, Enum):
    """보상 희소성 (시작 위치 정책)"""
    DENSE = "dense"
    SPARSE = "sparse"
    VERY_SPARSE = "very_sparse"


class NoiseMode(str, Enum):
    """Noisy-TV 관측 손상 방식"""
    ORIGINAL = "original"
    IMAGE_ACTION = "image_action"
    NOISE = "noise"
    NOISE_ACTION = "noise_action"


@dataclass
class MaskBatch:
    """n × d 유지 마스크"""
    values: torch.Tensor
    mode: MaskMode


@dataclass
class CompressedBatch:
    """압축 표현 Z = scale · mask ⊙ X"""
    values: torch.Tensor
    mask: MaskBatch
    scale: torch.Tensor


@dataclass
class EntropyEstimate:
    """차원별 엔트로피 (nats)"""
    entropies: np.ndarray
    bin_count: int
    bin_edges: List[np.ndarray] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return int(self.entropies.shape[0])

    def as_tensor(self, like: torch.Tensor) -> torch.Tensor:
        """상수 텐서로 변환 (그래디언트 없음)"""
        return torch.as_tensor(self.entropies, dtype=like.dtype, device=like.device)


@dataclass
class DiscretePMF:
    """작은 이산 정의역 위의 결합 확률표 (오라클 입력)"""
    support: List[np.ndarray]
    table: np.ndarray

    def __post_init__(self):
        self.support = [np.asarray(values, dtype=np.float64) for values in self.support]
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.shape != tuple(len(values) for values in self.support):
            raise DimensionMismatchError("joint table shape does not match support sizes")
        if np.any(self.table < 0):
            raise DropBottleneckError("probabilities must be nonnegative")
        if abs(self.table.sum() - 1.0) > 1e-12:
            raise DropBottleneckError("probabilities must sum to 1")

    @property
    def dim(self) -> int:
        return len(self.support)

    @property
    def support_sizes(self) -> Sequence[int]:
        return self.table.shape


@dataclass
class PairBatch:
    """판별자 입력 쌍"""
    z: torch.Tensor
    y: torch.Tensor
    pairing: PairingMode = PairingMode.JOINT


@dataclass
class Transition:
    """(S, A, r, S', done)"""
    state: np.ndarray
    action: int
    task_reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class EpisodeStats:
    """에피소드 통계 (CSV 한 행)"""
    episode: int
    step: int
    episode_return: float
    intrinsic_sum: float
    length: int
    success: bool


@dataclass
class StepMetrics:
    """학습 한 스텝의 손실 구성요소"""
    step: int
    loss: float
    mi_estimate: float
    compression: float
    mean_p: float
    discriminator_mi: Optional[float] = None
