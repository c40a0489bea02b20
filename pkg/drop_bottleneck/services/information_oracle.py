"""
완전 열거 정보량 오라클
작은 이산 분포에서 I(Z; X), TC(Z), H(X_i)를 정확히 계산 (압축항 상계 검증용)
"""
import itertools
from typing import Tuple

import numpy as np
from scipy.stats import entropy as discrete_entropy

from drop_bottleneck.core.exceptions import DimensionMismatchError, OracleSizeError
from drop_bottleneck.models.domain import DiscretePMF, EntropyEstimate

MAX_ORACLE_STATES = 10 ** 6


def _as_probabilities(p) -> np.ndarray:
    if hasattr(p, "detach"):
        p = p.detach().cpu().numpy()
    return np.asarray(p, dtype=np.float64)


def _entropy_of_outcomes(outcomes: np.ndarray, weights: np.ndarray) -> float:
    """같은 행을 하나의 사건으로 묶은 뒤의 엔트로피"""
    _, inverse = np.unique(outcomes, axis=0, return_inverse=True)
    masses = np.bincount(inverse.reshape(-1), weights=weights)
    return float(discrete_entropy(masses[masses > 0]))


def _enumerate(pmf: DiscretePMF, p) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(x 인덱스, z 값, 확률) 전체 열거, b는 p로 고정"""
    p = _as_probabilities(p)
    if p.shape != (pmf.dim,):
        raise DimensionMismatchError(f"p has shape {p.shape}, expected ({pmf.dim},)")
    states = int(np.prod(pmf.support_sizes)) * 2 ** pmf.dim
    if states > MAX_ORACLE_STATES:
        raise OracleSizeError(f"{states} joint states exceed the oracle limit {MAX_ORACLE_STATES}")

    d = pmf.dim
    remaining = d - p.sum()
    # p가 모두 1이면 Z는 항상 0, b는 쓰이지 않는다
    b = d / remaining if remaining > 0 else 0.0

    x_index = np.array(list(itertools.product(*(range(size) for size in pmf.support_sizes))), dtype=np.int64)
    x_values = np.stack([pmf.support[i][x_index[:, i]] for i in range(d)], axis=1)
    x_mass = pmf.table[tuple(x_index.T)]

    masks = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.float64)
    mask_mass = np.prod(np.where(masks == 1, 1.0 - p, p), axis=1)

    n_x, n_m = len(x_index), len(masks)
    z = (b * masks[None, :, :] * x_values[:, None, :]).reshape(n_x * n_m, d)
    # -0.0 과 0.0 을 같은 값으로
    z = z + 0.0
    weights = (x_mass[:, None] * mask_mass[None, :]).reshape(-1)
    joint_x = np.repeat(x_index, n_m, axis=0)
    return joint_x, z, weights


def brute_force_mi(pmf: DiscretePMF, p) -> float:
    """I(Z; X) = H(X) + H(Z) − H(X, Z), nats"""
    x_index, z, weights = _enumerate(pmf, p)
    h_x = float(discrete_entropy(pmf.table.reshape(-1)[pmf.table.reshape(-1) > 0]))
    h_z = _entropy_of_outcomes(z, weights)
    h_xz = _entropy_of_outcomes(np.concatenate([x_index.astype(np.float64), z], axis=1), weights)
    return h_x + h_z - h_xz


def total_correlation(pmf: DiscretePMF, p) -> float:
    """TC(Z) = Σ H(Z_i) − H(Z)"""
    _, z, weights = _enumerate(pmf, p)
    marginals = sum(_entropy_of_outcomes(z[:, [i]], weights) for i in range(pmf.dim))
    return marginals - _entropy_of_outcomes(z, weights)


def exact_entropy_estimate(pmf: DiscretePMF) -> EntropyEstimate:
    """정확한 주변 엔트로피 H(X_i)를 EntropyEstimate 형태로"""
    entropies = []
    for i in range(pmf.dim):
        axes = tuple(j for j in range(pmf.dim) if j != i)
        marginal = pmf.table.sum(axis=axes)
        entropies.append(float(discrete_entropy(marginal[marginal > 0])))
    return EntropyEstimate(
        entropies=np.array(entropies),
        bin_count=max(max(pmf.support_sizes), 2),
        bin_edges=list(pmf.support),
    )
