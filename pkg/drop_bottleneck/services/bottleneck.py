"""
Drop-Bottleneck 압축 계층
차원별 드롭 확률 학습, 확률적/결정적 압축, Concrete 완화, 엔트로피 추정
"""
from typing import Optional, Union

import numpy as np
import torch
import torch.nn as nn
from scipy.stats import entropy as histogram_entropy

from drop_bottleneck.core.exceptions import (
    DegenerateDropError, DimensionMismatchError, DropBottleneckError, EmptyRepresentationError,
    InsufficientSamplesError, InvalidDimensionError, InvalidTemperatureError,
)
from drop_bottleneck.models.domain import CompressedBatch, EntropyEstimate, MaskBatch, MaskMode

DEFAULT_TEMPERATURE = 0.1
DEFAULT_BIN_COUNT = 32
INIT_LOW = -2.0
INIT_HIGH = 1.0
# d − Σp < ε·d 이면 스케일 b를 거부
DEGENERATE_EPS = 1e-6
CONSTANT_COLUMN_WIDTH = 1e-12

ArrayLike = Union[np.ndarray, torch.Tensor]


class DropParams(nn.Module):
    """드롭 확률 p = σ(p′)의 로짓 p′와 Concrete 온도 λ"""

    def __init__(self, logits: torch.Tensor, temperature: float = DEFAULT_TEMPERATURE,
                 detach_scale: bool = False):
        super().__init__()
        if logits.dim() != 1 or logits.shape[0] < 1:
            raise InvalidDimensionError(f"logits must be a non-empty vector, got shape {tuple(logits.shape)}")
        if temperature <= 0:
            raise InvalidTemperatureError(f"temperature must be positive, got {temperature}")
        self.logits = nn.Parameter(logits.clone())
        # 체크포인트에 λ가 함께 저장되도록 버퍼로 둔다
        self.register_buffer("temperature", torch.tensor(float(temperature), dtype=logits.dtype))
        self.detach_scale = detach_scale

    @property
    def dim(self) -> int:
        return int(self.logits.shape[0])

    def probabilities(self) -> torch.Tensor:
        return drop_probabilities(self)

    def retained_dims(self) -> int:
        """결정적 표현에 남는 차원 수 (p_i < 0.5)"""
        with torch.no_grad():
            return int((self.probabilities() < 0.5).sum().item())

    def extra_repr(self) -> str:
        return f"d={self.dim}, temperature={float(self.temperature):g}, detach_scale={self.detach_scale}"


def drop_probabilities(params: DropParams) -> torch.Tensor:
    """p_i = σ(p′_i)"""
    return torch.sigmoid(params.logits)


def init_drop_params(d: int, a: float = INIT_LOW, b: float = INIT_HIGH,
                     rng: Optional[torch.Generator] = None,
                     temperature: float = DEFAULT_TEMPERATURE,
                     detach_scale: bool = False,
                     dtype: Optional[torch.dtype] = None) -> DropParams:
    """p′_i ~ Uniform(a, b) 로 초기화"""
    if d <= 0:
        raise InvalidDimensionError(f"d must be >= 1, got {d}")
    if a > b:
        raise DropBottleneckError(f"init range must satisfy a <= b, got ({a}, {b})")
    uniform = torch.rand(d, generator=rng, dtype=dtype)
    logits = a + (b - a) * uniform
    return DropParams(logits, temperature=temperature, detach_scale=detach_scale)


def scale_factor(p: torch.Tensor) -> torch.Tensor:
    """b = d / (d − Σ p_k)"""
    d = p.shape[-1]
    remaining = d - p.sum()
    if float(remaining) < DEGENERATE_EPS * d:
        raise DegenerateDropError(
            f"sum of drop probabilities {float(p.sum()):.6g} is within {DEGENERATE_EPS * d:g} of d={d}"
        )
    return d / remaining


def sample_mask_hard(params: DropParams, n: int, rng: Optional[torch.Generator] = None) -> MaskBatch:
    """유지 변수 ~ Bernoulli(1 − p_i)"""
    if n < 1:
        raise InvalidDimensionError(f"n must be >= 1, got {n}")
    with torch.no_grad():
        keep = 1.0 - drop_probabilities(params)
        u = torch.rand((n, params.dim), generator=rng, dtype=keep.dtype, device=keep.device)
        values = (u < keep).to(keep.dtype)
    return MaskBatch(values=values, mode=MaskMode.HARD)


def sample_uniform_noise(n: int, d: int, rng: Optional[torch.Generator] = None,
                         dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Concrete 완화용 u ~ Uniform(0, 1), 양 끝을 피해서"""
    tiny = torch.finfo(dtype).tiny
    u = torch.rand((n, d), generator=rng, dtype=dtype)
    return u.clamp(min=tiny, max=1.0 - torch.finfo(dtype).eps)


def sample_mask_concrete(params: DropParams, n: int, rng: Optional[torch.Generator] = None,
                         u: Optional[torch.Tensor] = None) -> MaskBatch:
    """σ((logit(1 − p_i) + log u − log(1 − u)) / λ)

    logit(1 − p_i) = −p′_i 이므로 로짓에서 바로 계산한다. u를 넘기면 고정된 잡음으로 평가.
    """
    temperature = float(params.temperature)
    if temperature <= 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {temperature}")
    if n < 1:
        raise InvalidDimensionError(f"n must be >= 1, got {n}")
    if u is None:
        u = sample_uniform_noise(n, params.dim, rng, dtype=params.logits.dtype)
    elif u.shape != (n, params.dim):
        raise DimensionMismatchError(f"noise shape {tuple(u.shape)} != {(n, params.dim)}")
    keep_logit = -params.logits
    relaxed = torch.sigmoid((keep_logit + torch.log(u) - torch.log1p(-u)) / params.temperature)
    eps = torch.finfo(relaxed.dtype).eps
    # 열린 구간 (0, 1) 유지
    relaxed = relaxed.clamp(min=eps, max=1.0 - eps)
    return MaskBatch(values=relaxed, mode=MaskMode.RELAXED)


def _check_features(X: torch.Tensor, params: DropParams):
    if X.dim() != 2:
        raise DimensionMismatchError(f"feature batch must be n x d, got shape {tuple(X.shape)}")
    if X.shape[1] != params.dim:
        raise DimensionMismatchError(f"feature width {X.shape[1]} != drop params d={params.dim}")


def apply_mask(X: torch.Tensor, params: DropParams, mask: MaskBatch) -> CompressedBatch:
    """주어진 마스크로 Z = b · mask ⊙ X"""
    _check_features(X, params)
    b = scale_factor(drop_probabilities(params))
    if params.detach_scale:
        b = b.detach()
    return CompressedBatch(values=b * mask.values * X, mask=mask, scale=b)


def compress_stochastic(X: torch.Tensor, params: DropParams, mask_mode: MaskMode = MaskMode.RELAXED,
                        rng: Optional[torch.Generator] = None,
                        u: Optional[torch.Tensor] = None) -> CompressedBatch:
    """확률적 압축 (학습: relaxed, 평가: hard)"""
    _check_features(X, params)
    mask_mode = MaskMode(mask_mode)
    if mask_mode == MaskMode.HARD:
        mask = sample_mask_hard(params, X.shape[0], rng)
    else:
        mask = sample_mask_concrete(params, X.shape[0], rng, u=u)
    return apply_mask(X, params, mask)


def compress_deterministic(X: torch.Tensor, params: DropParams) -> CompressedBatch:
    """Z̄ = b̄ · 1(p_i < 0.5) ⊙ X, b̄ = d / #{p_k < 0.5}"""
    _check_features(X, params)
    keep = (drop_probabilities(params) < 0.5).to(X.dtype).detach()
    kept = int(keep.sum().item())
    if kept == 0:
        raise EmptyRepresentationError("all drop probabilities are >= 0.5")
    b_bar = torch.tensor(params.dim / kept, dtype=X.dtype, device=X.device)
    mask = MaskBatch(values=keep.expand(X.shape[0], -1), mode=MaskMode.HARD)
    return CompressedBatch(values=b_bar * keep * X, mask=mask, scale=b_bar)


def deterministic_or_zero(X: torch.Tensor, params: DropParams) -> torch.Tensor:
    """남는 차원이 없으면 영벡터 표현"""
    try:
        return compress_deterministic(X, params).values
    except EmptyRepresentationError:
        return torch.zeros_like(X)


def estimate_entropy_binning(X: ArrayLike, bin_count: int = DEFAULT_BIN_COUNT) -> EntropyEstimate:
    """등간격 구간화로 차원별 엔트로피 H(X_i) 추정 (nats, 미분 불가)"""
    if isinstance(X, torch.Tensor):
        X = X.detach().cpu().numpy()
    values = np.asarray(X, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionMismatchError(f"feature batch must be n x d, got shape {values.shape}")
    if values.shape[0] < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {values.shape[0]}")
    if bin_count < 2:
        raise DropBottleneckError(f"bin_count must be >= 2, got {bin_count}")

    entropies = np.zeros(values.shape[1])
    edges = []
    for i in range(values.shape[1]):
        column = values[:, i]
        lo, hi = float(column.min()), float(column.max())
        if hi - lo < CONSTANT_COLUMN_WIDTH:
            edges.append(np.array([lo, hi]))
            continue
        counts, column_edges = np.histogram(column, bins=bin_count, range=(lo, hi))
        entropies[i] = histogram_entropy(counts)
        edges.append(column_edges)
    return EntropyEstimate(entropies=entropies, bin_count=bin_count, bin_edges=edges)


def compression_term(H: EntropyEstimate, params: DropParams) -> torch.Tensor:
    """Σ_i H(X_i) (1 − p_i), H는 상수"""
    if H.dim != params.dim:
        raise DimensionMismatchError(f"entropy estimate d={H.dim} != drop params d={params.dim}")
    p = drop_probabilities(params)
    return (H.as_tensor(p) * (1.0 - p)).sum()
