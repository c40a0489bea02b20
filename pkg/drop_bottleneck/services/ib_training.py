"""
IB 목적함수와 학습 루프
Deep Infomax 예측항 + Drop-Bottleneck 압축항, 탐험용 목적함수, 지도학습 변형, VIB 기준선
"""
import copy
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, Field

from drop_bottleneck.core.exceptions import (
    DimensionMismatchError, DropBottleneckError, EmptyBatchError, EmptyBufferError,
)
from drop_bottleneck.core.logging import CustomLogger
from drop_bottleneck.models.domain import (
    EntropyEstimate, MaskMode, PairBatch, RepresentationVariant, StepMetrics, VIBMode,
)
from drop_bottleneck.services.bottleneck import (
    DropParams, compress_stochastic, compression_term, deterministic_or_zero,
    drop_probabilities, estimate_entropy_binning, init_drop_params,
)
from drop_bottleneck.services.monitoring import resource_snapshot
from drop_bottleneck.services.mutual_information import Discriminator, jsd_from_pairs

logger = CustomLogger(__name__)


class IBObjectiveConfig(BaseModel):
    """IB 목적함수 및 학습 설정"""
    beta: float = Field(default=0.001 / 128, ge=0, description="압축항 가중치 β")
    vib_beta: float = Field(default=0.0005 / 128, ge=0, description="VIB 변형의 KL 가중치")
    n_dup: int = Field(default=50, ge=1, description="마스크 복제 횟수")
    temperature: float = Field(default=0.1, gt=0, description="Concrete 온도 λ")
    detach_scale: bool = Field(default=False, description="스케일 b를 상수로 취급 (절제 실험)")
    learning_rate: float = Field(default=1e-4, gt=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    batch_size: int = Field(default=128, ge=1)
    epochs: int = Field(default=4, ge=0, description="라운드당 최적화 에폭 수")
    discriminator_epochs: int = Field(default=8, ge=0, description="미니배치마다 판별자만 추가 학습하는 에폭 수")
    bin_count: int = Field(default=32, ge=2, description="엔트로피 추정 구간 수")
    init_low: float = Field(default=-2.0, description="p′ 초기화 하한 a")
    init_high: float = Field(default=1.0, description="p′ 초기화 상한 b")
    d: int = Field(default=128, ge=1, description="특징 차원")
    hidden: int = Field(default=128, ge=1, description="특징 추출기 은닉 폭")


@dataclass
class LossBreakdown:
    """손실과 구성요소 (total = −mi_estimate + weight · compression)"""
    total: torch.Tensor
    mi_estimate: torch.Tensor
    compression: torch.Tensor
    weight: float


class FeatureExtractor(nn.Module):
    """f_φ: 관측 → d차원 특징 (은닉 2층 완전연결)"""

    def __init__(self, input_dim: int, d: int = 128, hidden: int = 128):
        super().__init__()
        self.input_dim = input_dim
        self.d = d
        self.net = nn.Sequential(
            nn.Linear(input_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, d),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class VIBLayer(nn.Module):
    """가우시안 인코더 N(μ(x), σ²(x)), 사전분포 N(0, I)"""

    def __init__(self, input_dim: int, d: int):
        super().__init__()
        self.d = d
        self.encoder = nn.Linear(input_dim, 2 * d)

    def encode(self, x: torch.Tensor):
        mean, logvar = self.encoder(x).chunk(2, dim=-1)
        return mean, logvar


def vib_forward(layer: VIBLayer, x: torch.Tensor, rng: Optional[torch.Generator] = None,
                mode: VIBMode = VIBMode.SAMPLE) -> torch.Tensor:
    """sample: 재매개변수화 표본, mode: 평균"""
    mean, logvar = layer.encode(x)
    if VIBMode(mode) == VIBMode.MODE:
        return mean
    noise = torch.randn(mean.shape, generator=rng, dtype=mean.dtype, device=mean.device)
    return mean + torch.exp(0.5 * logvar) * noise


def vib_kl_term(layer: VIBLayer, x: torch.Tensor) -> torch.Tensor:
    """KL(N(μ, σ²) ‖ N(0, I)), 배치 평균 (nats)"""
    mean, logvar = layer.encode(x)
    kl = 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar).sum(dim=-1)
    return kl.mean()


def _features(extractor: Optional[nn.Module], x: torch.Tensor) -> torch.Tensor:
    return x if extractor is None else extractor(x)


def infomax_db_loss(x: torch.Tensor, y: torch.Tensor, params: DropParams, disc: Discriminator,
                    beta: float, n_dup: int, entropies: EntropyEstimate,
                    rng: Optional[torch.Generator] = None,
                    compress_target: bool = True) -> LossBreakdown:
    """−I^JSD(Z; Y) + β Σ H(X_i)(1 − p_i), Z = C_p(X)

    각 행을 n_dup번 복제하고 복제본마다 독립 relaxed 마스크를 뽑는다.
    compress_target이면 Y도 같은 p로 압축한다.
    """
    if x.shape[0] == 0:
        raise EmptyBatchError("objective needs a non-empty batch")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatchError(f"batch sizes differ: {x.shape[0]} vs {y.shape[0]}")
    x_rep = x.repeat_interleave(n_dup, dim=0)
    y_rep = y.repeat_interleave(n_dup, dim=0)
    z = compress_stochastic(x_rep, params, MaskMode.RELAXED, rng).values
    if compress_target:
        y_rep = compress_stochastic(y_rep, params, MaskMode.RELAXED, rng).values
    mi = jsd_from_pairs(disc, PairBatch(z=z, y=y_rep), rng)
    compression = compression_term(entropies, params)
    return LossBreakdown(total=-mi + beta * compression, mi_estimate=mi, compression=compression, weight=beta)


def db_exploration_loss(states: torch.Tensor, next_states: torch.Tensor, extractor: Optional[nn.Module],
                        params: DropParams, disc: Discriminator, cfg: IBObjectiveConfig,
                        entropies: EntropyEstimate,
                        rng: Optional[torch.Generator] = None) -> LossBreakdown:
    """X = f_φ(S′), Z = C_p(X), Y = C_p(f_φ(S))"""
    return infomax_db_loss(
        _features(extractor, next_states), _features(extractor, states), params, disc,
        beta=cfg.beta, n_dup=cfg.n_dup, entropies=entropies, rng=rng, compress_target=True,
    )


def vib_exploration_loss(states: torch.Tensor, next_states: torch.Tensor, extractor: Optional[nn.Module],
                         vib: VIBLayer, disc: Discriminator, beta: float, n_dup: int = 1,
                         rng: Optional[torch.Generator] = None) -> LossBreakdown:
    """VIB 표본에 대한 −I^JSD + β·KL"""
    if states.shape[0] == 0:
        raise EmptyBatchError("objective needs a non-empty batch")
    x = _features(extractor, next_states)
    y = _features(extractor, states)
    z = vib_forward(vib, x.repeat_interleave(n_dup, dim=0), rng, VIBMode.SAMPLE)
    y = vib_forward(vib, y.repeat_interleave(n_dup, dim=0), rng, VIBMode.SAMPLE)
    mi = jsd_from_pairs(disc, PairBatch(z=z, y=y), rng)
    kl = vib_kl_term(vib, x)
    return LossBreakdown(total=-mi + beta * kl, mi_estimate=mi, compression=kl, weight=beta)


def no_drop_exploration_loss(states: torch.Tensor, next_states: torch.Tensor, extractor: Optional[nn.Module],
                             disc: Discriminator, rng: Optional[torch.Generator] = None) -> LossBreakdown:
    """압축 없이 특징 전체를 쓰는 절제 변형: −I^JSD(f_φ(S′); f_φ(S))"""
    if states.shape[0] == 0:
        raise EmptyBatchError("objective needs a non-empty batch")
    mi = jsd_from_pairs(disc, PairBatch(z=_features(extractor, next_states), y=_features(extractor, states)), rng)
    zero = torch.zeros((), dtype=mi.dtype)
    return LossBreakdown(total=-mi, mi_estimate=mi, compression=zero, weight=0.0)


def db_supervised_loss(X: torch.Tensor, labels: torch.Tensor, extractor: Optional[nn.Module],
                       params: DropParams, classifier: nn.Module, beta: float,
                       rng: Optional[torch.Generator] = None,
                       entropies: Optional[EntropyEstimate] = None,
                       bin_count: int = 32) -> LossBreakdown:
    """CE(classifier(C_p(f_φ(X))), labels) + β Σ H_i (1 − p_i)"""
    if X.shape[0] != labels.shape[0]:
        raise DimensionMismatchError(f"{X.shape[0]} samples but {labels.shape[0]} labels")
    features = _features(extractor, X)
    if entropies is None:
        entropies = estimate_entropy_binning(features.detach(), bin_count)
    z = compress_stochastic(features, params, MaskMode.RELAXED, rng).values
    prediction = F.cross_entropy(classifier(z), labels)
    compression = compression_term(entropies, params)
    # mi_estimate 자리에는 −CE (예측항의 부호를 맞춤)
    return LossBreakdown(total=prediction + beta * compression, mi_estimate=-prediction,
                         compression=compression, weight=beta)


class InfomaxModel(nn.Module):
    """f_φ, 압축(DB/VIB/없음), T_ψ 묶음

    inputs는 X 쪽(S′ 또는 원본 특징), targets는 Y 쪽(S 또는 레이블 원-핫).
    compress_target이면 targets도 f_φ와 압축을 거친다 (탐험 목적함수).
    """

    def __init__(self, variant: RepresentationVariant, extractor: Optional[FeatureExtractor],
                 discriminator: Discriminator, params: Optional[DropParams] = None,
                 vib: Optional[VIBLayer] = None, compress_target: bool = True):
        super().__init__()
        self.variant = RepresentationVariant(variant)
        self.extractor = extractor
        self.params = params
        self.vib = vib
        self.discriminator = discriminator
        self.compress_target = compress_target
        if self.variant == RepresentationVariant.DB and params is None:
            raise DropBottleneckError("db variant needs DropParams")
        if self.variant == RepresentationVariant.VIB and vib is None:
            raise DropBottleneckError("vib variant needs a VIBLayer")

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return _features(self.extractor, x)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """결정적 임베딩 (에피소드 메모리용, 남는 차원이 없으면 영벡터)"""
        features = self.features(x)
        if self.variant == RepresentationVariant.DB:
            return deterministic_or_zero(features, self.params)
        if self.variant == RepresentationVariant.VIB:
            return vib_forward(self.vib, features, mode=VIBMode.MODE)
        return features

    def feature_entropies(self, inputs: torch.Tensor, bin_count: int) -> Optional[EntropyEstimate]:
        """버퍼 전체의 H(f_φ(S′)_i)"""
        if self.variant != RepresentationVariant.DB:
            return None
        with torch.no_grad():
            return estimate_entropy_binning(self.features(inputs), bin_count)

    def objective(self, inputs: torch.Tensor, targets: torch.Tensor, cfg: IBObjectiveConfig,
                  entropies: Optional[EntropyEstimate], rng: Optional[torch.Generator] = None) -> LossBreakdown:
        if self.variant == RepresentationVariant.DB:
            y = self.features(targets) if self.compress_target else targets
            return infomax_db_loss(
                self.features(inputs), y, self.params, self.discriminator,
                beta=cfg.beta, n_dup=cfg.n_dup, entropies=entropies, rng=rng,
                compress_target=self.compress_target,
            )
        if self.variant == RepresentationVariant.VIB:
            return vib_exploration_loss(targets, inputs, self.extractor, self.vib, self.discriminator,
                                        beta=cfg.vib_beta, n_dup=cfg.n_dup, rng=rng)
        return no_drop_exploration_loss(targets, inputs, self.extractor, self.discriminator, rng)

    def frozen_pairs(self, inputs: torch.Tensor, targets: torch.Tensor, cfg: IBObjectiveConfig,
                     rng: Optional[torch.Generator] = None) -> PairBatch:
        """f_φ와 p를 고정한 채 판별자 추가 학습에 쓸 (z, y)"""
        with torch.no_grad():
            x = self.features(inputs)
            y = self.features(targets) if self.compress_target else targets
            if self.variant == RepresentationVariant.DB:
                x = x.repeat_interleave(cfg.n_dup, dim=0)
                y = y.repeat_interleave(cfg.n_dup, dim=0)
                z = compress_stochastic(x, self.params, MaskMode.RELAXED, rng).values
                if self.compress_target:
                    y = compress_stochastic(y, self.params, MaskMode.RELAXED, rng).values
                return PairBatch(z=z, y=y)
            if self.variant == RepresentationVariant.VIB:
                x = x.repeat_interleave(cfg.n_dup, dim=0)
                y = y.repeat_interleave(cfg.n_dup, dim=0)
                return PairBatch(z=vib_forward(self.vib, x, rng), y=vib_forward(self.vib, y, rng))
            return PairBatch(z=x, y=y)

    def mean_drop_probability(self) -> float:
        if self.params is None:
            return float("nan")
        with torch.no_grad():
            return float(drop_probabilities(self.params).mean())

    def snapshot(self) -> "InfomaxModel":
        """수집 구간 동안 고정해 둘 읽기 전용 사본"""
        frozen = copy.deepcopy(self)
        frozen.eval()
        for parameter in frozen.parameters():
            parameter.requires_grad_(False)
        return frozen


def build_infomax_model(variant: RepresentationVariant, input_dim: int, cfg: IBObjectiveConfig,
                        rng: Optional[torch.Generator] = None, target_dim: Optional[int] = None,
                        use_extractor: bool = True, compress_target: bool = True) -> InfomaxModel:
    """설정으로부터 모델 구성 (rng로 초기화를 결정)"""
    variant = RepresentationVariant(variant)
    d = cfg.d if use_extractor else input_dim
    y_dim = d if compress_target else int(target_dim)
    params = vib = None
    if variant == RepresentationVariant.DB:
        params = init_drop_params(d, cfg.init_low, cfg.init_high, rng,
                                  temperature=cfg.temperature, detach_scale=cfg.detach_scale)
    # nn.Linear 초기화는 전역 생성기를 쓰므로 rng에서 뽑은 시드로 잠시 고정한다
    seed = int(torch.randint(0, 2 ** 62, (1,), generator=rng)) if rng is not None else None
    with torch.random.fork_rng(enabled=seed is not None):
        if seed is not None:
            torch.manual_seed(seed)
        extractor = FeatureExtractor(input_dim, cfg.d, cfg.hidden) if use_extractor else None
        if variant == RepresentationVariant.VIB:
            vib = VIBLayer(d, d)
        discriminator = Discriminator(d, y_dim)
    return InfomaxModel(variant, extractor, discriminator, params=params, vib=vib,
                        compress_target=compress_target)


@dataclass
class TransitionBuffer:
    """IB 목적함수 학습 버퍼 (inputs = S′ 쪽, targets = S 쪽)"""
    inputs: List[np.ndarray] = field(default_factory=list)
    targets: List[np.ndarray] = field(default_factory=list)

    def add(self, target: np.ndarray, source: np.ndarray):
        """전이 (S, S′) 추가"""
        self.targets.append(np.asarray(target, dtype=np.float32))
        self.inputs.append(np.asarray(source, dtype=np.float32))

    def extend_transitions(self, transitions: Sequence) -> "TransitionBuffer":
        for transition in transitions:
            self.add(transition.state, transition.next_state)
        return self

    def clear(self):
        self.inputs.clear()
        self.targets.clear()

    def __len__(self) -> int:
        return len(self.inputs)

    def tensors(self, dtype: torch.dtype = torch.float32):
        if not self.inputs:
            raise EmptyBufferError("training buffer is empty")
        return (torch.as_tensor(np.stack(self.inputs), dtype=dtype),
                torch.as_tensor(np.stack(self.targets), dtype=dtype))

    @classmethod
    def from_arrays(cls, inputs: np.ndarray, targets: np.ndarray) -> "TransitionBuffer":
        buffer = cls()
        buffer.inputs = [np.asarray(row, dtype=np.float32) for row in inputs]
        buffer.targets = [np.asarray(row, dtype=np.float32) for row in targets]
        return buffer


@dataclass
class TrainResult:
    """학습된 모델과 스텝별 손실 기록"""
    model: InfomaxModel
    trace: List[StepMetrics]

    @property
    def extractor(self):
        return self.model.extractor

    @property
    def params(self):
        return self.model.params

    @property
    def discriminator(self):
        return self.model.discriminator


def _minibatches(n: int, batch_size: int, rng: Optional[torch.Generator]) -> Iterator[torch.Tensor]:
    """매 에폭 재셔플된 미니배치 인덱스"""
    order = torch.randperm(n, generator=rng)
    for start in range(0, n, batch_size):
        index = order[start:start + batch_size]
        # 셔플 쌍을 만들 수 없는 1행 배치는 건너뜀
        if len(index) >= 2:
            yield index


class DBTrainer:
    """IB 목적함수 학습기 (라운드 사이에 옵티마이저 상태 유지)"""

    def __init__(self, model: InfomaxModel, cfg: IBObjectiveConfig):
        self.model = model
        self.cfg = cfg
        betas = (cfg.adam_beta1, 0.999)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=betas)
        self.discriminator_optimizer = torch.optim.Adam(
            model.discriminator.parameters(), lr=cfg.learning_rate, betas=betas
        )
        self.global_step = 0
        self.rounds = 0

    def train(self, buffer: TransitionBuffer, rng: Optional[torch.Generator] = None) -> TrainResult:
        """버퍼로 한 라운드 학습"""
        if len(buffer) == 0:
            raise EmptyBufferError("training buffer is empty")
        dtype = next(self.model.parameters()).dtype
        inputs, targets = buffer.tensors(dtype)
        batch_size = min(self.cfg.batch_size, len(buffer))
        trace: List[StepMetrics] = []

        logger.info("IB training round started", round=self.rounds, samples=len(buffer),
                    variant=self.model.variant.value, **resource_snapshot())
        # 엔트로피는 라운드마다 한 번, 에폭 루프 전에 갱신
        entropies = self.model.feature_entropies(inputs, self.cfg.bin_count)
        self.model.train()
        for _ in range(self.cfg.epochs):
            for index in _minibatches(len(buffer), batch_size, rng):
                trace.append(self._step(inputs[index], targets[index], entropies, rng))

        self.rounds += 1
        if trace:
            logger.info("IB training round finished", round=self.rounds, steps=len(trace),
                        loss=trace[-1].loss, mi_estimate=trace[-1].mi_estimate,
                        compression=trace[-1].compression, mean_p=trace[-1].mean_p)
        return TrainResult(model=self.model, trace=trace)

    def _step(self, inputs: torch.Tensor, targets: torch.Tensor,
              entropies: Optional[EntropyEstimate], rng: Optional[torch.Generator]) -> StepMetrics:
        losses = self.model.objective(inputs, targets, self.cfg, entropies, rng)
        self.optimizer.zero_grad()
        losses.total.backward()
        self.optimizer.step()

        discriminator_mi = None
        if self.cfg.discriminator_epochs > 0:
            pairs = self.model.frozen_pairs(inputs, targets, self.cfg, rng)
            for _ in range(self.cfg.discriminator_epochs):
                estimate = jsd_from_pairs(self.model.discriminator, pairs, rng)
                self.discriminator_optimizer.zero_grad()
                (-estimate).backward()
                self.discriminator_optimizer.step()
            discriminator_mi = float(estimate.detach())

        self.global_step += 1
        return StepMetrics(
            step=self.global_step,
            loss=float(losses.total.detach()),
            mi_estimate=float(losses.mi_estimate.detach()),
            compression=float(losses.compression.detach()),
            mean_p=self.model.mean_drop_probability(),
            discriminator_mi=discriminator_mi,
        )


def train_db(buffer: TransitionBuffer, cfg: IBObjectiveConfig, rng: Optional[torch.Generator] = None,
             model: Optional[InfomaxModel] = None, trainer: Optional[DBTrainer] = None) -> TrainResult:
    """버퍼로 f_φ, p, T_ψ 학습 (모델이 없으면 DB 변형으로 새로 구성)"""
    if len(buffer) == 0:
        raise EmptyBufferError("training buffer is empty")
    if trainer is None:
        if model is None:
            input_dim = int(np.asarray(buffer.inputs[0]).shape[-1])
            model = build_infomax_model(RepresentationVariant.DB, input_dim, cfg, rng)
        trainer = DBTrainer(model, cfg)
    return trainer.train(buffer, rng)


@dataclass
class SupervisedResult:
    """지도학습 변형 결과"""
    extractor: Optional[nn.Module]
    params: Optional[DropParams]
    classifier: nn.Module
    trace: List[StepMetrics]
    vib: Optional[VIBLayer] = None


def train_db_supervised(X: torch.Tensor, labels: torch.Tensor, cfg: IBObjectiveConfig,
                        classifier: nn.Module, params: DropParams,
                        extractor: Optional[nn.Module] = None,
                        rng: Optional[torch.Generator] = None,
                        steps: Optional[int] = None) -> SupervisedResult:
    """CE + β·압축항으로 f_φ, p, 분류기 학습 (엔트로피는 에폭 루프 전에 한 번 추정)"""
    if X.shape[0] == 0:
        raise EmptyBufferError("training set is empty")
    modules = nn.ModuleList([m for m in (extractor, params, classifier) if m is not None])
    optimizer = torch.optim.Adam(modules.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, 0.999))
    batch_size = min(cfg.batch_size, X.shape[0])
    trace: List[StepMetrics] = []
    step = 0
    epochs = cfg.epochs if steps is None else math.ceil(steps / math.ceil(X.shape[0] / batch_size))
    with torch.no_grad():
        entropies = estimate_entropy_binning(_features(extractor, X), cfg.bin_count)
    for _ in range(epochs):
        for index in _minibatches(X.shape[0], batch_size, rng):
            losses = db_supervised_loss(X[index], labels[index], extractor, params, classifier,
                                        cfg.beta, rng, entropies=entropies)
            optimizer.zero_grad()
            losses.total.backward()
            optimizer.step()
            step += 1
            trace.append(StepMetrics(step=step, loss=float(losses.total.detach()),
                                     mi_estimate=float(losses.mi_estimate.detach()),
                                     compression=float(losses.compression.detach()),
                                     mean_p=float(drop_probabilities(params).detach().mean())))
            if steps is not None and step >= steps:
                return SupervisedResult(extractor, params, classifier, trace)
    return SupervisedResult(extractor, params, classifier, trace)


def train_vib_supervised(X: torch.Tensor, labels: torch.Tensor, cfg: IBObjectiveConfig,
                         classifier: nn.Module, vib: VIBLayer, beta: float,
                         extractor: Optional[nn.Module] = None,
                         rng: Optional[torch.Generator] = None) -> SupervisedResult:
    """CE + β·KL로 VIB 분류기 학습"""
    if X.shape[0] == 0:
        raise EmptyBufferError("training set is empty")
    modules = nn.ModuleList([m for m in (extractor, vib, classifier) if m is not None])
    optimizer = torch.optim.Adam(modules.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, 0.999))
    batch_size = min(cfg.batch_size, X.shape[0])
    trace: List[StepMetrics] = []
    step = 0
    for _ in range(cfg.epochs):
        for index in _minibatches(X.shape[0], batch_size, rng):
            features = _features(extractor, X[index])
            z = vib_forward(vib, features, rng, VIBMode.SAMPLE)
            prediction = F.cross_entropy(classifier(z), labels[index])
            kl = vib_kl_term(vib, features)
            loss = prediction + beta * kl
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1
            trace.append(StepMetrics(step=step, loss=float(loss.detach()), mi_estimate=float(-prediction.detach()),
                                     compression=float(kl.detach()), mean_p=float("nan")))
    return SupervisedResult(extractor, None, classifier, trace, vib=vib)
