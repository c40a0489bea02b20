"""
실험 설정 모델
JSON 설정 파일(섹션: experiment, model, train, env, output) 로드, 주석 키 제거, 점 경로 오버라이드
"""
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from drop_bottleneck.core.exceptions import ConfigError
from drop_bottleneck.models.domain import NoiseMode, SpawnPolicy


class ExperimentKind(str, Enum):
    """실험 종류"""
    FEATURE_IDENTIFICATION = "feature_identification"
    NUISANCE_PROBE = "nuisance_probe"
    EXPLORATION = "exploration"
    SUPERVISED_SWEEP = "supervised_sweep"
    FEATURE_SELECTION = "feature_selection"


class ExplorationMethod(str, Enum):
    """탐험 실험의 비교 방법"""
    PPO = "ppo"
    PPO_DB = "ppo_db"
    PPO_VIB = "ppo_vib"
    PPO_NO_DROP = "ppo_no_drop"
    PPO_ICM = "ppo_icm"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class ExperimentSection(_Section):
    """실험 메타 정보"""
    kind: ExperimentKind
    name: str = Field(default="run")
    seed: int = Field(default=0, ge=0)
    seeds: List[int] = Field(default_factory=list, description="sweep/다중 시드 실행용")
    beta_grid: List[float] = Field(default_factory=list, description="β 그리드 (sweep)")
    methods: List[ExplorationMethod] = Field(
        default_factory=lambda: [ExplorationMethod.PPO, ExplorationMethod.PPO_DB]
    )
    include_vib: bool = Field(default=False, description="방해 레이블 실험에 VIB 기준선 추가")

    def seed_list(self) -> List[int]:
        return list(self.seeds) if self.seeds else [self.seed]


class ModelSection(_Section):
    """표현 모델 하이퍼파라미터"""
    d: int = Field(default=128, ge=1)
    hidden: int = Field(default=128, ge=1)
    use_extractor: bool = Field(default=True)
    beta: float = Field(default=0.001 / 128, ge=0)
    vib_beta: float = Field(default=0.0005 / 128, ge=0)
    temperature: float = Field(default=0.1, gt=0)
    n_dup: int = Field(default=50, ge=1)
    init_low: float = Field(default=-2.0)
    init_high: float = Field(default=1.0)
    detach_scale: bool = Field(default=False)
    bin_count: int = Field(default=32, ge=2)
    classifier_hidden: int = Field(default=0, ge=0, description="0이면 선형 분류기")
    icm_forward_weight: float = Field(default=0.2, ge=0, le=1, description="호기심 모델의 순모델 손실 비중")
    icm_reward_strength: float = Field(default=1.0, ge=0, description="순모델 예측 오차 보상 계수")

    @model_validator(mode="after")
    def _check_init_range(self):
        if self.init_low > self.init_high:
            raise ValueError("init_low must not exceed init_high")
        return self


class PPOConfig(_Section):
    """PPO 에이전트 설정"""
    learning_rate: float = Field(default=2.5e-4, gt=0)
    clip_ratio: float = Field(default=0.2, ge=0)
    entropy_coef: float = Field(default=0.01, ge=0)
    value_coef: float = Field(default=0.5, ge=0)
    gamma: float = Field(default=0.99, ge=0, le=1)
    gae_lambda: float = Field(default=0.95, ge=0, le=1)
    epochs: int = Field(default=4, ge=1)
    minibatch_size: int = Field(default=256, ge=1)
    max_grad_norm: float = Field(default=0.5, gt=0)
    normalize_advantages: bool = Field(default=True)
    hidden: int = Field(default=64, ge=1)


class TrainSection(_Section):
    """최적화 및 학습 주기"""
    learning_rate: float = Field(default=1e-4, gt=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    batch_size: int = Field(default=128, ge=1)
    epochs: int = Field(default=4, ge=0)
    discriminator_epochs: int = Field(default=8, ge=0)
    rounds: int = Field(default=1, ge=1, description="IB 학습 라운드 수 (라운드마다 기록)")
    max_steps: Optional[int] = Field(default=None, ge=1, description="지도학습 최적화 스텝 상한")
    probe_epochs: int = Field(default=30, ge=1, description="고정 표현 위 로지스틱 프로브 에폭")
    probe_learning_rate: float = Field(default=1e-2, gt=0)
    total_env_steps: int = Field(default=100_000, ge=0)
    training_period: int = Field(default=2048, ge=1, description="정책/IB 학습 사이 수집 스텝")
    task_reward_scale: float = Field(default=5.0, ge=0)
    intrinsic_scale: float = Field(default=0.001, ge=0)
    ppo: PPOConfig = Field(default_factory=PPOConfig)


class SyntheticSection(_Section):
    """합성 데이터 생성기"""
    n_train: int = Field(default=4000, ge=2)
    n_test: int = Field(default=1000, ge=2)
    d: int = Field(default=32, ge=1, description="입력 차원")
    k_relevant: int = Field(default=8, ge=0)
    n_classes: int = Field(default=4, ge=2)
    separation: float = Field(default=2.0, gt=0, description="클래스 평균 간격")
    noise_std: float = Field(default=1.0, gt=0)
    d_nuisance: int = Field(default=8, ge=0)
    n_nuisance_classes: int = Field(default=4, ge=2)

    @model_validator(mode="after")
    def _check_relevant(self):
        if self.k_relevant > self.d:
            raise ValueError("k_relevant must not exceed d")
        return self


class EnvSection(_Section):
    """그리드월드 설정 (지도학습 실험은 synthetic 블록 사용)"""
    width: int = Field(default=15, ge=3)
    height: int = Field(default=15, ge=3)
    map_path: Optional[str] = Field(default=None, description="None이면 미로를 생성")
    procedural: bool = Field(default=False, description="에피소드마다 새 미로")
    noise_mode: NoiseMode = Field(default=NoiseMode.NOISE_ACTION)
    spawn_policy: SpawnPolicy = Field(default=SpawnPolicy.VERY_SPARSE)
    max_episode_steps: int = Field(default=300, ge=1)
    tv_dim: int = Field(default=16, ge=1)
    n_patterns: int = Field(default=30, ge=1)
    d_near: int = Field(default=3, ge=1)
    d_far: int = Field(default=20, ge=1)
    synthetic: SyntheticSection = Field(default_factory=SyntheticSection)


class OutputSection(_Section):
    """출력 설정"""
    directory: Optional[str] = Field(default=None)
    checkpoint: bool = Field(default=True)
    plots: bool = Field(default=False)
    reference_run: Optional[str] = Field(default=None, description="특징 선택 기준선이 맞출 DB 실행")
    histogram_bins: int = Field(default=10, ge=2)


class ExperimentConfig(_Section):
    """실험 설정 전체"""
    experiment: ExperimentSection
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    env: EnvSection = Field(default_factory=EnvSection)
    output: OutputSection = Field(default_factory=OutputSection)

    def echo(self) -> Dict[str, Any]:
        """재현용 설정 사본 (JSON 직렬화 가능)"""
        return self.model_dump(mode="json")


def strip_comments(data: Any) -> Any:
    """'_'로 시작하는 주석 키 제거"""
    if isinstance(data, dict):
        return {key: strip_comments(value) for key, value in data.items() if not str(key).startswith("_")}
    if isinstance(data, list):
        return [strip_comments(item) for item in data]
    return data


def parse_override(expression: str):
    """'train.learning_rate=0.01' → (['train', 'learning_rate'], 0.01)"""
    if "=" not in expression:
        raise ConfigError(f"override must look like key=value, got '{expression}'")
    key, raw = expression.split("=", 1)
    path = [part for part in key.strip().split(".") if part]
    if not path:
        raise ConfigError(f"override has an empty key: '{expression}'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    for expression in overrides:
        path, value = parse_override(expression)
        node = data
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override path '{'.'.join(path)}' crosses a non-section value")
            node = child
        node[path[-1]] = value
    return data


def _resolve(path: Optional[str], base_dir: Path) -> Optional[str]:
    if path is None:
        return None
    candidate = Path(path)
    if not candidate.is_absolute():
        candidate = base_dir / candidate
    return str(candidate.resolve())


def config_from_dict(data: Dict[str, Any], base_dir: Union[str, Path] = ".",
                     overrides: Sequence[str] = ()) -> ExperimentConfig:
    """dict → ExperimentConfig (상대 경로는 base_dir 기준)"""
    data = apply_overrides(strip_comments(json.loads(json.dumps(data))), overrides)
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment config: {e.errors(include_url=False)}") from e
    base_dir = Path(base_dir)
    config.env.map_path = _resolve(config.env.map_path, base_dir)
    config.output.reference_run = _resolve(config.output.reference_run, base_dir)
    if config.env.map_path is not None and not Path(config.env.map_path).exists():
        raise ConfigError(f"map file not found: {config.env.map_path}")
    return config


def load_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """JSON 설정 파일 로드"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must contain a JSON object")
    return config_from_dict(data, base_dir=path.parent, overrides=overrides)
