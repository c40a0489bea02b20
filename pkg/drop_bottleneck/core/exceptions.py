"""
오류 계층
"""


class DropBottleneckError(ValueError):
    """라이브러리 공통 오류"""


# db-core
class InvalidDimensionError(DropBottleneckError):
    """차원 수가 1 미만"""


class InvalidTemperatureError(DropBottleneckError):
    """Concrete 온도가 양수가 아님"""


class DegenerateDropError(DropBottleneckError):
    """모든 차원이 드롭되는 극한 (스케일 발산)"""


class EmptyRepresentationError(DropBottleneckError):
    """결정적 표현에 남는 차원이 없음"""


class InsufficientSamplesError(DropBottleneckError):
    """엔트로피 추정 표본 부족"""


class DimensionMismatchError(DropBottleneckError):
    """입력 차원 불일치"""


class OracleSizeError(DropBottleneckError):
    """완전 열거 오라클의 상태 공간 초과"""


# mi-estimation
class EmptyInputError(DropBottleneckError):
    """빈 점수 벡터"""


class CannotShuffleError(DropBottleneckError):
    """셔플할 행이 2개 미만"""


class InvalidSelectionError(DropBottleneckError):
    """선택 개수 범위 오류"""


# ib-train / explore-rl
class EmptyBufferError(DropBottleneckError):
    """학습 버퍼가 비어 있음"""


class EmptyBatchError(DropBottleneckError):
    """업데이트 배치가 비어 있음"""


class RolloutError(DropBottleneckError):
    """환경 실행 중 오류"""


# noisy-envs
class InvalidMapError(DropBottleneckError):
    """맵에 사용할 수 있는 칸이 없음"""


class InvalidActionError(DropBottleneckError):
    """정의되지 않은 행동 인덱스"""


# cli
class ConfigError(DropBottleneckError):
    """실험 설정 오류"""


class ConfigMismatchError(ConfigError):
    """d 또는 β가 다른 실행 결과를 섞으려 함"""


class MissingRunError(DropBottleneckError):
    """참조 실행 결과 없음"""


class MissingMetricsError(DropBottleneckError):
    """메트릭 CSV 없음"""


class CheckpointError(DropBottleneckError):
    """체크포인트 저장/복원 오류"""
