"""
모니터링 및 메트릭 기록
psutil 자원 스냅샷, 스키마 버전이 붙은 CSV 메트릭 기록/읽기
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd
import psutil

from drop_bottleneck.core.config import settings
from drop_bottleneck.core.exceptions import DropBottleneckError, MissingMetricsError
from drop_bottleneck.core.logging import CustomLogger

logger = CustomLogger(__name__)

SCHEMA_VERSION = 1
SCHEMA_LINE = f"# schema={SCHEMA_VERSION}"


def resource_snapshot() -> Dict[str, float]:
    """현재 프로세스의 CPU/메모리 사용량"""
    try:
        process = psutil.Process()
        return {
            "cpu_percent": float(process.cpu_percent(interval=None)),
            "rss_mb": process.memory_info().rss / (1024 * 1024),
        }
    except psutil.Error as e:
        logger.warning(f"Failed to collect resource snapshot: {e}")
        return {"cpu_percent": 0.0, "rss_mb": 0.0}


@dataclass
class MetricsRow:
    """메트릭 한 행 (step + 이름 붙은 스칼라)"""
    step: int
    metrics: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        row = {"step": self.step}
        row.update(self.metrics)
        return row


class MetricsWriter:
    """메트릭 CSV 기록기

    group_by 열 값이 같은 행끼리 step이 단조 증가해야 한다 (시드별 곡선 등).
    """

    def __init__(self, path: Union[str, Path], columns: Sequence[str],
                 group_by: Sequence[str] = ()):
        self.path = Path(path)
        self.columns = list(columns)
        self.group_by = list(group_by)
        self.rows: List[Dict[str, Any]] = []
        self._last_step: Dict[tuple, int] = {}
        self._written = 0

    def append(self, row: Union[MetricsRow, Dict[str, Any]]):
        """행 추가 (step 단조성 확인)"""
        record = row.to_dict() if isinstance(row, MetricsRow) else dict(row)
        unknown = set(record) - set(self.columns)
        if unknown:
            raise DropBottleneckError(f"unknown metric columns for {self.path.name}: {sorted(unknown)}")
        key = tuple(record.get(column) for column in self.group_by)
        step = int(record["step"])
        if key in self._last_step and step <= self._last_step[key]:
            raise DropBottleneckError(
                f"step {step} is not after {self._last_step[key]} in {self.path.name}"
            )
        self._last_step[key] = step
        self.rows.append(record)

    def extend(self, rows: Iterable[Union[MetricsRow, Dict[str, Any]]]):
        for row in rows:
            self.append(row)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)

    def flush(self) -> Path:
        """스키마 줄 + 헤더 + 행 전체를 다시 씀"""
        write_metrics(self.path, self.frame())
        self._written = len(self.rows)
        return self.path

    def stream(self) -> Path:
        """아직 쓰지 않은 행만 파일 끝에 덧붙임 (첫 호출은 헤더부터)"""
        if not self.path.exists() or self._written == 0:
            return self.flush()
        pending = self.rows[self._written:]
        if pending:
            with open(self.path, "a", encoding="utf-8", newline="") as handle:
                pd.DataFrame(pending, columns=self.columns).to_csv(
                    handle, index=False, header=False, float_format="%" + settings.csv_float_format,
                    lineterminator="\n",
                )
            self._written = len(self.rows)
        return self.path


def write_metrics(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    """`# schema=1` 헤더 줄과 함께 CSV 저장 (시각 정보 없음, 재현 가능)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(SCHEMA_LINE + "\n")
        frame.to_csv(handle, index=False, float_format="%" + settings.csv_float_format, lineterminator="\n")
    logger.debug("Metrics written", path=str(path), rows=len(frame))
    return path


def read_metrics(path: Union[str, Path], required: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """메트릭 CSV 읽기 (스키마 확인)"""
    path = Path(path)
    if not path.exists():
        raise MissingMetricsError(f"metrics file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline().strip()
    if first != SCHEMA_LINE:
        raise MissingMetricsError(f"{path} has no '{SCHEMA_LINE}' header")
    frame = pd.read_csv(path, comment="#")
    missing = [column for column in (required or []) if column not in frame.columns]
    if missing:
        raise MissingMetricsError(f"{path} lacks columns {missing}")
    return frame
