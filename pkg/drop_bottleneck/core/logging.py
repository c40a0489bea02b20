"""
로깅 시스템 설정
JSON 파일 로그 + 실행 문맥(run, seed, kind)을 모든 레코드에 부착
"""
import json
import logging
import logging.handlers
from contextlib import contextmanager
from contextvars import ContextVar
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterator

from drop_bottleneck.core.config import settings

MAX_LOG_BYTES = 10 * 1024 * 1024
BACKUP_COUNT = 5

_run_context: ContextVar[Dict[str, Any]] = ContextVar("run_context", default={})


@contextmanager
def log_context(**fields) -> Iterator[Dict[str, Any]]:
    """블록 안의 모든 로그 레코드에 fields 추가 (중첩 시 병합)"""
    merged = {**_run_context.get(), **fields}
    token = _run_context.set(merged)
    try:
        yield merged
    finally:
        _run_context.reset(token)


def current_context() -> Dict[str, Any]:
    return dict(_run_context.get())


class JSONFormatter(logging.Formatter):
    """JSON 형식 로그 포매터"""

    def format(self, record: logging.LogRecord) -> str:
        log_entry = {
            "timestamp": datetime.fromtimestamp(record.created).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "function": record.funcName,
        }
        log_entry.update(getattr(record, "context", None) or current_context())
        log_entry.update(getattr(record, "extra_fields", {}))

        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_entry, ensure_ascii=False, default=_json_default)


def _json_default(value: Any) -> Any:
    # numpy / torch 스칼라
    if hasattr(value, "item"):
        return value.item()
    return str(value)


def _file_handler() -> logging.Handler:
    log_file = Path(settings.log_file)
    log_file.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.handlers.RotatingFileHandler(log_file, maxBytes=MAX_LOG_BYTES, backupCount=BACKUP_COUNT)
    handler.setFormatter(JSONFormatter())
    return handler


class CustomLogger:
    """커스텀 로거 (키워드 인자를 구조화 필드로 기록)"""

    def __init__(self, name: str):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(getattr(logging, settings.log_level.upper()))

        if not self.logger.handlers:
            self.logger.addHandler(_file_handler())
            if settings.console_enabled():
                console_handler = logging.StreamHandler()
                console_handler.setFormatter(logging.Formatter(
                    '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
                ))
                self.logger.addHandler(console_handler)
            # 루트 로거로 중복 전파하지 않음
            self.logger.propagate = False

    def _log(self, level: int, message: str, /, exc_info: bool = False, **kwargs):
        extra = {"context": current_context()}
        if kwargs:
            extra["extra_fields"] = kwargs
        self.logger.log(level, message, extra=extra, exc_info=exc_info, stacklevel=3)

    def info(self, message: str, /, **kwargs):
        """정보 로그"""
        self._log(logging.INFO, message, **kwargs)

    def warning(self, message: str, /, **kwargs):
        """경고 로그"""
        self._log(logging.WARNING, message, **kwargs)

    def error(self, message: str, /, exc_info: bool = False, **kwargs):
        """오류 로그"""
        self._log(logging.ERROR, message, exc_info=exc_info, **kwargs)

    def debug(self, message: str, /, **kwargs):
        """디버그 로그"""
        self._log(logging.DEBUG, message, **kwargs)


def setup_logging() -> CustomLogger:
    """루트 로거를 JSON 파일로 (logging.getLogger(__name__) 레코드 포함)"""
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, settings.log_level.upper()))

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
    root_logger.addHandler(_file_handler())

    return CustomLogger("drop_bottleneck")
