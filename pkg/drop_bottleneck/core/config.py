"""
환경 설정
"""
from typing import Optional
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import load_dotenv

load_dotenv()


class Settings(BaseSettings):
    """프로세스 단위 설정 (실험 설정은 models.experiment 참고)"""

    model_config = SettingsConfigDict(
        env_prefix="DB_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Environment
    environment: str = Field(default="development")

    # Logging
    log_level: str = Field(default="INFO")
    log_file: str = Field(default="logs/drop_bottleneck.log")
    console_logging: Optional[bool] = Field(default=None)

    # Numerics
    torch_num_threads: int = Field(default=1, ge=1)
    deterministic_algorithms: bool = Field(default=True)

    # Output
    output_root: str = Field(default="runs")
    csv_float_format: str = Field(default=".10g")

    def console_enabled(self) -> bool:
        """콘솔 로그 출력 여부"""
        if self.console_logging is not None:
            return self.console_logging
        return self.environment.lower() == "development"


# 글로벌 설정 인스턴스
settings = Settings()
