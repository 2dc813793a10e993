"""アプリケーション設定.

環境変数から実行環境の設定を読み込み、型安全なアクセスを提供する。
実験ごとのハイパーパラメータは config.experiment で管理する。
"""

from functools import lru_cache
from typing import Literal

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """アプリケーション設定クラス.

    環境変数または .env ファイルから設定を読み込む。
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # --- ディレクトリ ---
    DATA_DIR: str = Field(
        default="data",
        description="Synthetic dataset / manifest directory",
    )
    OUTPUT_DIR: str = Field(
        default="outputs",
        description="Checkpoints, reports and plots",
    )
    LOG_DIR: str = Field(default="logs", description="Log file directory")

    # --- 計算環境 ---
    DEVICE: Literal["cpu"] = Field(default="cpu", description="Torch device")
    TORCH_NUM_THREADS: int = Field(
        default=1,
        ge=1,
        description="Intra-op threads used by torch",
    )
    DETERMINISTIC_ALGORITHMS: bool = Field(
        default=True,
        description="Enable torch.use_deterministic_algorithms",
    )

    # --- ログ設定 ---
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = Field(
        default="INFO",
        description="Log Level",
    )

    @field_validator("DATA_DIR", "OUTPUT_DIR", "LOG_DIR")
    @classmethod
    def check_not_blank(cls, v: str, info) -> str:
        """空のパスでないことを確認."""
        if not v.strip():
            raise ValueError(f"{info.field_name} must not be blank")
        return v


@lru_cache
def get_settings() -> Settings:
    """設定のシングルトンインスタンスを取得.

    Returns:
        Settings: 設定インスタンス
    """
    return Settings()


# グローバルな設定インスタンス
settings = get_settings()
