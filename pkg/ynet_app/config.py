"""
Process configuration
"""

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Process-level settings (environment variables YNET_*, or .env)"""

    PROJECT_NAME: str = "YNet Vessel Playground"
    VERSION: str = "0.1.0"

    # Worker threads for patch extraction and inference
    YNET_THREADS: int = 2

    # Logging
    YNET_LOG_LEVEL: str = "INFO"

    # Wall-clock seconds in train_log.csv; never written with --threads 1
    YNET_RECORD_TIMING: bool = True

    # Patches per forward call during prediction
    YNET_PREDICT_BATCH: int = 32

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"


# Global settings instance
settings = Settings()
