from pydantic import Field
from pydantic_settings import BaseSettings

class Settings(BaseSettings):
    # run registry, override via .env or environment
    DATABASE_URL: str = "sqlite:///./qkd_runs.db"
    DEBUG: bool = False
    SQL_ECHO: bool = False
    LOG_LEVEL: str = "INFO"

    # simulation defaults
    DEFAULT_SEED: int = 0
    BLOCK_SIZE: int = Field(1024, ge=1)  # rounds per random-stream block
    THREADS: int = Field(1, ge=1)

    # distillation search limits
    K_MAX: int = Field(30, ge=0)
    R_MAX: int = Field(100001, ge=1)

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"

settings = Settings()
