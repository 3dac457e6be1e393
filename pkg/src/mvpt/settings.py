from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseSettings, Field


class RenderSettings(BaseSettings):
    """Rendering knobs for the synthetic figure renderer."""

    class Config:
        env_file = ".env"
        env_prefix = "MVPT_RENDER_"

    background: int = Field(default=96, ge=0, le=255)
    antialias: bool = True


class Settings(BaseSettings):
    """Process-level settings, read from `MVPT_*` environment variables."""

    class Config:
        env_file = ".env"
        env_prefix = "MVPT_"

    data_root: Optional[Path] = Field(
        default=None, description="Default dataset root for commands without --data."
    )
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    device: str = "cpu"

    render: RenderSettings = Field(default_factory=RenderSettings)


settings = Settings()
