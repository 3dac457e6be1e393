from abc import ABC, abstractmethod
from pathlib import Path

from pydantic import BaseModel

from mvpt.datasets import DatasetManifest
from mvpt.utilities.logging import LoggerMixin


class Loader(BaseModel, LoggerMixin, ABC):
    """A base class for dataset builders that write a manifest directory."""

    output_dir: Path

    @abstractmethod
    async def load(self) -> DatasetManifest:
        pass

    class Config:
        arbitrary_types_allowed = True
        extra = "forbid"
