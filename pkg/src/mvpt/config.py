"""Run configuration, read from YAML.

Unknown keys are rejected. The config hash is xxh3-128 over the canonical
JSON of the fully resolved config and is stamped on every artifact of a run.
"""
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, Field

from mvpt.loaders.synthetic import SyntheticSceneConfig
from mvpt.losses import LossWeights
from mvpt.utilities.strings import hash_json


class _Section(BaseModel):
    class Config:
        extra = "forbid"


class DataConfig(_Section):
    root: Optional[Path] = Field(
        default=None, description="Dataset directory; falls back to MVPT_DATA_ROOT."
    )
    resolution: int = Field(64, ge=16)
    crop_scale: float = Field(1.2, ge=1.0)
    holdout_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    views: Optional[list[str]] = Field(
        default=None, description="Camera subset; all manifest cameras by default."
    )
    synth: SyntheticSceneConfig = Field(default_factory=SyntheticSceneConfig)


class ModelConfig(_Section):
    ngf: int = 32
    ndf: int = 32
    n_blocks: int = 6
    n_downsampling: int = 2
    discriminator_layers: int = 3
    estimator: Literal["synthetic", "external"] = "synthetic"
    estimator_path: Optional[Path] = Field(
        default=None,
        description="Saved synthetic estimator or TorchScript keypoint model.",
    )
    detector_width: int = 32
    heatmap_stride: int = 2
    temperature: float = Field(100.0, gt=0)
    detector_epochs: int = 10
    detector_lr: float = 1e-3
    detector_batch_size: int = 4


class TrainConfig(_Section):
    epochs_constant: int = Field(100, ge=0, description="epochs at the base rate")
    epochs_decay: int = Field(200, ge=0, description="epochs of linear decay to 0")
    base_lr: float = Field(2e-4, gt=0)
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = Field(1, ge=1)
    seed: int = 0
    pool_size: int = Field(50, ge=0)
    steps_per_epoch: Optional[int] = Field(
        default=None, ge=1, description="Defaults to one pass over person A."
    )
    checkpoint_interval: int = Field(10, ge=1, description="epochs")
    augment: bool = True

    @property
    def total_epochs(self) -> int:
        return self.epochs_constant + self.epochs_decay


class EvalConfig(_Section):
    split: Literal["train", "test"] = "test"
    max_samples: Optional[int] = Field(default=None, ge=1)


class RunConfig(_Section):
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @classmethod
    def load(cls, path: Path) -> "RunConfig":
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: expected a mapping at the top level")
        return cls.parse_obj(raw)

    def dump(self, path: Path) -> Path:
        Path(path).write_text(
            yaml.safe_dump(
                self.to_json_dict(), sort_keys=True, default_flow_style=False
            )
        )
        return Path(path)

    def to_json_dict(self) -> dict:
        return _plain(self.dict())

    @property
    def hash(self) -> str:
        return hash_json(self.to_json_dict())

    def with_baseline(self) -> "RunConfig":
        """The same run with the shared 3D term switched off."""
        return self.copy(
            update={"loss": self.loss.copy(update={"lambda4": 0.0})}, deep=True
        )


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj
