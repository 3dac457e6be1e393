"""Checkpoint directories: one parameter file per network plus a JSON manifest.

    manifest.json       config, config hash, epoch, step, RNG states, profiles
    G_A_<view>.pt ...   state dict of every translation network
    estimator.pt        frozen pose estimator (descriptor + weights)
    optimizers.pt       Adam states
    pools.pt            fake-image pools
"""
import json
from pathlib import Path
from typing import Any, Optional

import torch
from pydantic import BaseModel, Field

from mvpt.config import RunConfig
from mvpt.errors import IncompatibleCheckpointError
from mvpt.estimators import PoseEstimator, load_estimator, save_estimator
from mvpt.models.model_set import ROLES, TranslationModelSet
from mvpt.poses import LimbProfile
from mvpt.utilities.ids import RunID

MANIFEST_FILE = "manifest.json"
ESTIMATOR_FILE = "estimator.pt"


class CheckpointManifest(BaseModel):
    run_id: RunID
    config_hash: str
    config: dict[str, Any]
    epoch: int = Field(..., description="completed epochs")
    step: int
    views: list[str]
    resolution: int
    baseline: bool = False
    dataset_hash: Optional[str] = None
    networks: list[str]
    profiles: dict[str, list[float]] = Field(default_factory=dict)
    rng_states: dict[str, Any] = Field(default_factory=dict)

    @property
    def run_config(self) -> RunConfig:
        return RunConfig.parse_obj(self.config)

    def limb_profiles(self) -> dict[str, LimbProfile]:
        return {p: LimbProfile(bone_lengths=v) for p, v in self.profiles.items()}


def network_file(role: str, view: str) -> str:
    return f"{role}_{view}.pt"


def save_checkpoint(
    directory: Path,
    models: TranslationModelSet,
    manifest: CheckpointManifest,
    optimizers: Optional[dict[str, torch.optim.Optimizer]] = None,
    pools: Optional[dict[str, list[torch.Tensor]]] = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for role in ROLES:
        for view in models.views:
            torch.save(
                models.network(role, view).state_dict(),
                directory / network_file(role, view),
            )
    if models.estimator is not None:
        save_estimator(models.estimator, directory / ESTIMATOR_FILE)
    if optimizers is not None:
        torch.save(
            {k: o.state_dict() for k, o in optimizers.items()},
            directory / "optimizers.pt",
        )
    if pools is not None:
        torch.save(pools, directory / "pools.pt")
    (directory / MANIFEST_FILE).write_text(
        json.dumps(manifest.dict(), sort_keys=True, indent=2) + "\n"
    )
    return directory


def read_checkpoint_manifest(directory: Path) -> CheckpointManifest:
    path = Path(directory) / MANIFEST_FILE
    if not path.is_file():
        raise IncompatibleCheckpointError(f"{directory} has no {MANIFEST_FILE}")
    manifest = CheckpointManifest.parse_file(path)
    missing = [n for n in manifest.networks if not (Path(directory) / n).is_file()]
    if missing:
        raise IncompatibleCheckpointError(
            f"{directory} is missing network files: {', '.join(missing)}"
        )
    return manifest


def load_checkpoint(
    directory: Path,
    estimator: Optional[PoseEstimator] = None,
    map_location: str = "cpu",
) -> tuple[TranslationModelSet, CheckpointManifest]:
    """Rebuild the model set of a checkpoint.

    The checkpoint's own estimator is used unless `estimator` is given.
    """
    directory = Path(directory)
    manifest = read_checkpoint_manifest(directory)
    config = manifest.run_config
    if estimator is None and (directory / ESTIMATOR_FILE).is_file():
        estimator = load_estimator(directory / ESTIMATOR_FILE, map_location)
    models = TranslationModelSet(
        manifest.views,
        manifest.resolution,
        config.model,
        estimator=estimator,
        seed=config.train.seed,
    )
    load_network_states(directory, models, map_location)
    return models.to(map_location), manifest


def load_network_states(
    directory: Path, models: TranslationModelSet, map_location: str = "cpu"
) -> None:
    for role in ROLES:
        for view in models.views:
            path = Path(directory) / network_file(role, view)
            if not path.is_file():
                raise IncompatibleCheckpointError(f"missing {path.name} in {directory}")
            try:
                models.network(role, view).load_state_dict(
                    torch.load(path, map_location=map_location)
                )
            except RuntimeError as exc:
                raise IncompatibleCheckpointError(f"{path}: {exc}") from exc
