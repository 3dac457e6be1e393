"""Joint training of the per-view translation networks.

Every step updates all generators with one Adam step on the full objective
(per-view CycleGAN terms plus lambda4 times both directional 3D pose terms),
then all discriminators with one Adam step on their adversarial terms, fed
from per-view pools of past translations.
"""
import json
import math
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
from pydantic import BaseModel
from tqdm.auto import tqdm

from mvpt.checkpoints import (
    CheckpointManifest,
    load_network_states,
    network_file,
    read_checkpoint_manifest,
    save_checkpoint,
)
from mvpt.config import RunConfig, TrainConfig
from mvpt.datasets import PERSONS, DatasetManifest, MultiViewBatch, MultiViewDataset
from mvpt.errors import (
    ConfigHashMismatchError,
    IncompatibleCheckpointError,
    InsufficientViewsError,
    NonFiniteLossError,
    UndefinedDistanceError,
)
from mvpt.estimators.base import PoseEstimator
from mvpt.geometry import limb_profile
from mvpt.losses import (
    LossWeights,
    ViewLossComponents,
    ViewLossReport,
    cycle_loss,
    discriminator_adversarial,
    generator_adversarial,
    identity_loss,
    per_view_objective,
    pose_3d_loss,
    total_objective,
)
from mvpt.models.model_set import ROLES, TranslationModelSet, derive_seed
from mvpt.poses import COCO17_SKELETON, LimbProfile, Skeleton
from mvpt.utilities.ids import RunID
from mvpt.utilities.logging import LoggerMixin
from mvpt.utilities.strings import hash_json

__all__ = ["TrainConfig", "Trainer", "ImagePool", "lr_schedule", "train_step"]


def lr_schedule(epoch: int, config: Optional[TrainConfig] = None) -> float:
    """Constant for `epochs_constant` epochs, then linear decay reaching 0 at
    `epochs_constant + epochs_decay`."""
    config = config or TrainConfig()
    if not 0 <= epoch <= config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs}]")
    if epoch < config.epochs_constant:
        return config.base_lr
    return config.base_lr * (1 - (epoch - config.epochs_constant) / config.epochs_decay)


class ImagePool:
    """History of translated images shown to a discriminator.

    Until full, every new image is stored and returned. Afterwards each query
    returns the new image or, with probability 1/2, a stored one that the new
    image then replaces.
    """

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.images: list[torch.Tensor] = []

    def query(self, images: torch.Tensor) -> torch.Tensor:
        images = images.detach()
        if self.size == 0:
            return images
        out = []
        for image in images:
            if len(self.images) < self.size:
                self.images.append(image.clone())
                out.append(image)
            elif self.rng.random() < 0.5:
                i = int(self.rng.integers(self.size))
                out.append(self.images[i].clone())
                self.images[i] = image.clone()
            else:
                out.append(image)
        return torch.stack(out)

    def __len__(self) -> int:
        return len(self.images)


class Optimizers(NamedTuple):
    generator: torch.optim.Optimizer
    discriminator: torch.optim.Optimizer

    def set_lr(self, lr: float) -> None:
        for optimizer in self:
            for group in optimizer.param_groups:
                group["lr"] = lr

    def as_dict(self) -> dict[str, torch.optim.Optimizer]:
        return self._asdict()


class StepLosses(BaseModel):
    views: list[ViewLossReport]
    loss_3d_a_to_b: Optional[float]
    loss_3d_b_to_a: Optional[float]
    total_generator: float
    total_discriminator: float


class StepReport(StepLosses):
    """One line of `metrics.jsonl`."""

    epoch: int
    step: int
    lr: float
    frames_a: list[int]
    frames_b: list[int]
    config_hash: str


def _dump_nonfinite(
    dump_dir: Optional[Path],
    batch_a: MultiViewBatch,
    batch_b: MultiViewBatch,
    terms: dict[str, float],
) -> Optional[Path]:
    if dump_dir is None:
        return None
    dump_dir.mkdir(parents=True, exist_ok=True)
    path = dump_dir / "nonfinite.pt"
    torch.save(
        {
            "real_a": batch_a.images.cpu(),
            "real_b": batch_b.images.cpu(),
            "frames_a": batch_a.frame_indices,
            "frames_b": batch_b.frame_indices,
            "terms": terms,
        },
        path,
    )
    (dump_dir / "nonfinite.json").write_text(
        json.dumps(
            {
                "frames_a": batch_a.frame_indices,
                "frames_b": batch_b.frame_indices,
                "terms": {k: repr(v) for k, v in terms.items()},
            },
            sort_keys=True,
            indent=2,
        )
    )
    return path


def _check_finite(
    total: torch.Tensor,
    terms: dict[str, float],
    batch_a: MultiViewBatch,
    batch_b: MultiViewBatch,
    dump_dir: Optional[Path],
    what: str,
) -> None:
    """Abort on a non-finite total or on any non-finite reported term, including
    3D terms computed without gradients."""
    bad = sorted(k for k, v in terms.items() if not math.isfinite(v))
    if torch.isfinite(total) and not bad:
        return
    path = _dump_nonfinite(dump_dir, batch_a, batch_b, terms)
    raise NonFiniteLossError(
        f"non-finite {what} loss (terms: {', '.join(bad) or 'total'});"
        f" inputs dumped to {path}",
        terms,
    )


def train_step(
    models: TranslationModelSet,
    batch_a: MultiViewBatch,
    batch_b: MultiViewBatch,
    w: LossWeights,
    optimizers: Optimizers,
    pools: dict[str, ImagePool],
    projections: torch.Tensor,
    profiles: dict[str, LimbProfile],
    skeleton: Skeleton = COCO17_SKELETON,
    update_discriminators: bool = True,
    dump_dir: Optional[Path] = None,
) -> StepLosses:
    """One generator update followed by one discriminator update.

    `batch_a` and `batch_b` are unpaired (B, V, 3, R, R) crops of persons A and
    B; `pools` is keyed `"A/<view>"` and `"B/<view>"`.
    """
    models.train()
    real_a, real_b = batch_a.images, batch_b.images

    # generators
    models.set_discriminators_trainable(False)
    optimizers.generator.zero_grad(set_to_none=True)
    fakes_a, fakes_b, components, view_totals = [], [], {}, []
    for i, view in enumerate(models.views):
        G_A, G_B = models.network("G_A", view), models.network("G_B", view)
        D_A, D_B = models.network("D_A", view), models.network("D_B", view)
        a, b = real_a[:, i], real_b[:, i]
        fake_b, fake_a = G_B(a), G_A(b)
        parts = ViewLossComponents(
            cycle=cycle_loss(a, G_A(fake_b)) + cycle_loss(b, G_B(fake_a)),
            gan_a=generator_adversarial(D_A(fake_a), w.gan_mode, w.non_saturating),
            gan_b=generator_adversarial(D_B(fake_b), w.gan_mode, w.non_saturating),
            identity_a=identity_loss(a, G_A(a)),
            identity_b=identity_loss(b, G_B(b)),
        )
        fakes_a.append(fake_a)
        fakes_b.append(fake_b)
        components[view] = parts
        view_totals.append(per_view_objective(parts, w))

    def pose_terms():
        return (
            pose_3d_loss(
                torch.stack(fakes_b, dim=1),
                batch_a.gt_poses,
                profiles["B"],
                skeleton,
                models.estimator,
                projections,
                batch_a.crop_transforms,
                w.epsilon,
            ),
            pose_3d_loss(
                torch.stack(fakes_a, dim=1),
                batch_b.gt_poses,
                profiles["A"],
                skeleton,
                models.estimator,
                projections,
                batch_b.crop_transforms,
                w.epsilon,
            ),
        )

    if w.lambda4 > 0:
        pose_losses = pose_terms()
    elif models.estimator is not None and len(models.views) >= 2:
        with torch.no_grad():
            try:
                pose_losses = pose_terms()
            except UndefinedDistanceError:
                pose_losses = (None, None)
    else:
        pose_losses = (None, None)

    total = total_objective(view_totals, pose_losses, w)
    terms = {
        f"{view}/{k}": float(v)
        for view, parts in components.items()
        for k, v in parts._asdict().items()
    }
    for name, value in zip(("3d_a_to_b", "3d_b_to_a"), pose_losses):
        if value is not None:
            terms[name] = float(value)
    _check_finite(total, terms, batch_a, batch_b, dump_dir, "generator")
    total.backward()
    optimizers.generator.step()

    # discriminators
    models.set_discriminators_trainable(True)
    optimizers.discriminator.zero_grad(set_to_none=True)
    gan_d = {}
    with torch.set_grad_enabled(update_discriminators):
        d_total = 0.0
        for i, view in enumerate(models.views):
            D_A, D_B = models.network("D_A", view), models.network("D_B", view)
            pooled_a = pools[f"A/{view}"].query(fakes_a[i])
            pooled_b = pools[f"B/{view}"].query(fakes_b[i])
            d_a = discriminator_adversarial(
                D_A(real_a[:, i]), D_A(pooled_a), w.gan_mode
            )
            d_b = discriminator_adversarial(
                D_B(real_b[:, i]), D_B(pooled_b), w.gan_mode
            )
            gan_d[view] = float(d_a) + float(d_b)
            d_total = d_total + d_a + d_b
        d_terms = {f"{v}/gan_d": d for v, d in gan_d.items()}
        _check_finite(d_total, d_terms, batch_a, batch_b, dump_dir, "discriminator")
        if update_discriminators:
            d_total.backward()
            optimizers.discriminator.step()

    return StepLosses(
        views=[
            ViewLossReport.from_components(view, components[view], gan_d[view], w)
            for view in models.views
        ],
        loss_3d_a_to_b=None if pose_losses[0] is None else float(pose_losses[0]),
        loss_3d_b_to_a=None if pose_losses[1] is None else float(pose_losses[1]),
        total_generator=float(total),
        total_discriminator=float(d_total),
    )


class Trainer(LoggerMixin):
    """Runs `train_step` over epochs, logging metrics and writing checkpoints.

    With `baseline=True` the 3D term is switched off, which trains every
    view's CycleGAN independently of the others.
    """

    def __init__(
        self,
        config: RunConfig,
        manifest: DatasetManifest,
        run_dir: Path,
        estimator: Optional[PoseEstimator] = None,
        baseline: bool = False,
        views: Optional[Sequence[str]] = None,
        device: str = "cpu",
        progress: bool = True,
    ):
        if baseline and config.loss.lambda4 != 0:
            self.logger.warning("baseline run: forcing lambda4 = 0")
            config = config.with_baseline()
        self.config = config
        self.baseline = baseline
        self.manifest = manifest
        self.run_dir = Path(run_dir)
        self.device = device
        self.progress = progress

        train, data = config.train, config.data
        self.views = list(views or data.views or manifest.view_ids)
        if config.loss.lambda4 > 0:
            if estimator is None:
                raise ValueError("lambda4 > 0 needs a pose estimator")
            if len(self.views) < 2:
                raise InsufficientViewsError(
                    f"the 3D pose term needs at least 2 views, got {self.views}"
                )

        self.dataset = MultiViewDataset(
            manifest,
            resolution=data.resolution,
            crop_scale=data.crop_scale,
            holdout_fraction=data.holdout_fraction,
            views=self.views,
        )
        self.models = TranslationModelSet(
            self.views, data.resolution, config.model, estimator, seed=train.seed
        ).to(device)
        betas = (train.beta1, train.beta2)
        self.optimizers = Optimizers(
            generator=torch.optim.Adam(
                self.models.generator_parameters(), lr=train.base_lr, betas=betas
            ),
            discriminator=torch.optim.Adam(
                self.models.discriminator_parameters(), lr=train.base_lr, betas=betas
            ),
        )
        self.pools = {
            f"{p}/{v}": ImagePool(
                train.pool_size,
                np.random.default_rng(derive_seed(train.seed, "pool", p, v)),
            )
            for p in PERSONS
            for v in self.views
        }
        self.sampler = np.random.default_rng(derive_seed(train.seed, "sampler"))
        self.augment_rngs = {
            v: np.random.default_rng(derive_seed(train.seed, "augment", v))
            for v in self.views
        }
        self.projections = torch.stack(
            [manifest.camera(v).as_tensor() for v in self.views]
        ).to(device)
        self.profiles = {
            p: limb_profile(
                [manifest.records(p)[t].pose for t in self.dataset.split(p, "train")],
                manifest.skeleton,
            )
            for p in PERSONS
        }
        self.epoch = 0
        self.step = 0
        self.run_id = RunID.new()

    @property
    def metrics_path(self) -> Path:
        return self.run_dir / "metrics.jsonl"

    def checkpoint_dir(self, epoch: int) -> Path:
        return self.run_dir / "checkpoints" / f"epoch_{epoch:04d}"

    def _rngs(self) -> dict[str, np.random.Generator]:
        rngs = {"sampler": self.sampler}
        rngs.update({f"augment/{v}": r for v, r in self.augment_rngs.items()})
        rngs.update({f"pool/{k}": p.rng for k, p in self.pools.items()})
        return rngs

    def save_checkpoint(self) -> Path:
        manifest = CheckpointManifest(
            run_id=self.run_id,
            config_hash=self.config.hash,
            config=self.config.to_json_dict(),
            epoch=self.epoch,
            step=self.step,
            views=self.views,
            resolution=self.config.data.resolution,
            baseline=self.baseline,
            dataset_hash=hash_json(self.manifest.header()),
            networks=[network_file(r, v) for r in ROLES for v in self.views],
            profiles={p: v.bone_lengths.tolist() for p, v in self.profiles.items()},
            rng_states={k: r.bit_generator.state for k, r in self._rngs().items()},
        )
        directory = save_checkpoint(
            self.checkpoint_dir(self.epoch),
            self.models,
            manifest,
            optimizers=self.optimizers.as_dict(),
            pools={k: [i.cpu() for i in p.images] for k, p in self.pools.items()},
        )
        self.logger.info(f"checkpoint written to {directory}")
        return directory

    def load_checkpoint(self, directory: Path) -> None:
        """Restore everything needed to continue exactly where `directory` left."""
        directory = Path(directory)
        manifest = read_checkpoint_manifest(directory)
        if manifest.config_hash != self.config.hash:
            raise ConfigHashMismatchError(
                f"checkpoint config hash {manifest.config_hash} does not match the"
                f" current config {self.config.hash}"
            )
        if manifest.views != self.views:
            raise IncompatibleCheckpointError(
                f"checkpoint views {manifest.views} != run views {self.views}"
            )
        load_network_states(directory, self.models, self.device)
        optimizers = torch.load(directory / "optimizers.pt", map_location=self.device)
        for name, optimizer in self.optimizers.as_dict().items():
            optimizer.load_state_dict(optimizers[name])
        pools = torch.load(directory / "pools.pt", map_location=self.device)
        for key, pool in self.pools.items():
            pool.images = list(pools[key])
        for key, rng in self._rngs().items():
            rng.bit_generator.state = manifest.rng_states[key]
        self.epoch, self.step = manifest.epoch, manifest.step
        self.run_id = manifest.run_id
        self.logger.info(f"resumed {self.run_id} at epoch {self.epoch}")

    def _truncate_metrics(self) -> None:
        if not self.metrics_path.exists():
            return
        kept = [
            line
            for line in self.metrics_path.read_text().splitlines(keepends=True)
            if line.strip() and json.loads(line)["step"] < self.step
        ]
        self.metrics_path.write_text("".join(kept))

    def _batch(self, person: str, positions: Sequence[int]) -> MultiViewBatch:
        augment = self.config.train.augment
        samples = [
            self.dataset.sample_batch(
                person, int(t), augment=augment, rng=self.augment_rngs
            )
            for t in positions
        ]
        return MultiViewBatch.collate(samples).to(self.device)

    def train(self, resume: Optional[Path] = None) -> Path:
        """Train to the end of the schedule; returns the last checkpoint."""
        cfg = self.config.train
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.config.dump(self.run_dir / "config.yaml")
        if resume is not None:
            self.load_checkpoint(resume)
            self._truncate_metrics()
        elif self.metrics_path.exists():
            self.metrics_path.unlink()

        train_a = self.dataset.split("A", "train")
        train_b = self.dataset.split("B", "train")
        bs = cfg.batch_size
        last = Path(resume) if resume is not None else None

        with open(self.metrics_path, "a") as metrics:
            for epoch in range(self.epoch, cfg.total_epochs):
                lr = lr_schedule(epoch, cfg)
                self.optimizers.set_lr(lr)
                order = self.sampler.permutation(train_a)
                steps = cfg.steps_per_epoch or math.ceil(len(order) / bs)
                for s in tqdm(
                    range(steps), desc=f"epoch {epoch}", disable=not self.progress
                ):
                    positions_a = [order[(s * bs + k) % len(order)] for k in range(bs)]
                    positions_b = self.sampler.choice(train_b, size=bs)
                    batch_a = self._batch("A", positions_a)
                    batch_b = self._batch("B", positions_b)
                    losses = train_step(
                        self.models,
                        batch_a,
                        batch_b,
                        self.config.loss,
                        self.optimizers,
                        self.pools,
                        self.projections,
                        self.profiles,
                        self.manifest.skeleton,
                        dump_dir=self.run_dir / "nonfinite",
                    )
                    report = StepReport(
                        **losses.dict(),
                        epoch=epoch,
                        step=self.step,
                        lr=lr,
                        frames_a=batch_a.frame_indices,
                        frames_b=batch_b.frame_indices,
                        config_hash=self.config.hash,
                    )
                    metrics.write(report.json() + "\n")
                    self.step += 1
                metrics.flush()
                self.epoch = epoch + 1
                self.logger.info(
                    f"epoch {epoch}: lr {lr:.2e}, G {report.total_generator:.4f},"
                    f" D {report.total_discriminator:.4f}"
                )
                if self.epoch % cfg.checkpoint_interval == 0 or (
                    self.epoch == cfg.total_epochs
                ):
                    last = self.save_checkpoint()

        if last is None:
            last = self.save_checkpoint()
        return last
