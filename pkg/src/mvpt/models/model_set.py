from itertools import chain
from typing import Iterator, Optional, Sequence

import torch
from torch import nn

from mvpt.config import ModelConfig
from mvpt.estimators.base import PoseEstimator
from mvpt.models.discriminators import PatchDiscriminator
from mvpt.models.generators import ResnetGenerator
from mvpt.utilities.strings import hash_text

ROLES = ("G_A", "G_B", "D_A", "D_B")


def derive_seed(seed: int, *parts: str) -> int:
    """Stable 32-bit seed for a named stream, independent of other streams."""
    return int(hash_text(str(seed), *(f"/{p}" for p in parts))[:8], 16)


class TranslationModelSet(nn.Module):
    """Per-view CycleGAN pairs plus the frozen pose estimator.

    For view v, `generators["G_A"][v]` maps person B's crops to person A's
    appearance and `generators["G_B"][v]` maps A to B; `D_A` and `D_B` judge
    real against translated crops of A and B. Each network is initialized from
    its own seed stream keyed by role and view id, so a view's networks do not
    depend on which other views are in the set.
    """

    def __init__(
        self,
        views: Sequence[str],
        resolution: int,
        config: Optional[ModelConfig] = None,
        estimator: Optional[PoseEstimator] = None,
        seed: int = 0,
    ):
        super().__init__()
        config = config or ModelConfig()
        if len(set(views)) != len(views) or not views:
            raise ValueError(f"views must be distinct and non-empty, got {views}")
        self.views = list(views)
        self.resolution = resolution
        self.networks = nn.ModuleDict({role: nn.ModuleDict() for role in ROLES})
        for view in self.views:
            for role in ROLES:
                torch.manual_seed(derive_seed(seed, role, view))
                if role.startswith("G"):
                    net = ResnetGenerator(
                        resolution,
                        ngf=config.ngf,
                        n_blocks=config.n_blocks,
                        n_downsampling=config.n_downsampling,
                    )
                else:
                    net = PatchDiscriminator(
                        resolution,
                        ndf=config.ndf,
                        n_layers=config.discriminator_layers,
                    )
                self.networks[role][view] = net
        self.estimator = estimator.freeze() if estimator is not None else None

    def network(self, role: str, view: str) -> nn.Module:
        return self.networks[role][view]

    def generator_parameters(self) -> Iterator[nn.Parameter]:
        return chain(*(self.networks[r].parameters() for r in ("G_A", "G_B")))

    def discriminator_parameters(self) -> Iterator[nn.Parameter]:
        return chain(*(self.networks[r].parameters() for r in ("D_A", "D_B")))

    def set_discriminators_trainable(self, trainable: bool) -> None:
        for p in self.discriminator_parameters():
            p.requires_grad_(trainable)

    def train(self, mode: bool = True) -> "TranslationModelSet":
        super().train(mode)
        if self.estimator is not None:
            self.estimator.eval()
        return self

    def translation_state(self) -> dict[str, dict[str, torch.Tensor]]:
        """`"<role>_<view>"` -> state dict of that network."""
        return {
            f"{role}_{view}": self.network(role, view).state_dict()
            for role in ROLES
            for view in self.views
        }
