import torch
from torch import nn

from mvpt.models.generators import check_resolution, init_weights


def _block(in_features: int, out_features: int, stride: int, normalize: bool):
    layers: list[nn.Module] = [
        nn.Conv2d(in_features, out_features, 4, stride=stride, padding=1)
    ]
    if normalize:
        layers.append(nn.InstanceNorm2d(out_features))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return layers


class PatchDiscriminator(nn.Module):
    """Scores overlapping patches; the output is a (B, 1, h, w) map of raw scores."""

    def __init__(
        self, resolution: int, ndf: int = 32, n_layers: int = 3, channels: int = 3
    ):
        super().__init__()
        self.resolution = resolution

        layers = _block(channels, ndf, stride=2, normalize=False)
        features = ndf
        for n in range(1, n_layers):
            out = ndf * min(2**n, 8)
            layers += _block(features, out, stride=2, normalize=True)
            features = out
        out = ndf * min(2**n_layers, 8)
        layers += _block(features, out, stride=1, normalize=True)
        layers.append(nn.Conv2d(out, 1, 4, stride=1, padding=1))
        self.layers = nn.Sequential(*layers)
        self.apply(init_weights)

        side = resolution // 2**n_layers - 2
        if side < 1:
            raise ValueError(
                f"{n_layers} discriminator layers leave no patches at {resolution}px"
            )
        self.output_side = side

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


def discriminate(discriminator: nn.Module, image: torch.Tensor) -> torch.Tensor:
    """Patch score map for one image (returns (1, h, w)) or a batch."""
    check_resolution(discriminator, image)
    if image.dim() == 3:
        return discriminator(image[None])[0]
    return discriminator(image)
