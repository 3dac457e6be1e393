import torch
from torch import nn

from mvpt.errors import ResolutionMismatchError


def init_weights(module: nn.Module) -> None:
    """Convolution weights ~ N(0, 0.02), biases zero."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class ResidualBlock(nn.Module):
    def __init__(self, features: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(features, features, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(features),
            nn.ReLU(inplace=True),
            nn.Conv2d(features, features, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(features),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """Image-to-image translator: stem, strided downsampling, residual blocks,
    upsampling back to the input size and a tanh head, so outputs lie in [-1, 1].
    """

    def __init__(
        self,
        resolution: int,
        ngf: int = 32,
        n_blocks: int = 6,
        n_downsampling: int = 2,
        channels: int = 3,
    ):
        super().__init__()
        if resolution % 2**n_downsampling:
            raise ValueError(
                f"resolution {resolution} is not divisible by 2**{n_downsampling}"
            )
        self.resolution = resolution

        features = ngf
        layers: list[nn.Module] = [
            nn.Conv2d(channels, features, 7, padding=3, padding_mode="reflect"),
            nn.InstanceNorm2d(features),
            nn.ReLU(inplace=True),
        ]
        for _ in range(n_downsampling):
            layers += [
                nn.Conv2d(features, features * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(features * 2),
                nn.ReLU(inplace=True),
            ]
            features *= 2
        layers += [ResidualBlock(features) for _ in range(n_blocks)]
        for _ in range(n_downsampling):
            layers += [
                nn.Upsample(scale_factor=2),
                nn.Conv2d(features, features // 2, 3, padding=1),
                nn.InstanceNorm2d(features // 2),
                nn.ReLU(inplace=True),
            ]
            features //= 2
        layers += [
            nn.Conv2d(features, channels, 7, padding=3, padding_mode="reflect"),
            nn.Tanh(),
        ]
        self.layers = nn.Sequential(*layers)
        self.apply(init_weights)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


def check_resolution(module: nn.Module, image: torch.Tensor) -> None:
    resolution = getattr(module, "resolution", None)
    if image.dim() not in (3, 4) or image.shape[-3] != 3:
        raise ResolutionMismatchError(
            f"expected (3, H, W) or (B, 3, H, W) images, got {tuple(image.shape)}"
        )
    if resolution is not None and tuple(image.shape[-2:]) != (resolution, resolution):
        raise ResolutionMismatchError(
            f"network was built for {resolution}x{resolution} crops, got"
            f" {image.shape[-2]}x{image.shape[-1]}"
        )


def generate(generator: nn.Module, image: torch.Tensor) -> torch.Tensor:
    """Translate one crop (3, H, W) or a batch (B, 3, H, W) with `generator`."""
    check_resolution(generator, image)
    if image.dim() == 3:
        return generator(image[None])[0]
    return generator(image)
