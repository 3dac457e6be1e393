# model_set imports the estimators, which import this package; keep it out.
from mvpt.models.discriminators import PatchDiscriminator, discriminate
from mvpt.models.generators import ResnetGenerator, check_resolution, generate

__all__ = [
    "PatchDiscriminator",
    "ResnetGenerator",
    "check_resolution",
    "discriminate",
    "generate",
]
