from .base import Loader
from .synthetic import SyntheticSceneConfig, SyntheticSceneLoader, synth_scene
from .panoptic import (
    IngestReport,
    PanopticLoader,
    PanopticPerson,
    ingest_panoptic,
    map_19_to_17,
)
