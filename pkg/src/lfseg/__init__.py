"""Late-fusion dual-branch semantic segmentation for multi-source optical imagery."""

__version__ = "0.1.0"

from .core import (
    DEFAULT_NOMENCLATURE,
    LANDCOVER_CLASSES,
    FULL_PROFILE,
    N_CLASSES,
    AerialPatch,
    ClassProbabilityMap,
    LabelMask,
    Nomenclature,
    ScaleProfile,
    SitsStack,
    argmax_labels,
    toy_profile,
    validate,
)
