"""Per-pixel hand pressure estimation from RGB images, at desk scale."""

from handpressure.core import (
    P_CONTACT_KPA,
    PressureBinning,
    PressureImage,
    contact_map,
    dequantize,
    make_binning,
    quantize,
    total_force,
)
from handpressure.errors import FitFailure, InvalidArgument, LoadError, SetupError

__version__ = "0.1.0"

__all__ = [
    "P_CONTACT_KPA",
    "PressureBinning",
    "PressureImage",
    "contact_map",
    "dequantize",
    "make_binning",
    "quantize",
    "total_force",
    "FitFailure",
    "InvalidArgument",
    "LoadError",
    "SetupError",
]
