"""Flow matching onto quasi-random class centroids, with potential-based
vector field reshaping, ODE sampling, and a pixel neural field toy lab."""

__version__ = "0.1.0"

from .centroid_codec import CentroidPalette, LabelMap, build_palette, decode_nearest, encode_labels
from .potential_field import PotentialParams, grad_potential, potential, soft_assign
from .flow_core import ReshapeConfig, gt_velocity, interpolate, masked_loss, reshape_target

__all__ = [
    "__version__",
    "CentroidPalette",
    "LabelMap",
    "build_palette",
    "encode_labels",
    "decode_nearest",
    "PotentialParams",
    "soft_assign",
    "potential",
    "grad_potential",
    "ReshapeConfig",
    "interpolate",
    "gt_velocity",
    "reshape_target",
    "masked_loss",
]
