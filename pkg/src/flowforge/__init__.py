"""Ground-truth appearance flow synthesis and flow-guided warping."""
from .errors import (ConfigError, ConsistencyError, ContractError, FlowForgeError, FormatError,
                     ShapeError)
from .flow import BACKGROUND, INVISIBLE, VISIBLE, FlowField, VisibilityMap, compute_flow, downsample_flow
from .tensor import ImageTensor

__all__ = [
    "BACKGROUND", "INVISIBLE", "VISIBLE", "ConfigError", "ConsistencyError", "ContractError",
    "FlowField", "FlowForgeError", "FormatError", "ImageTensor", "ShapeError", "VisibilityMap",
    "compute_flow", "downsample_flow",
]
__version__ = "0.1.0"
