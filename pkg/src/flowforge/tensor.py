"""Dense H x W x C float container used for images, features, heatmaps and weight maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError

ROLES = ("image", "feature", "weight", "heatmap")


@dataclass(frozen=True, eq=False)
class ImageTensor:
    data: np.ndarray
    role: str = "image"

    def __post_init__(self):
        data = np.array(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ShapeError(f"expected H x W x C array, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if self.role not in ROLES:
            raise ContractError(f"unknown tensor role {self.role!r}")
        if not np.all(np.isfinite(data)):
            raise ContractError("tensor contains NaN or Inf")
        if self.role == "weight":
            if data.shape[2] != 1:
                raise ContractError("weight map must have exactly one channel")
            if data.size and (data.min() < 0.0 or data.max() > 1.0):
                raise ContractError("weight map values must lie in [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def with_role(self, role: str) -> "ImageTensor":
        return ImageTensor(self.data, role)
