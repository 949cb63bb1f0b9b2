"""Grayscale raster container shared by the pipeline, metrics and file I/O."""

import enum
from dataclasses import dataclass, field

import numpy as np


class Provenance(str, enum.Enum):
    CLEAN = "clean"
    NOISY = "noisy"
    PREFILTERED = "prefiltered"
    RESTORED = "restored"


@dataclass(frozen=True)
class ImageBuffer:
    """Row-major grayscale image with float64 intensities in ``[0, 255]``."""

    pixels: np.ndarray
    provenance: Provenance = Provenance.CLEAN
    name: str = field(default="", compare=False)

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"image pixels must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite pixels")
        if px.min() < 0 or px.max() > 255:
            raise ValueError("image pixels must lie in [0, 255]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple:
        return self.pixels.shape

    def with_pixels(self, pixels, provenance=None) -> "ImageBuffer":
        return ImageBuffer(pixels, provenance or self.provenance, self.name)
