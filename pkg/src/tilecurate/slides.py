"""Slide sources: pyramid reader seam plus a plain-image implementation.

Proprietary scanner formats stay behind the ``PyramidReader`` protocol; any
large PNG/TIFF is accepted as a single-level pyramid so the pipeline runs on
desk-scale data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

Image.MAX_IMAGE_PIXELS = None  # large synthetic slides are expected


class SlideSourceError(RuntimeError):
    """The slide could not be opened or read."""


class PyramidReader(Protocol):
    """Minimal pyramid access: level dimensions and region fetch."""

    @property
    def level_count(self) -> int: ...

    def level_dimensions(self, level: int) -> tuple[int, int]:
        """(width, height) of the given level."""
        ...

    def level_downsamples(self) -> Sequence[float]:
        """Downsample factor of each level relative to level 0."""
        ...

    def read_region(self, level: int, x: int, y: int, width: int, height: int) -> np.ndarray:
        """RGB float32 array (height, width, 3) in [0, 1], level coordinates."""
        ...


class ArrayReader:
    """Single-level pyramid over an in-memory RGB array."""

    def __init__(self, pixels: np.ndarray):
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise SlideSourceError(f"expected HxWx3 RGB array, got shape {pixels.shape}")
        if pixels.dtype == np.uint8:
            pixels = pixels.astype(np.float32) / 255.0
        self._pixels = np.clip(pixels.astype(np.float32, copy=False), 0.0, 1.0)

    @property
    def level_count(self) -> int:
        return 1

    def level_dimensions(self, level: int) -> tuple[int, int]:
        if level != 0:
            raise SlideSourceError(f"level {level} out of range for single-level image")
        h, w = self._pixels.shape[:2]
        return (w, h)

    def level_downsamples(self) -> Sequence[float]:
        return (1.0,)

    def read_region(self, level: int, x: int, y: int, width: int, height: int) -> np.ndarray:
        if level != 0:
            raise SlideSourceError(f"level {level} out of range for single-level image")
        h, w = self._pixels.shape[:2]
        if x < 0 or y < 0 or x + width > w or y + height > h:
            raise SlideSourceError(
                f"region ({x},{y},{width},{height}) outside level dimensions ({w},{h})"
            )
        return self._pixels[y : y + height, x : x + width]


class ImageFileReader(ArrayReader):
    """Reads a plain PNG/TIFF/JPEG image as a single-level slide."""

    def __init__(self, path: str | Path):
        try:
            with Image.open(path) as img:
                rgb = np.asarray(img.convert("RGB"))
        except (OSError, ValueError) as exc:
            raise SlideSourceError(f"cannot read slide image {path}: {exc}") from exc
        super().__init__(rgb)


@dataclass
class SlideSource:
    """Identity plus pixel access for one slide."""

    slide_id: str
    reader: PyramidReader
    mpp: float | None = None

    def __post_init__(self):
        downs = list(self.reader.level_downsamples())
        if any(b <= a for a, b in zip(downs, downs[1:])):
            raise SlideSourceError(
                f"slide {self.slide_id}: level downsamples must be strictly increasing, got {downs}"
            )

    @property
    def dimensions(self) -> tuple[int, int]:
        """Level-0 (width, height)."""
        return self.reader.level_dimensions(0)


def open_slide(path: str | Path, slide_id: str | None = None, mpp: float | None = None) -> SlideSource:
    path = Path(path)
    return SlideSource(slide_id or path.stem, ImageFileReader(path), mpp)
