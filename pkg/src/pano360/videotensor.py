"""Five-axis video values: (batch, channels, frames, height, width), float32.

Every array that crosses a public module boundary in this package uses this
layout. Optical flow is an ordinary VideoTensor with two channels
(dx, dy in pixels per frame step).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AXES = ("batch", "channels", "frames", "height", "width")


def _require_finite(data: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{where}: non-finite values present")


@dataclass(frozen=True)
class VideoTensor:
    """A float32 array with the fixed (batch, channels, frames, height, width) layout."""

    data: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.data, np.ndarray):
            raise TypeError("VideoTensor wraps a numpy array")
        if self.data.ndim != 5:
            raise ValueError(f"expected 5 axes {AXES}, got shape {self.data.shape}")
        if self.data.dtype != np.float32:
            raise ValueError(f"expected float32, got {self.data.dtype}")
        if any(n < 1 for n in self.data.shape):
            raise ValueError(f"every extent must be >= 1, got {self.data.shape}")
        _require_finite(self.data, "VideoTensor")

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def frames(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[3]

    @property
    def width(self) -> int:
        return self.data.shape[4]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @staticmethod
    def from_array(data: np.ndarray) -> "VideoTensor":
        """Wrap any numeric 5-axis array, converting to float32."""
        return VideoTensor(np.ascontiguousarray(data, dtype=np.float32))

    @staticmethod
    def zeros(batch: int, channels: int, frames: int, height: int, width: int) -> "VideoTensor":
        return VideoTensor(np.zeros((batch, channels, frames, height, width), np.float32))

    def map(self, fn) -> "VideoTensor":
        """Apply an elementwise array function and re-validate the result."""
        return VideoTensor.from_array(fn(self.data))
