"""Equirectangular (ERP) geometry: pixel/direction mapping, perspective
extraction, whole-column rotation, and analytic rotation flow.

Conventions, used consistently everywhere:

* pixel centers: pixel (x, y) sits at longitude lon = (x + 0.5) / W * 2*pi - pi
  and latitude lat = pi/2 - (y + 0.5) / H * pi;
* directions are unit vectors (cos lat * cos lon, cos lat * sin lon, sin lat),
  so +x is the image center column, +z the north pole, longitude grows
  eastward (rightward in the image);
* geometry math runs in float64; callers cast at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .videotensor import VideoTensor


def erp_pixel_to_dir(x, y, width: int, height: int) -> np.ndarray:
    """Map (fractional) pixel coordinates to unit directions, shape (..., 3)."""
    lon = (np.asarray(x, np.float64) + 0.5) / width * (2.0 * math.pi) - math.pi
    lat = math.pi / 2.0 - (np.asarray(y, np.float64) + 0.5) / height * math.pi
    cl = np.cos(lat)
    return np.stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat)], axis=-1)


def dir_to_erp_pixel(d: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of erp_pixel_to_dir; accepts any nonzero vectors, shape (..., 3)."""
    d = np.asarray(d, np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm == 0.0):
        raise ValueError("zero-length direction")
    lon = np.arctan2(d[..., 1], d[..., 0])
    lat = np.arcsin(np.clip(d[..., 2] / norm, -1.0, 1.0))
    x = (lon + math.pi) / (2.0 * math.pi) * width - 0.5
    y = (math.pi / 2.0 - lat) / math.pi * height - 0.5
    return x, y


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a (nonzero) axis, right-handed."""
    a = np.asarray(axis, np.float64)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    kx, ky, kz = a / n
    K = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def bilinear_sample_erp(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample image (..., H, W) at fractional pixels, wrapping horizontally
    and clamping vertically. Returns (..., *x.shape) in float64."""
    img = np.asarray(image, np.float64)
    H, W = img.shape[-2:]
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    x0 = np.floor(x)
    y0 = np.floor(y)
    tx = x - x0
    ty = y - y0
    x0i = x0.astype(np.int64) % W
    x1i = (x0i + 1) % W
    y0i = np.clip(y0.astype(np.int64), 0, H - 1)
    y1i = np.clip(y0.astype(np.int64) + 1, 0, H - 1)
    v00 = img[..., y0i, x0i]
    v01 = img[..., y0i, x1i]
    v10 = img[..., y1i, x0i]
    v11 = img[..., y1i, x1i]
    return (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11)


@dataclass(frozen=True)
class SphereCamera:
    """A pinhole view into the sphere: yaw east, pitch up, square output."""

    yaw: float
    pitch: float
    fov: float
    out_size: int

    def __post_init__(self) -> None:
        if not (0.0 < self.fov < math.pi):
            raise ValueError(f"fov must lie in (0, pi), got {self.fov}")
        if abs(self.pitch) > math.pi / 2.0:
            raise ValueError(f"pitch must lie in [-pi/2, pi/2], got {self.pitch}")
        if self.out_size < 1:
            raise ValueError(f"out_size must be >= 1, got {self.out_size}")


def camera_rays(cam: SphereCamera) -> np.ndarray:
    """Unit world-space rays for every output pixel, shape (s, s, 3)."""
    s = cam.out_size
    half = math.tan(cam.fov / 2.0)
    ndc = (np.arange(s, dtype=np.float64) + 0.5) / s * 2.0 - 1.0
    u = ndc * half                     # rightward, per output column
    v = -ndc * half                    # upward, per output row (rows grow down)
    rays = np.empty((s, s, 3))
    rays[..., 0] = 1.0
    rays[..., 1] = u[None, :]
    rays[..., 2] = v[:, None]
    cp, sp = math.cos(cam.pitch), math.sin(cam.pitch)
    cyw, syw = math.cos(cam.yaw), math.sin(cam.yaw)
    rx = rays[..., 0] * cp - rays[..., 2] * sp
    rz = rays[..., 0] * sp + rays[..., 2] * cp
    ry = rays[..., 1]
    wx = rx * cyw - ry * syw
    wy = rx * syw + ry * cyw
    out = np.stack([wx, wy, rz], axis=-1)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def erp_to_perspective(image: np.ndarray, cam: SphereCamera) -> np.ndarray:
    """Gnomonic extraction of a square view from an ERP image (..., H, W)."""
    img = np.asarray(image)
    H, W = img.shape[-2:]
    x, y = dir_to_erp_pixel(camera_rays(cam), W, H)
    out = bilinear_sample_erp(img, x, y)
    return out.astype(img.dtype) if np.issubdtype(img.dtype, np.floating) else out


def shift_for_theta(width: int, theta: float) -> int:
    """Whole-column shift equivalent to a longitude rotation by theta."""
    frac = (theta / (2.0 * math.pi)) % 1.0
    return int(round(frac * width)) % width


def roll_columns(data: np.ndarray, shift: int) -> np.ndarray:
    """out[..., j] = in[..., (j + shift) mod W]."""
    W = data.shape[-1]
    return np.roll(data, -int(shift) % W, axis=-1)


def rotate_erp(video: VideoTensor, theta: float) -> VideoTensor:
    """Rotate an ERP video about the polar axis by whole columns.

    Values are only permuted, never resampled, so rotating flow keeps its
    dx/dy entries intact (a global longitude shift does not change them).
    """
    k = shift_for_theta(video.width, theta)
    return VideoTensor(np.ascontiguousarray(roll_columns(video.data, k)))


def wrap_dx(dx: np.ndarray, width: int) -> np.ndarray:
    """Canonicalize horizontal displacements into (-W/2, W/2]."""
    d = np.asarray(dx, np.float64) % width
    return np.where(d > width / 2.0, d - width, d)


def rotation_flow(axis, omega: float, frames: int, height: int, width: int) -> VideoTensor:
    """Per-pixel ERP displacement field of a rigid rotation by omega per frame.

    The field is time-invariant for a constant rotation, so all frames hold
    the same two channels (dx, dy in pixels per frame step).
    """
    if not abs(omega) < math.pi:
        raise ValueError(f"|omega| must be < pi, got {omega}")
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    if omega == 0.0:
        # exact, not just small: the pixel -> dir -> pixel round trip would
        # otherwise leave ~1e-13 of transcendental noise in a zero field
        return VideoTensor(np.zeros((1, 2, frames, height, width), np.float32))
    xs, ys = np.meshgrid(np.arange(width), np.arange(height))
    dirs = erp_pixel_to_dir(xs, ys, width, height)
    moved = dirs @ rotation_matrix(axis, omega).T
    x2, y2 = dir_to_erp_pixel(moved, width, height)
    dx = wrap_dx(x2 - xs, width)
    dy = y2 - ys
    field = np.stack([dx, dy]).astype(np.float32)           # (2, H, W)
    data = np.broadcast_to(field[None, :, None], (1, 2, frames, height, width))
    return VideoTensor(np.ascontiguousarray(data))
