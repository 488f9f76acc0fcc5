"""Procedural panoramic scenes with exact ground-truth optical flow.

A scene is a handful of Gaussian blobs painted on the sphere, rigidly
rotating about a fixed axis at a constant rate.  Because the motion is a
known rotation, the per-frame displacement field is available in closed
form (rotation_flow), which is what makes these sequences useful as
supervised conditioning data: the "flow" fed to the model is the true
flow, not an estimate.

Scene parameters travel as plain-text key=value files so runs can be
reproduced and inspected without any binary tooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import erp_pixel_to_dir, rotation_flow, rotation_matrix
from .videotensor import VideoTensor

_UNIT_TOL = 1e-6


def _check_unit(name: str, v: tuple[float, float, float]) -> None:
    n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if abs(n - 1.0) > _UNIT_TOL:
        raise ValueError(f"{name} must be a unit vector, got norm {n}")


@dataclass(frozen=True)
class SceneSpec:
    """Full description of one synthetic sequence.

    Blob centers and the rotation axis are unit vectors on the sphere,
    blob widths are angular standard deviations in radians, and omega is
    the rotation per frame step in radians.
    """

    seed: int
    frames: int
    height: int
    width: int
    axis: tuple[float, float, float]
    omega: float
    centers: tuple[tuple[float, float, float], ...]
    widths: tuple[float, ...]
    colors: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if self.height < 1:
            raise ValueError(f"height must be >= 1, got {self.height}")
        if self.width != 2 * self.height:
            raise ValueError(
                f"width must equal 2 * height, got {self.width} vs {self.height}")
        if not abs(self.omega) < math.pi:
            raise ValueError(f"|omega| must be < pi, got {self.omega}")
        _check_unit("axis", self.axis)
        n = len(self.centers)
        if n < 1:
            raise ValueError("a scene needs at least one blob")
        if len(self.widths) != n or len(self.colors) != n:
            raise ValueError(
                f"blob lists disagree: {n} centers, {len(self.widths)} widths, "
                f"{len(self.colors)} colors")
        for k, c in enumerate(self.centers):
            _check_unit(f"blob {k} center", c)
        for k, w in enumerate(self.widths):
            if not w > 0.0:
                raise ValueError(f"blob {k} width must be > 0, got {w}")
        for k, col in enumerate(self.colors):
            if any(not 0.0 <= v <= 1.0 for v in col):
                raise ValueError(f"blob {k} color must lie in [0, 1], got {col}")

    @property
    def n_blobs(self) -> int:
        return len(self.centers)


def _unit3(rng: np.random.Generator) -> tuple[float, float, float]:
    v = rng.standard_normal(3)
    v /= np.linalg.norm(v)
    return (float(v[0]), float(v[1]), float(v[2]))


def random_scene(seed: int, frames: int = 8, height: int = 32) -> SceneSpec:
    """Draw a scene from a seeded generator.

    Draw order is fixed (blob count, axis, omega, then per-blob center,
    width, color) so a given seed always yields the same scene.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 7))
    axis = _unit3(rng)
    omega = float(rng.uniform(-math.pi / 8.0, math.pi / 8.0))
    centers = []
    widths = []
    colors = []
    for _ in range(n):
        centers.append(_unit3(rng))
        widths.append(float(rng.uniform(0.2, 0.7)))
        colors.append(tuple(float(v) for v in rng.uniform(0.2, 1.0, size=3)))
    return SceneSpec(
        seed=seed,
        frames=frames,
        height=height,
        width=2 * height,
        axis=axis,
        omega=omega,
        centers=tuple(centers),
        widths=tuple(widths),
        colors=tuple(colors),
    )


def render_sequence(spec: SceneSpec) -> tuple[VideoTensor, VideoTensor]:
    """Render a scene to (video, flow).

    video has shape (1, 3, frames, H, W) with values in [0, 1]; frame k
    shows every blob center rotated by k * omega about the axis, painted
    as exp(-angle^2 / width^2) in its color.  flow has shape
    (1, 2, frames, H, W) holding the exact per-frame-step displacement in
    pixels, horizontal component canonicalized into (-W/2, W/2].
    """
    H, W = spec.height, spec.width
    xs, ys = np.meshgrid(np.arange(W), np.arange(H))
    dirs = erp_pixel_to_dir(xs, ys, W, H)                  # (H, W, 3)
    centers = np.asarray(spec.centers, np.float64)         # (n, 3)
    inv_w2 = 1.0 / np.asarray(spec.widths, np.float64) ** 2
    colors = np.asarray(spec.colors, np.float64)           # (n, 3)

    frames = []
    for k in range(spec.frames):
        # rotate by the accumulated angle directly rather than composing
        # per-frame matrices, so long sequences pick up no drift
        rot = rotation_matrix(spec.axis, k * spec.omega)
        ck = centers @ rot.T
        cosang = np.clip(dirs @ ck.T, -1.0, 1.0)           # (H, W, n)
        gain = np.exp(-np.arccos(cosang) ** 2 * inv_w2)
        frames.append((gain @ colors).transpose(2, 0, 1))  # (3, H, W)

    video = np.clip(np.stack(frames, axis=1), 0.0, 1.0)[None]
    flow = rotation_flow(spec.axis, spec.omega, spec.frames, H, W)
    return VideoTensor(video.astype(np.float32)), flow


def normalize_flow(flow: VideoTensor) -> VideoTensor:
    """Scale pixel displacements by 1/W before they enter the model.

    Both components share the single scale so the pair stays a plain
    rescaling of the pixel-space field.
    """
    return VideoTensor(flow.data / np.float32(flow.width))


def _fmt_vec(v: tuple[float, ...]) -> str:
    return " ".join(repr(float(x)) for x in v)


def write_scene_spec(spec: SceneSpec, path) -> None:
    """Serialize a spec as one key=value per line (floats via repr, so a
    read back reproduces every value bit for bit)."""
    lines = [
        f"seed={spec.seed}",
        f"frames={spec.frames}",
        f"height={spec.height}",
        f"width={spec.width}",
        f"axis={_fmt_vec(spec.axis)}",
        f"omega={spec.omega!r}",
        f"n_blobs={spec.n_blobs}",
    ]
    for k in range(spec.n_blobs):
        lines.append(f"blob.{k}.center={_fmt_vec(spec.centers[k])}")
        lines.append(f"blob.{k}.width={spec.widths[k]!r}")
        lines.append(f"blob.{k}.color={_fmt_vec(spec.colors[k])}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_vec3(key: str, raw: str) -> tuple[float, float, float]:
    parts = raw.split()
    if len(parts) != 3:
        raise ValueError(f"{key} needs 3 components, got {len(parts)}")
    return (float(parts[0]), float(parts[1]), float(parts[2]))


_SCALAR_KEYS = {"seed": int, "frames": int, "height": int, "width": int,
                "omega": float, "n_blobs": int}


def read_scene_spec(path) -> SceneSpec:
    """Parse a key=value scene file.  Blank lines and '#' comments are
    skipped; unknown or duplicate keys are rejected."""
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ValueError(f"line {lineno}: expected key=value, got {text!r}")
            key, _, value = text.partition("=")
            key = key.strip()
            if key in pairs:
                raise ValueError(f"line {lineno}: duplicate key {key!r}")
            pairs[key] = value.strip()

    scalars: dict[str, float] = {}
    blob_fields: dict[tuple[int, str], str] = {}
    for key, value in pairs.items():
        if key in _SCALAR_KEYS:
            scalars[key] = _SCALAR_KEYS[key](value)
        elif key == "axis":
            pass
        elif key.startswith("blob."):
            parts = key.split(".")
            if len(parts) != 3 or not parts[1].isdigit() or \
                    parts[2] not in ("center", "width", "color"):
                raise ValueError(f"unknown key {key!r}")
            blob_fields[(int(parts[1]), parts[2])] = value
        else:
            raise ValueError(f"unknown key {key!r}")

    missing = ({"axis"} | set(_SCALAR_KEYS)) - set(pairs)
    if missing:
        raise ValueError(f"missing keys: {sorted(missing)}")
    n = scalars["n_blobs"]
    centers = []
    widths = []
    colors = []
    for k in range(n):
        for field in ("center", "width", "color"):
            if (k, field) not in blob_fields:
                raise ValueError(f"missing key 'blob.{k}.{field}'")
        centers.append(_parse_vec3(f"blob.{k}.center", blob_fields[(k, "center")]))
        widths.append(float(blob_fields[(k, "width")]))
        colors.append(_parse_vec3(f"blob.{k}.color", blob_fields[(k, "color")]))
    extras = {idx for idx, _ in blob_fields if idx >= n}
    if extras:
        raise ValueError(f"blob entries beyond n_blobs={n}: {sorted(extras)}")

    return SceneSpec(
        seed=scalars["seed"],
        frames=scalars["frames"],
        height=scalars["height"],
        width=scalars["width"],
        axis=_parse_vec3("axis", pairs["axis"]),
        omega=scalars["omega"],
        centers=tuple(centers),
        widths=tuple(widths),
        colors=tuple(colors),
    )
