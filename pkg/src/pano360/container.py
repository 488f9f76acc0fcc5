"""Bit-exact artifact IO: the "P360" tensor container and PPM frame dumps.

Container layout (all integers little-endian):

    magic "P360" | version byte 0x01 | u32 entry count | entries...

    entry: u16 name byte length | UTF-8 name | u8 rank
           | rank * u32 extents | payload as f32, row-major

Entries are written sorted by name, so saving the same tensors always
produces the same bytes regardless of how the mapping was built.  PPM
(P6, maxval 255) is used for frame dumps because it is bit-exactly
specifiable without any external dependency.
"""

from __future__ import annotations

import os
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .videotensor import VideoTensor

_MAGIC = b"P360"
_VERSION = 1
# refuse absurd payloads before trying to allocate them
_MAX_ELEMENTS = 1 << 40


def _as_entries(obj) -> dict[str, np.ndarray]:
    if isinstance(obj, Mapping):
        items = list(obj.items())
    else:
        items = [("tensor", obj)]
    out: dict[str, np.ndarray] = {}
    for name, value in items:
        # unwrap Tensor/VideoTensor-style wrappers, but leave numpy objects
        # alone (np.float32 exposes a .data memoryview we must not grab)
        if isinstance(value, (np.ndarray, np.generic)) or not hasattr(value, "data"):
            data = value
        else:
            data = value.data
        # note: not ascontiguousarray, which would promote rank-0 to rank-1
        out[str(name)] = np.asarray(data, dtype=np.float32, order="C")
    return out


def save_tensor(path, obj) -> None:
    """Write a tensor, a VideoTensor, or a name -> tensor mapping.

    A bare array is stored under the name "tensor".  Values are cast to
    float32; load_tensor gives them back bit for bit.
    """
    entries = _as_entries(obj)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(bytes([_VERSION]))
        fh.write(struct.pack("<I", len(entries)))
        for name in sorted(entries):
            arr = entries[name]
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise ValueError(f"entry name too long ({len(nb)} bytes): {name[:40]!r}...")
            if arr.ndim > 0xFF:
                raise ValueError(f"entry {name!r} rank {arr.ndim} exceeds 255")
            for d in arr.shape:
                if d >= 1 << 32:
                    raise ValueError(f"extent overflow: entry {name!r} extent {d} "
                                     "does not fit in 32 bits")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(bytes([arr.ndim]))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4", copy=False).tobytes())


def load_tensor(path) -> dict[str, np.ndarray]:
    """Read a container back into a name -> float32 array dict.

    Truncation, wrong magic, wrong version, and overflowing extents each
    get their own diagnostic so a corrupt file is easy to triage.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise ValueError(f"truncated container: needed {n} more bytes for {what}, "
                             f"file has {len(buf) - pos} left")
        piece = buf[pos:pos + n]
        pos += n
        return piece

    magic = take(4, "magic")
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    version = take(1, "version byte")[0]
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}, expected {_VERSION}")
    (count,) = struct.unpack("<I", take(4, "entry count"))

    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"name length of entry {i}"))
        name = take(nlen, f"name of entry {i}").decode("utf-8")
        if name in out:
            raise ValueError(f"duplicate entry name {name!r}")
        rank = take(1, f"rank of {name!r}")[0]
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"extents of {name!r}"))
        n = 1
        for d in shape:
            n *= d
        if n > _MAX_ELEMENTS:
            raise ValueError(f"extent overflow: entry {name!r} claims {n} elements")
        payload = take(4 * n, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if pos != len(buf):
        raise ValueError(f"trailing bytes: {len(buf) - pos} after the last entry")
    return out


def _quantize(frame: np.ndarray) -> np.ndarray:
    # round half up: 0.5 -> 128, matching floor(v*255 + 0.5)
    return np.floor(np.clip(frame, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_frames_ppm(video: VideoTensor, out_dir) -> list[Path]:
    """Dump every frame of a single video as binary PPM (P6, maxval 255).

    Accepts 3 channels (RGB) or 1 (replicated to gray RGB); values are
    clamped to [0, 1] first.  Returns the written paths in frame order.
    """
    if video.batch != 1:
        raise ValueError(f"expected a single video, got batch {video.batch}")
    if video.channels not in (1, 3):
        raise ValueError(f"PPM needs 1 or 3 channels, got {video.channels}")
    arr = video.data[0]
    if video.channels == 1:
        arr = np.repeat(arr, 3, axis=0)
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)
    header = f"P6\n{video.width} {video.height}\n255\n".encode("ascii")
    paths = []
    for k in range(video.frames):
        rgb = _quantize(arr[:, k]).transpose(1, 2, 0)      # (H, W, 3)
        path = out / f"frame_{k:04d}.ppm"
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(rgb).tobytes())
        paths.append(path)
    return paths


def read_frame_ppm(path) -> np.ndarray:
    """Read one of our P6 files back as a (H, W, 3) uint8 array.

    Tolerates arbitrary whitespace and '#' comments in the header, per
    the PPM grammar.
    """
    with open(path, "rb") as fh:
        buf = fh.read()

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(buf):
            c = buf[pos:pos + 1]
            if c == b"#":
                while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        return buf[start:pos]

    if token() != b"P6":
        raise ValueError("not a P6 PPM file")
    width = int(token())
    height = int(token())
    maxval = int(token())
    if maxval != 255:
        raise ValueError(f"expected maxval 255, got {maxval}")
    pos += 1                                               # single whitespace after maxval
    need = width * height * 3
    payload = buf[pos:pos + need]
    if len(payload) != need:
        raise ValueError(f"truncated PPM payload: {len(payload)} of {need} bytes")
    return np.frombuffer(payload, np.uint8).reshape(height, width, 3).copy()
