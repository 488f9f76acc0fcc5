"""Report figures, rendered headlessly to PNG files.

Everything goes through the Agg backend with pinned metadata and a fixed
dpi, so identical inputs produce byte-identical files; the CLI's
reproducibility guarantee covers these figures too.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np

from .videotensor import VideoTensor

_META = {"Software": "pano360"}
_DPI = 100


def _save(fig, path) -> None:
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def _as_video_array(video) -> np.ndarray:
    data = video.data if isinstance(video, VideoTensor) else np.asarray(video)
    if data.ndim != 5:
        raise ValueError(f"expected a 5-axis video, got shape {data.shape}")
    return data


def save_loss_curve(losses, path, title: str = "training loss") -> None:
    """Plot per-step losses (an empty history still yields a valid figure)."""
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    values = np.asarray(list(losses), np.float64)
    if values.size:
        ax.plot(np.arange(values.size), values, lw=0.9)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_seam_profile(video, path) -> None:
    """Per-column-boundary mean absolute gap, with the wrap boundary marked.

    Boundary x is the gap between columns x and (x+1) mod W; the last one
    is the seam. A seam-aware result shows no spike there.
    """
    data = _as_video_array(video)
    gaps = np.abs(np.diff(data, axis=-1, append=data[..., :1])).mean(
        axis=(0, 1, 2, 3), dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    ax.plot(np.arange(gaps.size), gaps, lw=0.9)
    ax.axvline(gaps.size - 1, color="tab:red", ls="--", lw=0.9, label="seam")
    ax.set_xlabel("column boundary")
    ax.set_ylabel("mean |gap|")
    ax.set_title("horizontal gap profile")
    ax.legend(loc="upper left")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_frame_strip(video, path, max_frames: int = 8) -> None:
    """First batch element's frames side by side as one image."""
    data = _as_video_array(video)[0]
    if data.shape[0] == 1:
        data = np.repeat(data, 3, axis=0)
    if data.shape[0] != 3:
        # flow and other non-RGB stacks: show the first channel as gray
        data = np.repeat(data[:1], 3, axis=0)
    n = min(max_frames, data.shape[1])
    frames = np.clip(data[:, :n], 0.0, 1.0)
    H, W = frames.shape[-2:]
    gap = np.ones((3, H, 2), np.float32)
    parts = []
    for k in range(n):
        parts.append(frames[:, k])
        if k + 1 < n:
            parts.append(gap)
    strip = np.concatenate(parts, axis=-1).transpose(1, 2, 0)
    fig, ax = plt.subplots(figsize=(min(12.0, 1.5 * n), max(1.6, 12.0 * H / (n * W))))
    ax.imshow(strip, interpolation="nearest")
    ax.set_axis_off()
    fig.tight_layout(pad=0.2)
    _save(fig, path)
