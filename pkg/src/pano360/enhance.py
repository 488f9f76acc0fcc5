"""Seam-aware sampling and the seam-continuity metric.

Two inference-time mechanisms attack the left-right seam of generated
panoramas: rotating the latent (and the condition with it) by a fixed angle
before every denoising step, so the seam never sits at the same longitude
twice, and switching every convolution to circular horizontal padding for
the late half of the steps, so the two ends are denoised as neighbors.
Both are sampler-scoped: model parameters are never touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adapter import ZERO, AdapterConfig, adapter_forward
from .autodiff import PadMode, no_grad
from .denoiser import DenoiserConfig, unet_forward
from .diffusion import NoiseSchedule, ddim_sample
from .geometry import roll_columns, shift_for_theta
from .videotensor import VideoTensor


@dataclass(frozen=True)
class EnhancementConfig:
    theta: float = math.pi / 2
    rotate_latents: bool = True
    circular_late_half: bool = True
    adapter_weight: float = 1.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.theta):
            raise ValueError("theta must be finite")
        object.__setattr__(self, "theta", float(self.theta) % (2.0 * math.pi))


@dataclass(frozen=True)
class SeamReport:
    seam_gap: float
    interior_gap: float
    ratio: float


def sample_with_enhancements(params, condition, z_start, sched: NoiseSchedule,
                             n_steps: int, cfg: EnhancementConfig,
                             dcfg: DenoiserConfig,
                             acfg: AdapterConfig | None = None) -> VideoTensor:
    """DDIM sampling with the two seam mechanisms installed as a step hook.

    condition is a VideoTensor at the adapter's input resolution, ZERO for a
    conditioned model run without motion input, or None to bypass the
    adapter entirely. The cumulative rotation is undone on the final output,
    so the sample comes back in the frame of reference of z_start.
    """
    z0 = np.asarray(z_start.data if isinstance(z_start, VideoTensor) else z_start,
                    np.float32)
    B, C, F, H, W = z0.shape
    has_adapter = acfg is not None and any(k.startswith("adapter.") for k in params)
    r = acfg.unshuffle_factor if acfg is not None else 1
    if condition is not None and not has_adapter:
        raise ValueError("a condition was given but the model has no adapter")
    if isinstance(condition, VideoTensor):
        want = (B, F, H * r, W * r)
        got = (condition.batch, condition.frames, condition.height, condition.width)
        if got != want:
            raise ValueError(f"condition extents {got} incompatible with latent: "
                             f"expected (batch, frames, height, width) = {want}")
    elif condition is not ZERO and condition is not None:
        raise TypeError("condition must be a VideoTensor, ZERO, or None")

    shift = shift_for_theta(W, cfg.theta) if cfg.rotate_latents else 0
    late_start = -(-n_steps // 2)  # late floor(n/2) steps, i.e. index >= ceil(n/2)
    state = {"total": 0, "pad": PadMode.ZEROS}

    def hook(i, z, cond):
        if cfg.circular_late_half and i >= late_start:
            state["pad"] = PadMode.CIRCULAR
        if shift:
            z = roll_columns(z, shift)
            if isinstance(cond, VideoTensor):
                # the condition grid is r times finer, so the same angle
                # moves it r times as many columns
                cond = VideoTensor(roll_columns(cond.data, shift * r))
            state["total"] = (state["total"] + shift) % W
        return z, cond

    def denoise(z, t, cond):
        with no_grad():
            feats = None
            if cond is not None:
                feats = adapter_forward(cond, params, acfg, pad=state["pad"],
                                        zero_shape=(B, F, H * r, W * r))
            eps = unet_forward(z, t, params, dcfg, adapter_feats=feats,
                               adapter_weight=cfg.adapter_weight, pad=state["pad"])
        return eps.data

    out = ddim_sample(denoise, z0, sched, n_steps, condition=condition,
                      per_step_hook=hook)
    if state["total"]:
        out = roll_columns(out, -state["total"])
    return VideoTensor(out)


def seam_metric(video) -> SeamReport:
    """Mean wrap-gap between the two end columns vs the mean interior gap.

    A ratio near 1 means the seam is no worse than an average adjacent
    column pair; a constant video (interior gap 0) is defined as ratio 1.
    """
    v = video.data if isinstance(video, VideoTensor) else np.asarray(video, np.float32)
    if v.shape[-1] < 2:
        raise ValueError("seam metric needs width >= 2")
    seam = float(np.abs(v[..., 0] - v[..., -1]).mean(dtype=np.float64))
    interior = float(np.abs(np.diff(v, axis=-1)).mean(dtype=np.float64))
    ratio = seam / interior if interior > 0.0 else 1.0
    return SeamReport(seam_gap=seam, interior_gap=interior, ratio=ratio)


def duplicate_side_by_side(video: VideoTensor) -> VideoTensor:
    """Concatenate the video with itself along width; the original seam
    becomes the visible center join."""
    return VideoTensor(np.concatenate([video.data, video.data], axis=4))
