"""Multi-scale condition adapter.

The condition video (optical flow by default) is pixel-unshuffled onto the
diffused grid, then passed through four blocks of [3x3 conv -> silu ->
pseudo-3D residual block]; the first three blocks end in a stride-2
downsample. Each block's output is captured as one feature scale, so the
four scales sit at the diffused grid, /2, /4 and /8, matching the four
denoiser levels they are added into.

With zero_init_output on, every block's conv is zero-initialized, which
makes all four features exactly zero until training moves them; the first
conditioned step is then bit-identical to an unconditioned one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .autodiff import (PadMode, Parameter, Tensor, conv2d, conv_temporal,
                       init_uniform, pixel_unshuffle, silu)
from .videotensor import VideoTensor


class _ZeroCondition:
    """Sentinel for an unconditioned pass (condition dropped to all zeros)."""

    def __repr__(self) -> str:
        return "ZERO"


ZERO = _ZeroCondition()


@dataclass(frozen=True)
class AdapterConfig:
    in_channels: int = 2
    channels: tuple[int, int, int, int] = (16, 32, 64, 64)
    unshuffle_factor: int = 8
    zero_init_output: bool = True

    def __post_init__(self) -> None:
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if len(self.channels) != 4:
            raise ValueError("adapter has exactly four scales")
        if self.unshuffle_factor < 1:
            raise ValueError("unshuffle_factor must be >= 1")


class AdapterFeatures(NamedTuple):
    """One feature per scale: diffused grid, /2, /4, /8."""

    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor


def init_adapter_params(cfg: AdapterConfig, rng: np.random.Generator,
                        prefix: str = "adapter.") -> dict[str, Parameter]:
    params: dict[str, Parameter] = {}

    def par(name: str, data: np.ndarray) -> None:
        params[prefix + name] = Parameter(prefix + name, data)

    def conv_par(name: str, c_out: int, c_in: int, kf: int, k: int, zero: bool = False) -> None:
        fan = c_in * kf * k * k
        w = np.zeros((c_out, c_in, kf, k, k), np.float32) if zero else \
            init_uniform(rng, (c_out, c_in, kf, k, k), fan)
        par(f"{name}.w", w)
        par(f"{name}.b", np.zeros(c_out, np.float32))

    r = cfg.unshuffle_factor
    prev = cfg.in_channels * r * r
    for k, ch in enumerate(cfg.channels, start=1):
        conv_par(f"block{k}.conv", ch, prev, 1, 3, zero=cfg.zero_init_output)
        conv_par(f"block{k}.rb.spatial", ch, ch, 1, 3)
        conv_par(f"block{k}.rb.temporal", ch, ch, 3, 1)
        if k <= 3:
            conv_par(f"block{k}.down", ch, ch, 1, 3)
        prev = ch
    return params


def adapter_forward(condition, params: dict[str, Parameter], cfg: AdapterConfig,
                    pad: PadMode = PadMode.ZEROS, prefix: str = "adapter.",
                    zero_shape: tuple[int, int, int, int] | None = None) -> AdapterFeatures:
    """Compute the four condition features.

    condition: a VideoTensor with cfg.in_channels channels, or ZERO, in which
    case zero_shape = (batch, frames, height, width) supplies the geometry.
    """
    if condition is ZERO:
        if zero_shape is None:
            raise ValueError("ZERO condition needs zero_shape=(batch, frames, height, width)")
        b, f, h, w = zero_shape
        condition = VideoTensor.zeros(b, cfg.in_channels, f, h, w)
    if not isinstance(condition, VideoTensor):
        raise TypeError("condition must be a VideoTensor or ZERO")
    if condition.channels != cfg.in_channels:
        raise ValueError(f"condition has {condition.channels} channels, "
                         f"adapter expects {cfg.in_channels}")
    r = cfg.unshuffle_factor
    if condition.height % (8 * r) or condition.width % (8 * r):
        raise ValueError(f"condition extents {condition.height}x{condition.width} must be "
                         f"divisible by 8*unshuffle_factor = {8 * r}")

    x = pixel_unshuffle(Tensor(condition.data), r)
    feats = []
    for k in range(1, 5):
        p = lambda name: params[f"{prefix}block{k}.{name}"]  # noqa: E731
        x = silu(conv2d(x, p("conv.w"), p("conv.b"), pad=pad))
        y = conv_temporal(silu(conv2d(x, p("rb.spatial.w"), p("rb.spatial.b"), pad=pad)),
                          p("rb.temporal.w"), p("rb.temporal.b"), pad=pad)
        x = x + y
        feats.append(x)
        if k <= 3:
            x = conv2d(x, p("down.w"), p("down.b"), stride=2, pad=pad)
    return AdapterFeatures(*feats)
