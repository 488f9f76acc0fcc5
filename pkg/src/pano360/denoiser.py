"""A small four-level pseudo-3D U-Net noise predictor.

Every level runs one [norm -> silu -> 3x3 spatial conv -> +timestep
projection -> silu -> 3x1x1 temporal conv] block with an identity residual.
Channel changes happen in the stride-2 downsample convs; the decoder
upsamples nearest-neighbor and uses 1x1 convs for the channel change, with
additive skip connections. Adapter features are added to the four encoder
level outputs (after which both the skip and the downstream path see the
conditioned features). The output conv is zero-initialized, so an untrained
net predicts exactly zero noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adapter import AdapterFeatures
from .autodiff import (PadMode, Parameter, Tensor, channel_norm, conv2d,
                       conv_temporal, init_uniform, linear, silu,
                       upsample_nearest2x)
from .videotensor import VideoTensor


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int = 3
    channels: tuple[int, int, int, int] = (16, 32, 64, 64)
    temb_dim: int = 64

    def __post_init__(self) -> None:
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if len(self.channels) != 4:
            raise ValueError("denoiser has exactly four levels")
        if self.temb_dim < 2 or self.temb_dim % 2:
            raise ValueError("temb_dim must be a positive even number")


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (batch, dim)."""
    t = np.atleast_1d(np.asarray(t, np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(np.float32)


def init_denoiser_params(cfg: DenoiserConfig, rng: np.random.Generator,
                         prefix: str = "backbone.") -> dict[str, Parameter]:
    params: dict[str, Parameter] = {}

    def par(name: str, data: np.ndarray) -> None:
        params[prefix + name] = Parameter(prefix + name, data)

    def conv_par(name: str, c_out: int, c_in: int, kf: int, k: int, zero: bool = False) -> None:
        fan = c_in * kf * k * k
        w = np.zeros((c_out, c_in, kf, k, k), np.float32) if zero else \
            init_uniform(rng, (c_out, c_in, kf, k, k), fan)
        par(f"{name}.w", w)
        par(f"{name}.b", np.zeros(c_out, np.float32))

    def block_pars(name: str, ch: int) -> None:
        par(f"{name}.norm.g", np.ones(ch, np.float32))
        par(f"{name}.norm.b", np.zeros(ch, np.float32))
        conv_par(f"{name}.spatial", ch, ch, 1, 3)
        par(f"{name}.tproj.w", init_uniform(rng, (cfg.temb_dim, ch), cfg.temb_dim))
        par(f"{name}.tproj.b", np.zeros(ch, np.float32))
        conv_par(f"{name}.temporal", ch, ch, 3, 1)

    c = cfg.channels
    conv_par("stem", c[0], cfg.in_channels, 1, 3)
    for k in range(1, 5):
        block_pars(f"enc{k}", c[k - 1])
        if k <= 3:
            conv_par(f"down{k}", c[k], c[k - 1], 1, 3)
    block_pars("mid", c[3])
    for k in (3, 2, 1):
        conv_par(f"up{k}", c[k - 1], c[k], 1, 1)
        block_pars(f"dec{k}", c[k - 1])
    par("head.norm.g", np.ones(c[0], np.float32))
    par("head.norm.b", np.zeros(c[0], np.float32))
    conv_par("head", cfg.in_channels, c[0], 1, 3, zero=True)
    return params


def inject_feature(enc_feat: Tensor, adapter_feat: Tensor | None, weight: float,
                   scale: int) -> Tensor:
    """Additive conditioning at one scale: f_enc + weight * f_cond.

    With no feature or weight == 0 the encoder feature is returned as-is
    (the very same object, so the output is bit-identical by construction).
    """
    if adapter_feat is None or weight == 0.0:
        return enc_feat
    if enc_feat.data.shape != adapter_feat.data.shape:
        raise ValueError(f"scale {scale}: encoder feature {enc_feat.data.shape} vs "
                         f"adapter feature {adapter_feat.data.shape}")
    return enc_feat + adapter_feat * float(weight)


def _block(h: Tensor, params: dict[str, Parameter], name: str, temb: Tensor,
           pad: PadMode) -> Tensor:
    p = lambda suffix: params[f"{name}.{suffix}"]  # noqa: E731
    x = channel_norm(h, p("norm.g"), p("norm.b"))
    x = silu(x)
    x = conv2d(x, p("spatial.w"), p("spatial.b"), pad=pad)
    tp = linear(temb, p("tproj.w"), p("tproj.b"))
    x = x + tp.reshape(tp.shape[0], tp.shape[1], 1, 1, 1)
    x = silu(x)
    x = conv_temporal(x, p("temporal.w"), p("temporal.b"), pad=pad)
    return h + x


def unet_forward(z_t, t, params: dict[str, Parameter], cfg: DenoiserConfig,
                 adapter_feats: AdapterFeatures | None = None,
                 adapter_weight: float = 1.0,
                 pad: PadMode = PadMode.ZEROS,
                 prefix: str = "backbone.") -> Tensor:
    """Predict the noise in z_t at step t. Returns an engine Tensor shaped like z_t."""
    if isinstance(z_t, VideoTensor):
        z = Tensor(z_t.data)
    elif isinstance(z_t, Tensor):
        z = z_t
    else:
        z = Tensor(np.asarray(z_t, np.float32))
    B, C, F, H, W = z.data.shape
    if C != cfg.in_channels:
        raise ValueError(f"z_t has {C} channels, config says {cfg.in_channels}")
    if H % 8 or W % 8:
        raise ValueError(f"spatial extents {H}x{W} must be divisible by 8 (three downsamples)")

    t_arr = np.atleast_1d(np.asarray(t))
    if t_arr.size == 1:
        t_arr = np.repeat(t_arr, B)
    if t_arr.size != B:
        raise ValueError(f"t must be scalar or per-batch, got {t_arr.size} for batch {B}")
    temb = Tensor(timestep_embedding(t_arr, cfg.temb_dim))

    feats: tuple = adapter_feats if adapter_feats is not None else (None,) * 4

    pfx = lambda name: params[prefix + name]  # noqa: E731
    h = conv2d(z, pfx("stem.w"), pfx("stem.b"), pad=pad)
    skips = []
    for k in range(1, 5):
        h = _block(h, params, f"{prefix}enc{k}", temb, pad)
        # conditioning enters here, so both the skip and everything downstream
        # (the next downsample, the middle block) see the injected features
        h = inject_feature(h, feats[k - 1], adapter_weight, k)
        skips.append(h)
        if k <= 3:
            h = conv2d(h, pfx(f"down{k}.w"), pfx(f"down{k}.b"), stride=2, pad=pad)

    h = _block(h, params, f"{prefix}mid", temb, pad)

    for k in (3, 2, 1):
        h = upsample_nearest2x(h)
        h = conv2d(h, pfx(f"up{k}.w"), pfx(f"up{k}.b"), pad=pad)
        h = h + skips[k - 1]
        h = _block(h, params, f"{prefix}dec{k}", temb, pad)

    h = channel_norm(h, pfx("head.norm.g"), pfx("head.norm.b"))
    h = silu(h)
    return conv2d(h, pfx("head.w"), pfx("head.b"), pad=pad)
