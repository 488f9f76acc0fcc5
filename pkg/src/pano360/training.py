"""Two-phase training: backbone first, then the frozen-backbone adapter.

Phase "backbone" trains the denoiser unconditionally. Phase "adapter"
freezes every backbone parameter and trains only the condition adapter,
whose features are injected into the frozen encoder. Each step samples a
timestep and noise, optionally drops the condition to zero (rate p_zero)
and applies one shared random column rotation to video and flow before
noising, so the model never learns a preferred longitude.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .adapter import ZERO, AdapterConfig, adapter_forward
from .autodiff import Parameter, Tensor, zero_grads
from .denoiser import DenoiserConfig, unet_forward
from .diffusion import NoiseSchedule, latitude_loss, q_sample
from .geometry import roll_columns
from .optim import Adam
from .videotensor import VideoTensor

PHASES = ("backbone", "adapter")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch: int = 2
    lr: float = 1e-3
    p_zero: float = 0.2
    latitude_loss: bool = True
    rotation_augment: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0:
            # 0 is allowed: a zero-step run is how "initialize but do not
            # train yet" is expressed (e.g. adapter init on top of a backbone)
            raise ValueError("steps must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.p_zero <= 1.0:
            raise ValueError(f"p_zero must lie in [0, 1], got {self.p_zero}")


def freeze_partition(params: dict[str, Parameter],
                     trainable_prefix: str = "adapter.") -> tuple[set[str], set[str]]:
    """Split parameter names into (frozen, trainable) by name prefix.

    The default prefix gives the conditioning phase's split: adapter
    trainable, everything else (the backbone) frozen. An empty trainable
    set is an error; an empty frozen set is fine (unconditional phase).
    """
    trainable = {name for name in params if name.startswith(trainable_prefix)}
    if not trainable:
        raise ValueError(f"no trainable parameters under prefix {trainable_prefix!r}")
    return set(params) - trainable, trainable


def param_checksum(params: dict[str, Parameter], prefix: str = "") -> str:
    """SHA-256 over the (sorted name, raw float32 bytes) pairs under prefix."""
    h = hashlib.sha256()
    for name in sorted(params):
        if name.startswith(prefix):
            h.update(name.encode())
            h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def param_census(params: dict[str, Parameter]) -> dict[str, tuple[int, int]]:
    """Per top-level prefix: (tensor count, scalar count)."""
    out: dict[str, tuple[int, int]] = {}
    for name, p in params.items():
        top = name.split(".", 1)[0]
        t, s = out.get(top, (0, 0))
        out[top] = (t + 1, s + p.data.size)
    return out


def train_step(batch_video: VideoTensor, batch_flow: VideoTensor | None,
               sched: NoiseSchedule, cfg: TrainConfig, params: dict[str, Parameter],
               rng: np.random.Generator, opt: Adam, dcfg: DenoiserConfig,
               acfg: AdapterConfig | None = None, conditioned: bool = False) -> float:
    """One optimization step; returns the scalar loss.

    Randomness is drawn in a fixed order (timesteps, noise, condition
    dropout, rotation shift), so a seeded rng reproduces the trajectory
    bit for bit.
    """
    if conditioned:
        if batch_flow is None or acfg is None:
            raise ValueError("conditioned training needs batch_flow and an AdapterConfig")
        if (batch_flow.batch, batch_flow.frames, batch_flow.height, batch_flow.width) != \
                (batch_video.batch, batch_video.frames, batch_video.height, batch_video.width):
            raise ValueError(f"video extents {batch_video.data.shape} and flow extents "
                             f"{batch_flow.data.shape} are misaligned")

    B = batch_video.batch
    t = rng.integers(0, sched.n_steps, size=B)
    eps = rng.standard_normal(batch_video.data.shape).astype(np.float32)
    drop = conditioned and float(rng.uniform()) < cfg.p_zero
    video, flow = batch_video, batch_flow
    if cfg.rotation_augment:
        shift = int(rng.integers(0, batch_video.width))
        video = VideoTensor(roll_columns(video.data, shift))
        if flow is not None:
            flow = VideoTensor(roll_columns(flow.data, shift))

    z_t = q_sample(video, t, eps, sched)
    feats = None
    if conditioned:
        cond = ZERO if drop else flow
        feats = adapter_forward(cond, params, acfg,
                                zero_shape=(B, video.frames, video.height, video.width))
    eps_hat = unet_forward(z_t, t, params, dcfg, adapter_feats=feats)
    if cfg.latitude_loss:
        loss = latitude_loss(eps, eps_hat)
    else:
        diff = eps_hat - Tensor(eps)
        loss = (diff * diff).mean()
    zero_grads(params.values())
    loss.backward()
    opt.step()
    return float(loss.data)


def run_phase(dataset: Sequence[tuple[VideoTensor, VideoTensor]],
              params: dict[str, Parameter], sched: NoiseSchedule, cfg: TrainConfig,
              dcfg: DenoiserConfig, acfg: AdapterConfig | None = None,
              phase: str = "backbone") -> list[float]:
    """Run cfg.steps training steps of one phase; returns the loss history.

    Batches are drawn from the dataset with replacement; given cfg.seed the
    draw order, and with it the whole loss trajectory, is deterministic.
    Frozen parameters have requires_grad switched off for the duration (the
    backward pass then skips their gradient reductions) and restored after.
    """
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")
    if not dataset:
        raise ValueError("empty dataset")
    conditioned = phase == "adapter"
    frozen, trainable = freeze_partition(params, trainable_prefix=phase + ".")
    for name in frozen:
        params[name].requires_grad = False
    try:
        opt = Adam([params[name] for name in sorted(trainable)], lr=cfg.lr)
        rng = np.random.default_rng(cfg.seed)
        losses = []
        for _ in range(cfg.steps):
            idx = rng.integers(0, len(dataset), size=cfg.batch)
            video = VideoTensor(np.concatenate([dataset[i][0].data for i in idx], axis=0))
            flow = None
            if conditioned:
                flow = VideoTensor(np.concatenate([dataset[i][1].data for i in idx], axis=0))
            losses.append(train_step(video, flow, sched, cfg, params, rng, opt,
                                     dcfg, acfg, conditioned))
        return losses
    finally:
        for name in frozen:
            params[name].requires_grad = True
