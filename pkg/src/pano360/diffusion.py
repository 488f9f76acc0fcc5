"""DDPM forward process, DDIM sampling, and the latitude-weighted loss.

Schedule tables are held in float64 (the cumulative product over a thousand
steps would drift in float32); every value that meets a latent is cast to
float32 at the point of use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .videotensor import VideoTensor


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def n_steps(self) -> int:
        return self.betas.size


def linear_beta_schedule(n_steps: int = 1000, beta_start: float = 0.00085,
                         beta_end: float = 0.012) -> NoiseSchedule:
    """Literal linear interpolation of beta from beta_start to beta_end."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if n_steps == 1:
        return NoiseSchedule(np.array([beta_start]))
    i = np.arange(n_steps, dtype=np.float64)
    return NoiseSchedule(beta_start + i / (n_steps - 1) * (beta_end - beta_start))


def _bar_coeffs(schedule: NoiseSchedule, t) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= schedule.n_steps):
        raise ValueError(f"t out of range [0, {schedule.n_steps})")
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab).astype(np.float32), np.sqrt(1.0 - ab).astype(np.float32)


def q_sample(x0: VideoTensor, t, eps: VideoTensor, schedule: NoiseSchedule) -> VideoTensor:
    """Diffuse x0 to step t: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps.

    t may be a scalar or a per-batch-element integer array.
    """
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {x0.shape} and eps {eps.shape} must match")
    a, b = _bar_coeffs(schedule, t)
    a = np.reshape(a, (-1, 1, 1, 1, 1)) if np.ndim(a) else a
    b = np.reshape(b, (-1, 1, 1, 1, 1)) if np.ndim(b) else b
    return VideoTensor(a * x0.data + b * eps.data)


def ddim_timesteps(total: int, n_steps: int) -> list[int]:
    """Descending uniform-stride grid starting at total - 1."""
    if not 1 <= n_steps <= total:
        raise ValueError(f"n_steps must lie in [1, {total}], got {n_steps}")
    stride = total // n_steps
    return [total - 1 - i * stride for i in range(n_steps)]


def ddim_sample(denoise_fn, z_start: np.ndarray, schedule: NoiseSchedule,
                n_steps: int, condition=None, per_step_hook=None) -> np.ndarray:
    """Deterministic (eta = 0) DDIM from z_start; returns the final x0 estimate.

    denoise_fn(z, t, condition) predicts the noise. per_step_hook, when
    given, is called as hook(step_index, z, condition) before each denoiser
    evaluation and may return a transformed (z, condition) pair; this is the
    attachment point for seam-aware sampling.
    """
    z = np.array(z_start, np.float32, copy=True)
    cond = condition
    ts = ddim_timesteps(schedule.n_steps, n_steps)
    for i, t in enumerate(ts):
        if per_step_hook is not None:
            z, cond = per_step_hook(i, z, cond)
        eps = np.asarray(denoise_fn(z, t, cond), np.float32)
        a_t, b_t = _bar_coeffs(schedule, t)
        x0 = (z - b_t * eps) / a_t
        if i + 1 < len(ts):
            a_n, b_n = _bar_coeffs(schedule, ts[i + 1])
            z = a_n * x0 + b_n * eps
        else:
            z = x0
    return z


def latitude_weight_matrix(latent_height: int, latent_width: int) -> np.ndarray:
    """Row weights cos((2i - H + 1) / (2H) * pi), tiled across columns.

    Symmetric about the equator, maximal there, and strictly positive:
    |2i - H + 1| <= H - 1 < H keeps the argument inside (-pi/2, pi/2).
    """
    if latent_height < 1 or latent_width < 1:
        raise ValueError("latent extents must be >= 1")
    i = np.arange(latent_height, dtype=np.float64)
    w = np.cos((2.0 * i - latent_height + 1.0) / (2.0 * latent_height) * math.pi)
    return np.tile(w[:, None].astype(np.float32), (1, latent_width))


def _as_engine_tensor(v) -> Tensor:
    if isinstance(v, Tensor):
        return v
    if isinstance(v, VideoTensor):
        return Tensor(v.data)
    return Tensor(np.asarray(v, np.float32))


def latitude_loss(eps, eps_hat) -> Tensor:
    """Mean of (W * (eps - eps_hat))**2 with W from latitude_weight_matrix.

    Accepts engine Tensors (differentiable), VideoTensors, or arrays; the
    returned scalar is an engine Tensor either way.
    """
    e = _as_engine_tensor(eps)
    ehat = _as_engine_tensor(eps_hat)
    if e.data.shape != ehat.data.shape:
        raise ValueError(f"shape mismatch {e.data.shape} vs {ehat.data.shape}")
    H, W = e.data.shape[-2:]
    w = Tensor(latitude_weight_matrix(H, W).reshape((1,) * (e.data.ndim - 2) + (H, W)))
    d = w * (e - ehat)
    return (d * d).mean()
