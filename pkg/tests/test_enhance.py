"""Seam mechanisms at sampling time, and the seam-continuity metric."""

import math

import numpy as np
import pytest

from pano360.adapter import AdapterConfig, init_adapter_params
from pano360.autodiff import no_grad
from pano360.denoiser import DenoiserConfig, init_denoiser_params, unet_forward
from pano360.diffusion import ddim_sample, linear_beta_schedule
from pano360.enhance import (EnhancementConfig, SeamReport,
                             duplicate_side_by_side, sample_with_enhancements,
                             seam_metric)
from pano360.videotensor import VideoTensor

_DCFG = DenoiserConfig(in_channels=1, channels=(2, 2, 2, 2), temb_dim=4)


def _model(seed=0, randomize_head=True):
    rng = np.random.default_rng(seed)
    params = init_denoiser_params(_DCFG, rng)
    if randomize_head:
        with no_grad():
            params["backbone.head.w"].data[...] = 0.3 * rng.standard_normal(
                params["backbone.head.w"].data.shape).astype(np.float32)
    return params


def _z(seed=1, shape=(1, 1, 2, 8, 16)):
    return VideoTensor(np.random.default_rng(seed).standard_normal(shape)
                       .astype(np.float32))


def test_config_theta_wraps_and_rejects_nonfinite():
    assert EnhancementConfig(theta=2.0 * math.pi).theta == 0.0
    assert abs(EnhancementConfig(theta=-math.pi / 2).theta - 1.5 * math.pi) < 1e-12
    with pytest.raises(ValueError):
        EnhancementConfig(theta=float("nan"))
    with pytest.raises(ValueError):
        EnhancementConfig(theta=float("inf"))


def test_seam_metric_constant_video():
    rep = seam_metric(VideoTensor(np.full((1, 3, 2, 4, 8), 0.5, np.float32)))
    assert rep == SeamReport(seam_gap=0.0, interior_gap=0.0, ratio=1.0)


def test_seam_metric_ramp():
    # columns 0..7: every interior gap is 1, the wrap gap is 7
    v = np.tile(np.arange(8, dtype=np.float32), (1, 1, 1, 4, 1))
    rep = seam_metric(VideoTensor(v))
    assert rep.seam_gap == pytest.approx(7.0)
    assert rep.interior_gap == pytest.approx(1.0)
    assert rep.ratio == pytest.approx(7.0)


def test_seam_metric_full_period_sine():
    # one full period wraps smoothly, but |sin| spends more time near its
    # maximum slope than the seam's near-zero phase: ratio -> pi/2 as the
    # grid refines, and sits near 1.59 at W=16
    w = 16
    v = np.sin(2.0 * np.pi * np.arange(w) / w).astype(np.float32)
    rep = seam_metric(v.reshape(1, 1, 1, 1, w))
    seam = abs(math.sin(2.0 * math.pi * (w - 1) / w))
    assert rep.seam_gap == pytest.approx(seam, rel=1e-5)
    assert rep.ratio == pytest.approx(1.587, abs=5e-3)


def test_seam_metric_cosine_phase_is_smooth_at_seam():
    # cos has its flat extremum on the seam, so the wrap gap is tiny
    w = 32
    v = np.cos(2.0 * np.pi * np.arange(w) / w).astype(np.float32)
    rep = seam_metric(v.reshape(1, 1, 1, 1, w))
    assert rep.ratio < 0.2


def test_seam_metric_width_validation():
    with pytest.raises(ValueError):
        seam_metric(np.zeros((1, 1, 1, 4, 1), np.float32))


def test_duplicate_side_by_side():
    v = _z(2, (1, 3, 2, 4, 8))
    dup = duplicate_side_by_side(v)
    assert dup.width == 16
    assert np.array_equal(dup.data[..., :8], v.data)
    assert np.array_equal(dup.data[..., 8:], v.data)


def test_flags_off_matches_plain_ddim():
    params = _model(3)
    z = _z(4)
    sched = linear_beta_schedule(20)
    cfg = EnhancementConfig(rotate_latents=False, circular_late_half=False)
    got = sample_with_enhancements(params, None, z, sched, 4, cfg, _DCFG)

    def denoise(zz, t, cond):
        with no_grad():
            return unet_forward(zz, t, params, _DCFG).data

    want = ddim_sample(denoise, z.data, sched, 4)
    assert np.array_equal(got.data, want)


def test_full_turn_theta_equals_no_rotation():
    params = _model(5)
    z = _z(6)
    sched = linear_beta_schedule(20)
    off = EnhancementConfig(rotate_latents=False, circular_late_half=False)
    on = EnhancementConfig(theta=2.0 * math.pi, rotate_latents=True,
                           circular_late_half=False)
    a = sample_with_enhancements(params, None, z, sched, 3, off, _DCFG)
    b = sample_with_enhancements(params, None, z, sched, 3, on, _DCFG)
    assert np.array_equal(a.data, b.data)


def test_rotation_closure_with_zero_denoiser():
    # an untrained net predicts zero noise, so every step is a pure
    # rescaling; the rolls must then cancel exactly against the final unroll
    params = _model(7, randomize_head=False)
    z = _z(8)
    sched = linear_beta_schedule(20)
    off = EnhancementConfig(rotate_latents=False, circular_late_half=False)
    on = EnhancementConfig(theta=1.0, rotate_latents=True,
                           circular_late_half=False)
    a = sample_with_enhancements(params, None, z, sched, 5, off, _DCFG)
    b = sample_with_enhancements(params, None, z, sched, 5, on, _DCFG)
    assert np.array_equal(a.data, b.data)


def test_rotation_changes_zero_padded_sampling():
    # with zero padding the net is not shift equivariant, so rotating the
    # latent mid-trajectory must change the result
    params = _model(9)
    z = _z(10)
    sched = linear_beta_schedule(20)
    off = EnhancementConfig(rotate_latents=False, circular_late_half=False)
    on = EnhancementConfig(theta=math.pi / 2, rotate_latents=True,
                           circular_late_half=False)
    a = sample_with_enhancements(params, None, z, sched, 4, off, _DCFG)
    b = sample_with_enhancements(params, None, z, sched, 4, on, _DCFG)
    assert not np.array_equal(a.data, b.data)


def test_circular_late_half_schedule():
    # the switch arms at step index ceil(n/2): a single-step run never goes
    # circular, a two-step run does on its second step
    params = _model(11)
    z = _z(12)
    sched = linear_beta_schedule(20)
    base = EnhancementConfig(rotate_latents=False, circular_late_half=False)
    late = EnhancementConfig(rotate_latents=False, circular_late_half=True)
    one_off = sample_with_enhancements(params, None, z, sched, 1, base, _DCFG)
    one_on = sample_with_enhancements(params, None, z, sched, 1, late, _DCFG)
    assert np.array_equal(one_off.data, one_on.data)
    two_off = sample_with_enhancements(params, None, z, sched, 2, base, _DCFG)
    two_on = sample_with_enhancements(params, None, z, sched, 2, late, _DCFG)
    assert not np.array_equal(two_off.data, two_on.data)


def test_condition_validation():
    params = _model(13)
    z = _z(14)
    sched = linear_beta_schedule(20)
    cfg = EnhancementConfig()
    cond = VideoTensor(np.zeros((1, 2, 2, 8, 16), np.float32))
    with pytest.raises(ValueError):
        # backbone-only parameters: nothing can consume a condition
        sample_with_enhancements(params, cond, z, sched, 2, cfg, _DCFG,
                                 acfg=None)
    acfg = AdapterConfig(in_channels=2, channels=(2, 2, 2, 2),
                         unshuffle_factor=1)
    params.update(init_adapter_params(acfg, np.random.default_rng(0)))
    with pytest.raises(ValueError):
        bad = VideoTensor(np.zeros((1, 2, 2, 8, 24), np.float32))
        sample_with_enhancements(params, bad, z, sched, 2, cfg, _DCFG, acfg)
    with pytest.raises(TypeError):
        sample_with_enhancements(params, object(), z, sched, 2, cfg, _DCFG, acfg)


def test_conditioned_rotation_closure():
    # zero head keeps eps at zero whatever the condition, so the rolled
    # condition bookkeeping must not leak into the output either
    params = _model(15, randomize_head=False)
    acfg = AdapterConfig(in_channels=2, channels=(2, 2, 2, 2),
                         unshuffle_factor=1, zero_init_output=False)
    params.update(init_adapter_params(acfg, np.random.default_rng(1)))
    z = _z(16)
    cond = VideoTensor(np.random.default_rng(17)
                       .standard_normal((1, 2, 2, 8, 16)).astype(np.float32))
    sched = linear_beta_schedule(20)
    off = EnhancementConfig(rotate_latents=False, circular_late_half=False)
    on = EnhancementConfig(theta=2.5, rotate_latents=True,
                           circular_late_half=False)
    a = sample_with_enhancements(params, cond, z, sched, 4, off, _DCFG, acfg)
    b = sample_with_enhancements(params, cond, z, sched, 4, on, _DCFG, acfg)
    assert np.array_equal(a.data, b.data)
