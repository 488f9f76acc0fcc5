"""Desk-scale laboratory for seam-aware panoramic video diffusion.

The package stacks four layers:

* a small reverse-mode autodiff engine over float32 numpy (autodiff,
  optim, gradcheck);
* equirectangular sphere geometry and procedural scenes with exact
  ground-truth flow (geometry, synth, videotensor);
* the diffusion stack: schedule/DDIM machinery, a pseudo-3D U-Net
  denoiser, a multi-scale motion-condition adapter, two-phase training,
  and seam-aware sampling (diffusion, denoiser, adapter, training,
  enhance);
* artifact plumbing: P360 containers, PPM frames, figures, and the CLI
  (container, figures, cli).
"""

from .adapter import ZERO, AdapterConfig, AdapterFeatures, adapter_forward, init_adapter_params
from .autodiff import PadMode, Parameter, Tensor, no_grad
from .container import load_tensor, read_frame_ppm, save_tensor, write_frames_ppm
from .denoiser import DenoiserConfig, init_denoiser_params, timestep_embedding, unet_forward
from .diffusion import (NoiseSchedule, ddim_sample, ddim_timesteps, latitude_loss,
                        latitude_weight_matrix, linear_beta_schedule, q_sample)
from .enhance import (EnhancementConfig, SeamReport, duplicate_side_by_side,
                      sample_with_enhancements, seam_metric)
from .geometry import (SphereCamera, bilinear_sample_erp, camera_rays, dir_to_erp_pixel,
                       erp_pixel_to_dir, erp_to_perspective, rotate_erp, rotation_flow,
                       rotation_matrix, roll_columns, shift_for_theta, wrap_dx)
from .gradcheck import backward_and_check
from .optim import Adam
from .synth import (SceneSpec, normalize_flow, random_scene, read_scene_spec,
                    render_sequence, write_scene_spec)
from .training import (PHASES, TrainConfig, freeze_partition, param_census,
                       param_checksum, run_phase, train_step)
from .videotensor import VideoTensor

__version__ = "0.1.0"

__all__ = [
    "Adam", "AdapterConfig", "AdapterFeatures", "DenoiserConfig",
    "EnhancementConfig", "NoiseSchedule", "PHASES", "PadMode", "Parameter",
    "SceneSpec", "SeamReport", "SphereCamera", "Tensor", "TrainConfig",
    "VideoTensor", "ZERO", "adapter_forward", "backward_and_check",
    "bilinear_sample_erp", "camera_rays", "ddim_sample", "ddim_timesteps",
    "dir_to_erp_pixel", "duplicate_side_by_side", "erp_pixel_to_dir",
    "erp_to_perspective", "freeze_partition", "init_adapter_params",
    "init_denoiser_params", "latitude_loss", "latitude_weight_matrix",
    "linear_beta_schedule", "load_tensor", "no_grad", "normalize_flow",
    "param_census", "param_checksum", "q_sample", "random_scene",
    "read_frame_ppm", "read_scene_spec", "render_sequence", "rotate_erp",
    "rotation_flow", "rotation_matrix", "roll_columns", "run_phase",
    "sample_with_enhancements", "save_tensor", "seam_metric",
    "shift_for_theta", "timestep_embedding", "train_step", "unet_forward",
    "write_frames_ppm", "write_scene_spec", "wrap_dx",
]
