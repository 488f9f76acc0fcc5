"""Command-line front door: dataset generation, two-phase training,
seam-aware sampling, and evaluation utilities.

Every command writes a JSON manifest describing the run.  Input paths are
stored absolute and output paths relative to the manifest, so a replayed
manifest (or a second run with the same seed) reproduces the artifacts
byte for byte, figures included.  Angles on the command line are radians;
the help text shows degree equivalents.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .adapter import ZERO, AdapterConfig, init_adapter_params
from .autodiff import Parameter
from .container import (load_tensor, read_frame_ppm, save_tensor,
                        write_frames_ppm)
from .denoiser import DenoiserConfig, init_denoiser_params
from .diffusion import linear_beta_schedule
from .enhance import (EnhancementConfig, duplicate_side_by_side,
                      sample_with_enhancements, seam_metric)
from .figures import save_frame_strip, save_loss_curve, save_seam_profile
from .geometry import SphereCamera, erp_to_perspective
from .synth import normalize_flow, random_scene, render_sequence, write_scene_spec
from .training import PHASES, TrainConfig, run_phase
from .videotensor import VideoTensor

# one noise schedule for the whole lab (new checkpoints echo it so sampling
# never needs the training data around)
_T = 1000
_BETA_START = 0.00085
_BETA_END = 0.012


class CliError(Exception):
    """A user-facing failure: printed as one line, exit code 2."""


def _onoff(value: str) -> str:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {value!r}")
    return value


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _seam_line(rep) -> str:
    return (f"seam_gap {_fmt(rep.seam_gap)} interior_gap {_fmt(rep.interior_gap)} "
            f"ratio {_fmt(rep.ratio)}")


def _write_manifest(path: Path, command: str, args: dict, outputs: list[str],
                    metrics: dict | None = None) -> None:
    doc: dict = {"command": command, "args": args, "outputs": sorted(outputs)}
    if metrics is not None:
        doc["metrics"] = metrics
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# ---------------------------------------------------------------- checkpoints

def _save_checkpoint(path: Path, params: dict[str, Parameter],
                     sched_params: tuple[int, float, float],
                     data_shape: tuple[int, int, int], dcfg: DenoiserConfig,
                     acfg: AdapterConfig | None) -> None:
    entries: dict = {name: p.data for name, p in params.items()}
    entries["cfg.schedule"] = np.asarray(sched_params, np.float32)
    entries["cfg.data_shape"] = np.asarray(data_shape, np.float32)
    entries["cfg.denoiser"] = np.asarray(
        [dcfg.in_channels, *dcfg.channels, dcfg.temb_dim], np.float32)
    if acfg is not None:
        entries["cfg.adapter"] = np.asarray(
            [acfg.in_channels, *acfg.channels, acfg.unshuffle_factor,
             int(acfg.zero_init_output)], np.float32)
    save_tensor(path, entries)


def _load_checkpoint(path: Path):
    entries = load_tensor(path)
    for key in ("cfg.schedule", "cfg.data_shape", "cfg.denoiser"):
        if key not in entries:
            raise CliError(f"{path} is not a training checkpoint (missing {key!r})")
    T, b0, b1 = entries["cfg.schedule"]
    sched_params = (int(T), float(b0), float(b1))
    F, H, W = (int(v) for v in entries["cfg.data_shape"])
    d = entries["cfg.denoiser"]
    dcfg = DenoiserConfig(in_channels=int(d[0]),
                          channels=tuple(int(c) for c in d[1:5]),
                          temb_dim=int(d[5]))
    acfg = None
    if "cfg.adapter" in entries:
        a = entries["cfg.adapter"]
        acfg = AdapterConfig(in_channels=int(a[0]),
                             channels=tuple(int(c) for c in a[1:5]),
                             unshuffle_factor=int(a[5]),
                             zero_init_output=bool(a[6]))
    params = {k: Parameter(k, v) for k, v in entries.items()
              if not k.startswith("cfg.")}
    return params, sched_params, (F, H, W), dcfg, acfg


# -------------------------------------------------------------------- loading

def _load_dataset(data_dir: Path) -> list[tuple[VideoTensor, VideoTensor]]:
    videos = sorted(data_dir.glob("scene_*.video.p360"))
    if not videos:
        raise CliError(f"no scene_*.video.p360 files in {data_dir}")
    dataset = []
    for vp in videos:
        fp = vp.with_name(vp.name.replace(".video.", ".flow."))
        if not fp.exists():
            raise CliError(f"missing flow container {fp}")
        video = VideoTensor(load_tensor(vp)["video"])
        flow = VideoTensor(load_tensor(fp)["flow"])
        if video.data.shape[2:] != flow.data.shape[2:]:
            raise CliError(f"{vp.name}: video grid {video.data.shape[2:]} vs "
                           f"flow grid {flow.data.shape[2:]}")
        dataset.append((video, normalize_flow(flow)))
    return dataset


def _load_video_any(path: Path) -> VideoTensor:
    """A video from either a P360 container or a directory of PPM frames."""
    if path.is_dir():
        ppms = sorted(path.glob("*.ppm"))
        if not ppms:
            raise CliError(f"no .ppm frames in {path}")
        frames = np.stack([read_frame_ppm(p) for p in ppms])
        data = (frames.astype(np.float32) / 255.0).transpose(3, 0, 1, 2)[None]
        return VideoTensor(np.ascontiguousarray(data))
    entries = load_tensor(path)
    for key in ("video", "tensor"):
        if key in entries:
            arr = entries[key]
            break
    else:
        if len(entries) == 1:
            arr = next(iter(entries.values()))
        else:
            raise CliError(f"container {path} has entries {sorted(entries)}; "
                           "expected one named 'video'")
    if arr.ndim != 5:
        raise CliError(f"entry in {path} has rank {arr.ndim}, expected a "
                       "(batch, channels, frames, height, width) video")
    return VideoTensor(arr)


# ------------------------------------------------------------------- commands

def cmd_gen_data(a) -> int:
    if a.height < 2 or a.height % 2:
        raise CliError(f"--height must be even and >= 2, got {a.height}")
    if a.scenes < 1:
        raise CliError(f"--scenes must be >= 1, got {a.scenes}")
    if a.frames < 1:
        raise CliError(f"--frames must be >= 1, got {a.frames}")
    out = Path(a.out)
    os.makedirs(out, exist_ok=True)
    outputs: list[str] = []
    preview = None
    for i in range(a.scenes):
        spec = random_scene(a.seed + i, frames=a.frames, height=a.height)
        video, flow = render_sequence(spec)
        stem = f"scene_{i:03d}"
        write_scene_spec(spec, out / f"{stem}.scene.txt")
        save_tensor(out / f"{stem}.video.p360", {"video": video})
        save_tensor(out / f"{stem}.flow.p360", {"flow": flow})
        outputs += [f"{stem}.scene.txt", f"{stem}.video.p360", f"{stem}.flow.p360"]
        if preview is None:
            preview = video
    save_frame_strip(preview, out / "preview.png")
    outputs.append("preview.png")
    _write_manifest(out / "manifest.json", "gen-data",
                    {"seed": a.seed, "scenes": a.scenes, "frames": a.frames,
                     "height": a.height, "out": "."},
                    outputs)
    print(f"wrote {a.scenes} scenes to {out}")
    return 0


def cmd_train(a) -> int:
    data_dir = Path(a.data).resolve()
    dataset = _load_dataset(data_dir)
    video0, flow0 = dataset[0]
    shape = (video0.frames, video0.height, video0.width)
    tcfg = TrainConfig(steps=a.steps, p_zero=a.p_zero,
                       latitude_loss=a.latitude_loss == "on",
                       rotation_augment=a.rotate_augment == "on",
                       seed=a.seed)

    if a.ckpt_in:
        ckpt_in = Path(a.ckpt_in).resolve()
        params, sched_params, ck_shape, dcfg, acfg = _load_checkpoint(ckpt_in)
        if ck_shape != shape:
            raise CliError(f"checkpoint geometry {ck_shape} does not match "
                           f"dataset {shape}")
    else:
        if a.phase == "adapter":
            raise CliError("adapter phase requires --ckpt-in with a trained backbone")
        sched_params = (_T, _BETA_START, _BETA_END)
        dcfg = DenoiserConfig()
        acfg = None
        params = init_denoiser_params(dcfg, np.random.default_rng(a.seed))

    if a.phase == "adapter":
        if not any(k.startswith("backbone.") for k in params):
            raise CliError("checkpoint has no backbone parameters; train the "
                           "backbone phase first")
        if not any(k.startswith("adapter.") for k in params):
            factor = flow0.height // video0.height
            acfg = AdapterConfig(in_channels=flow0.channels,
                                 channels=dcfg.channels,
                                 unshuffle_factor=max(factor, 1),
                                 zero_init_output=True)
            params.update(init_adapter_params(acfg, np.random.default_rng(a.seed)))

    sched = linear_beta_schedule(*sched_params)
    losses = run_phase(dataset, params, sched, tcfg, dcfg, acfg, phase=a.phase)

    ckpt_out = Path(a.ckpt_out)
    os.makedirs(ckpt_out.resolve().parent, exist_ok=True)
    stem = ckpt_out.stem
    _save_checkpoint(ckpt_out, params, sched_params, shape, dcfg, acfg)
    log_path = ckpt_out.with_name(stem + ".loss.txt")
    log_path.write_text("".join(f"{i} {loss!r}\n" for i, loss in enumerate(losses)),
                        encoding="utf-8")
    fig_path = ckpt_out.with_name(stem + ".loss.png")
    save_loss_curve(losses, fig_path, title=f"{a.phase} phase loss")

    args_echo: dict = {"data": str(data_dir), "phase": a.phase, "steps": a.steps,
                       "p_zero": a.p_zero, "latitude_loss": a.latitude_loss,
                       "rotate_augment": a.rotate_augment, "seed": a.seed,
                       "ckpt_out": ckpt_out.name}
    if a.ckpt_in:
        args_echo["ckpt_in"] = str(Path(a.ckpt_in).resolve())
    _write_manifest(ckpt_out.with_name(stem + ".manifest.json"), "train",
                    args_echo, [ckpt_out.name, log_path.name, fig_path.name])
    if losses:
        print(f"phase {a.phase}: {len(losses)} steps, "
              f"final loss {losses[-1]:.6f}")
    else:
        print(f"phase {a.phase}: 0 steps (checkpoint written unchanged)")
    return 0


def cmd_sample(a) -> int:
    ckpt = Path(a.ckpt).resolve()
    params, sched_params, (F, H, W), dcfg, acfg = _load_checkpoint(ckpt)
    sched = linear_beta_schedule(*sched_params)
    if not 1 <= a.steps <= sched.n_steps:
        raise CliError(f"--steps must lie in [1, {sched.n_steps}], got {a.steps}")
    has_adapter = any(k.startswith("adapter.") for k in params)

    if a.flow:
        if not has_adapter or acfg is None:
            raise CliError("--flow given but the checkpoint has no adapter")
        flow_path = Path(a.flow).resolve()
        entries = load_tensor(flow_path)
        arr = entries.get("flow")
        if arr is None:
            arr = entries.get("tensor")
        if arr is None and len(entries) == 1:
            arr = next(iter(entries.values()))
        if arr is None:
            raise CliError(f"flow container {flow_path} needs a 'flow' entry, "
                           f"found {sorted(entries)}")
        r = acfg.unshuffle_factor
        want = (1, acfg.in_channels, F, H * r, W * r)
        if arr.shape != want:
            raise CliError(f"flow shape {arr.shape} does not match checkpoint "
                           f"geometry {want}")
        condition = normalize_flow(VideoTensor(arr))
    else:
        condition = ZERO if has_adapter else None

    ecfg = EnhancementConfig(theta=a.theta,
                             rotate_latents=a.rotate == "on",
                             circular_late_half=a.circular_late == "on",
                             adapter_weight=a.adapter_weight)
    rng = np.random.default_rng(a.seed)
    z = rng.standard_normal((1, dcfg.in_channels, F, H, W)).astype(np.float32)
    video = sample_with_enhancements(params, condition, z, sched, a.steps,
                                     ecfg, dcfg, acfg if has_adapter else None)

    out = Path(a.out)
    os.makedirs(out, exist_ok=True)
    frame_paths = write_frames_ppm(video, out / "frames")
    save_tensor(out / "video.p360", {"video": video})
    rep = seam_metric(video)
    line = _seam_line(rep)
    (out / "seam.txt").write_text(line + "\n", encoding="utf-8")
    save_frame_strip(video, out / "frames.png")
    save_seam_profile(video, out / "seam_profile.png")

    outputs = ["video.p360", "seam.txt", "frames.png", "seam_profile.png"]
    outputs += [f"frames/{p.name}" for p in frame_paths]
    args_echo = {"ckpt": str(ckpt), "steps": a.steps, "theta": a.theta,
                 "rotate": a.rotate, "circular_late": a.circular_late,
                 "adapter_weight": a.adapter_weight, "seed": a.seed, "out": "."}
    if a.flow:
        args_echo["flow"] = str(Path(a.flow).resolve())
    _write_manifest(out / "manifest.json", "sample", args_echo, outputs,
                    metrics={"seam_gap": rep.seam_gap,
                             "interior_gap": rep.interior_gap,
                             "ratio": rep.ratio})
    print(line)
    return 0


def cmd_eval(a) -> int:
    inp = Path(a.input).resolve()
    video = _load_video_any(inp)
    out = Path(a.out) if a.out else inp.with_name(inp.name + ".eval")
    os.makedirs(out, exist_ok=True)
    args_echo: dict = {"mode": a.mode, "input": str(inp), "out": "."}

    if a.mode == "seam":
        rep = seam_metric(video)
        line = _seam_line(rep)
        (out / "seam.txt").write_text(line + "\n", encoding="utf-8")
        save_seam_profile(video, out / "seam_profile.png")
        _write_manifest(out / "manifest.json", "eval", args_echo,
                        ["seam.txt", "seam_profile.png"],
                        metrics={"seam_gap": rep.seam_gap,
                                 "interior_gap": rep.interior_gap,
                                 "ratio": rep.ratio})
        print(line)
        return 0

    if a.mode == "project":
        size = a.size if a.size else video.height
        cam = SphereCamera(yaw=a.yaw, pitch=a.pitch, fov=a.fov, out_size=size)
        views = np.stack([erp_to_perspective(video.data[0][:, k], cam)
                          for k in range(video.frames)], axis=1)[None]
        view_video = VideoTensor(np.ascontiguousarray(views))
        frame_paths = write_frames_ppm(view_video, out / "frames")
        save_frame_strip(view_video, out / "frames.png")
        args_echo.update({"yaw": a.yaw, "pitch": a.pitch, "fov": a.fov,
                          "size": size})
        _write_manifest(out / "manifest.json", "eval", args_echo,
                        ["frames.png"] + [f"frames/{p.name}" for p in frame_paths])
        print(f"wrote {len(frame_paths)} perspective frames to {out}")
        return 0

    # duplicate
    dup = duplicate_side_by_side(video)
    frame_paths = write_frames_ppm(dup, out / "frames")
    save_tensor(out / "video.p360", {"video": dup})
    save_frame_strip(dup, out / "frames.png")
    _write_manifest(out / "manifest.json", "eval", args_echo,
                    ["video.p360", "frames.png"] +
                    [f"frames/{p.name}" for p in frame_paths])
    print(f"wrote {len(frame_paths)} side-by-side frames to {out}")
    return 0


def _replay_argv(man: dict, target: Path) -> list[str]:
    cmd = man.get("command")
    args = dict(man.get("args", {}))
    if cmd == "gen-data":
        return ["gen-data", "--seed", str(args["seed"]),
                "--scenes", str(args["scenes"]), "--frames", str(args["frames"]),
                "--height", str(args["height"]), "--out", str(target)]
    if cmd == "train":
        argv = ["train", "--data", args["data"], "--phase", args["phase"],
                "--steps", str(args["steps"]), "--p-zero", str(args["p_zero"]),
                "--latitude-loss", args["latitude_loss"],
                "--rotate-augment", args["rotate_augment"],
                "--seed", str(args["seed"]),
                "--ckpt-out", str(target / args["ckpt_out"])]
        if "ckpt_in" in args:
            argv += ["--ckpt-in", args["ckpt_in"]]
        return argv
    if cmd == "sample":
        argv = ["sample", "--ckpt", args["ckpt"], "--steps", str(args["steps"]),
                "--theta", str(args["theta"]), "--rotate", args["rotate"],
                "--circular-late", args["circular_late"],
                "--adapter-weight", str(args["adapter_weight"]),
                "--seed", str(args["seed"]), "--out", str(target)]
        if "flow" in args:
            argv += ["--flow", args["flow"]]
        return argv
    if cmd == "eval":
        argv = ["eval", args["mode"], "--input", args["input"],
                "--out", str(target)]
        if args["mode"] == "project":
            argv += ["--yaw", str(args["yaw"]), "--pitch", str(args["pitch"]),
                     "--fov", str(args["fov"]), "--size", str(args["size"])]
        return argv
    raise CliError(f"manifest has unknown command {cmd!r}")


def cmd_replay(a) -> int:
    man_path = Path(a.manifest).resolve()
    try:
        man = json.loads(man_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CliError(f"{man_path} is not a manifest: {e}") from e
    target = Path(a.out) if a.out else man_path.parent
    return main(_replay_argv(man, target))


# --------------------------------------------------------------------- parser

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pano360",
        description="Panoramic video diffusion lab: generate data, train the "
                    "two training phases, sample with seam enhancements, and "
                    "evaluate results.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic scene dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=4)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--height", type=int, default=32,
                   help="panorama height in px (even; width is 2x)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training phase")
    p.add_argument("--data", required=True)
    p.add_argument("--phase", choices=PHASES, required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--p-zero", type=float, default=0.2,
                   help="probability of dropping the motion condition")
    p.add_argument("--latitude-loss", type=_onoff, default="on")
    p.add_argument("--rotate-augment", type=_onoff, default="on")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ckpt-in", default=None)
    p.add_argument("--ckpt-out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample a video from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--flow", default=None,
                   help="optional motion condition container")
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--theta", type=float, default=1.570796,
                   help="per-step rotation in radians "
                        "(default 1.570796 rad = 90.0 deg)")
    p.add_argument("--rotate", type=_onoff, default="on",
                   help="rotate latents every step")
    p.add_argument("--circular-late", type=_onoff, default="on",
                   help="circular padding for the late half of the steps")
    p.add_argument("--adapter-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a video artifact")
    esub = p.add_subparsers(dest="mode", required=True)
    for mode, desc in (("seam", "print the seam report"),
                       ("project", "cut perspective views"),
                       ("duplicate", "write side-by-side doubled frames")):
        ep = esub.add_parser(mode, help=desc)
        ep.add_argument("--input", required=True,
                        help="P360 container or PPM frame directory")
        ep.add_argument("--out", default=None,
                        help="output directory (default: <input>.eval)")
        if mode == "project":
            ep.add_argument("--yaw", type=float, default=0.0,
                            help="radians (default 0.0 rad = 0.0 deg)")
            ep.add_argument("--pitch", type=float, default=0.0,
                            help="radians (default 0.0 rad = 0.0 deg)")
            ep.add_argument("--fov", type=float, default=1.570796,
                            help="radians (default 1.570796 rad = 90.0 deg)")
            ep.add_argument("--size", type=int, default=None,
                            help="output view size in px (default: input height)")
        ep.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="re-run a recorded manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None,
                   help="regenerate into this directory "
                        "(default: the manifest's own)")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
