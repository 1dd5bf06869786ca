"""Command-line interface for the avatar engine.

Exit codes: 0 success, 1 user error (bad arguments, missing or malformed
files), 2 internal invariant failure. All commands are deterministic: the same
inputs produce byte-identical artifacts.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .avatar import DEFAULT_UV_RESOLUTION, DEFAULT_VOLUME_RESOLUTION, Avatar
from .avatar_ops import (
    TexturePatch,
    animate,
    edit_shape,
    edit_texture,
    load_pose_sequence,
    render_threads,
)
from .errors import AvatarError
from .fit import FitConfig, fit_color, plot_trace, write_trace_csv
from .imageio import load_png, load_png_rgba, save_png
from .renderer import Intrinsics, auto_camera, load_camera, make_rig, render, save_camera
from .skinning import load_weight_volume
from .template import Pose, identity_pose, load_template, make_toy_template, save_template
from .uvgauss import load_maps, save_maps


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_floats(text: str) -> np.ndarray:
    try:
        return np.asarray([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _load_template_arg(path):
    if not os.path.isfile(path):
        raise UsageError(f"template file not found: {path}")
    return load_template(path)


def _load_maps_arg(path):
    if not os.path.isfile(path):
        raise UsageError(f"maps file not found: {path}")
    return load_maps(path)


def _load_camera_arg(path):
    if not os.path.isfile(path):
        raise UsageError(f"camera file not found: {path}")
    return load_camera(path)


def _build_avatar(args, template=None, maps=None) -> Avatar:
    template = template or _load_template_arg(args.template)
    if maps is None and getattr(args, "maps", None):
        maps = _load_maps_arg(args.maps)
    beta = _parse_floats(args.beta) if getattr(args, "beta", None) else None
    bg = _parse_floats(args.background) if getattr(args, "background", None) else (0.0, 0.0, 0.0)
    return Avatar.build(
        template, beta=beta, maps=maps,
        uv_resolution=args.uv_res, volume_resolution=args.vol_res,
        background=np.asarray(bg, dtype=np.float64),
        base_color=(0.5, 0.5, 0.5),
    )


def _pose_for(args, template) -> Pose:
    if getattr(args, "pose", None):
        if not os.path.isfile(args.pose):
            raise UsageError(f"pose file not found: {args.pose}")
        seq = load_pose_sequence(args.pose, template)
        frame = getattr(args, "frame", 0)
        if frame >= len(seq.frames):
            raise UsageError(f"frame {frame} out of range ({len(seq.frames)} frames)")
        return seq.frames[frame]
    return identity_pose(template)


def _camera_for(args, avatar) -> "Camera":
    if getattr(args, "camera", None):
        return _load_camera_arg(args.camera)
    return auto_camera(avatar.shaped_vertices, args.width, args.height,
                       focal_mm=args.focal, azimuth_deg=args.azimuth,
                       elevation_deg=args.elevation)


def _add_avatar_args(p, maps_required=False):
    p.add_argument("--template", required=True, help="path to a .btpl template")
    p.add_argument("--maps", required=maps_required, help="path to a .gam attribute-map file")
    p.add_argument("--beta", help="comma-separated shape coefficients")
    p.add_argument("--uv-res", type=int, default=DEFAULT_UV_RESOLUTION)
    p.add_argument("--vol-res", type=int, default=DEFAULT_VOLUME_RESOLUTION)
    p.add_argument("--background", help="background RGB, e.g. 0,0,0")


def _add_camera_args(p):
    p.add_argument("--camera", help="path to a .cam.json file (overrides the auto camera)")
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--focal", type=float, default=50.0, help="focal length in mm (36 mm-equivalent)")
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=0.0)


def build_parser() -> _Parser:
    parser = _Parser(prog="gsavatar", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="emit the procedural toy humanoid template")
    p.add_argument("--joints", type=int, default=6)
    p.add_argument("--segments", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("validate", help="run all format and invariant checks on assets")
    p.add_argument("paths", nargs="+")

    p = sub.add_parser("render", help="render one view to a PNG")
    _add_avatar_args(p)
    _add_camera_args(p)
    p.add_argument("--pose", help="path to a .pose.json file")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("turntable", help="render evenly spaced views around the avatar")
    _add_avatar_args(p)
    _add_camera_args(p)
    p.add_argument("--views", type=int, default=24)
    p.add_argument("--radius", type=float, help="orbit radius in meters (default: auto-framed)")
    p.add_argument("--write-cameras", action="store_true", help="also write view_NNN.cam.json files")
    p.add_argument("-o", "--outdir", required=True)

    p = sub.add_parser("animate", help="render a pose sequence to numbered PNGs")
    _add_avatar_args(p)
    _add_camera_args(p)
    p.add_argument("--seq", required=True, help="path to a .pose.json sequence")
    p.add_argument("-o", "--outdir", required=True)

    p = sub.add_parser("fit-color", help="fit the color (and opacity) planes to target views")
    _add_avatar_args(p)
    p.add_argument("--views-dir", required=True,
                   help="directory of NNN.png + NNN.cam.json (+ optional NNN.pose.json) views")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--step", type=float, default=5e-2)
    p.add_argument("--optimize-opacity", action="store_true")
    p.add_argument("--trace-csv", help="write the loss trace as iter,loss,psnr CSV")
    p.add_argument("--trace-plot", help="write a loss/PSNR figure alongside the CSV")
    p.add_argument("-o", "--output", required=True, help="output .gam path")

    p = sub.add_parser("edit-shape", help="apply shape coefficients and render the result")
    _add_avatar_args(p)
    _add_camera_args(p)
    p.add_argument("--new-beta", required=True, help="comma-separated shape coefficients to apply")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("edit-texture", help="alpha-blend a PNG patch into the color plane")
    p.add_argument("--maps", required=True)
    p.add_argument("--patch", required=True, help="RGBA PNG patch")
    p.add_argument("--rect", required=True, help="u0,v0,u1,v1 target rectangle in UV space")
    p.add_argument("-o", "--output", required=True, help="output .gam path")

    p = sub.add_parser("serve", help="start the local HTTP service (and /ui/ viewer assets)")
    _add_avatar_args(p)
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", help="directory of viewer static assets served under /ui/")

    return parser


# ---------------------------------------------------------------------------
# command implementations

def _cmd_make_toy(args) -> int:
    template = make_toy_template(args.joints, args.segments, args.seed)
    save_template(template, args.output)
    print(f"wrote {args.output}: V={template.vertex_count} F={template.triangle_count} "
          f"n_b={template.joint_count} S={template.shape_dim}")
    return 0


def _cmd_validate(args) -> int:
    failures = 0
    for path in args.paths:
        if not os.path.isfile(path):
            print(f"{path}: FAIL (file not found)", file=sys.stderr)
            failures += 1
            continue
        try:
            if path.endswith(".btpl"):
                t = load_template(path)
                t.validate()
                detail = f"template V={t.vertex_count} F={t.triangle_count} n_b={t.joint_count}"
            elif path.endswith(".gam"):
                m = load_maps(path)
                m.validate()
                detail = f"maps {m.width}x{m.height}, {int(m.mask.sum())} valid texels"
            elif path.endswith(".wvol"):
                v = load_weight_volume(path)
                sums = v.weight_val.sum(axis=-1)
                if np.max(np.abs(sums - 1.0)) > 1e-5:
                    raise AvatarError("voxel weights do not sum to 1 within 1e-5")
                detail = f"volume {v.resolution}"
            elif path.endswith(".cam.json"):
                c = _load_camera_arg(path)
                detail = f"camera {c.width}x{c.height}"
            elif path.endswith(".pose.json"):
                s = load_pose_sequence(path)
                detail = f"pose sequence, {len(s.frames)} frames"
            else:
                raise UsageError(f"unknown asset type: {path}")
            print(f"{path}: OK ({detail})")
        except UsageError:
            raise
        except Exception as exc:
            print(f"{path}: FAIL ({exc})", file=sys.stderr)
            failures += 1
    print(f"validate: {len(args.paths) - failures}/{len(args.paths)} assets OK")
    return 0 if failures == 0 else 1


def _cmd_render(args) -> int:
    avatar = _build_avatar(args)
    pose = _pose_for(args, avatar.template)
    camera = _camera_for(args, avatar)
    image = render(avatar, pose, camera, avatar.background)
    save_png(image, args.output)
    print(f"wrote {args.output}")
    return 0


def _cmd_turntable(args) -> int:
    avatar = _build_avatar(args)
    pose = _pose_for(args, avatar.template) if getattr(args, "pose", None) else identity_pose(avatar.template)
    from .renderer import frame_points

    intr = Intrinsics.from_focal_mm(args.focal, args.width, args.height)
    target, radius = frame_points(avatar.shaped_vertices, intr)
    if args.radius:
        radius = args.radius
    rig = make_rig(args.views, args.elevation, radius, target, intr)
    os.makedirs(args.outdir, exist_ok=True)
    canonical = avatar.canonical_gaussians()

    from .renderer import render_gaussians

    def one(i_cam):
        i, cam = i_cam
        img = render_gaussians(canonical, avatar.template, pose, cam, avatar.background)
        save_png(img, os.path.join(args.outdir, f"view_{i:03d}.png"))
        if args.write_cameras:
            save_camera(cam, os.path.join(args.outdir, f"view_{i:03d}.cam.json"))

    threads = render_threads()
    if threads > 1 and len(rig) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, enumerate(rig)))
    else:
        for item in enumerate(rig):
            one(item)
    print(f"wrote {args.views} views to {args.outdir}")
    return 0


def _cmd_animate(args) -> int:
    avatar = _build_avatar(args)
    seq = load_pose_sequence(args.seq, avatar.template)
    camera = _camera_for(args, avatar)
    frames = animate(avatar, seq, camera)
    os.makedirs(args.outdir, exist_ok=True)
    for i, img in enumerate(frames):
        save_png(img, os.path.join(args.outdir, f"frame_{i:03d}.png"))
    print(f"wrote {len(frames)} frames to {args.outdir}")
    return 0


def _collect_views(views_dir, template):
    if not os.path.isdir(views_dir):
        raise UsageError(f"views directory not found: {views_dir}")
    views = []
    for name in sorted(os.listdir(views_dir)):
        if not name.endswith(".png"):
            continue
        stem = name[: -len(".png")]
        cam_path = os.path.join(views_dir, stem + ".cam.json")
        if not os.path.isfile(cam_path):
            continue
        pose_path = os.path.join(views_dir, stem + ".pose.json")
        pose = (load_pose_sequence(pose_path, template).frames[0]
                if os.path.isfile(pose_path) else identity_pose(template))
        views.append((load_camera(cam_path), load_png(os.path.join(views_dir, name)), pose))
    if not views:
        raise UsageError(f"no NNN.png + NNN.cam.json pairs found in {views_dir}")
    return views


def _cmd_fit_color(args) -> int:
    avatar = _build_avatar(args)
    views = _collect_views(args.views_dir, avatar.template)
    config = FitConfig(views=views, iterations=args.iterations, step_size=args.step,
                       optimize_opacity=args.optimize_opacity)
    maps, trace = fit_color(avatar, config)
    save_maps(maps, args.output)
    if args.trace_csv:
        write_trace_csv(trace, args.trace_csv)
    if args.trace_plot:
        plot_trace(trace, args.trace_plot)
    first, last = trace[0], trace[-1]
    print(f"fit {len(views)} views, {args.iterations} iterations: "
          f"loss {first[1]:.6g} -> {last[1]:.6g} (PSNR {last[2]:.2f} dB); wrote {args.output}")
    return 0


def _cmd_edit_shape(args) -> int:
    avatar = _build_avatar(args)
    edited = edit_shape(avatar, _parse_floats(args.new_beta))
    camera = _camera_for(args, edited)
    image = render(edited, identity_pose(edited.template), camera, edited.background)
    save_png(image, args.output)
    print(f"anchors: {len(avatar.anchors)} -> {len(edited.anchors)}; wrote {args.output}")
    return 0


def _cmd_edit_texture(args) -> int:
    maps = _load_maps_arg(args.maps)
    if not os.path.isfile(args.patch):
        raise UsageError(f"patch file not found: {args.patch}")
    rect = _parse_floats(args.rect)
    if rect.shape[0] != 4:
        raise UsageError("--rect expects u0,v0,u1,v1")
    patch = TexturePatch(load_png_rgba(args.patch), tuple(float(v) for v in rect))
    out = edit_texture(maps, patch)
    save_maps(out, args.output)
    print(f"wrote {args.output}")
    return 0


def _cmd_serve(args) -> int:
    from .service import AvatarSession, serve

    avatar = _build_avatar(args)
    session = AvatarSession(avatar)
    ui_dir = args.ui_dir
    if ui_dir is None:
        bundled = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(
            os.path.abspath(__file__)))), "frontend", "dist")
        ui_dir = bundled if os.path.isdir(bundled) else None
    server = serve(session, args.port, args.host, ui_dir=ui_dir)
    print(f"serving on http://{args.host}:{args.port} "
          f"(UI at /ui/{'' if ui_dir else ' — no assets found'})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


_COMMANDS = {
    "make-toy": _cmd_make_toy,
    "validate": _cmd_validate,
    "render": _cmd_render,
    "turntable": _cmd_turntable,
    "animate": _cmd_animate,
    "fit-color": _cmd_fit_color,
    "edit-shape": _cmd_edit_shape,
    "edit-texture": _cmd_edit_texture,
    "serve": _cmd_serve,
}


def cli_dispatch(argv) -> int:
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AvatarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal invariant failure
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return cli_dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
