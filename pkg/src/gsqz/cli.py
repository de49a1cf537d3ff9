"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
malformed files), 3 validation failure (invariant breach, oracle
tolerance breach).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

from . import metrics, model_io, quantize, scenes, spherical
from .quantize import OverheadMode, QuantScheme

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VALIDATION = 3

_SCHEME_BY_LABEL = {s.value: s for s in QuantScheme}
_MODE_BY_LABEL = {m.value: m for m in OverheadMode}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise _UsageError(message)


def _bits_arg(text: str) -> int:
    bits = int(text)
    if not quantize.MIN_BITS <= bits <= quantize.MAX_BITS:
        raise argparse.ArgumentTypeError(
            f"bits must be in [{quantize.MIN_BITS}, {quantize.MAX_BITS}], got {bits}")
    return bits


def _bits_list_arg(text: str) -> list[int]:
    return [_bits_arg(part) for part in text.split(",") if part]


def _scheme_arg(text: str) -> QuantScheme:
    try:
        return _SCHEME_BY_LABEL[text]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown scheme {text!r}; choose from {sorted(_SCHEME_BY_LABEL)}") from None


def _scheme_list_arg(text: str) -> list[QuantScheme]:
    return [_scheme_arg(part) for part in text.split(",") if part]


def _mode_arg(text: str) -> OverheadMode:
    try:
        return _MODE_BY_LABEL[text]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown overhead mode {text!r}; choose from {sorted(_MODE_BY_LABEL)}") from None


def _pose_arg(text: str):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 6:
        raise argparse.ArgumentTypeError(
            "pose must be 'cx,cy,cz,dx,dy,dz' (center and view direction)")
    return parts[:3], parts[3:]


def build_parser() -> _Parser:
    parser = _Parser(prog="gsqz", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="emit a synthetic benchmark scene")
    p.add_argument("--spec", default="garden-desk",
                   help="'garden-desk' or a JSON file with SceneSpec fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-gaussians", type=int, default=None)
    p.add_argument("--n-cameras", type=int, default=None)
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-rig", required=True)
    p.add_argument("--out-held-rig", default=None)

    p = sub.add_parser("quantize", help="quantize model positions")
    p.add_argument("--model", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--scheme", type=_scheme_arg, default=QuantScheme.SPHERICAL_SPLIT,
                   help="uniform | ours | no-split | cartesian-split")
    p.add_argument("--bits", type=_bits_arg, required=True)
    p.add_argument("--r-multiplier", type=float, default=quantize.DEFAULT_R_MULTIPLIER)
    p.add_argument("--r-center", type=float, default=None,
                   help="explicit center radius (required for degenerate rigs)")
    p.add_argument("--overhead-mode", type=_mode_arg,
                   choices=list(OverheadMode), default=OverheadMode.SPLIT_INDEX,
                   metavar="{split-index,flag}")
    p.add_argument("--out", required=True)

    p = sub.add_parser("dequantize", help="reconstruct a model from a container")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="render a model view to a P6 pixmap")
    p.add_argument("--model", required=True)
    p.add_argument("--rig", default=None)
    p.add_argument("--camera-index", type=int, default=None)
    p.add_argument("--pose", type=_pose_arg, default=None,
                   help="cx,cy,cz,dx,dy,dz when no rig camera is used")
    p.add_argument("--focal-px", type=float, default=300.0)
    p.add_argument("--width", type=int, default=400)
    p.add_argument("--height", type=int, default=300)
    p.add_argument("--sh-mode", choices=("dc_only", "full"), default="dc_only")
    p.add_argument("--out", required=True)

    p = sub.add_parser("analyze", help="screen-space displacement between two models")
    p.add_argument("--orig", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--projection", choices=("pinhole", "spherical"), default="spherical")
    p.add_argument("--out-csv", default=None,
                   help="write the per-distance-bin CSV here instead of stdout")

    p = sub.add_parser("sweep", help="rate-distortion sweep over schemes and bit depths")
    p.add_argument("--model", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--schemes", type=_scheme_list_arg, default=list(QuantScheme),
                   help="comma list, e.g. uniform,ours")
    p.add_argument("--bits", type=_bits_list_arg, default=[12, 14, 16],
                   help="comma list, e.g. 12,14,16")
    p.add_argument("--render", action="store_true", help="also render views for PSNR")
    p.add_argument("--projection", choices=("pinhole", "spherical"), default="spherical")
    p.add_argument("--overhead-mode", type=_mode_arg,
                   choices=list(OverheadMode), default=OverheadMode.SPLIT_INDEX,
                   metavar="{split-index,flag}")
    p.add_argument("--r-multiplier", type=float, default=quantize.DEFAULT_R_MULTIPLIER)
    p.add_argument("--r-center", type=float, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="sweep all four schemes at one bit depth")
    p.add_argument("--model", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--bits", type=_bits_arg, default=12)
    p.add_argument("--render", action="store_true")
    p.add_argument("--r-multiplier", type=float, default=quantize.DEFAULT_R_MULTIPLIER)
    p.add_argument("--r-center", type=float, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("check-jacobians",
                       help="verify analytic derivatives against central differences")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-6)
    return parser


def _load_scene_spec(args) -> scenes.SceneSpec:
    if args.spec == "garden-desk":
        spec = scenes.GARDEN_DESK
    else:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        known = {f.name for f in dataclass_fields(scenes.SceneSpec)}
        unknown = set(doc) - known
        if unknown:
            raise model_io.ModelParseError(f"{args.spec}: unknown SceneSpec fields {sorted(unknown)}")
        if "rho_range" in doc:
            doc["rho_range"] = tuple(doc["rho_range"])
        if "image_size" in doc:
            doc["image_size"] = tuple(doc["image_size"])
        spec = scenes.SceneSpec(**doc)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_gaussians is not None:
        overrides["n_gaussians"] = args.n_gaussians
    if args.n_cameras is not None:
        overrides["n_cameras"] = args.n_cameras
    if overrides:
        from dataclasses import replace

        spec = replace(spec, **overrides)
    return spec


def _cmd_generate(args) -> int:
    spec = _load_scene_spec(args)
    model, rig, held_out = scenes.generate(spec)
    model_io.write_model(model, args.out_model)
    model_io.write_camera_rig(rig, args.out_rig)
    if args.out_held_rig:
        model_io.write_camera_rig(held_out, args.out_held_rig)
    print(f"generated {len(model)} gaussians, {rig.n_cameras} cameras"
          f" (seed {spec.seed}) -> {args.out_model}, {args.out_rig}")
    return EXIT_OK


def _geometry_from_args(args, rig) -> quantize.RigGeometry:
    return quantize.derive_geometry(rig, multiplier=args.r_multiplier,
                                    r_center=args.r_center)


def _cmd_quantize(args) -> int:
    model = model_io.read_model(args.model)
    rig = model_io.read_camera_rig(args.rig)
    geometry = _geometry_from_args(args, rig)
    q = quantize.quantize_model(model, geometry, args.scheme, args.bits,
                                args.overhead_mode)
    quantize.write_quantized(q, args.out)
    rate = quantize.rate_report(q)
    print(f"{args.scheme.value}: {q.n_total} gaussians ({q.n_center} center),"
          f" {q.bits} bits/coord + {rate.overhead_bits_per_coord:.4g} overhead"
          f" -> {args.out}")
    return EXIT_OK


def _cmd_dequantize(args) -> int:
    q = quantize.read_quantized(args.in_path)
    model = quantize.dequantize_model(q)
    model_io.write_model(model, args.out)
    print(f"reconstructed {len(model)} gaussians -> {args.out}")
    return EXIT_OK


def _cmd_render(args) -> int:
    from . import render as render_mod

    model = model_io.read_model(args.model)
    if args.camera_index is not None:
        if args.rig is None:
            raise _UsageError("--camera-index requires --rig")
        rig = model_io.read_camera_rig(args.rig)
        cams = render_mod.rig_cameras(rig)
        if not 0 <= args.camera_index < len(cams):
            raise _UsageError(f"--camera-index out of range 0..{len(cams) - 1}")
        cam = cams[args.camera_index]
    elif args.pose is not None:
        center, direction = args.pose
        cam = render_mod.look_at(center, direction, args.focal_px, args.width, args.height)
    else:
        raise _UsageError("render needs --camera-index (with --rig) or --pose")
    image = render_mod.render(model, cam, args.sh_mode)
    render_mod.write_ppm(image, args.out)
    print(f"rendered {cam.width}x{cam.height} view -> {args.out}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    orig = model_io.read_model(args.orig)
    recon = model_io.read_model(args.recon)
    rig = model_io.read_camera_rig(args.rig)
    stats = metrics.center_displacement(orig, recon, rig, args.projection)
    print(f"displacement ({args.projection}, {rig.n_cameras} cameras,"
          f" {stats.n_points} pairs, {stats.n_behind} behind-camera excluded)")
    print(f"  mean: {stats.mean_px:.6g} px")
    print(f"  max:  {stats.max_px:.6g} px")
    try:
        slope = stats.loglog_slope()
        print(f"  log-log slope of mean displacement vs rho: {slope:+.4f}")
    except metrics.MetricsError:
        print("  log-log slope: not enough populated bins")
    lines = ["rho_lo,rho_hi,mean_px,count"]
    lines += [f"{b.rho_lo:.6g},{b.rho_hi:.6g},{b.mean_px:.6g},{b.count}"
              for b in stats.per_distance_bins]
    csv_text = "\n".join(lines) + "\n"
    if args.out_csv:
        Path(args.out_csv).write_text(csv_text, encoding="utf-8")
        print(f"  per-bin CSV -> {args.out_csv}")
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def _run_sweep(args, schemes, bits_list) -> int:
    model = model_io.read_model(args.model)
    rig = model_io.read_camera_rig(args.rig)
    geometry = _geometry_from_args(args, rig)
    overhead = getattr(args, "overhead_mode", OverheadMode.SPLIT_INDEX)
    projection = getattr(args, "projection", "spherical")
    points = metrics.rd_sweep(model, rig, geometry, schemes, bits_list,
                              render_views=args.render, overhead_mode=overhead,
                              projection=projection)
    csv_text = metrics.rd_csv(points)
    Path(args.out).write_text(csv_text, encoding="utf-8")
    sys.stdout.write(csv_text)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    return _run_sweep(args, args.schemes, args.bits)


def _cmd_ablate(args) -> int:
    return _run_sweep(args, list(QuantScheme), [args.bits])


def _cmd_check_jacobians(args) -> int:
    report = spherical.check_jacobians(n_samples=args.samples, seed=args.seed,
                                       step=args.step, tolerance=args.tol)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VALIDATION


_COMMANDS = {
    "generate": _cmd_generate,
    "quantize": _cmd_quantize,
    "dequantize": _cmd_dequantize,
    "render": _cmd_render,
    "analyze": _cmd_analyze,
    "sweep": _cmd_sweep,
    "ablate": _cmd_ablate,
    "check-jacobians": _cmd_check_jacobians,
}

_DATA_ERRORS = (FileNotFoundError, IsADirectoryError, PermissionError, OSError,
                model_io.ModelParseError, quantize.ContainerDecodeError,
                json.JSONDecodeError)
_VALIDATION_ERRORS = (model_io.ModelValidationError, quantize.GeometryError,
                      metrics.MetricsError, spherical.DegenerateInputError,
                      ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _VALIDATION_ERRORS as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
