"""Command-line interface: estimate, eval, synth, gradcheck, viz.

Exit codes: 0 success, 1 numerical failure, 2 usage or I/O error.
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from bidiflow import __version__, flowio, metrics, synth
from bidiflow._backend import BACKEND_NAME
from bidiflow.config import build_configs, load_config
from bidiflow.grid import FlowField, resize_bilinear, resize_flow
from bidiflow.solver import SolverDivergedError, gradcheck, solve

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command, argv, inputs, outputs, timings, extra=None):
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "kernels": BACKEND_NAME,
        "inputs": {str(k): {"path": str(p), "sha256": _sha256(p)} for k, p in inputs.items()},
        "outputs": {k: str(p) for k, p in outputs.items()},
        "timings": timings,
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=False) + "\n")
    return manifest


# -- configuration -----------------------------------------------------------------


def _add_loss_flags(p):
    g = p.add_argument_group("loss and solver")
    g.add_argument("--config", metavar="PATH", help="key = value file with LossConfig/SolverConfig fields")
    g.add_argument("--data-term", choices=("census", "brightness"))
    g.add_argument("--smoothness", choices=("first", "second"))
    g.add_argument("--occlusion", action=argparse.BooleanOptionalAction, default=None,
                   help="occlusion masking and consistency (default on)")
    g.add_argument("--lambda-s", type=float)
    g.add_argument("--lambda-p", type=float)
    g.add_argument("--lambda-c", type=float)
    g.add_argument("--levels", type=int)
    g.add_argument("--iters", type=int, help="iterations per pyramid level")
    g.add_argument("--lr", type=float)
    g.add_argument("--seed", type=int)


def resolve_configs(args):
    """Defaults < config file < flags. Returns (LossConfig, SolverConfig)."""
    loss, solver = ({}, {}) if not args.config else load_config(args.config)
    flag_loss = {
        "data_term": args.data_term,
        "smoothness_order": args.smoothness,
        "occlusion_masking": args.occlusion,
        "lambda_s": args.lambda_s,
        "lambda_p": args.lambda_p,
        "lambda_c": args.lambda_c,
    }
    flag_solver = {"levels": args.levels, "iterations_per_level": args.iters, "lr": args.lr, "seed": args.seed}
    loss.update({k: v for k, v in flag_loss.items() if v is not None})
    solver.update({k: v for k, v in flag_solver.items() if v is not None})
    if loss.get("occlusion_masking") is False:
        # without masking the occlusion penalty and consistency weights default to zero
        loss.setdefault("lambda_p", 0.0)
        loss.setdefault("lambda_c", 0.0)
    return build_configs(loss, solver)


def _require_file(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


# -- commands ----------------------------------------------------------------------


def _out_paths(out_flo):
    out_flo = Path(out_flo)
    stem = out_flo.with_suffix("")
    return {
        "flow_forward": out_flo,
        "flow_backward": Path(f"{stem}_backward.flo"),
        "occlusion": Path(f"{stem}_occ.png"),
        "color": Path(f"{stem}_color.png"),
        "trace": Path(f"{stem}_trace.csv"),
        "manifest": Path(f"{stem}_manifest.json"),
    }


def cmd_estimate(args, argv):
    _require_file(args.img1, "first image")
    _require_file(args.img2, "second image")
    loss_cfg, solver_cfg = resolve_configs(args)
    try:
        i1 = flowio.read_image(args.img1)
        i2 = flowio.read_image(args.img2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read input image: {exc}") from None
    if i1.shape != i2.shape:
        raise UsageError(f"image sizes differ: {i1.shape[1]}x{i1.shape[0]} vs {i2.shape[1]}x{i2.shape[0]}")
    h, w = i1.shape[:2]
    init = None
    if args.init_forward or args.init_backward:
        if not (args.init_forward and args.init_backward):
            raise UsageError("--init-forward and --init-backward must be given together")
        init = (flowio.read_flo(args.init_forward), flowio.read_flo(args.init_backward))
        solver_cfg = replace(solver_cfg, init="provided")

    t0 = time.perf_counter()
    eval_w, eval_h, u_scale, v_scale = metrics.eval_resize_protocol(w, h)
    resized = (eval_w, eval_h) != (w, h)
    if resized:
        i1 = resize_bilinear(i1, eval_w, eval_h)
        i2 = resize_bilinear(i2, eval_w, eval_h)
        if init is not None:
            init = tuple(resize_flow(f, eval_w, eval_h) for f in init)
    try:
        wf, wb, trace = solve(i1, i2, loss_cfg, solver_cfg, init)
    except SolverDivergedError as exc:
        print(f"error: solver diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    masks = trace.final_masks
    occ = masks.forward_excluded
    if resized:
        wf = metrics.rescale_to_original(wf, w, h)
        wb = metrics.rescale_to_original(wb, w, h)
        occ = (resize_bilinear(occ, w, h) >= 0.5).astype(np.float64)
    solve_time = time.perf_counter() - t0

    paths = _out_paths(args.out)
    paths["flow_forward"].parent.mkdir(parents=True, exist_ok=True)
    flowio.write_flo(paths["flow_forward"], wf)
    flowio.write_flo(paths["flow_backward"], wb)
    flowio.write_image(paths["occlusion"], occ)
    flowio.write_image(paths["color"], flowio.flow_to_color(wf))
    trace.to_csv(paths["trace"])
    manifest_path = paths.pop("manifest")
    _write_manifest(
        manifest_path, "estimate", argv, {"img1": args.img1, "img2": args.img2}, paths,
        {"solve_seconds": solve_time, "total_seconds": time.perf_counter() - t0},
        {
            "loss_config": loss_cfg.to_dict(),
            "solver_config": solver_cfg.to_dict(),
            "resize": {"applied": resized, "eval_size": [eval_w, eval_h], "u_scale": u_scale, "v_scale": v_scale},
        },
    )
    print(f"wrote {paths['flow_forward']} ({w}x{h}, {solve_time:.1f} s)")
    return EXIT_OK


def _read_mask(path):
    img = flowio.read_image(path)
    if img.ndim == 3:
        img = img.mean(axis=2)
    return (img > 0.5).astype(np.float64)


def cmd_eval(args, argv):
    _require_file(args.est, "estimate")
    _require_file(args.gt, "ground truth")
    if args.noc:
        _require_file(args.noc, "noc mask")
    try:
        est = flowio.read_flow(args.est)
        gt = flowio.read_flow(args.gt)
        noc = _read_mask(args.noc) if args.noc else None
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if est.field.shape != gt.field.shape:
        raise UsageError(f"estimate {est.field.shape} and ground truth {gt.field.shape} differ in size")
    if noc is not None and noc.shape != gt.field.shape:
        raise UsageError("noc mask size does not match the flow")
    report = metrics.evaluate(est.field, gt.field, gt.valid, noc)
    print(report.table())
    out = Path(args.out) if args.out else Path(args.est).with_suffix(".eval.csv")
    out.write_text(report.to_csv())
    inputs = {"est": args.est, "gt": args.gt}
    if args.noc:
        inputs["noc"] = args.noc
    _write_manifest(out.with_suffix(".manifest.json"), "eval", argv, inputs, {"report": out}, {},
                    {"report": report.to_dict()})
    if args.json:
        print(report.to_json())
    return EXIT_OK


def cmd_synth(args, argv):
    fg = None
    if args.fg:
        x, y, fw, fh, fu, fv = args.fg
        fg = synth.Foreground(x, y, fw, fh, (fu, fv))
    spec = synth.SceneSpec(size=tuple(args.size), background_texture=args.texture, frequency=args.frequency,
                           foreground=fg, global_translation=tuple(args.shift), channels=args.channels,
                           seed=args.seed)
    t0 = time.perf_counter()
    scene = synth.generate(spec)
    paths = synth.export_scene(scene, args.out_dir)
    spec_dict = {"size": list(spec.size), "background_texture": spec.background_texture,
                 "frequency": spec.frequency, "global_translation": list(spec.global_translation),
                 "channels": spec.channels, "seed": spec.seed,
                 "foreground": None if fg is None else [fg.x, fg.y, fg.width, fg.height, *fg.translation]}
    _write_manifest(Path(args.out_dir) / "manifest.json", "synth", argv, {}, paths,
                    {"total_seconds": time.perf_counter() - t0}, {"scene": spec_dict})
    print(f"wrote scene to {args.out_dir}")
    return EXIT_OK


def cmd_gradcheck(args, argv):
    loss_cfg, solver_cfg = resolve_configs(args)
    rng = np.random.default_rng(solver_cfg.seed)
    n = args.size
    i1 = rng.random((n, n))
    i2 = rng.random((n, n))
    wf = FlowField(*rng.uniform(-3, 3, (2, n, n)))
    wb = FlowField(*rng.uniform(-3, 3, (2, n, n)))
    report = gradcheck(i1, i2, wf, wb, loss_cfg, n_probes=args.probes, seed=solver_cfg.seed)
    print(f"max relative error {report.max_rel_error:.3e}  mean {report.mean_rel_error:.3e}  probes {report.n_probes}")
    return EXIT_OK if report.passed(args.tol) else EXIT_NUMERIC


def cmd_viz(args, argv):
    _require_file(args.flo, "flow file")
    try:
        flow = flowio.read_flow(args.flo).field
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    flowio.write_image(args.out, flowio.flow_to_color(flow, args.max_mag))
    _write_manifest(Path(args.out).with_suffix(".manifest.json"), "viz", argv, {"flow": args.flo},
                    {"image": args.out}, {}, {"max_mag": args.max_mag})
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="bidiflow", description="Bidirectional occlusion-aware optical flow by energy minimisation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate forward and backward flow between two images")
    p.add_argument("img1")
    p.add_argument("img2")
    p.add_argument("-o", "--out", required=True, metavar="FLOW.flo", help="forward flow path; siblings are derived from it")
    p.add_argument("--init-forward", metavar="FLO")
    p.add_argument("--init-backward", metavar="FLO")
    _add_loss_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", help="score an estimate against ground truth")
    p.add_argument("est")
    p.add_argument("gt")
    p.add_argument("--noc", metavar="MASK.png", help="non-occluded pixels are white")
    p.add_argument("-o", "--out", metavar="CSV")
    p.add_argument("--json", action="store_true", help="also print the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render a synthetic scene with exact ground truth")
    p.add_argument("out_dir")
    p.add_argument("--size", type=int, nargs=2, default=(128, 128), metavar=("W", "H"))
    p.add_argument("--texture", choices=("noise", "checker"), default="noise")
    p.add_argument("--frequency", type=float, default=0.5)
    p.add_argument("--shift", type=int, nargs=2, default=(0, 0), metavar=("U", "V"))
    p.add_argument("--fg", type=int, nargs=6, metavar=("X", "Y", "W", "H", "U", "V"))
    p.add_argument("--channels", type=int, choices=(1, 3), default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="compare analytic and numeric energy gradients")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--probes", type=int, default=32)
    p.add_argument("--tol", type=float, default=1e-3)
    _add_loss_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("viz", help="render a flow file with the colour wheel")
    p.add_argument("flo")
    p.add_argument("out")
    p.add_argument("--max-mag", type=float)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
