"""Command-line frontend: synth, solve, eval, gradcheck, ablate.

Flags may be preloaded from a JSON config file (--config); explicit flags
win over config values, which win over built-in defaults. All output files
are written atomically. Exit codes: 0 success, 1 validation error,
2 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import core
from .core import DepthMap, StackManifest, ValidationError, atomic_write_bytes, atomic_write_text
from .gradcheck import REL_TOL, run_all_checks
from .metrics import evaluate
from .solver import ABLATION_VARIANTS, SolverConfig, SolverDivergence, ablate, solve_scene
from .synth import CameraParams, synthesize_stack

__all__ = ["main"]

SYNTH_DEFAULTS = {
    "f": 0.05, "fnum": 2.0, "pitch": 1e-5, "layers": 16, "max_coc": 31, "crop": 0,
}
SOLVE_DEFAULTS = {
    "steps": 600, "lr": 0.2, "lambda_sv": 20.0, "lambda_fv": 100.0,
    "lambda_reg": 1e-6, "seed": 0, "data_weight": 0.0, "target_gamma": 2.0,
    "log_every": 25, "surf_res": 14, "c2": 16, "beta": 1.0,
    "logit_init_scale": 0.25,
}


def _add_solve_flags(sp):
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lambda-sv", type=float, dest="lambda_sv")
    sp.add_argument("--lambda-fv", type=float, dest="lambda_fv")
    sp.add_argument("--lambda-reg", type=float, dest="lambda_reg")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--data-weight", type=float, dest="data_weight")
    sp.add_argument("--target-gamma", type=float, dest="target_gamma")
    sp.add_argument("--logit-init-scale", type=float, dest="logit_init_scale")
    sp.add_argument("--log-every", type=int, dest="log_every")
    sp.add_argument("--surf-res", type=int, dest="surf_res")
    sp.add_argument("--c2", type=int)
    sp.add_argument("--beta", type=float)


def _build_parser():
    parser = argparse.ArgumentParser(prog="focusdepth",
                                     description="Depth-from-focus numerical engine")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", argument_default=argparse.SUPPRESS,
                        help="synthesize a focal stack from RGB + depth")
    sp.add_argument("--rgb", required=True)
    sp.add_argument("--depth", required=True)
    sp.add_argument("--focus", required=True, help="comma list of focus distances in meters")
    sp.add_argument("--f", type=float, help="focal length in meters")
    sp.add_argument("--fnum", type=float, help="f-number")
    sp.add_argument("--pitch", type=float, help="pixel pitch in meters")
    sp.add_argument("--layers", type=int)
    sp.add_argument("--max-coc", type=int, dest="max_coc")
    sp.add_argument("--crop", type=int, help="border margin to remove before synthesis")
    sp.add_argument("--out-manifest", required=True, dest="out_manifest")
    sp.add_argument("--config")

    sp = sub.add_parser("solve", argument_default=argparse.SUPPRESS,
                        help="optimize a scene and write depth + trace")
    _add_solve_flags(sp)
    sp.add_argument("--ablate", help="comma list of ablation variants")
    sp.add_argument("--out-depth", dest="out_depth")
    sp.add_argument("--out-probs", dest="out_probs", help="write probabilities as .npy")
    sp.add_argument("--trace-csv", dest="trace_csv")
    sp.add_argument("--out-csv", dest="out_csv", help="ablation table output (CSV)")
    sp.add_argument("--config")

    sp = sub.add_parser("ablate", argument_default=argparse.SUPPRESS,
                        help="run ablation variants and report metrics")
    _add_solve_flags(sp)
    sp.add_argument("--variants", default=",".join(ABLATION_VARIANTS))
    sp.add_argument("--out-csv", dest="out_csv")
    sp.add_argument("--config")

    sp = sub.add_parser("eval", argument_default=argparse.SUPPRESS,
                        help="evaluate a predicted depth map")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--probs", help="focus probabilities (.npy) for the invalid-trend metric")
    sp.add_argument("--out", choices=["json", "csv"], default="json")
    sp.add_argument("--out-file", dest="out_file")

    sp = sub.add_parser("gradcheck", argument_default=argparse.SUPPRESS,
                        help="finite-difference check of every analytic gradient")
    sp.add_argument("--seed", type=int, default=0)
    return parser


def _merge(defaults: dict, args: argparse.Namespace) -> dict:
    opts = dict(defaults)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path) as fh:
            overlay = json.load(fh)
        unknown = set(overlay) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        opts.update(overlay)
    for key, val in vars(args).items():
        if key not in ("command", "config"):
            opts[key] = val
    return opts


def _parse_floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def _cmd_synth(args) -> int:
    opts = _merge(SYNTH_DEFAULTS, args)
    rgb = core.load_image(opts["rgb"])
    depth = core.load_depth(opts["depth"])
    crop = int(opts["crop"])
    if crop > 0:
        rgb = rgb[crop:-crop, crop:-crop]
        depth = DepthMap(depth.values[crop:-crop, crop:-crop],
                         depth.mask[crop:-crop, crop:-crop])
    cam = CameraParams(opts["f"], opts["fnum"], opts["pitch"], int(opts["max_coc"]))
    focus = _parse_floats(opts["focus"])
    stack = synthesize_stack(rgb, depth, focus, cam, int(opts["layers"]))

    out_manifest = opts["out_manifest"]
    from pathlib import Path
    out_dir = Path(out_manifest).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(out_manifest).stem
    image_paths = []
    for n in range(stack.num_planes):
        plane_path = out_dir / f"{stem}_plane{n:02d}.png"
        _write_plane_png(stack.planes[n], plane_path)
        image_paths.append(str(plane_path))
    depth_out = out_dir / f"{stem}_depth.pfm"
    core.save_depth(depth, depth_out)
    manifest = StackManifest(image_paths, focus, str(depth_out), scene_id=stem)
    core.save_manifest(manifest, out_manifest)
    print(f"wrote {stack.num_planes}-plane stack and manifest to {out_manifest}")
    return 0


def _write_plane_png(plane: np.ndarray, path):
    from PIL import Image
    import io
    if plane.ndim == 2:
        arr = np.clip(np.round(plane * 65535.0), 0, 65535).astype("<u2")
        img = Image.fromarray(arr)
    else:
        arr = np.clip(np.round(plane * 255.0), 0, 255).astype(np.uint8)
        img = Image.fromarray(arr, mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def _solver_config(opts) -> SolverConfig:
    return SolverConfig(
        steps=int(opts["steps"]),
        learning_rate=float(opts["lr"]),
        lambda_sv=float(opts["lambda_sv"]),
        lambda_fv=float(opts["lambda_fv"]),
        lambda_reg=float(opts["lambda_reg"]),
        seed=int(opts["seed"]),
        data_term_weight=float(opts["data_weight"]),
        target_gamma=float(opts["target_gamma"]),
        log_every=int(opts["log_every"]),
        surface_res=int(opts["surf_res"]),
        channels=int(opts["c2"]),
        beta=float(opts["beta"]),
        logit_init_scale=float(opts["logit_init_scale"]),
    )


def _load_scene(opts):
    manifest = core.load_manifest(opts["manifest"])
    stack = core.load_stack(manifest)
    if manifest.depth_path is None:
        raise ValidationError("manifest has no ground-truth depth; the solver needs one")
    gt = core.load_depth(manifest.depth_path)
    return stack, gt


def _ablation_csv(rows) -> str:
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join("" if row[c] is None else f"{row[c]:.10g}"
                              if isinstance(row[c], float) else str(row[c])
                              for c in cols))
    return "\n".join(lines) + "\n"


def _cmd_solve(args) -> int:
    opts = _merge({**SOLVE_DEFAULTS, "ablate": None, "out_depth": None,
                   "out_probs": None, "trace_csv": None, "out_csv": None}, args)
    stack, gt = _load_scene(opts)
    cfg = _solver_config(opts)
    if opts["ablate"]:
        variants = [v.strip() for v in opts["ablate"].split(",") if v.strip()]
        rows = ablate(stack, gt, cfg, variants)
        text = _ablation_csv(rows)
        if opts["out_csv"]:
            atomic_write_text(opts["out_csv"], text)
        else:
            sys.stdout.write(text)
        return 0
    depth, probs, _, trace = solve_scene(stack, gt, cfg)
    if opts["out_depth"]:
        core.save_depth(depth, opts["out_depth"])
    if opts["out_probs"]:
        _write_npy(opts["out_probs"], probs.probs)
    if opts["trace_csv"]:
        atomic_write_text(opts["trace_csv"], trace.to_csv())
    last = trace.records[-1]
    print(f"final: total={last.total:.6g} rmse={last.rmse:.6g} "
          f"invalid_trend={last.invalid_trend_pct:.3g}%")
    return 0


def _write_npy(path, arr):
    import io
    buf = io.BytesIO()
    np.save(buf, arr)
    atomic_write_bytes(path, buf.getvalue())


def _cmd_ablate(args) -> int:
    opts = _merge({**SOLVE_DEFAULTS, "variants": ",".join(ABLATION_VARIANTS),
                   "out_csv": None}, args)
    stack, gt = _load_scene(opts)
    cfg = _solver_config(opts)
    variants = [v.strip() for v in opts["variants"].split(",") if v.strip()]
    rows = ablate(stack, gt, cfg, variants)
    text = _ablation_csv(rows)
    if opts["out_csv"]:
        atomic_write_text(opts["out_csv"], text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_eval(args) -> int:
    opts = _merge({"out": "json", "out_file": None, "probs": None,
                   "pred": None, "gt": None}, args)
    pred = core.load_depth(opts["pred"])
    gt = core.load_depth(opts["gt"])
    probs = None
    if opts["probs"]:
        from .core import FocusProbabilityMap
        probs = FocusProbabilityMap(np.load(opts["probs"]))
    report = evaluate(pred, gt, probs)
    d = report.as_dict()
    if opts["out"] == "json":
        text = json.dumps(d, indent=2) + "\n"
    else:
        keys = list(d.keys())
        text = ",".join(keys) + "\n" + ",".join(
            "" if d[k] is None else f"{d[k]:.10g}" if isinstance(d[k], float) else str(d[k])
            for k in keys) + "\n"
    if opts["out_file"]:
        atomic_write_text(opts["out_file"], text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_gradcheck(args) -> int:
    seed = getattr(args, "seed", 0)
    results = run_all_checks(seed)
    ok = True
    for name, err in results.items():
        status = "ok" if err < REL_TOL else "FAIL"
        print(f"{name}: max relative error {err:.3e} [{status}]")
        ok = ok and err < REL_TOL
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "solve": _cmd_solve,
        "ablate": _cmd_ablate,
        "eval": _cmd_eval,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except SolverDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, FileNotFoundError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
