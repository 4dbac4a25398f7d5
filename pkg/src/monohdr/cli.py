"""Command-line interface: ``mh3d synth | train | render | eval | ablate``.

Exit codes: 0 ok, 2 usage / invalid configuration, 3 I/O failure, 4 numeric
abort during training.  ``MH3D_THREADS`` caps BLAS threads (default 1).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import objectives as obj
from . import synthdata as sd
from . import trainer as tr
from .camera import CameraParams
from .checkpoint import CheckpointError
from .field import Pose
from .imageio import read_pfm, read_ppm, write_pfm, write_ppm

log = logging.getLogger("mh3d")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_ABORT = 0, 2, 3, 4
RUN_MANIFEST = "run_manifest.json"
EVAL_FIELDS = ["view", "ldr_psnr", "ldr_ssim", "hdr_psnr", "hdr_ssim"]


class UsageError(Exception):
    pass


def _canon(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canon(cfg)).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_run_manifest(run_dir, argv, *, config: dict | None, dataset_dir=None, seed=None,
                       artifacts: dict[str, str], inputs: dict[str, str] | None = None) -> dict:
    """Record how a run directory was produced; one manifest per directory."""
    run_dir = Path(run_dir)
    m = {
        "command_line": list(argv),
        "config_hash": config_hash(config) if config is not None else None,
        "config": config,
        "dataset_hash": sd.dataset_hash(dataset_dir) if dataset_dir is not None else None,
        "seed": seed,
        "artifacts": dict(sorted(artifacts.items())),
        "input_hashes": dict(sorted((inputs or {}).items())),
        "version": __version__,
    }
    (run_dir / RUN_MANIFEST).write_text(json.dumps(m, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return m


def verify_run_manifest(run_dir, dataset_dir=None) -> list[str]:
    """Return a list of mismatches (empty when every recorded hash still verifies)."""
    run_dir = Path(run_dir)
    m = json.loads((run_dir / RUN_MANIFEST).read_text(encoding="utf-8"))
    problems = []
    if m.get("config") is not None and config_hash(m["config"]) != m["config_hash"]:
        problems.append("config hash mismatch")
    if dataset_dir is not None and m.get("dataset_hash") and sd.dataset_hash(dataset_dir) != m["dataset_hash"]:
        problems.append("dataset hash mismatch")
    for path, h in m.get("input_hashes", {}).items():
        if not Path(path).exists() or file_hash(path) != h:
            problems.append(f"input changed: {path}")
    for name, rel in m.get("artifacts", {}).items():
        if not (run_dir / rel).exists():
            problems.append(f"missing artifact {name}: {rel}")
    return problems


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args, argv) -> int:
    spec = sd.SceneSpec(kind=args.scene, resolution=args.resolution, span=args.span, rng_seed=args.seed)
    poses = sd.sample_poses(args.n_views, radius=args.radius, elevation_deg=args.elevation,
                            width=args.image_size, height=args.image_size)
    camera = CameraParams(g=args.gain, i0=args.i0, i_max=args.i_max, noise_sigma=args.noise_sigma,
                          rng_seed=args.seed)
    split = sd.default_split(args.n_views, args.n_train)
    bundle = sd.make_dataset(spec, poses, camera, args.exposure_index, split=split, n_samples=args.n_samples)
    out = Path(args.out)
    sd.save_dataset(bundle, out)
    stats = sd.exposure_stats(bundle, range(len(bundle.ldr)))
    print("view,split,saturated,dark")
    train = set(bundle.train_ids)
    for s in stats:
        print(f"{s['view']},{'train' if s['view'] in train else 'test'},{s['saturated']:.4f},{s['dark']:.4f}")
    sat = np.mean([s["saturated"] for s in stats])
    dark = np.mean([s["dark"] for s in stats])
    print(f"mean,all,{sat:.4f},{dark:.4f}")
    write_run_manifest(out, argv, config=bundle.manifest, dataset_dir=out, seed=args.seed,
                       artifacts={"manifest": "manifest.json", "ldr": "ldr", "hdr_gt": "hdr_gt"})
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _load_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise UsageError(f"{path}: invalid JSON ({err})") from err
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data


def resolve_config(args) -> tr.TrainConfig:
    """Profile defaults, then the JSON config file, then explicit flags."""
    file_cfg = _load_json(args.config) if args.config else {}
    profile = args.profile or file_cfg.pop("profile", None) or "splat-style"
    file_cfg.pop("profile", None)
    if args.profile:
        # an explicit profile wins over the file for the settings it controls
        for k in tr.PROFILES[args.profile]:
            file_cfg.pop(k, None)
    overrides = {k: v for k, v in (("iterations", args.iterations), ("seed", args.seed)) if v is not None}
    if getattr(args, "eval_every", None) is not None:
        overrides["eval_every"] = args.eval_every
    if getattr(args, "losses", None) is not None:
        overrides["losses"] = tuple(x for x in args.losses.split(",") if x)
    if getattr(args, "hdr_ratio", None) is not None:
        overrides["hdr_ratio"] = args.hdr_ratio
    known = {f for f in tr.TrainConfig.__dataclass_fields__}
    unknown = set(file_cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys {sorted(unknown)}")
    try:
        return tr.TrainConfig.from_profile(profile, **{**file_cfg, **overrides})
    except (TypeError, ValueError) as err:
        raise UsageError(str(err)) from err


def cmd_train(args, argv) -> int:
    bundle = sd.load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        state = tr.load_state(args.resume)
        cfg = state.config
        if args.iterations is not None and args.iterations != cfg.iterations:
            raise UsageError("--iterations cannot change on resume")
    else:
        cfg = resolve_config(args)
        state = None
    ckpt = out / "checkpoint.mh3d"
    metrics = out / "metrics.csv"
    try:
        state, history = tr.train(bundle, cfg, state=state, until=args.until, out_dir=out)
    except tr.TrainingAborted as err:
        print(f"training aborted at step {err.step}: {err}", file=sys.stderr)
        if err.dump_path:
            print(f"diagnostic dump: {err.dump_path}", file=sys.stderr)
        return EXIT_ABORT
    tr.save_state(state, ckpt)
    tr.write_metrics_csv(history, metrics)
    tests = [h for h in history if h["split"] == "test"]
    if tests:
        s = tests[-1]
        print(f"step {s['step']}: ldr_psnr={s['psnr_ldr']:.3f} ldr_ssim={s['ssim_ldr']:.4f}"
              + (f" hdr_psnr={s['psnr_hdr_mulaw']:.3f} hdr_ssim={s['ssim_hdr_mulaw']:.4f}"
                 if s.get("psnr_hdr_mulaw") is not None else ""))
    inputs = {str(Path(args.config)): file_hash(args.config)} if args.config else {}
    if args.resume:
        inputs[str(Path(args.resume))] = file_hash(args.resume)
    write_run_manifest(out, argv, config=cfg.to_dict(), dataset_dir=args.data, seed=cfg.seed,
                       artifacts={"checkpoint": "checkpoint.mh3d", "metrics": "metrics.csv"}, inputs=inputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# render


def _select_views(spec: str, bundle) -> list[int]:
    if spec == "train":
        return bundle.train_ids
    if spec == "test":
        return bundle.test_ids
    if spec == "all":
        return list(range(len(bundle.manifest["poses"])))
    try:
        ids = [int(v) for v in spec.split(",")]
    except ValueError as err:
        raise UsageError(f"bad --views {spec!r}") from err
    n = len(bundle.manifest["poses"])
    if any(not 0 <= i < n for i in ids):
        raise UsageError(f"view ids must lie in [0, {n})")
    return ids


def cmd_render(args, argv) -> int:
    state = tr.load_state(args.checkpoint)
    bundle = None
    if args.pose_file:
        raw = json.loads(Path(args.pose_file).read_text(encoding="utf-8"))
        poses = [Pose.from_dict(p) for p in (raw["poses"] if isinstance(raw, dict) else raw)]
        ids = list(range(len(poses)))
        background = np.zeros(3)
        n_samples = state.config.n_samples or 64
    elif args.data:
        bundle = sd.load_dataset(args.data)
        ids = _select_views(args.views, bundle)
        all_poses = bundle.poses
        poses = [all_poses[i] for i in ids]
        background = bundle.background_ldr
        n_samples = state.config.n_samples or bundle.n_samples
    else:
        raise UsageError("render needs --data or --pose-file")
    out = Path(args.out)
    sub = out / args.mode
    sub.mkdir(parents=True, exist_ok=True)
    artifacts = {}
    want_hdr = args.mode != "ldr"
    for i, pose in zip(ids, poses):
        img = tr.render_view(state, pose, background, n_samples, hdr=want_hdr)
        if args.mode == "ldr":
            path = sub / f"view_{i:03d}.ppm"
            write_ppm(path, np.clip(img["ldr"], 0.0, 1.0))
            if bundle is not None:
                print(f"view {i}: ldr_psnr={obj.psnr(img['ldr'], bundle.ldr[i]):.3f}")
        elif args.mode == "hdr":
            path = sub / f"view_{i:03d}.pfm"
            write_pfm(path, img["hdr"])
            if bundle is not None:
                print(f"view {i}: hdr_psnr_mulaw={obj.psnr_hdr(img['hdr'], bundle.hdr[i], state.config.mu):.3f}")
        else:
            path = sub / f"view_{i:03d}.ppm"
            write_ppm(path, obj.tonemap_np(img["hdr"], state.config.mu))
        artifacts[f"view_{i:03d}"] = str(path.relative_to(out))
    inputs = {str(Path(args.checkpoint)): file_hash(args.checkpoint)}
    if args.pose_file:
        inputs[str(Path(args.pose_file))] = file_hash(args.pose_file)
    write_run_manifest(out, argv, config=state.config.to_dict(),
                       dataset_dir=args.data if bundle is not None else None, seed=state.config.seed,
                       artifacts=artifacts, inputs=inputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _predictions_from_dir(pred_dir, ids):
    root = Path(pred_dir)
    hdr_dir = root / "hdr" if (root / "hdr").is_dir() else root / "hdr_gt"
    for i in ids:
        ldr = read_ppm(root / "ldr" / f"view_{i:03d}.ppm")
        hp = hdr_dir / f"view_{i:03d}.pfm"
        yield i, ldr, (read_pfm(hp).astype(np.float64) if hp.exists() else None)


def cmd_eval(args, argv) -> int:
    bundle = sd.load_dataset(args.data)
    ids = _select_views(args.views, bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mu = 5000.0
    inputs = {}
    consistency = None
    if args.checkpoint:
        state = tr.load_state(args.checkpoint)
        mu = state.config.mu
        inputs[str(Path(args.checkpoint))] = file_hash(args.checkpoint)
        poses = bundle.poses
        n_samples = state.config.n_samples or bundle.n_samples
        want_hdr = state.config.hdr_head_trained

        def preds():
            for i in ids:
                img = tr.render_view(state, poses[i], bundle.background_ldr, n_samples, hdr=want_hdr)
                yield i, img["ldr"], img.get("hdr")

        source = preds()
        if len(ids) >= 2:
            consistency = tr.cross_view_consistency(state.field, poses[ids[0]], poses[ids[1]], n_samples,
                                                    background=bundle.background_ldr)
    elif args.pred_dir:
        source = _predictions_from_dir(args.pred_dir, ids)
    else:
        raise UsageError("eval needs --checkpoint or --pred-dir")
    rows = []
    for i, ldr, hdr in source:
        row = {"view": i, "ldr_psnr": obj.psnr(ldr, bundle.ldr[i]), "ldr_ssim": obj.ssim(ldr, bundle.ldr[i]),
               "hdr_psnr": None, "hdr_ssim": None}
        if hdr is not None:
            row["hdr_psnr"] = obj.psnr_hdr(hdr, bundle.hdr[i], mu)
            row["hdr_ssim"] = obj.ssim_hdr(hdr, bundle.hdr[i], mu)
        rows.append(row)
    mean = {k: (float(np.mean([r[k] for r in rows])) if all(r[k] is not None for r in rows) else None)
            for k in EVAL_FIELDS[1:]}
    path = out / "eval.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(EVAL_FIELDS)
        for r in rows:
            w.writerow([r["view"]] + [_fmt(r[k]) for k in EVAL_FIELDS[1:]])
        w.writerow(["mean"] + [_fmt(mean[k]) for k in EVAL_FIELDS[1:]])
    print(",".join(["mean"] + [_fmt(mean[k]) for k in EVAL_FIELDS[1:]]))
    artifacts = {"eval": "eval.csv"}
    if consistency is not None:
        (out / "consistency.json").write_text(json.dumps(consistency, indent=2, sort_keys=True) + "\n")
        artifacts["consistency"] = "consistency.json"
        print(f"cross-view consistency: n={consistency['n_points']} mean_abs={consistency['mean_abs']:.5f}")
    write_run_manifest(out, argv, config=None, dataset_dir=args.data, seed=None, artifacts=artifacts,
                       inputs=inputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args, argv) -> int:
    bundle = sd.load_dataset(args.data)
    base = resolve_config(args)
    try:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    except ValueError as err:
        raise UsageError(f"bad --seeds {args.seeds!r}") from err
    cells = tr.ablation_cells()
    if args.cells:
        wanted = set(args.cells.split(","))
        unknown = wanted - {c["cell"] for c in cells}
        if unknown:
            raise UsageError(f"unknown cells {sorted(unknown)}")
        cells = [c for c in cells if c["cell"] in wanted]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = tr.ablate(bundle, base, seeds=seeds, cells=cells, out_dir=out / "cells")
    tr.write_ablation_csv(rows, out / "ablation.csv")
    for cell, med in tr.median_by_cell(rows).items():
        print(f"{cell}: median hdr_psnr={'-' if med is None else f'{med:.3f}'}")
    inputs = {str(Path(args.config)): file_hash(args.config)} if args.config else {}
    write_run_manifest(out, argv, config=base.to_dict(), dataset_dir=args.data, seed=list(seeds),
                       artifacts={"report": "ablation.csv", "cells": "cells"}, inputs=inputs)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file mirroring TrainConfig fields")
    p.add_argument("--profile", choices=sorted(tr.PROFILES), default=None,
                   help="hyperparameter profile (splat-style when neither flag nor config sets one)")
    p.add_argument("--iterations", type=int, default=None, help="override config iterations")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--losses", default=None, help="comma-separated subset of ldr,hdr,h2l")
    p.add_argument("--hdr-ratio", type=float, default=None, help="fraction of train views with HDR supervision")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="mh3d", description="Single-exposure HDR novel view synthesis toolkit.",
                                formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", default=False, help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset bundle", formatter_class=fmt)
    s.add_argument("--scene", choices=sd.SCENE_KINDS, default="emissive-boxes", help="scene kind")
    s.add_argument("--resolution", type=int, default=32, help="ground-truth voxel resolution")
    s.add_argument("--span", type=float, default=100.0, help="minimum radiance max/min ratio")
    s.add_argument("--image-size", type=int, default=64, help="square image side in pixels")
    s.add_argument("--n-views", type=int, default=35, help="number of camera poses")
    s.add_argument("--n-train", type=int, default=18, help="training views (even indices)")
    s.add_argument("--radius", type=float, default=3.0, help="camera orbit radius")
    s.add_argument("--elevation", type=float, default=30.0, help="camera elevation in degrees")
    s.add_argument("--exposure-index", type=int, default=3, help="index into the exposure ladder")
    s.add_argument("--gain", type=float, default=1.0, help="camera gain g")
    s.add_argument("--i0", type=float, default=0.0, help="black level")
    s.add_argument("--i-max", type=float, default=1.0, help="saturation level")
    s.add_argument("--noise-sigma", type=float, default=0.0, help="Gaussian read-noise std")
    s.add_argument("--n-samples", type=int, default=64, help="samples per ray")
    s.add_argument("--seed", type=int, default=0, help="scene and noise seed")
    s.add_argument("-o", "--out", required=True, help="output bundle directory")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train field and converters", formatter_class=fmt)
    t.add_argument("--data", required=True, help="dataset bundle directory")
    _add_config_flags(t)
    t.add_argument("--eval-every", type=int, default=None, help="held-out eval period in steps (0: end only)")
    t.add_argument("--until", type=int, default=None, help="stop after this many total steps")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("-o", "--out", required=True, help="run directory")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render views from a checkpoint", formatter_class=fmt)
    r.add_argument("--checkpoint", required=True, help="checkpoint file")
    r.add_argument("--data", default=None, help="dataset bundle supplying poses")
    r.add_argument("--views", default="test", help="train, test, all or comma-separated ids")
    r.add_argument("--pose-file", default=None, help="JSON list of poses instead of --data")
    r.add_argument("--mode", choices=("ldr", "hdr", "hdr-tonemapped"), default="ldr", help="output kind")
    r.add_argument("-o", "--out", required=True, help="output directory")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="per-view and mean metrics", formatter_class=fmt)
    e.add_argument("--data", required=True, help="dataset bundle with ground truth")
    e.add_argument("--checkpoint", default=None, help="checkpoint to render predictions from")
    e.add_argument("--pred-dir", default=None, help="directory with ldr/*.ppm and hdr/*.pfm predictions")
    e.add_argument("--views", default="test", help="train, test, all or comma-separated ids")
    e.add_argument("-o", "--out", required=True, help="output directory")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="loss and converter ablation grid", formatter_class=fmt)
    a.add_argument("--data", required=True, help="dataset bundle directory")
    _add_config_flags(a)
    a.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    a.add_argument("--cells", default=None, help="comma-separated subset of cells, all when omitted")
    a.add_argument("-o", "--out", required=True, help="report directory")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = int(os.environ.get("MH3D_THREADS", "1"))
    except ValueError:
        print("MH3D_THREADS must be an integer", file=sys.stderr)
        return EXIT_USAGE
    full_argv = ["mh3d"] + argv
    try:
        with threadpool_limits(limits=max(threads, 1)):
            return args.func(args, full_argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CheckpointError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
