"""Joint optimisation of the LDR voxel field and both colour converters.

Each step draws square patches from the training views (SSIM needs image
structure, so rays are never sampled independently), renders them once, and
evaluates up to three terms on the shared geometry:

* ``ldr``  rendered LDR patch vs. the LDR training image,
* ``hdr``  lifted HDR patch vs. ground-truth HDR, on HDR-supervised views only,
* ``h2l``  the HDR patch mapped back to LDR vs. the LDR training image.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import diffcore as dc
from . import objectives as obj
from .checkpoint import read_checkpoint, write_checkpoint
from .converters import H2LConverter, L2HConverter, build_converter, matched_mlp
from .field import (Pose, RayBatch, VoxelField, composite_hdr, generate_rays, image_rays, render_image,
                    render_ldr, rays_through_points)
from .optim import Adam, AdamState, NonFiniteGradient, exp_decay
from .synthdata import DatasetBundle

log = logging.getLogger(__name__)

LOSS_NAMES = ("ldr", "hdr", "h2l")
PROFILES = {
    "splat-style": {"beta": 0.05, "loss_mode": "l1+dssim"},
    "field-style": {"beta": 0.01, "loss_mode": "mse"},
}
METRIC_FIELDS = ["step", "split", "psnr_ldr", "ssim_ldr", "psnr_hdr_mulaw", "ssim_hdr_mulaw",
                 "loss_total", "loss_ldr", "loss_hdr", "loss_h2l"]


class TrainingAborted(RuntimeError):
    def __init__(self, msg: str, step: int, dump_path: str | None = None):
        super().__init__(msg)
        self.step = step
        self.dump_path = dump_path


@dataclass
class TrainConfig:
    iterations: int = 600
    batch_rays: int = 1024
    patch_size: int = 16
    n_samples: int | None = None
    field_resolution: int = 32
    field_lr: float = 0.5
    field_lr_final: float = 0.05
    l2h_lr: float = 5e-4
    l2h_lr_final: float = 5e-5
    h2l_lr: float = 1e-3
    h2l_lr_final: float = 5e-4
    alpha: float = 0.6
    beta: float = 0.05
    lam: float = 0.2
    mu: float = 5000.0
    loss_mode: str = "l1+dssim"
    losses: tuple[str, ...] = LOSS_NAMES
    hdr_ratio: float = 1.0
    warmup_frac: float = 0.1
    freeze_field: bool = False
    stop_grad_minmax: bool = True
    shared_norm: bool = False
    hidden: int = 16
    depth: int = 1
    l2h_kind: str = "l2h"
    h2l_kind: str = "h2l"
    l2h_output: str = "relu"
    density_init: float = -2.0
    eval_every: int = 0
    seed: int = 0
    profile: str = "splat-style"

    def __post_init__(self):
        self.losses = tuple(self.losses)
        if not self.losses:
            raise ValueError("at least one loss must be enabled")
        bad = set(self.losses) - set(LOSS_NAMES)
        if bad:
            raise ValueError(f"unknown losses {sorted(bad)}")
        for name in ("field", "l2h", "h2l"):
            lr0, lr1 = getattr(self, f"{name}_lr"), getattr(self, f"{name}_lr_final")
            if not (lr0 > 0 and lr1 > 0):
                raise ValueError(f"{name} learning rates must be > 0")
            if not lr1 < lr0:
                raise ValueError(f"{name}_lr_final must be below {name}_lr")
        if self.loss_mode not in ("l1+dssim", "mse"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        if self.batch_rays % (self.patch_size ** 2):
            raise ValueError("batch_rays must be a multiple of patch_size**2")
        if self.loss_mode == "l1+dssim" and self.lam > 0 and self.patch_size < obj.SSIM_WINDOW:
            raise ValueError(f"patch_size must be >= {obj.SSIM_WINDOW} for the D-SSIM term")
        if not 0.0 <= self.hdr_ratio <= 1.0:
            raise ValueError("hdr_ratio must lie in [0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        obj.LossWeights(self.alpha, self.beta, self.lam, self.mu)

    @classmethod
    def from_profile(cls, profile: str = "splat-style", **overrides) -> "TrainConfig":
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}")
        kw = dict(PROFILES[profile], profile=profile)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["losses"] = list(self.losses)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @property
    def weights(self) -> obj.LossWeights:
        return obj.LossWeights(self.alpha, self.beta, self.lam, self.mu)

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_frac * self.iterations)) if "ldr" in self.losses else 0

    @property
    def hdr_head_trained(self) -> bool:
        return bool({"hdr", "h2l"} & set(self.losses))


@dataclass
class TrainState:
    config: TrainConfig
    field: VoxelField
    l2h: object
    h2l: object
    opt: dict[str, Adam]
    rng: np.random.Generator
    step: int = 0

    def lrs(self, step: int | None = None) -> dict[str, float]:
        c, s = self.config, self.step if step is None else step
        return {name: exp_decay(getattr(c, f"{name}_lr"), getattr(c, f"{name}_lr_final"), s, c.iterations)
                for name in ("field", "l2h", "h2l")}


def _make_l2h(cfg: TrainConfig, rng):
    ref = L2HConverter(cfg.hidden, cfg.depth, cfg.l2h_output, rng=rng)
    if cfg.l2h_kind == "l2h":
        return ref
    if cfg.l2h_kind == "mlp":
        return matched_mlp(ref.n_params(), rng=rng, input_range="ldr")
    raise ValueError(f"unknown l2h_kind {cfg.l2h_kind!r}")


def _make_h2l(cfg: TrainConfig, rng):
    ref = H2LConverter(cfg.hidden, cfg.depth, rng=rng)
    if cfg.h2l_kind == "h2l":
        return ref
    if cfg.h2l_kind == "mlp":
        return matched_mlp(ref.n_params(), rng=rng, input_range="hdr")
    raise ValueError(f"unknown h2l_kind {cfg.h2l_kind!r}")


def init_state(bundle: DatasetBundle, cfg: TrainConfig) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    spec = bundle.scene
    res = (cfg.field_resolution,) * 3
    fld = VoxelField.init_learnable(res, (spec.bbox_min, spec.bbox_max), cfg.density_init, rng=rng)
    l2h = _make_l2h(cfg, rng)
    h2l = _make_h2l(cfg, rng)
    opt = {"field": Adam({"density": fld.density, "color": fld.color}),
           "l2h": Adam(l2h.params), "h2l": Adam(h2l.params)}
    return TrainState(cfg, fld, l2h, h2l, opt, rng, 0)


def hdr_supervised_views(bundle: DatasetBundle, cfg: TrainConfig) -> list[int]:
    """Training views whose HDR ground truth may be used (first ``ratio`` of a seeded shuffle)."""
    ids = bundle.train_ids
    k = int(round(cfg.hdr_ratio * len(ids)))
    if k == len(ids):
        return ids
    perm = np.random.default_rng(cfg.seed + 7919).permutation(len(ids))
    return sorted(ids[i] for i in perm[:k])


def _patch_pixels(r0: int, c0: int, ps: int) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(r0, r0 + ps), np.arange(c0, c0 + ps), indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def _sample_batch(state: TrainState, bundle: DatasetBundle, supervised: set[int]):
    cfg, rng = state.config, state.rng
    ps = cfg.patch_size
    n_patch = cfg.batch_rays // (ps * ps)
    h, w = bundle.ldr.shape[1:3]
    train = np.asarray(bundle.train_ids)
    views = train[rng.integers(0, len(train), size=n_patch)]
    rows = rng.integers(0, h - ps + 1, size=n_patch)
    cols = rng.integers(0, w - ps + 1, size=n_patch)
    # HDR-supervised patches first so the hdr term is a leading slice
    order = np.argsort([0 if v in supervised else 1 for v in views], kind="stable")
    return views[order], rows[order], cols[order]


def _batch_rays(poses: list[Pose], views, rows, cols, ps) -> RayBatch:
    parts = [generate_rays(poses[v], _patch_pixels(r, c, ps)) for v, r, c in zip(views, rows, cols)]
    return RayBatch(np.concatenate([p.origins for p in parts]), np.concatenate([p.directions for p in parts]),
                    np.concatenate([p.pixel_ids for p in parts]))


def _gather(images: np.ndarray, views, rows, cols, ps) -> np.ndarray:
    return np.stack([images[v, r:r + ps, c:c + ps] for v, r, c in zip(views, rows, cols)])


def train_step(state: TrainState, bundle: DatasetBundle, poses: list[Pose], supervised: set[int]) -> dict:
    cfg = state.config
    ps = cfg.patch_size
    views, rows, cols = _sample_batch(state, bundle, supervised)
    n_patch = len(views)
    rays = _batch_rays(poses, views, rows, cols, ps)
    gt_ldr = _gather(bundle.ldr, views, rows, cols, ps)
    n_samples = cfg.n_samples or bundle.n_samples

    warm = state.step < cfg.warmup_steps
    active = {"ldr"} if warm else set(cfg.losses)
    tape = dc.Tape()
    fp = {"density": tape.param(state.field.density, "density"),
          "color": tape.param(state.field.color, "color")}
    res = render_ldr(state.field, rays, n_samples, params=fp, background=bundle.background_ldr, rng=state.rng)
    terms: dict[str, dc.Tensor] = {}
    if "ldr" in active:
        pred = dc.reshape(res.color, (n_patch, ps, ps, 3))
        terms["ldr"] = obj.ldr_loss(pred, gt_ldr, cfg.lam, cfg.loss_mode)
    lp = hp = None
    if active & {"hdr", "h2l"}:
        lp = state.l2h.bind(tape, "l2h.")
        hdr = composite_hdr(res, lambda c: state.l2h(c, lp))
        k = int(sum(v in supervised for v in views))
        if "hdr" in active and k > 0:
            gt_hdr = _gather(bundle.hdr, views[:k], rows[:k], cols[:k], ps)
            if np.ptp(gt_hdr) > 0 or cfg.loss_mode == "mse":
                pred_h = dc.reshape(dc.index(hdr, slice(0, k * ps * ps)), (k, ps, ps, 3))
                terms["hdr"] = obj.hdr_loss(pred_h, gt_hdr, cfg.mu, stop_grad=cfg.stop_grad_minmax,
                                            shared_norm=cfg.shared_norm,
                                            mode="mse" if cfg.loss_mode == "mse" else "mulaw")
        if "h2l" in active:
            hp = state.h2l.bind(tape, "h2l.")
            back = dc.reshape(state.h2l(hdr, hp), (n_patch, ps, ps, 3))
            terms["h2l"] = obj.h2l_loss(back, gt_ldr, cfg.lam, cfg.loss_mode)
    if not terms:
        return {"skipped": True}
    total = obj.total_loss(terms.get("ldr"), terms.get("hdr"), terms.get("h2l"), cfg.weights)
    grads = tape.backward(total)

    lrs = state.lrs()
    if not (cfg.freeze_field and not warm):
        new = state.opt["field"].step({"density": state.field.density, "color": state.field.color},
                                      {k: grads[v] for k, v in fp.items()}, lrs["field"], "field.")
        state.field.density, state.field.color = new["density"], new["color"]
    for name, conv, bound in (("l2h", state.l2h, lp), ("h2l", state.h2l, hp)):
        g = {k: grads[t] for k, t in bound.items()} if bound else {}
        conv.update(state.opt[name].step(conv.params, g, lrs[name], name + "."))
    out = {f"loss_{k}": float(v.data) for k, v in terms.items()}
    out["loss_total"] = float(total.data)
    out["_batch"] = (views, rows, cols)
    return out


def _dump_batch(out_dir, step, batch, err) -> str | None:
    if out_dir is None or batch is None:
        return None
    path = Path(out_dir) / f"abort_step{step:06d}.npz"
    views, rows, cols = batch
    np.savez(path, step=step, views=views, rows=rows, cols=cols, error=str(err))
    return str(path)


def train(bundle: DatasetBundle, cfg: TrainConfig, *, state: TrainState | None = None,
          until: int | None = None, out_dir=None, eval_ids: Iterable[int] | None = None,
          progress: bool = False) -> tuple[TrainState, list[dict]]:
    """Run (or resume) training up to ``until`` (default: ``cfg.iterations``) steps.

    Returns the final state and the metric history (one ``train`` row per step,
    ``test`` rows at each evaluation and at the end of the run).
    """
    state = state or init_state(bundle, cfg)
    if state.config != cfg:
        raise ValueError("state was created with a different config")
    poses = bundle.poses
    supervised = set(hdr_supervised_views(bundle, cfg))
    stop = cfg.iterations if until is None else min(until, cfg.iterations)
    eval_ids = bundle.test_ids if eval_ids is None else list(eval_ids)
    history: list[dict] = []
    while state.step < stop:
        batch = None
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", obj.DegenerateNormalizationWarning)
                out = train_step(state, bundle, poses, supervised)
            batch = out.pop("_batch", None)
        except (dc.NonFiniteError, NonFiniteGradient, FloatingPointError) as err:
            path = _dump_batch(out_dir, state.step, batch, err)
            raise TrainingAborted(f"non-finite value at step {state.step}: {err}", state.step, path) from err
        if not math.isfinite(out.get("loss_total", 0.0)):
            path = _dump_batch(out_dir, state.step, batch, "nan loss")
            raise TrainingAborted(f"NaN loss at step {state.step}", state.step, path)
        state.step += 1
        history.append({"step": state.step, "split": "train", **out})
        if progress and state.step % 50 == 0:
            log.info("step %d loss %.5f", state.step, out.get("loss_total", float("nan")))
        if cfg.eval_every and state.step % cfg.eval_every == 0 and state.step < stop:
            history.append({"step": state.step, "split": "test", **summarize(evaluate(state, bundle, eval_ids))})
    if stop == cfg.iterations and not (history and history[-1]["split"] == "test"):
        history.append({"step": state.step, "split": "test", **summarize(evaluate(state, bundle, eval_ids))})
    return state, history


# ---------------------------------------------------------------------------
# Evaluation


def render_view(state: TrainState, pose: Pose, background_ldr, n_samples: int, hdr: bool = True) -> dict:
    return render_image(state.field, pose, n_samples, state.l2h if hdr else None, background=background_ldr)


def evaluate(state: TrainState, bundle: DatasetBundle, ids: Iterable[int]) -> list[dict]:
    """Per-view LDR metrics and, when the HDR head was trained, mu-law HDR metrics."""
    cfg = state.config
    poses = bundle.poses
    n_samples = cfg.n_samples or bundle.n_samples
    want_hdr = cfg.hdr_head_trained
    rows = []
    for i in ids:
        img = render_view(state, poses[i], bundle.background_ldr, n_samples, hdr=want_hdr)
        row = {"view": int(i), "psnr_ldr": obj.psnr(img["ldr"], bundle.ldr[i]),
               "ssim_ldr": obj.ssim(img["ldr"], bundle.ldr[i])}
        if want_hdr:
            row["psnr_hdr_mulaw"] = obj.psnr_hdr(img["hdr"], bundle.hdr[i], cfg.mu)
            row["ssim_hdr_mulaw"] = obj.ssim_hdr(img["hdr"], bundle.hdr[i], cfg.mu)
        else:
            row["psnr_hdr_mulaw"] = row["ssim_hdr_mulaw"] = None
        rows.append(row)
    return rows


def summarize(rows: list[dict]) -> dict:
    out = {}
    for k in ("psnr_ldr", "ssim_ldr", "psnr_hdr_mulaw", "ssim_hdr_mulaw"):
        vals = [r[k] for r in rows if r.get(k) is not None]
        out[k] = float(np.mean(vals)) if vals else None
    return out


def cross_view_consistency(fld: VoxelField, pose_a: Pose, pose_b: Pose, n_samples: int, *,
                           background=(0.0, 0.0, 0.0), opaque: float = 0.99, depth_tol: float = 0.05,
                           max_points: int = 512) -> dict:
    """Colour agreement of surface points seen from two views.

    Surface points come from the expected depth of opaque pixels in view A;
    each is re-rendered along the ray from B through it and kept only if B's
    depth agrees (the point is visible from B).
    """
    img = render_image(fld, pose_a, n_samples, background=background)
    mask = img["acc"].ravel() > opaque
    if not mask.any():
        return {"n_points": 0, "mean_abs": float("nan"), "max_abs": float("nan")}
    idx = np.flatnonzero(mask)
    if len(idx) > max_points:
        idx = idx[np.linspace(0, len(idx) - 1, max_points).astype(int)]
    rays_a = image_rays(pose_a)
    pts = rays_a.origins[idx] + img["depth"].ravel()[idx, None] * rays_a.directions[idx]
    col_a = img["ldr"].reshape(-1, 3)[idx]
    rays_b = rays_through_points(pose_b, pts)
    res_b = render_ldr(fld, rays_b, n_samples, background=background)
    dist_b = np.linalg.norm(pts - pose_b.translation, axis=1)
    vis = (np.abs(res_b.depth - dist_b) < depth_tol) & (res_b.acc.data > opaque)
    if not vis.any():
        return {"n_points": 0, "mean_abs": float("nan"), "max_abs": float("nan")}
    diff = np.abs(res_b.color.data[vis] - col_a[vis])
    return {"n_points": int(vis.sum()), "mean_abs": float(diff.mean()), "max_abs": float(diff.max())}


# ---------------------------------------------------------------------------
# Checkpoints


def save_state(state: TrainState, path) -> None:
    blocks: dict[str, object] = {
        "meta": {"step": state.step, "config": state.config.to_dict(),
                 "l2h": state.l2h.config(), "h2l": state.h2l.config(),
                 "density_activation": state.field.density_activation,
                 "color_activation": state.field.color_activation,
                 "adam_t": {g: {k: s.t for k, s in o.states.items()} for g, o in state.opt.items()}},
        "rng": state.rng.bit_generator.state,
    }
    for name, conv in (("l2h", state.l2h), ("h2l", state.h2l)):
        for k, v in conv.params.items():
            blocks[f"{name}/{k}"] = v
    for g, o in state.opt.items():
        for k, s in o.states.items():
            blocks[f"adam/{g}/{k}/m"] = s.m
            blocks[f"adam/{g}/{k}/v"] = s.v
    write_checkpoint(path, state.field.density, state.field.color, state.field.bbox_min,
                     state.field.bbox_max, blocks)


def load_state(path) -> TrainState:
    ck = read_checkpoint(path)
    b = ck["blocks"]
    meta = b["meta"]
    cfg = TrainConfig.from_dict({**meta["config"], "losses": tuple(meta["config"]["losses"])})
    fld = VoxelField(ck["density"], ck["color"], ck["bbox_min"], ck["bbox_max"],
                     meta["density_activation"], meta["color_activation"])

    def conv_params(prefix):
        return {k[len(prefix) + 1:]: v for k, v in b.items() if k.startswith(prefix + "/")}

    l2h = build_converter(meta["l2h"], conv_params("l2h"))
    h2l = build_converter(meta["h2l"], conv_params("h2l"))
    opt = {"field": Adam({"density": fld.density, "color": fld.color}),
           "l2h": Adam(l2h.params), "h2l": Adam(h2l.params)}
    for g, o in opt.items():
        for k, s in o.states.items():
            o.states[k] = AdamState(b[f"adam/{g}/{k}/m"], b[f"adam/{g}/{k}/v"], meta["adam_t"][g][k])
    rng = np.random.default_rng()
    rng.bit_generator.state = b["rng"]
    return TrainState(cfg, fld, l2h, h2l, opt, rng, meta["step"])


def write_metrics_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRIC_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: _fmt(row.get(k)) for k in METRIC_FIELDS})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# Converter fitting against closed-form targets


def fit_converter(conv, inputs: np.ndarray, targets: np.ndarray, *, iterations: int = 3000,
                  lr: float = 1e-2, lr_final: float = 1e-4, batch: int = 256, seed: int = 0) -> list[float]:
    """Supervised MSE fit of a converter with Adam; returns the loss curve."""
    rng = np.random.default_rng(seed)
    opt = Adam(conv.params)
    curve = []
    n = len(inputs)
    for step in range(iterations):
        idx = rng.integers(0, n, size=min(batch, n))
        tape = dc.Tape()
        p = conv.bind(tape)
        loss = obj.mse(conv(inputs[idx], p), targets[idx])
        grads = tape.backward(loss)
        conv.update(opt.step(conv.params, {k: grads[t] for k, t in p.items()},
                             exp_decay(lr, lr_final, step, iterations)))
        curve.append(float(loss.data))
    return curve


# ---------------------------------------------------------------------------
# Ablation harness

ABLATION_FIELDS = ["cell", "losses", "l2h_kind", "h2l_kind", "seed", "status", "psnr_ldr", "ssim_ldr",
                   "psnr_hdr_mulaw", "ssim_hdr_mulaw", "final_loss"]


def ablation_cells(losses=LOSS_NAMES) -> list[dict]:
    """Loss power set (without the empty set) plus the two plain-MLP swaps."""
    cells = []
    for r in range(1, len(losses) + 1):
        for combo in itertools.combinations(losses, r):
            cells.append({"cell": "+".join(combo), "losses": combo, "l2h_kind": "l2h", "h2l_kind": "h2l"})
    full = tuple(losses)
    cells.append({"cell": "mlp-l2h", "losses": full, "l2h_kind": "mlp", "h2l_kind": "h2l"})
    cells.append({"cell": "mlp-h2l", "losses": full, "l2h_kind": "l2h", "h2l_kind": "mlp"})
    return cells


def ablate(bundle: DatasetBundle, base: TrainConfig, seeds=(0, 1, 2), cells: list[dict] | None = None,
           out_dir=None) -> list[dict]:
    """Train every cell for every seed; one report row per (cell, seed).

    Failures are caught and recorded in the row's ``status`` column.
    """
    rows = []
    for cell in cells or ablation_cells():
        for seed in seeds:
            cfg = dataclasses.replace(base, losses=tuple(cell["losses"]), l2h_kind=cell["l2h_kind"],
                                      h2l_kind=cell["h2l_kind"], seed=seed)
            row = {"cell": cell["cell"], "losses": "+".join(cell["losses"]), "l2h_kind": cell["l2h_kind"],
                   "h2l_kind": cell["h2l_kind"], "seed": seed}
            run_dir = None
            if out_dir is not None:
                run_dir = Path(out_dir) / f"{cell['cell']}_seed{seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
            try:
                state, hist = train(bundle, cfg, out_dir=run_dir)
                final = hist[-1]
                losses = [h["loss_total"] for h in hist if h["split"] == "train" and "loss_total" in h]
                row.update(status="ok", final_loss=losses[-1] if losses else None,
                           **{k: final.get(k) for k in ("psnr_ldr", "ssim_ldr", "psnr_hdr_mulaw", "ssim_hdr_mulaw")})
                if run_dir is not None:
                    save_state(state, run_dir / "checkpoint.mh3d")
                    write_metrics_csv(hist, run_dir / "metrics.csv")
            except Exception as err:  # harness keeps going; failure is reported in the row
                log.warning("cell %s seed %s failed: %s", cell["cell"], seed, err)
                row.update(status=f"failed: {type(err).__name__}: {err}")
            rows.append(row)
    return rows


def write_ablation_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=ABLATION_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in ABLATION_FIELDS})


def median_by_cell(rows: list[dict], key: str = "psnr_hdr_mulaw") -> dict[str, float | None]:
    out: dict[str, list] = {}
    for r in rows:
        out.setdefault(r["cell"], [])
        if r.get("status") == "ok" and r.get(key) is not None:
            out[r["cell"]].append(r[key])
    return {k: (float(np.median(v)) if v else None) for k, v in out.items()}
