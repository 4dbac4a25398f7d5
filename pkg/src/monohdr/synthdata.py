"""Procedural HDR scenes and single-exposure LDR datasets.

Ground truth lives on a voxel field whose colours are linear HDR radiance and
is rendered with the same volume renderer used for training.  LDR views are
produced by the camera model at one exposure of the ladder.

On-disk layout of a bundle directory::

    manifest.json            scene spec, camera, ladder, poses, split, render settings
    ldr/view_000.ppm ...     8-bit LDR views (all poses)
    hdr_gt/view_000.pfm ...  float32 HDR ground truth (all poses)
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import camera as cam
from .camera import CameraParams, ExposureLadder
from .field import Pose, VoxelField, render_image
from .imageio import quantize8, read_pfm, read_ppm, write_pfm, write_ppm

SCENE_KINDS = ("checker-sphere", "emissive-boxes", "gradient-room")
DATASET_FORMAT = "mh3d-dataset"
DATASET_VERSION = 1
DARK_LEVEL = 0.05


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "emissive-boxes"
    resolution: int = 32
    bbox_min: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    bbox_max: tuple[float, float, float] = (1.0, 1.0, 1.0)
    span: float = 100.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise SceneError(f"unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        object.__setattr__(self, "bbox_min", tuple(float(v) for v in self.bbox_min))
        object.__setattr__(self, "bbox_max", tuple(float(v) for v in self.bbox_max))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bbox_min"], d["bbox_max"] = list(self.bbox_min), list(self.bbox_max)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)


# ---------------------------------------------------------------------------
# Scenes

_SOLID = 40.0


def _checker_sphere(p, rng, span):
    r = np.linalg.norm(p, axis=-1)
    density = np.where(r < 0.6, _SOLID, 0.0)
    tiles = np.floor(p / 0.5).astype(int).sum(axis=-1) % 2
    dark = 0.02 * np.array([0.8, 0.9, 1.0])
    bright = 0.02 * span * 1.5 * np.array([1.0, 0.9, 0.8])
    color = np.where(tiles[..., None] == 1, bright, dark)
    return density, color


def _box(p, lo, hi):
    return np.all((p >= lo) & (p <= hi), axis=-1)


def _emissive_boxes(p, rng, span):
    density = np.zeros(p.shape[:-1])
    color = np.zeros(p.shape)
    base = 0.01
    floor = _box(p, (-0.95, -0.95, -0.9), (0.95, 0.95, -0.65))
    # slowly varying floor, mid-range radiance
    ramp = 0.5 + 0.5 * np.sin(1.5 * p[..., 0]) * np.cos(1.2 * p[..., 1])
    floor_rgb = np.stack([0.08 + 0.25 * ramp, 0.1 + 0.2 * ramp, 0.15 + 0.1 * ramp], axis=-1)
    boxes = [
        ((-0.25, -0.25, -0.65), (0.25, 0.25, 0.6), base * span * 5.0 * np.array([1.0, 0.85, 0.6])),
        ((-0.8, -0.8, -0.65), (-0.45, -0.45, -0.1), base * np.array([1.5, 1.0, 1.2])),
        ((0.45, -0.8, -0.65), (0.8, -0.45, 0.1), base * span * 0.3 * np.array([0.4, 1.0, 0.5])),
        ((-0.8, 0.45, -0.65), (-0.45, 0.8, 0.2), base * span * 1.6 * np.array([0.5, 0.6, 1.0])),
        ((0.45, 0.45, -0.65), (0.8, 0.8, -0.2), base * 3.0 * np.array([1.0, 0.6, 0.4])),
    ]
    density[floor] = _SOLID
    color[:] = floor_rgb
    for lo, hi, rgb in boxes:
        m = _box(p, np.array(lo) - 0.03, np.array(hi) + 0.03)
        color[m] = rgb
        density[_box(p, lo, hi)] = _SOLID
    return density, color


def _gradient_room(p, rng, span):
    q = p / np.array([0.8, 0.8, 0.6])
    density = np.where(np.linalg.norm(q, axis=-1) < 1.0, _SOLID, 0.0)
    u = np.clip((p + 1.0) / 2.0, 0.0, 1.0)
    phase = rng.uniform(0, 2 * np.pi)
    lo = 0.015
    # log-linear ramps: radiance spans lo .. lo * span * 2 across the object
    t = np.stack([u[..., 0], 0.5 + 0.4 * np.sin(2.0 * u[..., 1] * np.pi + phase), u[..., 2]], axis=-1)
    color = lo * np.power(span * 2.0, np.clip(t, 0, 1) * 1.1)
    return density, color


_BUILDERS = {"checker-sphere": _checker_sphere, "emissive-boxes": _emissive_boxes,
             "gradient-room": _gradient_room}


def build_scene(spec: SceneSpec) -> VoxelField:
    """Ground-truth field; colours are linear HDR radiance (identity activation)."""
    if spec.resolution < 8:
        raise SceneError(f"resolution {spec.resolution} too coarse for scene {spec.kind}")
    res = (spec.resolution,) * 3
    proto = VoxelField(np.zeros(res), np.zeros(res + (3,)), np.array(spec.bbox_min), np.array(spec.bbox_max),
                       "identity", "identity")
    # scene geometry is authored in the unit cube [-1, 1]^3
    centers = proto.voxel_centers().reshape(res + (3,))
    lo, hi = np.array(spec.bbox_min), np.array(spec.bbox_max)
    unit = (centers - lo) / (hi - lo) * 2.0 - 1.0
    rng = np.random.default_rng(spec.rng_seed)
    density, color = _BUILDERS[spec.kind](unit, rng, spec.span)
    fld = VoxelField(density, color, lo, hi, "identity", "identity")
    ratio = dynamic_range(fld)
    if not ratio >= spec.span:
        raise SceneError(f"{spec.kind} at resolution {spec.resolution} reaches span {ratio:.1f} < {spec.span}")
    return fld


def dynamic_range(fld: VoxelField) -> float:
    """max / min nonzero radiance over occupied voxels."""
    occ = fld.density > 0
    vals = fld.color[occ].ravel()
    vals = vals[vals > 0]
    if vals.size == 0:
        return 0.0
    return float(vals.max() / vals.min())


# ---------------------------------------------------------------------------
# Poses


def sample_poses(n: int, radius: float = 3.0, target=(0.0, 0.0, 0.0), *, elevation_deg: float = 30.0,
                 width: int = 64, height: int = 64, focal: float | None = None,
                 phase: float = 0.0) -> list[Pose]:
    """``n`` cameras evenly spaced on a circle at fixed elevation, all looking at ``target``."""
    if n < 2:
        raise ValueError("need at least 2 poses")
    target = np.asarray(target, dtype=np.float64)
    el = np.deg2rad(elevation_deg)
    f = float(width) if focal is None else float(focal)
    poses = []
    for k in range(n):
        az = phase + 2.0 * np.pi * k / n
        eye = target + radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        poses.append(Pose.look_at(eye, target, focal=f, width=width, height=height))
    return poses


def default_split(n: int, n_train: int = 18) -> dict[str, list[int]]:
    """Interleaved split: even indices train (up to ``n_train``), the rest test."""
    idx = list(range(n))
    train = idx[0::2][:n_train]
    test = [i for i in idx if i not in train]
    return {"train": train, "test": test}


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class DatasetBundle:
    manifest: dict
    ldr: np.ndarray      # (V, H, W, 3)
    hdr: np.ndarray      # (V, H, W, 3)

    @property
    def poses(self) -> list[Pose]:
        return [Pose.from_dict(p) for p in self.manifest["poses"]]

    @property
    def train_ids(self) -> list[int]:
        return list(self.manifest["split"]["train"])

    @property
    def test_ids(self) -> list[int]:
        return list(self.manifest["split"]["test"])

    @property
    def camera(self) -> CameraParams:
        return CameraParams.from_dict(self.manifest["camera"])

    @property
    def n_samples(self) -> int:
        return int(self.manifest["render"]["n_samples"])

    @property
    def background_hdr(self) -> np.ndarray:
        return np.asarray(self.manifest["render"]["background_hdr"], dtype=np.float64)

    @property
    def background_ldr(self) -> np.ndarray:
        return cam.simulate_ldr(self.background_hdr, self.camera)

    @property
    def scene(self) -> SceneSpec:
        return SceneSpec.from_dict(self.manifest["scene"])


def make_dataset(scene: SceneSpec, poses: list[Pose], camera: CameraParams, exposure_index: int = 3,
                 ladder: ExposureLadder = ExposureLadder(), split: dict | None = None,
                 n_samples: int = 64, background_hdr=(0.0, 0.0, 0.0)) -> DatasetBundle:
    """Render HDR ground truth for every pose and expose it once at ``ladder[exposure_index]``."""
    if not 0 <= exposure_index < len(ladder):
        raise ValueError(f"exposure index {exposure_index} outside ladder of {len(ladder)}")
    camera = replace(camera, delta_t=ladder[exposure_index])
    split = split or default_split(len(poses))
    gt = build_scene(scene)
    bg = np.asarray(background_hdr, dtype=np.float64)
    rng = np.random.default_rng(camera.rng_seed)
    hdr, ldr = [], []
    for pose in poses:
        h = render_image(gt, pose, n_samples, background=bg)["ldr"]
        h = np.maximum(h, 0.0)
        noise = cam.draw_noise(h.shape, camera, rng)
        hdr.append(h)
        ldr.append(cam.simulate_ldr(h, camera, noise))
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "scene": scene.to_dict(),
        "camera": camera.to_dict(),
        "exposure_ladder": list(ladder.times),
        "exposure_index": int(exposure_index),
        "poses": [p.to_dict() for p in poses],
        "split": {"train": list(split["train"]), "test": list(split["test"])},
        "render": {"n_samples": int(n_samples), "background_hdr": bg.tolist()},
    }
    return DatasetBundle(manifest, np.stack(ldr), np.stack(hdr))


def regenerate(manifest: dict) -> DatasetBundle:
    """Rebuild a bundle from its manifest alone."""
    cam_d = dict(manifest["camera"])
    return make_dataset(SceneSpec.from_dict(manifest["scene"]),
                        [Pose.from_dict(p) for p in manifest["poses"]],
                        CameraParams.from_dict(cam_d),
                        manifest["exposure_index"], ExposureLadder(tuple(manifest["exposure_ladder"])),
                        manifest["split"], manifest["render"]["n_samples"],
                        manifest["render"]["background_hdr"])


def exposure_stats(bundle: DatasetBundle, ids=None) -> list[dict]:
    """Per-view fraction of saturated pixels and of pixels darker than 0.05."""
    camera = bundle.camera
    out = []
    for i in (bundle.train_ids if ids is None else ids):
        sat = cam.is_saturated(bundle.hdr[i], camera).any(axis=-1)
        dark = bundle.ldr[i].max(axis=-1) < DARK_LEVEL
        out.append({"view": int(i), "saturated": float(sat.mean()), "dark": float(dark.mean())})
    return out


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def save_dataset(bundle: DatasetBundle, out_dir) -> Path:
    out = Path(out_dir)
    (out / "ldr").mkdir(parents=True, exist_ok=True)
    (out / "hdr_gt").mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_bytes(_dump_json(bundle.manifest))
    for i in range(len(bundle.ldr)):
        write_ppm(out / "ldr" / f"view_{i:03d}.ppm", bundle.ldr[i])
        write_pfm(out / "hdr_gt" / f"view_{i:03d}.pfm", bundle.hdr[i])
    return out


def load_dataset(path) -> DatasetBundle:
    """Load a bundle from disk; LDR values are the stored 8-bit levels / 255."""
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError(f"{root}: not a dataset bundle")
    n = len(manifest["poses"])
    ldr = np.stack([read_ppm(root / "ldr" / f"view_{i:03d}.ppm") for i in range(n)])
    hdr = np.stack([read_pfm(root / "hdr_gt" / f"view_{i:03d}.pfm") for i in range(n)]).astype(np.float64)
    return DatasetBundle(manifest, ldr, hdr)


def quantized(bundle: DatasetBundle) -> DatasetBundle:
    """The bundle as it reads back from disk (8-bit LDR, float32 HDR)."""
    return DatasetBundle(bundle.manifest, quantize8(bundle.ldr).astype(np.float64) / 255.0,
                         bundle.hdr.astype(np.float32).astype(np.float64))


def tree_hash(path) -> str:
    """sha256 over every file's relative path and bytes, in sorted order."""
    root = Path(path)
    h = hashlib.sha256()
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root).as_posix()).encode())
        h.update(b"\0")
        h.update(f.read_bytes())
    return h.hexdigest()


def dataset_hash(path) -> str:
    root = Path(path)
    h = hashlib.sha256()
    for f in [root / "manifest.json"] + sorted((root / "ldr").glob("*.ppm")) + sorted((root / "hdr_gt").glob("*.pfm")):
        h.update(str(f.relative_to(root).as_posix()).encode())
        h.update(b"\0")
        h.update(f.read_bytes())
    return h.hexdigest()


def default_dataset(kind: str = "emissive-boxes", *, resolution: int = 32, image_size: int = 64,
                    n_views: int = 35, exposure_index: int = 3, seed: int = 0,
                    noise_sigma: float = 0.0, n_samples: int = 64) -> DatasetBundle:
    spec = SceneSpec(kind=kind, resolution=resolution, rng_seed=seed)
    poses = sample_poses(n_views, width=image_size, height=image_size)
    camera = CameraParams(noise_sigma=noise_sigma, rng_seed=seed)
    return make_dataset(spec, poses, camera, exposure_index, n_samples=n_samples)
