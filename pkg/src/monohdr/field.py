"""Dense voxel radiance field with differentiable volume rendering.

Camera convention: a :class:`Pose` stores the camera-to-world rotation and the
camera centre.  In camera space +x points right, +y down and +z forward.  Pixel
``(row, col)`` has its centre at continuous coordinates ``(col + 0.5, row + 0.5)``.

Field values live at voxel centres.  Raw (pre-activation) values are
interpolated trilinearly and the activation is applied afterwards, so querying
exactly at a voxel centre returns that voxel's activated value.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import diffcore as dc
from .diffcore import Tensor

ACTIVATIONS = ("softplus", "sigmoid", "identity")


def _activate(x: Tensor, kind: str) -> Tensor:
    if kind == "softplus":
        return dc.softplus(x)
    if kind == "sigmoid":
        return dc.sigmoid(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class VoxelField:
    """Per-voxel density and colour, stored pre-activation.

    ``density`` has shape ``resolution``; ``color`` has shape ``resolution + (3,)``.
    A learned LDR field uses softplus/sigmoid; ground-truth HDR scenes store
    activated values directly (``identity``).
    """

    density: np.ndarray
    color: np.ndarray
    bbox_min: np.ndarray = dc_field(default_factory=lambda: -np.ones(3))
    bbox_max: np.ndarray = dc_field(default_factory=lambda: np.ones(3))
    density_activation: str = "softplus"
    color_activation: str = "sigmoid"

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)
        if self.density.ndim != 3 or self.color.shape != self.density.shape + (3,):
            raise ValueError(f"bad field shapes {self.density.shape} / {self.color.shape}")
        if np.any(self.bbox_max <= self.bbox_min):
            raise ValueError("empty bounding box")
        for a in (self.density_activation, self.color_activation):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return tuple(self.density.shape)

    @property
    def n_voxels(self) -> int:
        return int(self.density.size)

    @classmethod
    def init_learnable(cls, resolution=(32, 32, 32), bbox=((-1, -1, -1), (1, 1, 1)),
                       density_raw: float = -2.0, color_noise: float = 0.01,
                       rng: np.random.Generator | None = None) -> "VoxelField":
        rng = rng or np.random.default_rng(0)
        res = tuple(int(n) for n in resolution)
        density = np.full(res, float(density_raw))
        color = color_noise * rng.standard_normal(res + (3,))
        return cls(density, color, np.asarray(bbox[0], float), np.asarray(bbox[1], float))

    def voxel_centers(self) -> np.ndarray:
        axes = [self.bbox_min[i] + (np.arange(n) + 0.5) * (self.bbox_max[i] - self.bbox_min[i]) / n
                for i, n in enumerate(self.resolution)]
        g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return g.reshape(-1, 3)

    def activated(self) -> tuple[np.ndarray, np.ndarray]:
        d = _activate(Tensor(self.density), self.density_activation).data
        c = _activate(Tensor(self.color), self.color_activation).data
        return d, c

    def query(self, points, params: dict | None = None) -> tuple[Tensor, Tensor]:
        """Activated (density, colour) at ``points``; differentiable w.r.t. ``params``."""
        a = interpolation_matrix(np.asarray(points, float), self.resolution, self.bbox_min, self.bbox_max)
        return self._query_with(a, params)

    def _query_with(self, a: sp.csr_matrix, params: dict | None) -> tuple[Tensor, Tensor]:
        dens, col = self.tensors(params)
        table = dc.concat([dc.reshape(dens, (-1, 1)), dc.reshape(col, (-1, 3))], axis=1)
        vals = dc.spmm(a, table)
        sigma = _activate(dc.index(vals, (slice(None), 0)), self.density_activation)
        rgb = _activate(dc.index(vals, (slice(None), slice(1, 4))), self.color_activation)
        return sigma, rgb

    def tensors(self, params: dict | None = None) -> tuple[Tensor, Tensor]:
        if params is None:
            return Tensor(self.density), Tensor(self.color)
        return params["density"], params["color"]

    def copy(self) -> "VoxelField":
        return VoxelField(self.density.copy(), self.color.copy(), self.bbox_min.copy(),
                          self.bbox_max.copy(), self.density_activation, self.color_activation)


def interpolation_matrix(points: np.ndarray, resolution, bbox_min, bbox_max) -> sp.csr_matrix:
    """Sparse (M, V) matrix whose rows hold the 8 trilinear weights of each point.

    Points outside the grid of voxel centres are clamped to the border.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    res = np.asarray(resolution)
    u = (points - bbox_min) / (np.asarray(bbox_max) - bbox_min) * res - 0.5
    u = np.clip(u, 0.0, res - 1)
    lo = np.minimum(np.floor(u).astype(np.int64), np.maximum(res - 2, 0))
    frac = u - lo
    hi = np.minimum(lo + 1, res - 1)
    m = points.shape[0]
    cols = np.empty((m, 8), dtype=np.int64)
    wts = np.empty((m, 8))
    k = 0
    for cx in (0, 1):
        ix, wx = (hi[:, 0], frac[:, 0]) if cx else (lo[:, 0], 1 - frac[:, 0])
        for cy in (0, 1):
            iy, wy = (hi[:, 1], frac[:, 1]) if cy else (lo[:, 1], 1 - frac[:, 1])
            for cz in (0, 1):
                iz, wz = (hi[:, 2], frac[:, 2]) if cz else (lo[:, 2], 1 - frac[:, 2])
                cols[:, k] = (ix * res[1] + iy) * res[2] + iz
                wts[:, k] = wx * wy * wz
                k += 1
    indptr = np.arange(0, 8 * m + 1, 8)
    return sp.csr_matrix((wts.ravel(), cols.ravel(), indptr), shape=(m, int(np.prod(res))))


# ---------------------------------------------------------------------------
# Cameras and rays


@dataclass
class Pose:
    rotation: np.ndarray
    translation: np.ndarray
    focal: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = self.rotation
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, focal: float, width: int, height: int,
                cx: float | None = None, cy: float | None = None) -> "Pose":
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-12:
            raise ValueError("up vector is parallel to the viewing direction")
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd], axis=1)
        return cls(rot, eye, float(focal), width / 2.0 if cx is None else cx,
                   height / 2.0 if cy is None else cy, int(width), int(height))

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def matrix_3x4(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation[:, None]], axis=1)

    def to_dict(self) -> dict:
        return {"c2w": self.matrix_3x4().ravel().tolist(), "focal": self.focal, "cx": self.cx,
                "cy": self.cy, "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        m = np.asarray(d["c2w"], dtype=np.float64).reshape(3, 4)
        return cls(m[:, :3], m[:, 3], d["focal"], d["cx"], d["cy"], d["width"], d["height"])

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """World points -> (continuous pixel coords (x, y), depth along the optical axis)."""
        p = np.atleast_2d(np.asarray(points, float))
        cam = (p - self.translation) @ self.rotation
        z = cam[:, 2]
        xy = np.stack([self.focal * cam[:, 0] / z + self.cx, self.focal * cam[:, 1] / z + self.cy], axis=1)
        return xy, z

    def unproject(self, xy, depth) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, float))
        depth = np.asarray(depth, float).reshape(-1)
        cam = np.stack([(xy[:, 0] - self.cx) / self.focal * depth,
                        (xy[:, 1] - self.cy) / self.focal * depth, depth], axis=1)
        return cam @ self.rotation.T + self.translation


@dataclass
class RayBatch:
    origins: np.ndarray
    directions: np.ndarray
    pixel_ids: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __len__(self) -> int:
        return self.origins.shape[0]


def _rays_from_xy(pose: Pose, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cam = np.stack([(xy[:, 0] - pose.cx) / pose.focal, (xy[:, 1] - pose.cy) / pose.focal,
                    np.ones(len(xy))], axis=1)
    d = cam @ pose.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(pose.translation, d.shape).copy()
    return o, d


def generate_rays(pose: Pose, pixels) -> RayBatch:
    """One ray per ``(row, col)`` pixel, through the pixel centre."""
    pix = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if np.any(pix < 0) or np.any(pix[:, 0] >= pose.height) or np.any(pix[:, 1] >= pose.width):
        raise IndexError(f"pixel outside {pose.height}x{pose.width} image")
    xy = np.stack([pix[:, 1] + 0.5, pix[:, 0] + 0.5], axis=1).astype(np.float64)
    o, d = _rays_from_xy(pose, xy)
    return RayBatch(o, d, pix)


def image_pixels(height: int, width: int) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def image_rays(pose: Pose) -> RayBatch:
    return generate_rays(pose, image_pixels(pose.height, pose.width))


def rays_through_points(pose: Pose, points) -> RayBatch:
    """Rays from the camera centre through arbitrary world points."""
    xy, _ = pose.project(points)
    o, d = _rays_from_xy(pose, xy)
    return RayBatch(o, d, np.zeros((len(o), 2), dtype=np.int64))


# ---------------------------------------------------------------------------
# Volume rendering


def ray_box_intersect(rays: RayBatch, bbox_min, bbox_max) -> tuple[np.ndarray, np.ndarray]:
    """Slab test; rays that miss get ``tnear == tfar == 0``."""
    d = rays.directions
    if np.any(np.linalg.norm(d, axis=1) < 1e-12):
        raise ValueError("degenerate ray with zero direction")
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (bbox_min - rays.origins) * inv
        t1 = (bbox_max - rays.origins) * inv
    t0 = np.nan_to_num(t0, nan=-np.inf)
    t1 = np.nan_to_num(t1, nan=np.inf)
    tnear = np.max(np.minimum(t0, t1), axis=1)
    tfar = np.min(np.maximum(t0, t1), axis=1)
    tnear = np.maximum(tnear, 0.0)
    hit = tfar > tnear
    return np.where(hit, tnear, 0.0), np.where(hit, tfar, 0.0)


@dataclass
class RenderResult:
    color: Tensor            # (N, 3) composited colour
    weights: Tensor          # (N, S) compositing weights
    sample_colors: Tensor    # (N, S, 3) per-sample colour (LDR for a learned field)
    acc: Tensor              # (N,) sum of weights
    t: np.ndarray            # (N, S) sample distances
    background: np.ndarray   # (3,) background used for this render

    @property
    def depth(self) -> np.ndarray:
        w = self.weights.data
        return (w * self.t).sum(axis=1) / np.maximum(w.sum(axis=1), 1e-12)


def sample_distances(rays: RayBatch, bbox_min, bbox_max, n_samples: int,
                     rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stratified distances (N, S) and the bin width (N, S).

    Without ``rng`` every bin is sampled at its midpoint.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    tnear, tfar = ray_box_intersect(rays, bbox_min, bbox_max)
    width = (tfar - tnear) / n_samples
    if rng is None:
        jitter = np.full((len(rays), n_samples), 0.5)
    else:
        jitter = rng.random((len(rays), n_samples))
    t = tnear[:, None] + (np.arange(n_samples)[None, :] + jitter) * width[:, None]
    return t, np.repeat(width[:, None], n_samples, axis=1)


def composite_weights(sigma: Tensor, delta: np.ndarray) -> Tensor:
    """w_i = T_i (1 - exp(-sigma_i delta_i)),  T_i = exp(-sum_{j<i} sigma_j delta_j)."""
    sd = dc.mul(sigma, Tensor(delta))
    alpha = dc.sub(1.0, dc.exp(dc.neg(sd)))
    trans = dc.exp(dc.neg(dc.cumsum(sd, axis=1, exclusive=True)))
    return dc.mul(trans, alpha)


def _composite(weights: Tensor, acc: Tensor, colors: Tensor, background: Tensor) -> Tensor:
    n, s = weights.shape
    w3 = dc.broadcast_to(dc.reshape(weights, (n, s, 1)), (n, s, 3))
    fg = dc.sum_(dc.mul(w3, colors), axis=1)
    rest = dc.broadcast_to(dc.reshape(dc.sub(1.0, acc), (n, 1)), (n, 3))
    bg = dc.broadcast_to(dc.reshape(background, (1, 3)), (n, 3))
    return dc.add(fg, dc.mul(rest, bg))


def render_ldr(field: VoxelField, rays: RayBatch, n_samples: int, *, params: dict | None = None,
               background=(0.0, 0.0, 0.0), rng: np.random.Generator | None = None) -> RenderResult:
    """Composite the field's colour along each ray.

    ``params`` optionally replaces the field's raw arrays with taped tensors
    (keys ``density`` and ``color``) so the render is differentiable.
    """
    t, delta = sample_distances(rays, field.bbox_min, field.bbox_max, n_samples, rng)
    pts = rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]
    a = interpolation_matrix(pts.reshape(-1, 3), field.resolution, field.bbox_min, field.bbox_max)
    sigma, rgb = field._query_with(a, params)
    n = len(rays)
    sigma = dc.reshape(sigma, (n, n_samples))
    rgb = dc.reshape(rgb, (n, n_samples, 3))
    weights = composite_weights(sigma, delta)
    acc = dc.sum_(weights, axis=1)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    color = _composite(weights, acc, rgb, Tensor(bg))
    return RenderResult(color, weights, rgb, acc, t, bg)


def composite_hdr(ldr: RenderResult, converter: Callable[[Tensor], Tensor]) -> Tensor:
    """Lift every sample colour with ``converter`` and re-composite with the same weights.

    The background is lifted by the same converter.
    """
    n, s = ldr.weights.shape
    lifted = converter(dc.reshape(ldr.sample_colors, (n * s, 3)))
    lifted = dc.reshape(lifted, (n, s, 3))
    bg = dc.reshape(converter(Tensor(ldr.background.reshape(1, 3))), (3,))
    return _composite(ldr.weights, ldr.acc, lifted, bg)


def render_hdr(field: VoxelField, rays: RayBatch, n_samples: int, converter, *,
               params: dict | None = None, background=(0.0, 0.0, 0.0),
               rng: np.random.Generator | None = None) -> tuple[Tensor, RenderResult]:
    """HDR render sharing geometry with :func:`render_ldr`; returns (hdr colour, ldr result)."""
    ldr = render_ldr(field, rays, n_samples, params=params, background=background, rng=rng)
    return composite_hdr(ldr, converter), ldr


def render_image(field: VoxelField, pose: Pose, n_samples: int, converter=None, *,
                 background=(0.0, 0.0, 0.0), chunk: int = 4096) -> dict[str, np.ndarray]:
    """Full-image forward render (no tape).  Returns ``ldr``, ``acc``, ``depth`` and ``hdr`` if a converter is given."""
    rays = image_rays(pose)
    out: dict[str, list] = {"ldr": [], "acc": [], "depth": [], "hdr": []}
    for s in range(0, len(rays), chunk):
        sub = RayBatch(rays.origins[s:s + chunk], rays.directions[s:s + chunk], rays.pixel_ids[s:s + chunk])
        res = render_ldr(field, sub, n_samples, background=background)
        out["ldr"].append(res.color.data)
        out["acc"].append(res.acc.data)
        out["depth"].append(res.depth)
        if converter is not None:
            out["hdr"].append(composite_hdr(res, converter).data)
    h, w = pose.height, pose.width
    img = {"ldr": np.concatenate(out["ldr"]).reshape(h, w, 3),
           "acc": np.concatenate(out["acc"]).reshape(h, w),
           "depth": np.concatenate(out["depth"]).reshape(h, w)}
    if converter is not None:
        img["hdr"] = np.concatenate(out["hdr"]).reshape(h, w, 3)
    return img
