"""Training losses and image-quality metrics.

Images are ``(H, W, C)`` or a stack ``(P, H, W, C)``; losses accept numpy arrays
or taped tensors for the prediction.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class DegenerateNormalizationWarning(UserWarning):
    """Min-max normalisation of a constant image; the output is all zeros."""


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.6
    beta: float = 0.05
    lam: float = 0.2
    mu: float = 5000.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.lam) < 0:
            raise ValueError(f"loss weights must be >= 0: {self}")
        if not self.mu > 0:
            raise ValueError("mu must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _same_shape(kind, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise dc.ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# SSIM


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


@lru_cache(maxsize=32)
def _filter_matrix(n: int) -> np.ndarray:
    """(n - 10, n) matrix applying the 1-D Gaussian in 'valid' mode."""
    if n < SSIM_WINDOW:
        raise dc.ShapeError(f"ssim: image side {n} smaller than the {SSIM_WINDOW}-pixel window")
    g = gaussian_window()
    m = np.zeros((n - SSIM_WINDOW + 1, n))
    for i in range(m.shape[0]):
        m[i, i:i + SSIM_WINDOW] = g
    return m


def _as_stack(x: Tensor) -> Tensor:
    if x.data.ndim == 3:
        return dc.reshape(x, (1,) + x.shape)
    if x.data.ndim != 4:
        raise dc.ShapeError(f"expected (H, W, C) or (P, H, W, C) image, got {x.shape}")
    return x


def _blur(x: Tensor, kh: np.ndarray, kwt: np.ndarray) -> Tensor:
    """x: (B, H, W) -> (B, H', W') separable Gaussian filtering."""
    b = x.shape[0]
    left = Tensor(np.broadcast_to(kh, (b,) + kh.shape))
    right = Tensor(np.broadcast_to(kwt, (b,) + kwt.shape))
    return dc.matmul(dc.matmul(left, x), right)


def ssim_map(pred, gt) -> Tensor:
    """Per-window SSIM values, shape (P * C, H - 10, W - 10)."""
    pred, gt = dc.as_tensor(pred), dc.as_tensor(gt)
    _same_shape("ssim", pred, gt)
    x, y = _as_stack(pred), _as_stack(gt)
    p, h, w, c = x.shape
    kh, kwt = _filter_matrix(h), _filter_matrix(w).T
    # channels become batch entries
    xb = dc.reshape(dc.transpose(x, (0, 3, 1, 2)), (p * c, h, w))
    yb = dc.reshape(dc.transpose(y, (0, 3, 1, 2)), (p * c, h, w))
    mx, my = _blur(xb, kh, kwt), _blur(yb, kh, kwt)
    mx2, my2, mxy = dc.square(mx), dc.square(my), dc.mul(mx, my)
    sxx = dc.sub(_blur(dc.square(xb), kh, kwt), mx2)
    syy = dc.sub(_blur(dc.square(yb), kh, kwt), my2)
    sxy = dc.sub(_blur(dc.mul(xb, yb), kh, kwt), mxy)
    num = dc.mul(dc.add(dc.mul(2.0, mxy), SSIM_C1), dc.add(dc.mul(2.0, sxy), SSIM_C2))
    den = dc.mul(dc.add(dc.add(mx2, my2), SSIM_C1), dc.add(dc.add(sxx, syy), SSIM_C2))
    return dc.div(num, den)


def ssim_t(pred, gt) -> Tensor:
    return dc.mean(ssim_map(pred, gt))


def ssim(pred, gt) -> float:
    return float(ssim_t(np.asarray(pred, float), np.asarray(gt, float)).data)


def dssim(pred, gt) -> Tensor:
    return dc.mul(dc.sub(1.0, ssim_t(pred, gt)), 0.5)


# ---------------------------------------------------------------------------
# Losses


def l1(pred, gt) -> Tensor:
    pred, gt = dc.as_tensor(pred), dc.as_tensor(gt)
    _same_shape("l1", pred, gt)
    return dc.mean(dc.abs_(dc.sub(pred, gt)))


def mse(pred, gt) -> Tensor:
    pred, gt = dc.as_tensor(pred), dc.as_tensor(gt)
    _same_shape("mse", pred, gt)
    return dc.mean(dc.square(dc.sub(pred, gt)))


def ldr_loss(pred, gt, lam: float = 0.2, mode: str = "l1+dssim") -> Tensor:
    """L1 + lam * D-SSIM, or plain MSE when ``mode == 'mse'``."""
    pred, gt = dc.as_tensor(pred), dc.as_tensor(gt)
    _same_shape("ldr_loss", pred, gt)
    if mode == "mse":
        return mse(pred, gt)
    if mode != "l1+dssim":
        raise ValueError(f"unknown loss mode {mode!r}")
    loss = l1(pred, gt)
    if lam:
        loss = dc.add(loss, dc.mul(lam, dssim(pred, gt)))
    return loss


def h2l_loss(pred_ldr_from_hdr, gt_ldr, lam: float = 0.2, mode: str = "l1+dssim") -> Tensor:
    """Closed-loop term: same contract as :func:`ldr_loss`."""
    return ldr_loss(pred_ldr_from_hdr, gt_ldr, lam, mode)


def _minmax(x: Tensor, stop_grad: bool) -> tuple[Tensor, Tensor]:
    if stop_grad:
        return Tensor(np.min(x.data)), Tensor(np.max(x.data))
    return dc.min_(x), dc.max_(x)


def mulaw_tonemap(img, mu: float = 5000.0, *, stop_grad: bool = True, ref=None) -> Tensor:
    """log(1 + mu * norm(img)) / log(1 + mu) with min-max normalisation.

    The min and max come from ``img`` itself, or from ``ref`` when given
    (values below ``ref``'s minimum are then clamped to 0).  A constant image
    maps to zeros and raises :class:`DegenerateNormalizationWarning`.
    """
    img = dc.as_tensor(img)
    src = img if ref is None else dc.as_tensor(ref)
    lo, hi = _minmax(src, stop_grad or ref is not None)
    span = float(hi.data - lo.data)
    if span <= 0:
        warnings.warn("constant image in min-max normalisation", DegenerateNormalizationWarning, stacklevel=2)
        return dc.mul(img, 0.0)
    n = dc.div(dc.sub(img, lo), dc.sub(hi, lo))
    if ref is not None:
        n = dc.clamp(n, 0.0, None)
    return dc.mul(dc.log(dc.add(1.0, dc.mul(mu, n))), 1.0 / math.log1p(mu))


def hdr_loss(pred, gt, mu: float = 5000.0, *, stop_grad: bool = True,
             shared_norm: bool = False, mode: str = "mulaw") -> Tensor:
    """MSE between mu-law tonemapped images (each normalised by its own min/max).

    With ``shared_norm`` the prediction is normalised by the ground truth's
    range instead.  ``mode == 'mse'`` compares raw HDR values.
    """
    pred, gt = dc.as_tensor(pred), dc.as_tensor(gt)
    _same_shape("hdr_loss", pred, gt)
    if mode == "mse":
        return mse(pred, gt)
    tg = mulaw_tonemap(gt, mu, stop_grad=True)
    tp = mulaw_tonemap(pred, mu, stop_grad=stop_grad, ref=gt if shared_norm else None)
    return mse(tp, tg)


def total_loss(ldr: Tensor | None, hdr: Tensor | None, h2l: Tensor | None,
               weights: LossWeights) -> Tensor:
    """ldr + alpha * hdr + beta * h2l; absent terms are skipped."""
    if min(weights.alpha, weights.beta) < 0:
        raise ValueError("negative loss weight")
    total = None
    for term, w in ((ldr, 1.0), (hdr, weights.alpha), (h2l, weights.beta)):
        if term is None:
            continue
        part = term if w == 1.0 else dc.mul(w, term)
        total = part if total is None else dc.add(total, part)
    if total is None:
        raise ValueError("total_loss needs at least one term")
    return total


# ---------------------------------------------------------------------------
# Metrics


def psnr(pred, gt, peak: float = 1.0) -> float:
    pred, gt = np.asarray(pred, float), np.asarray(gt, float)
    if pred.shape != gt.shape:
        raise dc.ShapeError(f"psnr: shape mismatch {pred.shape} vs {gt.shape}")
    err = float(np.mean((pred - gt) ** 2))
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / err)


def tonemap_np(img, mu: float = 5000.0) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateNormalizationWarning)
        return mulaw_tonemap(np.asarray(img, float), mu).data


def psnr_hdr(pred, gt, mu: float = 5000.0) -> float:
    return psnr(tonemap_np(pred, mu), tonemap_np(gt, mu), 1.0)


def ssim_hdr(pred, gt, mu: float = 5000.0) -> float:
    return ssim(tonemap_np(pred, mu), tonemap_np(gt, mu))
