"""Linear LDR image formation with a saturation ceiling.

Forward model, per pixel and channel::

    ldr = min(dt / g * hdr + i0 + eps, i_max)      (then clamped below at 0)

The excess lost to the ceiling is the *overflow*; with it the forward model
becomes the affine split ``ldr = D + B`` with ``D = dt/g * hdr`` and
``B = i0 + eps - overflow``, and is exactly invertible.  These closed forms are
what the learned converters are checked against.

All functions accept scalars or arrays and broadcast like numpy.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

DEFAULT_LADDER = (0.125, 0.25, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class CameraParams:
    delta_t: float = 1.0
    g: float = 1.0
    i0: float = 0.0
    i_max: float = 1.0
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be > 0, got {self.delta_t}")
        if not self.g > 0:
            raise ValueError(f"g must be > 0, got {self.g}")
        if not (self.i_max > self.i0 >= 0):
            raise ValueError(f"need i_max > i0 >= 0, got i0={self.i0}, i_max={self.i_max}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def gain(self) -> float:
        """Forward scale dt/g."""
        return self.delta_t / self.g

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraParams":
        return cls(**d)


@dataclass(frozen=True)
class ExposureLadder:
    times: tuple[float, ...] = field(default=DEFAULT_LADDER)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError(f"exposure times must be positive and strictly increasing: {self.times}")
        object.__setattr__(self, "times", tuple(float(x) for x in t))

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, i: int) -> float:
        return self.times[i]


def _check_hdr(hdr) -> np.ndarray:
    hdr = np.asarray(hdr, dtype=np.float64)
    if not np.all(np.isfinite(hdr)):
        raise ValueError("hdr must be finite")
    if np.any(hdr < 0):
        raise ValueError("hdr must be >= 0")
    return hdr


def draw_noise(shape, params: CameraParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """Zero-mean Gaussian sensor noise, one draw per pixel and channel."""
    if params.noise_sigma == 0:
        return np.zeros(shape)
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    return rng.normal(0.0, params.noise_sigma, size=shape)


def ideal_response(hdr, params: CameraParams, noise=0.0) -> np.ndarray:
    """What an unbounded sensor would record."""
    return params.gain * _check_hdr(hdr) + params.i0 + noise


def simulate_ldr(hdr, params: CameraParams, noise=0.0) -> np.ndarray:
    ideal = ideal_response(hdr, params, noise)
    return np.clip(np.minimum(ideal, params.i_max), 0.0, None)


def overflow(hdr, params: CameraParams, noise=0.0) -> np.ndarray:
    """Signal lost above the ceiling; exactly 0 on unsaturated pixels."""
    return np.maximum(ideal_response(hdr, params, noise) - params.i_max, 0.0)


def is_saturated(hdr, params: CameraParams, noise=0.0) -> np.ndarray:
    return ideal_response(hdr, params, noise) > params.i_max


def ldr_to_hdr_ideal(ldr, params: CameraParams, overflow_value=0.0, noise=0.0) -> np.ndarray:
    """Algebraic inverse of :func:`simulate_ldr` given the true overflow and noise."""
    ldr = np.asarray(ldr, dtype=np.float64)
    inv = 1.0 / params.gain
    return inv * (ldr - params.i0 + overflow_value) - inv * noise


def hdr_to_ldr_terms(hdr, params: CameraParams, noise=0.0) -> tuple[np.ndarray, np.ndarray]:
    """The (scale, offset) split of the forward model; ``D + B == simulate_ldr``.

    Where the noisy response would fall below 0 the offset also absorbs the
    lower clamp, so the identity holds on every input.
    """
    d = params.gain * _check_hdr(hdr)
    b = params.i0 + noise - overflow(hdr, params, noise)
    below = d + b < 0
    if np.any(below):
        b = np.where(below, -d, b)
    return d, b


def saturation_ceiling_hdr(params: CameraParams) -> float:
    """Largest HDR value that still maps below the ceiling (noise-free)."""
    return (params.i_max - params.i0) / params.gain
