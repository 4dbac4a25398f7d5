"""Binary PPM (P6) and PFM readers/writers.

PPM stores 8-bit LDR images: values in [0, 1] are scaled by 255 and rounded
half-up.  PFM stores float32 HDR images little-endian (scale -1.0) with rows
written bottom-to-top as the format requires.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


def quantize8(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def _read_token(f) -> bytes:
    tok = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise ValueError("unexpected end of file in header")
        if ch == b"#":
            f.readline()
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def write_ppm(path, img) -> None:
    """Write an (H, W, 3) float image in [0, 1] (or uint8) as binary PPM."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) image, got {arr.shape}")
    data = arr if arr.dtype == np.uint8 else quantize8(arr)
    h, w, _ = data.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(data).tobytes())


def read_ppm(path, as_float: bool = True) -> np.ndarray:
    with open(path, "rb") as f:
        if _read_token(f) != b"P6":
            raise ValueError(f"{path}: not a binary PPM")
        w, h, maxval = int(_read_token(f)), int(_read_token(f)), int(_read_token(f))
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 is supported")
        raw = f.read(w * h * 3)
    if len(raw) != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return data.astype(np.float64) / 255.0 if as_float else data.copy()


def write_pfm(path, img) -> None:
    arr = np.asarray(img, dtype="<f4")
    if arr.ndim == 3 and arr.shape[2] == 3:
        tag = "PF"
    elif arr.ndim == 2:
        tag = "Pf"
    else:
        raise ValueError(f"PFM needs (H, W, 3) or (H, W), got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{tag}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        tag = _read_token(f)
        if tag not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = int(_read_token(f)), int(_read_token(f))
        scale = float(_read_token(f))
        ch = 3 if tag == b"PF" else 1
        raw = f.read()
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, count=w * h * ch)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


def read_image(path: str | Path) -> np.ndarray:
    return read_pfm(path) if str(path).endswith(".pfm") else read_ppm(path)
