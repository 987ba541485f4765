"""Flat binary container for displacement fields.

Layout: 16-byte header (magic ``HRFLOW1\\0``, u32 H, u32 W, little-endian)
followed by H*W*2 little-endian float32 values in (dy, dx) row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from .errors import DimensionError

MAGIC = b"HRFLOW1\x00"
_HEADER = struct.Struct("<8sII")

__all__ = ["write_flow", "read_flow", "MAGIC"]


def write_flow(path: str | Path, field: torch.Tensor | np.ndarray, layout: str = "chw") -> None:
    """Write a single (unbatched) field.

    ``layout="chw"`` (default, the package convention) expects (2, H, W);
    ``layout="hwc"`` expects (H, W, 2).
    """
    arr = field.detach().cpu().numpy() if torch.is_tensor(field) else np.asarray(field)
    if arr.ndim != 3:
        raise DimensionError(f"expected a 3D field, got shape {arr.shape}")
    if layout == "chw":
        if arr.shape[0] != 2:
            raise DimensionError(f"chw field must have 2 leading channels, got {arr.shape}")
        arr = np.moveaxis(arr, 0, -1)
    elif layout == "hwc":
        if arr.shape[-1] != 2:
            raise DimensionError(f"hwc field must have 2 trailing channels, got {arr.shape}")
    else:
        raise DimensionError(f"unknown layout {layout!r}")
    H, W = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, H, W))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_flow(path: str | Path) -> torch.Tensor:
    """Read a field written by :func:`write_flow`; returns (2, H, W) float32."""
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise DimensionError(f"{path}: truncated header")
        magic, H, W = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DimensionError(f"{path}: bad magic {magic!r}")
        payload = f.read(H * W * 2 * 4)
    if len(payload) != H * W * 2 * 4:
        raise DimensionError(f"{path}: truncated payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(H, W, 2)
    return torch.from_numpy(np.moveaxis(arr, -1, 0).copy())
