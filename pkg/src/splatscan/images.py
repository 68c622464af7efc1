"""PNG image I/O: 8-bit color and 16-bit millimeter depth."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

DEPTH_SCALE_MM = 1000.0  # stored depth unit: millimeters
_MAX_U16 = 65535


def save_color_png(path: str | Path, color: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit RGB."""
    arr = np.clip(np.asarray(color, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="RGB").save(path)


def load_color_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def save_depth_png(path: str | Path, depth: np.ndarray) -> None:
    """Write an (H, W) float meter depth map as 16-bit millimeters (0 = no return)."""
    mm = np.round(np.asarray(depth, dtype=np.float64) * DEPTH_SCALE_MM)
    Image.fromarray(np.clip(mm, 0, _MAX_U16).astype(np.uint16)).save(path)


def load_depth_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.float64) / DEPTH_SCALE_MM
