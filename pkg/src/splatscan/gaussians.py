"""Isotropic Gaussian splat map: container, growth, and binary PLY round-trip.

Each splat is (center, rgb color, radius, opacity) — isotropic footprint and
view-independent color, so a splat renders identically from every direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_PLY_PROPS = ("x", "y", "z", "red", "green", "blue", "radius", "opacity")


@dataclass
class GaussianMap:
    """Column store of N isotropic splats."""

    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    opacities: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        n = self.centers.shape[0]
        if not (self.colors.shape[0] == self.radii.shape[0] == self.opacities.shape[0] == n):
            raise ValueError("splat attribute arrays disagree on length")
        self.validate()

    def __len__(self) -> int:
        return self.centers.shape[0]

    def validate(self) -> None:
        if len(self) == 0:
            return
        if not np.isfinite(self.centers).all():
            raise ValueError("non-finite splat center")
        if self.radii.min() <= 0.0 or not np.isfinite(self.radii).all():
            raise ValueError("splat radii must be positive and finite")
        if self.colors.min() < 0.0 or self.colors.max() > 1.0:
            raise ValueError("splat colors must lie in [0, 1]")
        if self.opacities.min() < 0.0 or self.opacities.max() > 1.0:
            raise ValueError("splat opacities must lie in [0, 1]")

    def append(self, centers: np.ndarray, colors: np.ndarray, radii: np.ndarray,
               opacities: np.ndarray) -> None:
        add = GaussianMap(centers, colors, radii, opacities)
        self.centers = np.concatenate([self.centers, add.centers])
        self.colors = np.concatenate([self.colors, add.colors])
        self.radii = np.concatenate([self.radii, add.radii])
        self.opacities = np.concatenate([self.opacities, add.opacities])

    def copy(self) -> "GaussianMap":
        return GaussianMap(
            self.centers.copy(), self.colors.copy(), self.radii.copy(), self.opacities.copy()
        )

    def point_cloud(self, min_opacity: float = 0.5) -> np.ndarray:
        """Map point cloud: centers of splats with opacity above the threshold."""
        return self.centers[self.opacities > min_opacity].copy()

    # ------------------------------------------------------------ serialization

    def save_ply(self, path: str | Path) -> None:
        """Binary little-endian PLY, one float32 vertex per splat."""
        n = len(self)
        header = (
            "ply\n"
            "format binary_little_endian 1.0\n"
            f"element vertex {n}\n"
            + "".join(f"property float {p}\n" for p in _PLY_PROPS)
            + "end_header\n"
        )
        body = np.empty((n, 8), dtype="<f4")
        body[:, 0:3] = self.centers
        body[:, 3:6] = self.colors
        body[:, 6] = self.radii
        body[:, 7] = self.opacities
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(body.tobytes())

    @classmethod
    def load_ply(cls, path: str | Path) -> "GaussianMap":
        with open(path, "rb") as fh:
            raw = fh.read()
        end = raw.find(b"end_header\n")
        if end < 0:
            raise ValueError(f"{path}: not a PLY file")
        header = raw[:end].decode("ascii").splitlines()
        if header[0] != "ply" or "format binary_little_endian 1.0" not in header[1]:
            raise ValueError(f"{path}: expected binary little-endian PLY")
        n = None
        props = []
        for line in header:
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line.startswith("property float"):
                props.append(line.split()[-1])
        if n is None or tuple(props) != _PLY_PROPS:
            raise ValueError(f"{path}: unexpected PLY layout {props}")
        body = np.frombuffer(raw[end + len(b"end_header\n"):], dtype="<f4")
        if body.size != n * 8:
            raise ValueError(f"{path}: body has {body.size} floats, expected {n * 8}")
        body = body.reshape(n, 8).astype(np.float64)
        return cls(body[:, 0:3], np.clip(body[:, 3:6], 0.0, 1.0),
                   body[:, 6], np.clip(body[:, 7], 0.0, 1.0))
