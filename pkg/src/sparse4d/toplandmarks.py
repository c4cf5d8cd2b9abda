"""Three-orthogonal-plane landmark descriptor.

Landmarks are projected onto the XY, XZ, and YZ planes; each projection is
centered on its centroid and scaled so the farthest point sits at radius 1;
the descriptor concatenates the per-point radii, one block per plane.
Centering and max-radius scaling make the descriptor invariant to
translation and uniform scaling of the input.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateConfigurationError, MalformedFileError
from .geometry import LandmarkSet

PLANES = ("XY", "XZ", "YZ")
_PLANE_AXES = {"XY": (0, 1), "XZ": (0, 2), "YZ": (1, 2)}


@dataclass(frozen=True)
class PlanarProjection:
    points: np.ndarray
    plane: str

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2:
            raise ValueError(f"projection must be (m, 2), got {p.shape}")
        if self.plane not in PLANES:
            raise ValueError(f"unknown plane {self.plane!r}")
        p = np.ascontiguousarray(p)
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class TopDescriptor:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size % 3 != 0 or v.size == 0:
            raise ValueError("descriptor length must be a positive multiple of 3")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("descriptor entries must lie in [0, 1]")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def landmark_count(self) -> int:
        return self.values.size // 3


def project_landmarks(
    lm: LandmarkSet,
) -> tuple[PlanarProjection, PlanarProjection, PlanarProjection]:
    """Drop one coordinate per plane: XY drops z, XZ drops y, YZ drops x."""
    return tuple(
        PlanarProjection(lm.points[:, list(_PLANE_AXES[plane])], plane)
        for plane in PLANES
    )


def normalize_projection(p: PlanarProjection) -> PlanarProjection:
    """Center on the centroid and scale so the farthest point has norm 1."""
    if p.count < 2:
        raise ValueError("normalization needs at least 2 points")
    centered = p.points - p.points.mean(axis=0)
    radii = np.linalg.norm(centered, axis=1)
    rmax = radii.max()
    if rmax == 0.0:
        raise DegenerateConfigurationError(
            f"all {p.plane} projections coincide; no scale reference"
        )
    return PlanarProjection(centered / rmax, p.plane)


def _radial_block(points_2d: np.ndarray, plane: str) -> np.ndarray:
    # radii are scaled directly (rather than via scaled coordinates) so the
    # farthest point lands at exactly 1.0
    centered = points_2d - points_2d.mean(axis=0)
    radii = np.linalg.norm(centered, axis=1)
    rmax = radii.max()
    if rmax == 0.0:
        raise DegenerateConfigurationError(
            f"all {plane} projections coincide; no scale reference"
        )
    return radii / rmax


def top_descriptor(lm: LandmarkSet) -> TopDescriptor:
    """Concatenated per-point radii in plane order XY, XZ, YZ (length 3m)."""
    blocks = [
        _radial_block(lm.points[:, list(_PLANE_AXES[plane])], plane)
        for plane in PLANES
    ]
    return TopDescriptor(np.concatenate(blocks))


def descriptor_sequence(landmark_sets) -> np.ndarray:
    """Stack one descriptor per frame into a (T, 3m) array."""
    rows = [top_descriptor(lm).values for lm in landmark_sets]
    return np.stack(rows)


# --------------------------------------------------------------------------
# CSV serialization: one row per frame, header top_0..top_{3m-1}

def write_descriptor_csv(rows: np.ndarray, path: str | Path) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"top_{k}" for k in range(rows.shape[1])) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_descriptor_csv(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header != [f"top_{k}" for k in range(len(header))]:
            raise MalformedFileError(f"{path}: bad descriptor header")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(header):
                raise MalformedFileError(f"{path}:{lineno}: column count mismatch")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise MalformedFileError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise MalformedFileError(f"{path}: no descriptor rows")
    return np.array(rows)
