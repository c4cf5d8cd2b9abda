"""Deterministic per-image feature vectors: block means plus block
gradient-orientation histograms, padded and L2-normalized.

This stands in for a pretrained-network embedding; anything that maps a
raster to a fixed-length vector can replace `extract` behind the same
signature.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import STANDARD_WEIGHTS, luminance
from .errors import ImageTooSmallError, MalformedFileError
from .render import RasterImage


@dataclass(frozen=True)
class ExtractorConfig:
    grid: int = 8
    orientation_bins: int = 7
    pad_to: int = 512

    def __post_init__(self):
        if self.grid < 2:
            raise ValueError("grid must be >= 2")
        if self.orientation_bins < 2:
            raise ValueError("orientation_bins must be >= 2")
        raw = self.grid * self.grid * (self.orientation_bins + 1)
        if self.pad_to < raw:
            raise ValueError(f"pad_to must be >= {raw}")


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 1:
            raise ValueError("feature vector must be 1-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def _gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences on the interior; zero at the image border."""
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[:, 1:-1] = (gray[:, 2:] - gray[:, :-2]) / 2.0
    gy[1:-1, :] = (gray[2:, :] - gray[:-2, :]) / 2.0
    return gx, gy


def block_features(gray: np.ndarray, cfg: ExtractorConfig) -> np.ndarray:
    """Per-block rows [mean, orientation histogram]; no padding, no norm.

    Orientations are unsigned (folded into [0, pi)); histograms are
    magnitude-weighted and L1-normalized, all-zero for flat blocks.
    """
    G, bins = cfg.grid, cfg.orientation_bins
    K = gray.shape[0]
    if K < G:
        raise ImageTooSmallError(f"need at least {G}x{G} pixels, got {K}x{K}")
    gx, gy = _gradients(gray)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    bin_idx = np.minimum((theta / np.pi * bins).astype(np.int64), bins - 1)

    side = K // G
    rows = np.empty((G * G, 1 + bins))
    for bi in range(G):
        for bj in range(G):
            rs = slice(bi * side, (bi + 1) * side)
            cs = slice(bj * side, (bj + 1) * side)
            block_mag = mag[rs, cs].ravel()
            hist = np.bincount(
                bin_idx[rs, cs].ravel(), weights=block_mag, minlength=bins
            )
            total = hist.sum()
            if total > 0:
                hist = hist / total
            rows[bi * G + bj, 0] = gray[rs, cs].mean()
            rows[bi * G + bj, 1:] = hist
    return rows


def extract(img: RasterImage, cfg: ExtractorConfig = ExtractorConfig(), source: str = "") -> FeatureVector:
    """Length-pad_to descriptor of one raster; unit L2 norm unless all-zero."""
    gray = luminance(img, STANDARD_WEIGHTS).data if img.channels == 3 else img.data
    raw = block_features(gray, cfg).ravel()
    out = np.zeros(cfg.pad_to)
    out[: raw.size] = raw
    norm = np.linalg.norm(out)
    if norm > 0:
        out = out / norm
    return FeatureVector(out, source=source)


def extract_sequence(images, cfg: ExtractorConfig = ExtractorConfig(), source: str = "") -> np.ndarray:
    """Stack per-frame features into a (T, pad_to) array."""
    return np.stack([extract(img, cfg, source).values for img in images])


# --------------------------------------------------------------------------
# CSV serialization: one row per frame, header x_0..x_{P-1}

def write_feature_csv(rows: np.ndarray, path: str | Path) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"x_{k}" for k in range(rows.shape[1])) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_feature_csv(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header != [f"x_{k}" for k in range(len(header))]:
            raise MalformedFileError(f"{path}: bad feature header")
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
        raise MalformedFileError(f"{path}: no feature rows")
    return np.array(rows)
