"""Orthographic point-splat rendering of meshes into texture and depth rasters,
plus contrast-limited adaptive histogram equalization for depth sharpening.

All rasters are square, float64, with intensities in [0, 1].  Uncovered
pixels are 0; the z-buffer keeps the vertex nearest the viewer (largest z).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateExtentError,
    ImageTooSmallError,
    MalformedFileError,
    MissingColorsError,
)
from .geometry import Mesh


@dataclass(frozen=True)
class RasterImage:
    """Square K x K image; data is (K, K) for 1 channel or (K, K, 3) for 3."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            pass
        elif d.ndim == 3 and d.shape[2] == 3:
            pass
        else:
            raise ValueError(f"raster must be (K,K) or (K,K,3), got {d.shape}")
        if d.shape[0] != d.shape[1]:
            raise ValueError("raster must be square")
        if d.size == 0:
            raise ValueError("raster must be nonempty")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        d = np.ascontiguousarray(d)
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


@dataclass(frozen=True)
class ClaheConfig:
    tiles_per_side: int = 8
    clip_limit: float = 0.01
    bins: int = 256

    def __post_init__(self):
        if self.tiles_per_side < 1:
            raise ValueError("tiles_per_side must be >= 1")
        if not (0.0 < self.clip_limit <= 1.0):
            raise ValueError("clip_limit must lie in (0, 1]")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")


# --------------------------------------------------------------------------
# rasterization

def _viewport_or_bounds(
    mesh: Mesh, viewport: tuple[float, float, float] | None
) -> tuple[float, float, float]:
    if viewport is not None:
        cx, cy, side = (float(v) for v in viewport)
        if not (np.isfinite(cx) and np.isfinite(cy) and np.isfinite(side)) or side <= 0:
            raise DegenerateExtentError(f"bad explicit viewport {viewport!r}")
        return cx, cy, side
    v = mesh.vertices
    lo = v[:, :2].min(axis=0)
    hi = v[:, :2].max(axis=0)
    cx, cy = (lo + hi) / 2.0
    side = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    if side == 0.0:
        # all vertices coincide in xy; everything splats to the center pixel
        side = 1.0
    return float(cx), float(cy), side


def _splat(
    mesh: Mesh, K: int, viewport: tuple[float, float, float] | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map vertices to pixels and resolve the z-buffer.

    Returns (rows, cols, winners): one entry per lit pixel; `winners`
    indexes into mesh.vertices.  Ties in z keep the earliest vertex.
    """
    if K < 8:
        raise ImageTooSmallError(f"raster size must be >= 8, got {K}")
    cx, cy, side = _viewport_or_bounds(mesh, viewport)
    scale = 0.9 * K / side  # content fills 90% of the raster, 5% margin each side
    v = mesh.vertices
    cols = np.floor(K / 2 + (v[:, 0] - cx) * scale).astype(np.int64)
    rows = np.floor(K / 2 - (v[:, 1] - cy) * scale).astype(np.int64)
    np.clip(cols, 0, K - 1, out=cols)
    np.clip(rows, 0, K - 1, out=rows)
    pix = rows * K + cols
    order = np.lexsort((np.arange(len(pix)), -v[:, 2]))
    _, first = np.unique(pix[order], return_index=True)
    winners = order[first]
    return rows[winners], cols[winners], winners


def project_texture(
    mesh: Mesh, K: int, viewport: tuple[float, float, float] | None = None
) -> RasterImage:
    """Splat vertex colors onto a K x K raster (orthographic, xy-plane).

    The mesh bounding square is mapped into the raster with a 5% margin;
    an explicit `viewport` (cx, cy, side) overrides the automatic bounds.
    """
    if mesh.colors is None:
        raise MissingColorsError("texture projection needs per-vertex colors")
    rows, cols, winners = _splat(mesh, K, viewport)
    img = np.zeros((K, K, 3))
    img[rows, cols] = mesh.colors[winners]
    return RasterImage(img)


def project_depth(
    mesh: Mesh, K: int, viewport: tuple[float, float, float] | None = None
) -> RasterImage:
    """Splat normalized depth: nearer (larger z) is brighter, uncovered is 0.

    Depth normalizes over the full vertex range; a flat mesh renders its
    covered pixels at exactly 1.
    """
    rows, cols, winners = _splat(mesh, K, viewport)
    z = mesh.vertices[:, 2]
    zmin, zmax = z.min(), z.max()
    if zmax == zmin:
        depth = np.ones(len(winners))
    else:
        depth = (z[winners] - zmin) / (zmax - zmin)
    img = np.zeros((K, K))
    img[rows, cols] = depth
    return RasterImage(img)


# --------------------------------------------------------------------------
# CLAHE depth sharpening

def _tile_edges(K: int, tiles: int) -> np.ndarray:
    return np.rint(np.arange(tiles + 1) * (K / tiles)).astype(np.int64)


def _clipped_tile_tables(
    img: np.ndarray, edges: np.ndarray, cfg: ClaheConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Per-tile clipped-histogram mapping tables.

    Returns (cum0, prob): both (tiles, tiles, bins); the tile mapping is
    F(v) = cum0[b] + prob[b] * (v*bins - b) with b = bin(v), a piecewise
    linear CDF.  Uniform histograms make F the identity.
    """
    T = len(edges) - 1
    bins = cfg.bins
    bin_idx = np.minimum((img * bins).astype(np.int64), bins - 1)
    cum0 = np.empty((T, T, bins))
    prob = np.empty((T, T, bins))
    for i in range(T):
        for j in range(T):
            tile = bin_idx[edges[i] : edges[i + 1], edges[j] : edges[j + 1]]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=bins).astype(np.float64)
            limit = cfg.clip_limit * n
            excess = np.maximum(hist - limit, 0.0).sum()
            hist = np.minimum(hist, limit) + excess / bins
            p = hist / n
            c = np.cumsum(p)
            cum0[i, j] = np.concatenate(([0.0], c[:-1]))
            prob[i, j] = p
    return cum0, prob


def _blend_axis(coords: np.ndarray, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Neighbor tile indices and blend weight along one axis.

    Pixels outside the span of tile centers clamp to the border tile.
    """
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    hi = np.searchsorted(centers, coords, side="left")
    lo = hi - 1
    np.clip(lo, 0, len(centers) - 1, out=lo)
    np.clip(hi, 0, len(centers) - 1, out=hi)
    span = centers[hi] - centers[lo]
    t = np.where(span > 0, (coords - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, t


def sharpen_depth(img: RasterImage, cfg: ClaheConfig = ClaheConfig()) -> RasterImage:
    """Contrast-limited adaptive histogram equalization on a 1-channel raster.

    Per-tile histograms are clipped at clip_limit * (tile pixel count) with
    the excess spread uniformly over all bins; each pixel blends the four
    neighboring tile mappings bilinearly.
    """
    if img.channels != 1:
        raise ValueError("sharpen_depth expects a single-channel raster")
    K = img.size
    data = img.data
    edges = _tile_edges(K, cfg.tiles_per_side)
    if np.any(np.diff(edges) < 1):
        raise ValueError("tiles_per_side too large for this raster")
    cum0, prob = _clipped_tile_tables(data, edges, cfg)

    bins = cfg.bins
    b = np.minimum((data * bins).astype(np.int64), bins - 1)
    frac = data * bins - b
    rr, cc = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    i0, i1, t = _blend_axis(rr[:, 0].astype(np.float64), edges)
    j0, j1, s = _blend_axis(cc[0, :].astype(np.float64), edges)
    i0 = i0[:, None] * np.ones(K, dtype=np.int64)[None, :]
    i1 = i1[:, None] * np.ones(K, dtype=np.int64)[None, :]
    t = np.broadcast_to(t[:, None], (K, K))
    j0 = j0[None, :] * np.ones(K, dtype=np.int64)[:, None]
    j1 = j1[None, :] * np.ones(K, dtype=np.int64)[:, None]
    s = np.broadcast_to(s[None, :], (K, K))

    def mapped(ti, tj):
        return cum0[ti, tj, b] + prob[ti, tj, b] * frac

    def lerp(a, bb, u):
        # exact when a == bb, so equal tile mappings blend without drift
        return a + u * (bb - a)

    top = lerp(mapped(i0, j0), mapped(i0, j1), s)
    bot = lerp(mapped(i1, j0), mapped(i1, j1), s)
    out = lerp(top, bot, t)
    return RasterImage(np.clip(out, 0.0, 1.0))


# --------------------------------------------------------------------------
# PGM / PPM (ASCII, maxval 255, round-half-up quantization)

def quantize_u8(data: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(data) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(img: RasterImage, path: str | Path) -> None:
    if img.channels != 1:
        raise ValueError("PGM holds single-channel images")
    _write_pnm(quantize_u8(img.data), "P2", path)


def write_ppm(img: RasterImage, path: str | Path) -> None:
    if img.channels != 3:
        raise ValueError("PPM holds 3-channel images")
    _write_pnm(quantize_u8(img.data).reshape(img.size, -1), "P3", path)


def _write_pnm(rows: np.ndarray, magic: str, path: str | Path) -> None:
    K = rows.shape[0]
    width = K if magic == "P2" else rows.shape[1] // 3
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{magic}\n{width} {K}\n255\n")
        for r in rows.reshape(K, -1):
            fh.write(" ".join(str(int(v)) for v in r) + "\n")


def read_pnm(path: str | Path) -> RasterImage:
    """Read an ASCII PGM (P2) or PPM (P3) file written by this module."""
    path = Path(path)
    with open(path, "r", encoding="ascii") as fh:
        tokens = []
        for line in fh:
            hash_at = line.find("#")
            if hash_at >= 0:
                line = line[:hash_at]
            tokens.extend(line.split())
    if not tokens or tokens[0] not in ("P2", "P3"):
        raise MalformedFileError(f"{path}: not an ASCII PGM/PPM")
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
        values = np.array([int(t) for t in tokens[4:]], dtype=np.float64)
    except ValueError:
        raise MalformedFileError(f"{path}: non-integer sample") from None
    if maxval != 255:
        raise MalformedFileError(f"{path}: expected maxval 255, got {maxval}")
    channels = 1 if magic == "P2" else 3
    if width != height:
        raise MalformedFileError(f"{path}: raster must be square")
    if len(values) != width * height * channels:
        raise MalformedFileError(f"{path}: sample count mismatch")
    if values.min() < 0 or values.max() > 255:
        raise MalformedFileError(f"{path}: sample outside [0, 255]")
    data = values.reshape((height, width) if channels == 1 else (height, width, 3))
    return RasterImage(data / 255.0)
