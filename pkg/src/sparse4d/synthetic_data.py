"""Deterministic synthetic 4D face sequences.

The base head is the front half of an ellipsoid sampled on a parametric
grid over the unit disk, with a smooth two-tone vertex coloring and 12
landmarks at fixed parametric positions.  Each expression class gets its
own smooth displacement field (sums of Gaussian bumps over the parameter
plane), applied with a symmetric onset-apex-offset ramp over the frames.
Subjects differ by a seeded anisotropic axis scaling; optional per-vertex
Gaussian noise is drawn from per-frame derived seeds.  Everything is a
pure function of the config, so two runs produce bitwise-identical data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .augment import derived_rng
from .geometry import EXPRESSIONS, LandmarkSet, Mesh, Sequence4D

# ellipsoid semi-axes: x half-width, y half-height, z depth
AXES = (1.0, 1.3, 0.8)

# landmark name -> (s, u) parameter position; +u is up the face
LANDMARKS = (
    ("brow_l", (-0.25, 0.45)),
    ("brow_r", (0.25, 0.45)),
    ("eye_outer_l", (-0.38, 0.28)),
    ("eye_inner_l", (-0.14, 0.28)),
    ("eye_inner_r", (0.14, 0.28)),
    ("eye_outer_r", (0.38, 0.28)),
    ("nose_tip", (0.0, 0.0)),
    ("nose_base", (0.0, -0.15)),
    ("mouth_l", (-0.35, -0.45)),
    ("mouth_r", (0.35, -0.45)),
    ("lip_top", (0.0, -0.38)),
    ("lip_bottom", (0.0, -0.52)),
)
LANDMARK_NAMES = tuple(name for name, _ in LANDMARKS)

_BUMP_SIGMA = 0.18
_FIELD_SCALE = 0.12

# per-class bump lists: (center_s, center_u, gain, unit direction xyz).
# happy raises what angry lowers (brow and mouth corners), so apex
# landmark displacements differ in sign between the two.
_FIELDS = {
    "happy": (
        (-0.35, -0.45, 1.0, (0.0, 1.0, 0.0)),
        (0.35, -0.45, 1.0, (0.0, 1.0, 0.0)),
        (-0.25, 0.45, 0.3, (0.0, 1.0, 0.0)),
        (0.25, 0.45, 0.3, (0.0, 1.0, 0.0)),
    ),
    "angry": (
        (-0.25, 0.45, 0.8, (0.0, -1.0, 0.0)),
        (0.25, 0.45, 0.8, (0.0, -1.0, 0.0)),
        (-0.35, -0.45, 0.5, (0.0, -1.0, 0.0)),
        (0.35, -0.45, 0.5, (0.0, -1.0, 0.0)),
    ),
    "sad": (
        (-0.35, -0.45, 0.9, (0.0, -1.0, 0.0)),
        (0.35, -0.45, 0.9, (0.0, -1.0, 0.0)),
        (-0.1, 0.45, 0.5, (0.0, 1.0, 0.0)),
        (0.1, 0.45, 0.5, (0.0, 1.0, 0.0)),
    ),
    "surprise": (
        (-0.25, 0.45, 1.0, (0.0, 1.0, 0.0)),
        (0.25, 0.45, 1.0, (0.0, 1.0, 0.0)),
        (0.0, -0.52, 1.2, (0.0, -1.0, 0.0)),
        (0.0, -0.45, 0.4, (0.0, 0.0, 1.0)),
    ),
    "fear": (
        (-0.15, 0.45, 0.7, (0.0, 1.0, 0.0)),
        (0.15, 0.45, 0.7, (0.0, 1.0, 0.0)),
        (0.0, -0.52, 0.6, (0.0, -1.0, 0.0)),
        (-0.35, -0.45, 0.3, (0.0, 0.0, -1.0)),
        (0.35, -0.45, 0.3, (0.0, 0.0, -1.0)),
    ),
    "disgust": (
        (0.0, -0.38, 0.6, (0.0, 1.0, 0.0)),
        (0.0, 0.1, 0.5, (0.0, 0.0, 1.0)),
        (-0.25, 0.45, 0.4, (0.0, -1.0, 0.0)),
        (0.25, 0.45, 0.4, (0.0, -1.0, 0.0)),
    ),
}

_TONE_A = np.array([0.85, 0.70, 0.60])
_TONE_B = np.array([0.40, 0.25, 0.20])


@dataclass(frozen=True)
class SynthConfig:
    subjects: int = 10
    sequences_per_class: int = 1
    frames: int = 16
    grid_resolution: int = 24
    noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.subjects < 1 or self.sequences_per_class < 1:
            raise ValueError("subjects and sequences_per_class must be >= 1")
        if self.frames < 3:
            raise ValueError("frames must be >= 3")
        if self.grid_resolution < 4:
            raise ValueError("grid_resolution must be >= 4")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")


def _disk_grid(n: int) -> np.ndarray:
    """(M, 2) parameter points (s, u) covering the unit disk."""
    ticks = np.linspace(-1.0, 1.0, n)
    s, u = np.meshgrid(ticks, ticks, indexing="ij")
    pts = np.stack([s.ravel(), u.ravel()], axis=1)
    return pts[np.einsum("ij,ij->i", pts, pts) <= 1.0]


def _ellipsoid(params: np.ndarray, axes) -> np.ndarray:
    """Map (s, u) disk parameters onto the front half of the ellipsoid."""
    s, u = params[:, 0], params[:, 1]
    w = np.sqrt(np.maximum(0.0, 1.0 - s * s - u * u))
    return np.stack([axes[0] * s, axes[1] * u, axes[2] * w], axis=1)


def _colors(params: np.ndarray) -> np.ndarray:
    s, u = params[:, 0], params[:, 1]
    w = 0.5 * (1.0 + np.sin(2.5 * s) * np.cos(1.7 * u))
    return _TONE_B + w[:, None] * (_TONE_A - _TONE_B)


def displacement_field(label: str, params: np.ndarray) -> np.ndarray:
    """Evaluate the class field at (s, u) points; returns (M, 3) offsets."""
    out = np.zeros((params.shape[0], 3))
    inv = 1.0 / (2.0 * _BUMP_SIGMA * _BUMP_SIGMA)
    for cs, cu, gain, direction in _FIELDS[label]:
        d2 = (params[:, 0] - cs) ** 2 + (params[:, 1] - cu) ** 2
        out += (_FIELD_SCALE * gain) * np.exp(-d2 * inv)[:, None] * np.asarray(direction)
    return out


def ramp(t: int, T: int) -> float:
    """Onset-apex-offset intensity for 1-based frame t of T.

    Folding t onto the nearer end keeps r(t) == r(T+1-t) exact in floats.
    """
    k = min(t - 1, T - t)
    return math.sin(math.pi * k / (T - 1))


def subject_axes(seed: int, subject: int):
    rng = derived_rng(seed, 0xFA, subject)
    return tuple(a * rng.uniform(0.9, 1.1) for a in AXES)


def _landmark_params() -> np.ndarray:
    return np.array([pos for _, pos in LANDMARKS])


def generate_sequence(cfg: SynthConfig, subject: int, label: str, rep: int) -> Sequence4D:
    axes = subject_axes(cfg.seed, subject)
    grid = _disk_grid(cfg.grid_resolution)
    lmk = _landmark_params()
    base_vertices = _ellipsoid(grid, axes)
    base_landmarks = _ellipsoid(lmk, axes)
    colors = _colors(grid)
    v_field = displacement_field(label, grid)
    l_field = displacement_field(label, lmk)
    class_idx = EXPRESSIONS.index(label)

    frames = []
    for t in range(1, cfg.frames + 1):
        r = ramp(t, cfg.frames)
        vertices = base_vertices + r * v_field
        if cfg.noise > 0:
            rng = derived_rng(cfg.seed, 0x7E, subject, class_idx, rep, t)
            vertices = vertices + cfg.noise * rng.standard_normal(vertices.shape)
        mesh = Mesh(vertices=vertices, colors=colors)
        frames.append((mesh, LandmarkSet(base_landmarks + r * l_field)))
    return Sequence4D(frames=tuple(frames), label=label, subject_id=f"s{subject:02d}")


def sequence_id(subject: int, label: str, rep: int) -> str:
    return f"s{subject:02d}_{label}_r{rep:02d}"


def generate_dataset(cfg: SynthConfig) -> list[tuple[str, Sequence4D]]:
    """All (sequence id, Sequence4D) pairs, ordered subject, class, repeat."""
    out = []
    for subject in range(cfg.subjects):
        for label in EXPRESSIONS:
            for rep in range(cfg.sequences_per_class):
                out.append(
                    (sequence_id(subject, label, rep), generate_sequence(cfg, subject, label, rep))
                )
    return out
