"""Mesh and landmark ingestion, multi-view rotation, and the 4D sequence data model.

A dynamic 3D face recording is an ordered list of (mesh, landmark set)
frames carrying one expression label and one subject id.  Side profiles
are produced by rotating every frame about the vertical axis through the
mesh centroid.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    EmptyMeshError,
    MalformedFileError,
    UnsupportedFormatError,
)

EXPRESSIONS = ("angry", "disgust", "fear", "happy", "sad", "surprise")
VIEWS = ("left", "front", "right")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Mesh:
    """Point cloud / triangle mesh with optional per-vertex colors.

    vertices: (M, 3) float64, M >= 1.
    colors:   (M, 3) float64 in [0, 1], or None.
    faces:    (F, 3) int vertex-index triples, or None.
    """

    vertices: np.ndarray
    colors: np.ndarray | None = None
    faces: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 1:
            raise ValueError(f"vertices must be (M, 3) with M >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        object.__setattr__(self, "vertices", _readonly(v))
        if self.colors is not None:
            c = np.asarray(self.colors, dtype=np.float64)
            if c.shape != v.shape:
                raise ValueError("colors must align with vertices")
            if c.min() < 0.0 or c.max() > 1.0:
                raise ValueError("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", _readonly(c))
        if self.faces is not None:
            f = np.asarray(self.faces, dtype=np.int64)
            if f.ndim != 2 or f.shape[1] != 3:
                raise ValueError("faces must be (F, 3) index triples")
            if f.size and (f.min() < 0 or f.max() >= len(v)):
                raise ValueError("face index out of range")
            object.__setattr__(self, "faces", _readonly(f))

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


@dataclass(frozen=True)
class LandmarkSet:
    """m >= 3 labeled 3D points in the same frame as the owning mesh."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 3:
            raise ValueError(f"landmarks must be (m, 3) with m >= 3, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("landmark coordinates must be finite")
        object.__setattr__(self, "points", _readonly(p))

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Sequence4D:
    """Ordered (Mesh, LandmarkSet) frames with a label and a subject id."""

    frames: tuple[tuple[Mesh, LandmarkSet], ...]
    label: str
    subject_id: str

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 1:
            raise ValueError("a sequence needs at least one frame")
        m = frames[0][1].count
        if any(lm.count != m for _, lm in frames):
            raise ValueError("all frames must share the landmark count")
        if self.label not in EXPRESSIONS:
            raise ValueError(f"unknown expression label {self.label!r}")
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def landmark_count(self) -> int:
        return self.frames[0][1].count


class MultiView(NamedTuple):
    left: Sequence4D
    front: Sequence4D
    right: Sequence4D


# --------------------------------------------------------------------------
# rotation

def rotation_about_y(angle_deg: float) -> np.ndarray:
    """3x3 rotation matrix about the y axis; (1,0,0) at 20 deg maps to
    (cos 20, 0, -sin 20)."""
    t = np.deg2rad(float(angle_deg))
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotate_points(points: np.ndarray, angle_deg: float, pivot: np.ndarray) -> np.ndarray:
    """Rotate (N, 3) points about the vertical axis through `pivot`."""
    R = rotation_about_y(angle_deg)
    return (np.asarray(points, dtype=np.float64) - pivot) @ R.T + pivot


def rotate_about_vertical(mesh: Mesh, angle_deg: float) -> Mesh:
    """Rotate a mesh about the vertical (y) axis through its vertex centroid.

    Colors and faces are carried over unchanged.
    """
    if not np.isfinite(angle_deg):
        raise ValueError("angle must be finite")
    pivot = mesh.centroid()
    return Mesh(
        vertices=rotate_points(mesh.vertices, angle_deg, pivot),
        colors=mesh.colors,
        faces=mesh.faces,
    )


def multi_view(seq: Sequence4D, angle_deg: float) -> MultiView:
    """Produce (left, front, right) profile sequences.

    The front view is the input itself; left/right rotate every frame by
    +angle/-angle about the vertical axis through that frame's mesh
    centroid.  Landmarks rotate with the same pivot as their mesh.
    """
    if not (angle_deg > 0):
        raise ValueError("profile angle must be positive")

    def turned(sign: float) -> Sequence4D:
        frames = []
        for mesh, lms in seq.frames:
            pivot = mesh.centroid()
            frames.append(
                (
                    Mesh(
                        vertices=rotate_points(mesh.vertices, sign * angle_deg, pivot),
                        colors=mesh.colors,
                        faces=mesh.faces,
                    ),
                    LandmarkSet(rotate_points(lms.points, sign * angle_deg, pivot)),
                )
            )
        return Sequence4D(tuple(frames), seq.label, seq.subject_id)

    return MultiView(left=turned(+1.0), front=seq, right=turned(-1.0))


# --------------------------------------------------------------------------
# file ingestion: OBJ subset, ASCII PLY, landmark files, sequence manifests

def load_mesh(path: str | Path) -> Mesh:
    """Load an OBJ (`v x y z [r g b]`, `f i j k`) or ASCII PLY mesh.

    Colors are populated only when every vertex carries one.  Raises
    UnsupportedFormatError for other extensions or binary PLY,
    MalformedFileError (with a line number) for unparseable lines, and
    EmptyMeshError when no vertices are present.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".ply":
        return _load_ply(path)
    raise UnsupportedFormatError(f"{path}: unsupported extension {suffix!r}")


def _load_obj(path: Path) -> Mesh:
    vertices: list[list[float]] = []
    colors: list[list[float]] = []
    plain = 0  # vertices without color
    faces: list[list[int]] = []
    face_lines: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            tag = tokens[0]
            if tag == "v":
                vals = _parse_floats(tokens[1:], path, lineno)
                if len(vals) == 3:
                    vertices.append(vals)
                    plain += 1
                elif len(vals) == 6:
                    vertices.append(vals[:3])
                    colors.append(vals[3:])
                else:
                    raise MalformedFileError(
                        f"{path}:{lineno}: vertex needs 3 or 6 numbers, got {len(vals)}"
                    )
            elif tag == "f":
                if len(tokens) != 4:
                    raise MalformedFileError(
                        f"{path}:{lineno}: face needs exactly 3 indices"
                    )
                try:
                    idx = [int(t) for t in tokens[1:]]
                except ValueError:
                    raise MalformedFileError(
                        f"{path}:{lineno}: face indices must be plain integers"
                    ) from None
                if any(i < 1 for i in idx):
                    raise MalformedFileError(
                        f"{path}:{lineno}: face indices are 1-based positive"
                    )
                faces.append([i - 1 for i in idx])
                face_lines.append(lineno)
            # other OBJ keywords (vn, vt, g, ...) are outside the subset; skipped
    if not vertices:
        raise EmptyMeshError(f"{path}: no vertices")
    for (a, b, c), lineno in zip(faces, face_lines):
        if max(a, b, c) >= len(vertices):
            raise MalformedFileError(
                f"{path}:{lineno}: face index exceeds vertex count {len(vertices)}"
            )
    use_colors = bool(colors) and plain == 0
    return Mesh(
        vertices=np.array(vertices),
        colors=np.array(colors) if use_colors else None,
        faces=np.array(faces, dtype=np.int64) if faces else None,
    )


_PLY_COLOR_NAMES = {"red": 0, "green": 1, "blue": 2, "r": 0, "g": 1, "b": 2}


def _load_ply(path: Path) -> Mesh:
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MalformedFileError(f"{path}:1: missing 'ply' magic")
    n_vertex = n_face = 0
    vertex_props: list[tuple[str, str]] = []  # (type, name)
    element_order: list[str] = []
    current_element = None
    i = 1
    while i < len(lines):
        tokens = lines[i].strip().split()
        i += 1
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise UnsupportedFormatError(f"{path}: only ASCII PLY is supported")
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise MalformedFileError(f"{path}:{i}: bad element declaration")
            current_element = tokens[1]
            element_order.append(current_element)
            if current_element == "vertex":
                n_vertex = int(tokens[2])
            elif current_element == "face":
                n_face = int(tokens[2])
            else:
                raise UnsupportedFormatError(
                    f"{path}: unsupported element {current_element!r}"
                )
        elif tokens[0] == "property":
            if current_element == "vertex":
                if len(tokens) != 3:
                    raise MalformedFileError(f"{path}:{i}: bad vertex property")
                vertex_props.append((tokens[1], tokens[2]))
            # face list property accepted as-is
        elif tokens[0] == "end_header":
            break
        else:
            raise MalformedFileError(f"{path}:{i}: unexpected header line")
    else:
        raise MalformedFileError(f"{path}: header never ends")

    names = [name for _, name in vertex_props]
    try:
        xyz_cols = [names.index(n) for n in ("x", "y", "z")]
    except ValueError:
        raise MalformedFileError(f"{path}: vertex element lacks x/y/z") from None
    color_cols = {}
    for idx, (typ, name) in enumerate(vertex_props):
        if name in _PLY_COLOR_NAMES:
            color_cols[_PLY_COLOR_NAMES[name]] = (idx, typ)
    has_colors = len(color_cols) == 3

    body = lines[i:]
    if len(body) < n_vertex + n_face:
        raise MalformedFileError(f"{path}: body shorter than declared elements")
    vertices = np.empty((n_vertex, 3))
    colors = np.empty((n_vertex, 3)) if has_colors else None
    for row in range(n_vertex):
        vals = _parse_floats(body[row].split(), path, i + row + 1)
        if len(vals) != len(vertex_props):
            raise MalformedFileError(
                f"{path}:{i + row + 1}: expected {len(vertex_props)} values"
            )
        vertices[row] = [vals[c] for c in xyz_cols]
        if has_colors:
            for channel in range(3):
                col, typ = color_cols[channel]
                v = vals[col]
                colors[row, channel] = v / 255.0 if typ in ("uchar", "uint8") else v
    faces = []
    for row in range(n_face):
        lineno = i + n_vertex + row + 1
        tokens = body[n_vertex + row].split()
        if not tokens:
            raise MalformedFileError(f"{path}:{lineno}: empty face line")
        try:
            count = int(tokens[0])
            idx = [int(t) for t in tokens[1:]]
        except ValueError:
            raise MalformedFileError(f"{path}:{lineno}: bad face line") from None
        if count != 3 or len(idx) != 3:
            raise MalformedFileError(f"{path}:{lineno}: only triangles supported")
        if min(idx) < 0 or max(idx) >= n_vertex:
            raise MalformedFileError(f"{path}:{lineno}: face index out of range")
        faces.append(idx)
    if n_vertex == 0:
        raise EmptyMeshError(f"{path}: no vertices")
    if colors is not None and (colors.min() < 0 or colors.max() > 1):
        raise MalformedFileError(f"{path}: color values outside [0, 1] after scaling")
    return Mesh(
        vertices=vertices,
        colors=colors,
        faces=np.array(faces, dtype=np.int64) if faces else None,
    )


def _parse_floats(tokens: Sequence[str], path: Path, lineno: int) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise MalformedFileError(f"{path}:{lineno}: expected numbers") from None


def load_landmarks(path: str | Path) -> LandmarkSet:
    """Read a landmark file: m lines of `x y z`."""
    path = Path(path)
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            vals = _parse_floats(line.split(), path, lineno)
            if len(vals) != 3:
                raise MalformedFileError(f"{path}:{lineno}: expected `x y z`")
            points.append(vals)
    return LandmarkSet(np.array(points))


def load_sequence(manifest_path: str | Path, label: str, subject_id: str) -> Sequence4D:
    """Load a sequence manifest: one `frame_index<TAB>mesh_path<TAB>landmark_path`
    line per frame, paths relative to the manifest's directory."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    frames = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise MalformedFileError(
                    f"{manifest_path}:{lineno}: expected 3 tab-separated fields"
                )
            try:
                idx = int(parts[0])
            except ValueError:
                raise MalformedFileError(
                    f"{manifest_path}:{lineno}: frame index must be an integer"
                ) from None
            if idx != len(frames):
                raise MalformedFileError(
                    f"{manifest_path}:{lineno}: frame indices must run 0,1,2,..."
                )
            frames.append((load_mesh(base / parts[1]), load_landmarks(base / parts[2])))
    if not frames:
        raise MalformedFileError(f"{manifest_path}: empty manifest")
    return Sequence4D(tuple(frames), label=label, subject_id=subject_id)


# --------------------------------------------------------------------------
# writers (used by the synthetic generator and the CLI)

def _fmt(x: float) -> str:
    return repr(float(x))


def write_mesh_obj(mesh: Mesh, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for j in range(mesh.vertex_count):
            x, y, z = mesh.vertices[j]
            if mesh.colors is not None:
                r, g, b = mesh.colors[j]
                fh.write(f"v {_fmt(x)} {_fmt(y)} {_fmt(z)} {_fmt(r)} {_fmt(g)} {_fmt(b)}\n")
            else:
                fh.write(f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}\n")
        if mesh.faces is not None:
            for a, b, c in mesh.faces:
                fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def write_landmarks(lms: LandmarkSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in lms.points:
            fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n")


def write_sequence(seq: Sequence4D, seq_id: str, out_dir: str | Path) -> Path:
    """Write meshes, landmark files, and the manifest for one sequence.

    Returns the manifest path.  Layout under `out_dir`:
    `obj/<seq_id>_f<k>.obj`, `lmk/<seq_id>_f<k>.txt`, `<seq_id>.manifest`.
    """
    out_dir = Path(out_dir)
    (out_dir / "obj").mkdir(parents=True, exist_ok=True)
    (out_dir / "lmk").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / f"{seq_id}.manifest"
    rows = []
    for k, (mesh, lms) in enumerate(seq.frames):
        mesh_rel = f"obj/{seq_id}_f{k:03d}.obj"
        lmk_rel = f"lmk/{seq_id}_f{k:03d}.txt"
        write_mesh_obj(mesh, out_dir / mesh_rel)
        write_landmarks(lms, out_dir / lmk_rel)
        rows.append(f"{k}\t{mesh_rel}\t{lmk_rel}\n")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.writelines(rows)
    return manifest


def write_dataset_index(entries: list[tuple[str, str, str, str]], path: str | Path) -> None:
    """Write `index.tsv`: seq_id, subject, label, manifest relpath per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq_id, subject, label, manifest in entries:
            fh.write(f"{seq_id}\t{subject}\t{label}\t{manifest}\n")


def load_dataset(data_dir: str | Path) -> list[tuple[str, Sequence4D]]:
    """Load every sequence listed in `<data_dir>/index.tsv`.

    Returns (seq_id, sequence) pairs in index order.
    """
    data_dir = Path(data_dir)
    index = data_dir / "index.tsv"
    out = []
    with open(index, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise MalformedFileError(f"{index}:{lineno}: expected 4 fields")
            seq_id, subject, label, manifest = parts
            out.append((seq_id, load_sequence(data_dir / manifest, label, subject)))
    return out
