"""End-to-end orchestration: config schema, workspace layout, stage runners.

The workspace under `out` is:

    data/       synthetic meshes, landmarks, manifests, index.tsv
    work/       render/ augment/ landmarks/ features/ sparse/ intermediates
    models/     standalone full-dataset checkpoints (train command)
    reports/    ablation grid, confusion matrices, per-run summaries
    run_manifest.json

Every stage reads its inputs from disk and writes its outputs to disk, so
running the stages one by one is byte-identical to `run_pipeline`, which
just calls them in order.  All randomness derives from the single config
seed; report files contain no timestamps and reproduce exactly.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import fusion_eval, sequence_model, synthetic_data
from .augment import AugmentConfig, augment_stream, derived_rng
from .errors import ConfigError, Sparse4DError, StageError
from .feature_extractor import (
    ExtractorConfig,
    extract_sequence,
    read_feature_csv,
    write_feature_csv,
)
from .fusion_eval import ABLATIONS, STREAMS, CvItem, FusionConfig, equal_fusion
from .geometry import EXPRESSIONS, VIEWS, load_sequence, multi_view, write_dataset_index, write_sequence
from .render import ClaheConfig, project_depth, project_texture, read_pnm, sharpen_depth, write_pgm, write_ppm
from .sequence_model import TrainConfig, write_checkpoint, write_training_log
from .sparse_codec import (
    SearchConfig,
    build_wavelet_dictionary,
    default_prior,
    mmse_estimate,
    write_index_set,
)
from .synthetic_data import SynthConfig
from .toplandmarks import descriptor_sequence, read_descriptor_csv, write_descriptor_csv

log = logging.getLogger("sparse4d")

FORMAT_VERSIONS = {"image": "pnm-ascii-1", "table": "csv-1", "mesh": "obj-1", "manifest": "tsv-1"}

STAGE_ORDER = ("synth", "render", "augment", "landmarks", "encode", "eval")


# --------------------------------------------------------------------------
# config schema


@dataclass(frozen=True)
class RenderSection:
    image_size: int = 128
    angle: float = 20.0
    clahe_tiles: int = 4
    clahe_clip: float = 0.01
    clahe_bins: int = 64

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if not (self.angle > 0):
            raise ValueError("angle must be positive")
        ClaheConfig(self.clahe_tiles, self.clahe_clip, self.clahe_bins)

    def clahe(self) -> ClaheConfig:
        return ClaheConfig(self.clahe_tiles, self.clahe_clip, self.clahe_bins)


@dataclass(frozen=True)
class AugmentSection:
    count: int = 5
    capacity: int = 10
    weight_mode: str = "random"

    def __post_init__(self):
        AugmentConfig(seed=0, weight_mode=self.weight_mode, capacity=self.capacity, count=self.count)


@dataclass(frozen=True)
class SparseSection:
    feature_grid: int = 4
    feature_bins: int = 7
    feature_pad: int = 128
    overcompleteness: int = 2
    max_support_size: int = 4
    beam_width: int = 8
    mode: str = "beam"

    def __post_init__(self):
        ExtractorConfig(self.feature_grid, self.feature_bins, self.feature_pad)
        SearchConfig(self.mode, self.max_support_size, self.beam_width)
        if self.overcompleteness < 2:
            raise ValueError("overcompleteness must be >= 2")

    def extractor(self) -> ExtractorConfig:
        return ExtractorConfig(self.feature_grid, self.feature_bins, self.feature_pad)

    def search(self) -> SearchConfig:
        return SearchConfig(self.mode, self.max_support_size, self.beam_width)


@dataclass(frozen=True)
class ModelSection:
    hidden_dim: int = 32
    learning_rate: float = 0.1
    epochs: int = 25
    batch_size: int = 16
    dropout_rate: float = 0.3
    gradient_clip_norm: float = 5.0

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            dropout_rate=self.dropout_rate,
            seed=0,
            gradient_clip_norm=self.gradient_clip_norm,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            dropout_rate=self.dropout_rate,
            seed=seed,
            gradient_clip_norm=self.gradient_clip_norm,
        )


@dataclass(frozen=True)
class EvalSection:
    folds: int = 10

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


@dataclass(frozen=True)
class DataSection:
    subjects: int = 10
    sequences_per_class: int = 1
    frames: int = 16
    grid_resolution: int = 24
    noise: float = 0.01

    def __post_init__(self):
        SynthConfig(
            subjects=self.subjects,
            sequences_per_class=self.sequences_per_class,
            frames=self.frames,
            grid_resolution=self.grid_resolution,
            noise=self.noise,
            seed=0,
        )

    def synth_config(self, seed: int) -> SynthConfig:
        return SynthConfig(
            subjects=self.subjects,
            sequences_per_class=self.sequences_per_class,
            frames=self.frames,
            grid_resolution=self.grid_resolution,
            noise=self.noise,
            seed=seed,
        )


_SECTION_TYPES = {
    "data": DataSection,
    "render": RenderSection,
    "augment": AugmentSection,
    "landmarks": None,  # reserved section, no options yet
    "sparse": SparseSection,
    "model": ModelSection,
    "fusion": None,  # handled separately: {"weights": {"view:stream": w}}
    "eval": EvalSection,
}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out: str = "sparse4d_run"
    data: DataSection = DataSection()
    render: RenderSection = RenderSection()
    augment: AugmentSection = AugmentSection()
    sparse: SparseSection = SparseSection()
    model: ModelSection = ModelSection()
    eval: EvalSection = EvalSection()
    fusion_weights: tuple | None = None  # ((view, stream, weight), ...) or None


def _build_section(name: str, cls, payload) -> object:
    if not isinstance(payload, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"section {name!r} has unknown keys {sorted(unknown)}")
    try:
        return cls(**payload)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section {name!r}: {e}") from e


def _parse_fusion(payload) -> tuple | None:
    if not isinstance(payload, dict):
        raise ConfigError("section 'fusion' must be an object")
    unknown = set(payload) - {"weights"}
    if unknown:
        raise ConfigError(f"section 'fusion' has unknown keys {sorted(unknown)}")
    weights = payload.get("weights")
    if weights is None:
        return None
    if not isinstance(weights, dict):
        raise ConfigError("fusion weights must map 'view:stream' to numbers")
    entries = []
    for key, value in weights.items():
        parts = str(key).split(":")
        if len(parts) != 2 or parts[0] not in VIEWS or parts[1] not in STREAMS:
            raise ConfigError(f"bad fusion weight key {key!r}, want 'view:stream'")
        entries.append((parts[0], parts[1], float(value)))
    return tuple(sorted(entries))


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = set(_SECTION_TYPES) | {"seed", "out"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys {sorted(unknown)}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    out = doc.get("out", "sparse4d_run")
    if not isinstance(out, str) or not out:
        raise ConfigError("out must be a nonempty path string")
    kwargs = {"seed": seed, "out": out}
    for name, cls in _SECTION_TYPES.items():
        payload = doc.get(name, {})
        if name == "fusion":
            kwargs["fusion_weights"] = _parse_fusion(payload)
        elif name == "landmarks":
            if payload not in ({},):
                raise ConfigError("section 'landmarks' takes no options")
        else:
            kwargs[name] = _build_section(name, cls, payload)
    return PipelineConfig(**kwargs)


def config_from_json(path: str | Path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return config_from_dict(doc)


def config_to_dict(cfg: PipelineConfig) -> dict:
    doc = {
        "seed": cfg.seed,
        "out": cfg.out,
        "data": asdict(cfg.data),
        "render": asdict(cfg.render),
        "augment": asdict(cfg.augment),
        "landmarks": {},
        "sparse": asdict(cfg.sparse),
        "model": asdict(cfg.model),
        "fusion": {
            "weights": None
            if cfg.fusion_weights is None
            else {f"{v}:{s}": w for v, s, w in cfg.fusion_weights}
        },
        "eval": asdict(cfg.eval),
    }
    return doc


def config_hash(cfg: PipelineConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# small helpers


def _atomic_write(path: Path, writer) -> None:
    """Write through `writer(tmp_path)` then rename into place."""
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _read_index(out: Path) -> list[tuple[str, str, str, str]]:
    index = out / "data" / "index.tsv"
    if not index.exists():
        raise StageError(f"missing {index}; run the synth stage first")
    rows = []
    for line in index.read_text(encoding="utf-8").splitlines():
        if line.strip():
            seq_id, subject, label, manifest = line.split("\t")
            rows.append((seq_id, subject, label, manifest))
    return rows


def _map_jobs(fn, tasks, jobs: int):
    tasks = list(tasks)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


@functools.lru_cache(maxsize=4)
def _dictionary(P: int, factor: int):
    return build_wavelet_dictionary(P, factor)


# --------------------------------------------------------------------------
# stage: synth


def stage_synth(cfg: PipelineConfig) -> int:
    out = Path(cfg.out)
    data_dir = out / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    dataset = synthetic_data.generate_dataset(cfg.data.synth_config(cfg.seed))
    entries = []
    for seq_id, seq in dataset:
        manifest = write_sequence(seq, seq_id, data_dir)
        entries.append((seq_id, seq.subject_id, seq.label, manifest.relative_to(data_dir)))
    _atomic_write(data_dir / "index.tsv", lambda p: write_dataset_index(entries, p))
    log.info("synth: wrote %d sequences to %s", len(entries), data_dir)
    return len(entries)


# --------------------------------------------------------------------------
# stage: render


def _render_one(args) -> str:
    doc, seq_id, subject, label, manifest = args
    cfg = config_from_dict(doc)
    out = Path(cfg.out)
    seq = load_sequence(out / "data" / manifest, label, subject)
    views = multi_view(seq, cfg.render.angle)
    clahe = cfg.render.clahe()
    K = cfg.render.image_size
    for view_name, vseq in zip(VIEWS, views):
        vdir = out / "work" / "render" / seq_id / view_name
        vdir.mkdir(parents=True, exist_ok=True)
        for t, (mesh, _) in enumerate(vseq.frames):
            texture = project_texture(mesh, K)
            depth = project_depth(mesh, K)
            sharp = sharpen_depth(depth, clahe)
            _atomic_write(vdir / f"f{t:03d}_texture.ppm", lambda p, i=texture: write_ppm(i, p))
            _atomic_write(vdir / f"f{t:03d}_depth.pgm", lambda p, i=depth: write_pgm(i, p))
            _atomic_write(vdir / f"f{t:03d}_sharp.pgm", lambda p, i=sharp: write_pgm(i, p))
    return seq_id


def stage_render(cfg: PipelineConfig, jobs: int = 1) -> int:
    out = Path(cfg.out)
    rows = _read_index(out)
    doc = config_to_dict(cfg)
    tasks = [(doc, seq_id, subject, label, manifest) for seq_id, subject, label, manifest in rows]
    _map_jobs(_render_one, tasks, jobs)
    log.info("render: %d sequences x %d views", len(rows), len(VIEWS))
    return len(rows)


# --------------------------------------------------------------------------
# stage: augment


def _augment_one(args) -> str:
    doc, seq_id, seq_index = args
    cfg = config_from_dict(doc)
    out = Path(cfg.out)
    for vi, view in enumerate(VIEWS):
        rdir = out / "work" / "render" / seq_id / view
        adir = out / "work" / "augment" / seq_id / view
        adir.mkdir(parents=True, exist_ok=True)
        textures = sorted(rdir.glob("f*_texture.ppm"))
        if not textures:
            raise StageError(f"no rendered frames under {rdir}; run the render stage first")
        for t, tex_path in enumerate(textures):
            texture = read_pnm(tex_path)
            depth = read_pnm(rdir / f"f{t:03d}_depth.pgm")
            sharp = read_pnm(rdir / f"f{t:03d}_sharp.pgm")
            frame_seed = int(derived_rng(cfg.seed, 0xA6, seq_index, vi, t).integers(2**63))
            acfg = AugmentConfig(
                seed=frame_seed,
                weight_mode=cfg.augment.weight_mode,
                capacity=cfg.augment.capacity,
                count=cfg.augment.count,
            )
            for g, img in enumerate(augment_stream(texture, depth, sharp, acfg)):
                _atomic_write(adir / f"f{t:03d}_gen{g}.ppm", lambda p, i=img: write_ppm(i, p))
    return seq_id


def stage_augment(cfg: PipelineConfig, jobs: int = 1) -> int:
    out = Path(cfg.out)
    rows = _read_index(out)
    doc = config_to_dict(cfg)
    tasks = [(doc, seq_id, i) for i, (seq_id, _, _, _) in enumerate(rows)]
    _map_jobs(_augment_one, tasks, jobs)
    log.info("augment: %d generated images per frame for %d sequences", cfg.augment.count, len(rows))
    return len(rows)


# --------------------------------------------------------------------------
# stage: landmarks


def _landmarks_one(args) -> str:
    doc, seq_id, subject, label, manifest = args
    cfg = config_from_dict(doc)
    out = Path(cfg.out)
    seq = load_sequence(out / "data" / manifest, label, subject)
    views = multi_view(seq, cfg.render.angle)
    ldir = out / "work" / "landmarks"
    ldir.mkdir(parents=True, exist_ok=True)
    for view_name, vseq in zip(VIEWS, views):
        rows = descriptor_sequence([lm for _, lm in vseq.frames])
        _atomic_write(ldir / f"{seq_id}_{view_name}.csv", lambda p, r=rows: write_descriptor_csv(r, p))
    return seq_id


def stage_landmarks(cfg: PipelineConfig, jobs: int = 1) -> int:
    out = Path(cfg.out)
    rows = _read_index(out)
    doc = config_to_dict(cfg)
    tasks = [(doc, seq_id, subject, label, manifest) for seq_id, subject, label, manifest in rows]
    _map_jobs(_landmarks_one, tasks, jobs)
    log.info("landmarks: %d sequences x %d views", len(rows), len(VIEWS))
    return len(rows)


# --------------------------------------------------------------------------
# stage: encode (feature extraction + sparse coding)


def _variant_names(count: int) -> list[str]:
    return ["orig"] + [f"aug{g}" for g in range(count)]


def _encode_one(args) -> str:
    doc, seq_id = args
    cfg = config_from_dict(doc)
    out = Path(cfg.out)
    extractor = cfg.sparse.extractor()
    search = cfg.sparse.search()
    A = _dictionary(cfg.sparse.feature_pad, cfg.sparse.overcompleteness)
    for view in VIEWS:
        rdir = out / "work" / "render" / seq_id / view
        adir = out / "work" / "augment" / seq_id / view
        fdir = out / "work" / "features" / seq_id / view
        sdir = out / "work" / "sparse" / seq_id / view
        fdir.mkdir(parents=True, exist_ok=True)
        sdir.mkdir(parents=True, exist_ok=True)
        textures = sorted(rdir.glob("f*_texture.ppm"))
        if not textures:
            raise StageError(f"no rendered frames under {rdir}; run the render stage first")
        variants = {"orig": textures}
        for g in range(cfg.augment.count):
            paths = [adir / f"f{t:03d}_gen{g}.ppm" for t in range(len(textures))]
            missing = [p for p in paths if not p.exists()]
            if missing:
                raise StageError(f"missing augmented image {missing[0]}; run the augment stage first")
            variants[f"aug{g}"] = paths
        for name, paths in variants.items():
            feats = extract_sequence([read_pnm(p) for p in paths], extractor)
            _atomic_write(fdir / f"{name}.csv", lambda p, r=feats: write_feature_csv(r, p))
            coeffs = np.stack(
                [mmse_estimate(A, row, default_prior(row, A.Q), search).h_hat for row in feats]
            )
            _atomic_write(sdir / f"{name}.csv", lambda p, r=coeffs: write_feature_csv(r, p))
    return seq_id


def stage_encode(cfg: PipelineConfig, jobs: int = 1) -> int:
    out = Path(cfg.out)
    rows = _read_index(out)
    doc = config_to_dict(cfg)
    tasks = [(doc, seq_id) for seq_id, _, _, _ in rows]
    _map_jobs(_encode_one, tasks, jobs)
    log.info(
        "encode: %d image sets (%d sequences x %d views x %d variants)",
        len(rows) * len(VIEWS) * (1 + cfg.augment.count),
        len(rows),
        len(VIEWS),
        1 + cfg.augment.count,
    )
    return len(rows)


# --------------------------------------------------------------------------
# loading encoded artifacts into CvItems


_STREAM_DIRS = {"dense": "features", "sparse": "sparse"}


def _load_items(cfg: PipelineConfig, streams) -> list[CvItem]:
    out = Path(cfg.out)
    rows = _read_index(out)
    items = []
    for seq_id, subject, label, _ in rows:
        stream_arrays = {}
        extras = {}
        for view in VIEWS:
            for stream in streams:
                if stream == "toplandmarks":
                    path = out / "work" / "landmarks" / f"{seq_id}_{view}.csv"
                    if not path.exists():
                        raise StageError(f"missing {path}; run the landmarks stage first")
                    stream_arrays[(view, stream)] = read_descriptor_csv(path)
                    continue
                base = out / "work" / _STREAM_DIRS[stream] / seq_id / view
                orig = base / "orig.csv"
                if not orig.exists():
                    raise StageError(f"missing {orig}; run the encode stage first")
                stream_arrays[(view, stream)] = read_feature_csv(orig)
                variants = []
                for g in range(cfg.augment.count):
                    path = base / f"aug{g}.csv"
                    if not path.exists():
                        raise StageError(f"missing {path}; run the encode stage first")
                    variants.append(read_feature_csv(path))
                extras[(view, stream)] = tuple(variants)
        items.append(
            CvItem(
                seq_id=seq_id,
                subject=subject,
                label=label,
                streams=stream_arrays,
                train_extras=extras,
            )
        )
    return items


class FittedModel(NamedTuple):
    """Sequence model plus the per-dimension input scaler fitted with it."""

    params: sequence_model.BiLstmParams
    shift: np.ndarray
    scale: np.ndarray


def fit_input_scaler(arrays: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean/deviation over all frames of the training arrays.

    Dimensions with (near-)zero spread keep scale 1 so they pass through
    centred instead of dividing by zero.
    """
    stacked = np.concatenate(list(arrays), axis=0)
    shift = stacked.mean(axis=0)
    spread = stacked.std(axis=0)
    scale = np.where(spread < 1e-12, 1.0, spread)
    return shift, scale


def _model_hooks(cfg: PipelineConfig):
    model = cfg.model

    def train_hook(fold, view, stream, triples, seed):
        shift, scale = fit_input_scaler([arr for _, arr, _ in triples])
        data = [((arr - shift) / scale, y) for _, arr, y in triples]
        params = sequence_model.train(
            data,
            model.train_config(seed),
            hidden_dim=model.hidden_dim,
            class_count=len(EXPRESSIONS),
        )
        return FittedModel(params, shift, scale)

    def predict_hook(trained, arr):
        scaled = (arr - trained.shift) / trained.scale
        return sequence_model.predict_scores(trained.params, scaled)

    return train_hook, predict_hook


def _fusion_for(cfg: PipelineConfig, name: str) -> FusionConfig:
    active_streams = ABLATIONS[name]
    if cfg.fusion_weights is None:
        return equal_fusion(active_streams)
    kept = {
        (view, stream): w
        for view, stream, w in cfg.fusion_weights
        if stream in active_streams and w > 0
    }
    if not kept:
        raise ConfigError(f"fusion weights leave no active pair for ablation {name!r}")
    return FusionConfig(kept)


# --------------------------------------------------------------------------
# stage: train (standalone full-dataset models, one per view and stream)


def stage_train(cfg: PipelineConfig, jobs: int = 1) -> int:
    out = Path(cfg.out)
    items = _load_items(cfg, STREAMS)
    mdir = out / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    trained = 0
    for vi, view in enumerate(VIEWS):
        for si, stream in enumerate(STREAMS):
            arrays = []
            data = []
            for it in items:
                label_idx = EXPRESSIONS.index(it.label)
                variants = (it.streams[(view, stream)],) + it.train_extras.get((view, stream), ())
                for arr in variants:
                    arrays.append((it.seq_id, arr))
                    data.append((arr, label_idx))
            state = fusion_eval.default_fit_reducer(0, stream, arrays)
            reduced = [(fusion_eval.default_reduce(stream, state, arr), y) for arr, y in data]
            shift, scale = fit_input_scaler([arr for arr, _ in reduced])
            scaled = [((arr - shift) / scale, y) for arr, y in reduced]
            seed = int(derived_rng(cfg.seed, 17, vi, si).integers(0, 2**31 - 1))
            history: list = []
            model = sequence_model.train(
                scaled,
                cfg.model.train_config(seed),
                hidden_dim=cfg.model.hidden_dim,
                class_count=len(EXPRESSIONS),
                history=history,
            )
            stem = f"{view}_{stream}"
            _atomic_write(mdir / f"{stem}.csv", lambda p, m=model: write_checkpoint(m, p))
            _atomic_write(mdir / f"{stem}_log.csv", lambda p, h=history: write_training_log(h, p))
            _atomic_write(
                mdir / f"{stem}_scaler.csv",
                lambda p, rows=np.vstack([shift, scale]): write_feature_csv(rows, p),
            )
            if state is not None:
                _atomic_write(mdir / f"{stem}_indices.csv", lambda p, s=state: write_index_set(s, p))
            trained += 1
    log.info("train: %d full-dataset models in %s", trained, mdir)
    return trained


# --------------------------------------------------------------------------
# stage: eval


def stage_eval(cfg: PipelineConfig, ablation: str = "all") -> dict:
    out = Path(cfg.out)
    names = list(ABLATIONS) if ablation == "all" else [ablation]
    if any(n not in ABLATIONS for n in names):
        raise ConfigError(f"unknown ablation {ablation!r}")
    needed = sorted({s for n in names for s in ABLATIONS[n]})
    items = _load_items(cfg, needed)
    train_hook, predict_hook = _model_hooks(cfg)
    reports = {}
    model_cache: dict = {}  # shared across ablations: same (fold, view, stream) seed
    for name in names:
        log.info("eval: running ablation %s", name)
        reports[name] = fusion_eval.run_cv(
            items,
            _fusion_for(cfg, name),
            train_hook,
            predict_hook,
            folds=cfg.eval.folds,
            seed=cfg.seed,
            model_cache=model_cache,
        )
    rdir = out / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    for name, report in reports.items():
        safe = name.replace("+", "_")
        _atomic_write(rdir / f"confusion_{safe}.csv", lambda p, r=report: fusion_eval.write_confusion_csv(r, p))
        _atomic_write(rdir / f"report_{safe}.txt", lambda p, r=report: fusion_eval.write_report_text(r, p))
    _atomic_write(rdir / "ablation.csv", lambda p: fusion_eval.write_ablation_csv(reports, p))
    log.info("eval: wrote %d reports to %s", len(reports), rdir)
    return reports


# --------------------------------------------------------------------------
# pipeline driver


def write_manifest(cfg: PipelineConfig, timings: dict[str, float]) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "config": config_to_dict(cfg),
        "file_formats": FORMAT_VERSIONS,
        "stage_seconds": {k: round(v, 3) for k, v in timings.items()},
    }
    _atomic_write(
        out / "run_manifest.json",
        lambda p: Path(p).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8"),
    )


def run_stage(name: str, cfg: PipelineConfig, jobs: int = 1, ablation: str = "all"):
    """Run one stage with stage-labeled error context."""
    if name not in STAGE_ORDER + ("train",):
        raise ConfigError(f"unknown stage {name!r}")
    try:
        if name == "synth":
            return stage_synth(cfg)
        if name == "render":
            return stage_render(cfg, jobs)
        if name == "augment":
            return stage_augment(cfg, jobs)
        if name == "landmarks":
            return stage_landmarks(cfg, jobs)
        if name == "encode":
            return stage_encode(cfg, jobs)
        if name == "train":
            return stage_train(cfg, jobs)
        return stage_eval(cfg, ablation)
    except StageError:
        raise
    except (Sparse4DError, OSError, ValueError) as e:
        raise StageError(f"{name}: {e}") from e


def run_pipeline(cfg: PipelineConfig, ablation: str = "all", jobs: int = 1) -> dict:
    timings: dict[str, float] = {}
    reports: dict = {}
    for name in STAGE_ORDER:
        start = time.perf_counter()
        result = run_stage(name, cfg, jobs=jobs, ablation=ablation)
        timings[name] = time.perf_counter() - start
        log.info("stage %s finished in %.2fs", name, timings[name])
        if name == "eval":
            reports = result
    write_manifest(cfg, timings)
    return reports


# --------------------------------------------------------------------------
# dry-run plan


def plan_lines(cfg: PipelineConfig, command: str = "pipeline", ablation: str = "all") -> list[str]:
    n_seq = cfg.data.subjects * len(EXPRESSIONS) * cfg.data.sequences_per_class
    T = cfg.data.frames
    V = len(VIEWS)
    count = cfg.augment.count
    names = list(ABLATIONS) if ablation == "all" else [ablation]
    per_stage = {
        "synth": f"synth: {n_seq} sequences ({cfg.data.subjects} subjects x "
        f"{len(EXPRESSIONS)} classes x {cfg.data.sequences_per_class} repeats), {T} frames each",
        "render": f"render: {n_seq * V * T} frame renders ({n_seq} sequences x {V} views x {T} frames)",
        "augment": f"augment: {n_seq * V * T * count} generated images ({count} per frame)",
        "landmarks": f"landmarks: {n_seq * V} descriptor tables",
        "encode": f"encode: {n_seq * V * (1 + count)} image sets "
        f"({n_seq} sequences x {V} views x (1 + {count}))",
        "train": f"train: {V * len(STREAMS)} full-dataset models",
        "eval": f"eval: {len(names)} ablation report(s) over {cfg.eval.folds} folds",
    }
    header = [f"out: {cfg.out}", f"seed: {cfg.seed}", f"config_hash: {config_hash(cfg)}"]
    if command == "pipeline":
        return header + [per_stage[s] for s in STAGE_ORDER]
    return header + [per_stage[command]]
