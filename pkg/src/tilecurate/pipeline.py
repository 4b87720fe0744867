"""Resumable pipeline stages over a fixed project directory layout.

Each stage writes its outputs plus a marker file recording a fingerprint of
its inputs and the checksums of its outputs. Re-running a stage whose
fingerprint and outputs are unchanged is a no-op; editing config or inputs
invalidates the marker. A project lock file serializes stage runs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import autoencoder, clustering, curation, exports, features, store
from .autoencoder import AeArchitecture, TrainConfig
from .clustering import ClusterConfig
from .extract import (
    ConfigurationError,
    ExtractionConfig,
    TileRecord,
    extract_slide,
    read_manifest,
    write_manifest,
)
from .imgqual import AugmentationPolicy
from .slides import open_slide

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

SUBDIRS = ("tiles", "embeddings", "clusters", "journal", "dataset", "exports")

STAGE_DEPS: dict[str, list[str]] = {
    "extract": [],
    "train-ae": ["extract"],
    "embed": ["train-ae"],
    "reduce": ["embed"],
    "cluster": ["reduce"],
    "sample": ["cluster"],
    "assemble": ["sample"],
    "export-qupath": ["assemble"],
    "render-map": ["assemble"],
    "eval-seg": [],
}

CONFIG_DEFAULTS: dict = {
    "slides": [],
    "tile_px": 256,
    "mask_downsample": 32,
    "tissue_threshold": 0.25,
    "saturation_floor": 0.05,
    "blank_variance_floor": 1e-4,
    "loss": "ssim",
    "learning_rate": 1e-4,
    "weight_decay": 1e-5,
    "batch_size": 32,
    "epochs": 10,
    "augment": True,
    "max_train_tiles": 0,
    "target_ssim": 0.0,
    "max_steps": 0,
    "pca_dim": 256,
    "m": 400,
    "K": 0,
    "g": 5,
    "sample_fraction": 0.2,
    "sqrt_rule": False,
    "k_nn": 4,
    "cap_per_class": 70000,
    "map_scale": 16,
    "coverage_threshold": 0.5,
    "pred_grid": "",
    "gt_mask": "",
    "positive_class": "TUM",
    "seed": 0,
}


class StageDependencyError(RuntimeError):
    def __init__(self, stage: str, missing: str):
        super().__init__(f"stage {stage!r} requires {missing!r} to run first")
        self.missing = missing


def transitive_deps(stage: str) -> list[str]:
    """All upstream stages of `stage` in execution order."""
    ordered: list[str] = []

    def walk(s: str) -> None:
        for dep in STAGE_DEPS[s]:
            walk(dep)
            if dep not in ordered:
                ordered.append(dep)

    walk(stage)
    return ordered


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"config parse error in {path}: {exc}") from exc
    unknown = set(raw) - set(CONFIG_DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    cfg = {**CONFIG_DEFAULTS, **raw}
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    def positive(key):
        if not isinstance(cfg[key], (int, float)) or cfg[key] <= 0:
            raise ConfigurationError(f"config key {key!r} must be positive, got {cfg[key]!r}")

    for key in ("tile_px", "mask_downsample", "batch_size", "epochs", "g", "m",
                "learning_rate", "sample_fraction", "cap_per_class", "map_scale"):
        positive(key)
    for key in ("tissue_threshold", "saturation_floor", "coverage_threshold"):
        if not 0.0 <= cfg[key] <= 1.0:
            raise ConfigurationError(f"config key {key!r} must be in [0, 1], got {cfg[key]!r}")
    if cfg["sample_fraction"] > 1.0:
        raise ConfigurationError(f"config key 'sample_fraction' must be <= 1, got {cfg['sample_fraction']!r}")
    if cfg["loss"] not in ("ssim", "mse"):
        raise ConfigurationError(f"config key 'loss' must be 'ssim' or 'mse', got {cfg['loss']!r}")
    for key in ("K", "k_nn", "max_train_tiles", "max_steps", "pca_dim", "seed"):
        if not isinstance(cfg[key], int) or cfg[key] < 0:
            raise ConfigurationError(f"config key {key!r} must be a nonnegative integer, got {cfg[key]!r}")


def extraction_config(cfg: dict) -> ExtractionConfig:
    return ExtractionConfig(
        tile_px=cfg["tile_px"],
        mask_downsample=cfg["mask_downsample"],
        tissue_threshold=cfg["tissue_threshold"],
        saturation_floor=cfg["saturation_floor"],
        blank_variance_floor=cfg["blank_variance_floor"],
    )


def train_config(cfg: dict) -> TrainConfig:
    augment = AugmentationPolicy(seed=cfg["seed"]) if cfg["augment"] else None
    return TrainConfig(
        loss=cfg["loss"],
        learning_rate=cfg["learning_rate"],
        weight_decay=cfg["weight_decay"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        augment=augment,
        target_ssim=cfg["target_ssim"] or None,
        max_steps=cfg["max_steps"] or None,
    )


def cluster_config(cfg: dict) -> ClusterConfig:
    return ClusterConfig(
        m=cfg["m"],
        K=cfg["K"] or None,
        g=cfg["g"],
        sample_fraction=cfg["sample_fraction"],
        seed=cfg["seed"],
        sqrt_rule=cfg["sqrt_rule"],
        k_nn=cfg["k_nn"],
    )


class Project:
    def __init__(self, directory: str | Path):
        self.dir = Path(directory)

    def prepare(self) -> None:
        for sub in SUBDIRS + ("markers",):
            (self.dir / sub).mkdir(parents=True, exist_ok=True)

    def marker_path(self, stage: str) -> Path:
        return self.dir / "markers" / f"{stage}.json"

    def stage_done(self, stage: str) -> bool:
        """A marker counts only while every recorded output passes its checksum."""
        marker = self.marker_path(stage)
        if not marker.exists():
            return False
        data = json.loads(marker.read_text(encoding="utf-8"))
        for rel, digest in data.get("outputs", {}).items():
            path = self.dir / rel
            if not path.exists() or _sha256(path) != digest:
                marker.unlink()
                return False
        return True

    def marker_fingerprint(self, stage: str) -> str | None:
        marker = self.marker_path(stage)
        if not marker.exists():
            return None
        return json.loads(marker.read_text(encoding="utf-8")).get("fingerprint")

    def write_marker(self, stage: str, fingerprint: str, outputs: list[Path]) -> None:
        data = {
            "stage": stage,
            "fingerprint": fingerprint,
            "outputs": {str(p.relative_to(self.dir)): _sha256(p) for p in outputs},
        }
        self.marker_path(stage).write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")

    def lock(self) -> "ProjectLock":
        return ProjectLock(self.dir / ".lock")


class ProjectLock:
    def __init__(self, path: Path):
        self.path = path

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"project is locked by another run ({self.path})")
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _fingerprint(parts: dict) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()


def _progress(stage: str):
    def report(done: int, total: int) -> None:
        print(f"stage={stage} done={done} total={total}", file=sys.stderr)

    return report


def _config_slice(cfg: dict, keys: tuple[str, ...]) -> dict:
    return {k: cfg[k] for k in keys}


def _load_tiles(project: Project, records: list[TileRecord]) -> np.ndarray:
    tiles = []
    for r in records:
        with Image.open(project.dir / "tiles" / r.path) as img:
            tiles.append(np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0)
    return np.stack(tiles)


# --- stage bodies -------------------------------------------------------------

def _stage_extract(project: Project, cfg: dict, workers: int) -> list[Path]:
    if not cfg["slides"]:
        raise ConfigurationError("config key 'slides' must list at least one slide image")
    ecfg = extraction_config(cfg)
    all_records = []
    slide_lines = ["#slide_id\twidth\theight"]
    for slide_path in cfg["slides"]:
        slide = open_slide(slide_path)
        records = extract_slide(
            slide, ecfg, project.dir / "tiles", workers=workers, progress=_progress("extract")
        )
        all_records.extend(records)
        w, h = slide.dimensions
        slide_lines.append(f"{slide.slide_id}\t{w}\t{h}")
    manifest = project.dir / "tiles" / "manifest.tsv"
    write_manifest(manifest, all_records)
    slides_file = project.dir / "tiles" / "slides.tsv"
    slides_file.write_text("\n".join(slide_lines) + "\n", encoding="utf-8")
    outputs = [manifest, slides_file]
    outputs += [project.dir / "tiles" / r.path for r in all_records]
    return outputs


def _stage_train_ae(project: Project, cfg: dict, workers: int) -> list[Path]:
    records = read_manifest(project.dir / "tiles" / "manifest.tsv")
    if not records:
        raise ConfigurationError("no tiles extracted; nothing to train on")
    if cfg["max_train_tiles"]:
        records = records[: cfg["max_train_tiles"]]
    tiles = _load_tiles(project, records)
    arch = AeArchitecture(tile_px=cfg["tile_px"])
    checkpoint, history = autoencoder.train_autoencoder(tiles, train_config(cfg), arch)
    ckpt_dir = project.dir / "embeddings" / "ae"
    autoencoder.save_checkpoint(checkpoint, ckpt_dir)
    metrics = project.dir / "embeddings" / "metrics.csv"
    autoencoder.write_metrics_csv(metrics, history)
    print(f"stage=train-ae done={len(history)} total={len(history)}", file=sys.stderr)
    return [metrics, *sorted(ckpt_dir.iterdir())]


def _stage_embed(project: Project, cfg: dict, workers: int) -> list[Path]:
    records = read_manifest(project.dir / "tiles" / "manifest.tsv")
    checkpoint = autoencoder.load_checkpoint(project.dir / "embeddings" / "ae")
    tiles = _load_tiles(project, records)
    latent = autoencoder.encode_tiles(
        checkpoint, tiles, [r.tile_id for r in records], batch_size=cfg["batch_size"]
    )
    out = project.dir / "embeddings" / "latent.dcpp"
    store.write_embeddings(out, latent)
    print(f"stage=embed done={latent.rows} total={latent.rows}", file=sys.stderr)
    return [out, out.with_name(out.name + ".ids")]


def _stage_reduce(project: Project, cfg: dict, workers: int) -> list[Path]:
    latent = store.read_embeddings(project.dir / "embeddings" / "latent.dcpp")
    pooled = features.global_average_pool(latent)
    out_dim = cfg["pca_dim"]
    if pooled.rows < out_dim:
        raise ConfigurationError(
            f"config key 'pca_dim' is {out_dim} but only {pooled.rows} tiles exist; "
            f"set pca_dim <= {pooled.rows}"
        )
    model = features.pca_fit(pooled, out_dim)
    reduced = features.pca_transform(model, pooled)
    projected = features.project_2d(reduced)
    paths = {
        "pooled.dcpp": pooled,
        "reduced.dcpp": reduced,
        "projected.dcpp": projected,
    }
    outputs = []
    for name, em in paths.items():
        path = project.dir / "embeddings" / name
        store.write_embeddings(path, em)
        outputs += [path, path.with_name(path.name + ".ids")]
    pca_path = project.dir / "embeddings" / "pca.dcpp"
    store.write_pca_model(pca_path, model)
    outputs.append(pca_path)
    print(f"stage=reduce done={reduced.rows} total={reduced.rows}", file=sys.stderr)
    return outputs


def _stage_cluster(project: Project, cfg: dict, workers: int) -> list[Path]:
    reduced = store.read_embeddings(project.dir / "embeddings" / "reduced.dcpp")
    ccfg = cluster_config(cfg)
    model = clustering.build_cluster_model(reduced.data, reduced.tile_ids, ccfg)
    report = project.dir / "clusters" / "report.tsv"
    clustering.write_cluster_report(report, model, k_nn=ccfg.k_nn)
    print(f"stage=cluster done={model.k} total={model.k}", file=sys.stderr)
    return [report]


def _stage_sample(project: Project, cfg: dict, workers: int) -> list[Path]:
    report = clustering.read_cluster_report(project.dir / "clusters" / "report.tsv")
    samples = clustering.sample_report(report, cfg["sample_fraction"], cfg["seed"])
    out = project.dir / "clusters" / "samples.tsv"
    clustering.write_samples(out, samples)
    total = sum(len(v) for v in samples.values())
    print(f"stage=sample done={total} total={total}", file=sys.stderr)
    return [out]


def _stage_assemble(project: Project, cfg: dict, workers: int) -> list[Path]:
    report = clustering.read_cluster_report(project.dir / "clusters" / "report.tsv")
    samples = clustering.read_samples(project.dir / "clusters" / "samples.tsv")
    journal = curation.Journal(project.dir / "journal" / "events.jsonl")
    state = curation.CurationState.replay(report.neighbors, samples, journal.events())
    if not state.labels:
        raise ConfigurationError(
            "no labeled clusters in the journal; label clusters before 'assemble'"
        )
    records = {r.tile_id: r for r in read_manifest(project.dir / "tiles" / "manifest.tsv")}
    manifest = curation.assemble_dataset(state, records, cfg["cap_per_class"], cfg["seed"])
    manifest_path = project.dir / "dataset" / "manifest.tsv"
    curation.write_dataset_manifest(manifest_path, manifest)
    curation.materialize_dataset(manifest, project.dir / "tiles", project.dir / "dataset")
    outputs = [manifest_path]
    for tissue, tile_records in manifest.per_class.items():
        outputs += [project.dir / "dataset" / tissue / Path(r.path).name for r in tile_records]
    print(f"stage=assemble done={manifest.total} total={manifest.total}", file=sys.stderr)
    return outputs


def _labeled_tiles_by_slide(project: Project) -> dict[str, list[tuple[TileRecord, str]]]:
    by_slide: dict[str, list[tuple[TileRecord, str]]] = {}
    path = project.dir / "dataset" / "manifest.tsv"
    if not path.exists():
        raise ConfigurationError("dataset manifest missing; run 'assemble' first")
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        tissue, slide_id, tile_id, x, y, w, h, frac, rel = line.split("\t")
        record = TileRecord(slide_id, tile_id, int(x), int(y), int(w), int(h), float(frac), rel)
        by_slide.setdefault(slide_id, []).append((record, tissue))
    return by_slide


def _slide_dims(project: Project) -> dict[str, tuple[int, int]]:
    dims = {}
    for line in (project.dir / "tiles" / "slides.tsv").read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        slide_id, w, h = line.split("\t")
        dims[slide_id] = (int(w), int(h))
    return dims


def _stage_export_qupath(project: Project, cfg: dict, workers: int) -> list[Path]:
    outputs = []
    for slide_id, tiles in _labeled_tiles_by_slide(project).items():
        doc = exports.export_qupath_geojson(tiles)
        path = project.dir / "exports" / f"{slide_id}.geojson"
        exports.write_geojson(path, doc)
        outputs.append(path)
    print(f"stage=export-qupath done={len(outputs)} total={len(outputs)}", file=sys.stderr)
    return outputs


def _stage_render_map(project: Project, cfg: dict, workers: int) -> list[Path]:
    dims = _slide_dims(project)
    outputs = []
    for slide_id, tiles in _labeled_tiles_by_slide(project).items():
        image = exports.render_tissue_map(
            dims[slide_id], tiles, scale=cfg["map_scale"], tile_px=cfg["tile_px"]
        )
        path = project.dir / "exports" / f"{slide_id}_map.png"
        exports.write_tissue_map(path, image)
        outputs.append(path)
    print(f"stage=render-map done={len(outputs)} total={len(outputs)}", file=sys.stderr)
    return outputs


def _stage_eval_seg(project: Project, cfg: dict, workers: int) -> list[Path]:
    for key in ("pred_grid", "gt_mask"):
        if not cfg[key]:
            raise ConfigurationError(f"config key {key!r} is required for 'eval-seg'")
    grid_rows = [
        line.split("\t")
        for line in Path(cfg["pred_grid"]).read_text(encoding="utf-8").splitlines()
        if line
    ]
    pred = np.array(grid_rows)
    with Image.open(cfg["gt_mask"]) as img:
        mask = np.asarray(img.convert("L")) > 127
    result = exports.eval_tile_segmentation(
        pred, mask, cfg["positive_class"], cfg["tile_px"], cfg["coverage_threshold"]
    )
    out = project.dir / "exports" / "segmentation_eval.json"
    out.write_text(json.dumps(result, indent=2, sort_keys=True), encoding="utf-8")
    print("stage=eval-seg done=1 total=1", file=sys.stderr)
    return [out]


STAGE_BODIES = {
    "extract": _stage_extract,
    "train-ae": _stage_train_ae,
    "embed": _stage_embed,
    "reduce": _stage_reduce,
    "cluster": _stage_cluster,
    "sample": _stage_sample,
    "assemble": _stage_assemble,
    "export-qupath": _stage_export_qupath,
    "render-map": _stage_render_map,
    "eval-seg": _stage_eval_seg,
}

# config keys that participate in each stage's fingerprint
STAGE_KEYS: dict[str, tuple[str, ...]] = {
    "extract": ("slides", "tile_px", "mask_downsample", "tissue_threshold",
                "saturation_floor", "blank_variance_floor"),
    "train-ae": ("loss", "learning_rate", "weight_decay", "batch_size", "epochs",
                 "augment", "max_train_tiles", "target_ssim", "max_steps", "seed", "tile_px"),
    "embed": ("batch_size",),
    "reduce": ("pca_dim",),
    "cluster": ("m", "K", "g", "sqrt_rule", "seed", "k_nn"),
    "sample": ("sample_fraction", "seed"),
    "assemble": ("cap_per_class", "seed"),
    "export-qupath": (),
    "render-map": ("map_scale", "tile_px"),
    "eval-seg": ("pred_grid", "gt_mask", "positive_class", "coverage_threshold", "tile_px"),
}


def stage_fingerprint(project: Project, stage: str, cfg: dict) -> str:
    parts: dict = {"config": _config_slice(cfg, STAGE_KEYS[stage])}
    if stage == "extract":
        parts["inputs"] = {s: _sha256(Path(s)) for s in cfg["slides"]}
    if stage == "eval-seg":
        parts["inputs"] = {
            k: _sha256(Path(cfg[k])) for k in ("pred_grid", "gt_mask") if cfg[k] and Path(cfg[k]).exists()
        }
    if stage == "assemble":
        journal = project.dir / "journal" / "events.jsonl"
        parts["journal"] = _sha256(journal) if journal.exists() else ""
    for dep in STAGE_DEPS[stage]:
        parts.setdefault("deps", {})[dep] = project.marker_fingerprint(dep)
    return _fingerprint(parts)


def run_stage(
    stage: str,
    project_dir: str | Path,
    cfg: dict,
    workers: int = 1,
) -> str:
    """Run one stage; returns 'ran' or 'skipped' (marker valid and inputs unchanged)."""
    if stage not in STAGE_BODIES:
        raise ConfigurationError(f"unknown stage {stage!r}; choose from {sorted(STAGE_BODIES)}")
    project = Project(project_dir)
    project.prepare()
    with project.lock():
        for dep in transitive_deps(stage):
            if not project.stage_done(dep):
                raise StageDependencyError(stage, dep)
        fingerprint = stage_fingerprint(project, stage, cfg)
        if project.stage_done(stage) and project.marker_fingerprint(stage) == fingerprint:
            print(f"stage={stage} done=0 total=0 (up to date)", file=sys.stderr)
            return "skipped"
        outputs = STAGE_BODIES[stage](project, cfg, workers)
        project.write_marker(stage, fingerprint, outputs)
    return "ran"
