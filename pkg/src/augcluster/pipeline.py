"""End-to-end runs: train one encoder per augmentation set, embed, cluster,
evaluate and export.

Each augmentation set's outputs go to ``<out_dir>/<aspect_tag>/`` and a
combined ``report.json`` sits at the top of ``out_dir``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .augment import load_pipeline
from .clustering import kmeans
from .data import (
    ensure_dir,
    export_clustering,
    export_embeddings,
    export_projection,
    load_manifest,
    pca_project,
)
from .encoder import ArchConfig, embed, save_checkpoint
from .errors import AugClusterError, InputError
from .metrics import nmi, rand_index
from .training import TrainConfig, grid_search, train, write_log

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    manifest: str
    out_dir: str
    pipelines: list = field(default_factory=lambda: ["color", "shape"])
    train: TrainConfig = field(default_factory=TrainConfig)
    arch: ArchConfig | None = None
    k: dict = field(default_factory=dict)          # aspect -> cluster count
    seed: int = 0
    grid: dict | None = None                       # {"learning_rates": [...], ...}
    search_epochs: int | None = None
    subset_size: int | None = None
    workers: int = 1


class StageError(AugClusterError):
    """Wraps an error with the stage and aspect it came from."""

    def __init__(self, stage, aspect, cause):
        super().__init__(f"[{stage}:{aspect}] {cause}")
        self.stage, self.aspect, self.cause = stage, aspect, cause


def _stage(stage, aspect, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except AugClusterError as exc:
        raise StageError(stage, aspect, exc) from exc


def fit_encoder(images, pipeline, train_cfg, arch=None, grid=None, search_epochs=None,
                workers=1):
    """Train one encoder, optionally picking hyperparameters by grid search.

    With ``search_epochs`` the grid runs are shortened and the winning
    configuration is retrained with the full epoch budget.  The input size
    and channel count of ``arch`` are taken from ``images``.
    """
    images = np.asarray(images)
    if images.ndim != 4:
        raise InputError(f"expected an (n, C, H, W) image stack, got shape {images.shape}")
    # input geometry always follows the data
    arch = replace(arch or ArchConfig(), input_size=images.shape[2:], in_channels=images.shape[1])
    fitted = pipeline.fit(images, seed=train_cfg.seed)
    if not grid:
        return train(images, fitted, train_cfg, arch=arch, workers=workers)
    base = replace(train_cfg, max_epochs=search_epochs) if search_epochs else train_cfg
    best, _ = grid_search(images, fitted, base, arch=arch, workers=workers, **grid)
    if not search_epochs:
        return best
    return train(images, fitted, replace(best.config, max_epochs=train_cfg.max_epochs),
                 arch=arch, workers=workers)


def evaluate(manifest, labels, aspect_tag):
    """Scores of one predicted labeling against the aspect's ground truth."""
    if aspect_tag not in manifest.aspects:
        raise InputError(f"aspect {aspect_tag!r} has no ground truth (manifest aspects: "
                         f"{manifest.aspects})")
    y = manifest.labels(aspect_tag)
    return {
        "nmi": nmi(y, labels),
        "rand_index": rand_index(y, labels),
        "n": len(y),
        "k_true": len(set(y)),
        "k_pred": len(set(np.asarray(labels).tolist())),
        "nmi_by_aspect": {a: nmi(manifest.labels(a), labels) for a in manifest.aspects},
    }


def cluster_count(manifest, aspect_tag, k_map):
    if aspect_tag in k_map:
        return int(k_map[aspect_tag])
    return len(set(manifest.labels(aspect_tag)))


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(cfg):
    """Run every configured augmentation set and return the combined report."""
    manifest = load_manifest(cfg.manifest)
    pipelines = [load_pipeline(p) for p in cfg.pipelines]
    if cfg.subset_size is not None:
        pipelines = [replace(p, subset_size=cfg.subset_size) for p in pipelines]
    tags = [p.aspect_tag for p in pipelines]
    if len(set(tags)) != len(tags):
        raise InputError(f"augmentation sets must have distinct aspect tags, got {tags}")
    for tag in tags:
        if tag not in manifest.aspects:
            raise InputError(f"aspect {tag!r} not in manifest aspects {manifest.aspects}")
    images = manifest.load_images()
    train_cfg = replace(cfg.train, seed=cfg.seed)
    out = ensure_dir(cfg.out_dir)

    report = {"aspects": {}, "seed": cfg.seed, "version": __version__}
    for pipe in pipelines:
        tag = pipe.aspect_tag
        log.info("training encoder for aspect %s", tag)
        res = _stage("train", tag, fit_encoder, images, pipe, train_cfg, cfg.arch, cfg.grid,
                     cfg.search_epochs, cfg.workers)
        sub = ensure_dir(out / tag)
        save_checkpoint(sub / "checkpoint.json", res.params, res.config.to_dict(), tag,
                        res.bank.prototypes)
        write_log(res.log, sub / "train_log.csv")

        emb = _stage("embed", tag, embed, res.params, images)
        export_embeddings(emb, manifest, sub / "embeddings.csv")
        k = cluster_count(manifest, tag, cfg.k)
        clus = _stage("cluster", tag, kmeans, emb.astype(np.float64), k, seed=cfg.seed,
                      aspect_tag=tag)
        export_clustering(clus, manifest, sub / "clustering.csv")
        coords, _ = _stage("project", tag, pca_project, emb)
        export_projection(coords, manifest, clus.labels, sub / "projection.csv")

        entry = _stage("eval", tag, evaluate, manifest, clus.labels, tag)
        entry.update(epochs_ran=res.epochs_ran, best_epoch=res.best_epoch,
                     final_loss=res.final_loss, config_hash=res.config.digest(),
                     train_config=res.config.to_dict())
        report["aspects"][tag] = entry
    write_json(report, out / "report.json")
    return report
