"""Datasets with several ground-truth aspects, a synthetic shapes-and-colours
generator, CSV exports and a PCA projection for plotting."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import InputError

SHAPES = ("circle", "square", "triangle", "cross")
COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
BACKGROUND = 0.5


@dataclass
class SyntheticSpec:
    shapes: tuple = SHAPES
    colors: tuple = tuple(COLORS)
    per_cell: int = 8
    image_size: int = 32
    radius: float = 0.28          # fraction of image size
    position_jitter: float = 0.1  # max centre offset, fraction of image size
    scale_jitter: float = 0.15    # max relative radius change
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.shapes = tuple(self.shapes)
        self.colors = tuple(self.colors)
        if len(set(self.shapes)) < 2 or len(set(self.colors)) < 2:
            raise InputError("synthetic data needs at least 2 shapes and 2 colours")
        unknown = set(self.shapes) - set(SHAPES) | set(self.colors) - set(COLORS)
        if unknown:
            raise InputError(f"unknown shapes/colours: {sorted(unknown)}")
        if self.per_cell < 1 or self.image_size < 4:
            raise InputError("per_cell must be >= 1 and image_size >= 4")


@dataclass
class DatasetManifest:
    aspects: list
    entries: list                  # [{"path": str, "labels": {aspect: str}}]
    root: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.entries)

    @property
    def paths(self):
        return [e["path"] for e in self.entries]

    def labels(self, aspect):
        if aspect not in self.aspects:
            raise InputError(f"aspect {aspect!r} not in manifest aspects {self.aspects}")
        return [e["labels"][aspect] for e in self.entries]

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    def load_images(self):
        """All images as one ``(n, 3, H, W)`` float32 array, in manifest order."""
        images = [load_image(self.resolve(p)) for p in self.paths]
        if len({im.shape for im in images}) > 1:
            raise InputError("manifest images do not share one size")
        return np.stack(images)

    def to_dict(self):
        return {"aspects": list(self.aspects), "entries": self.entries}


def shape_mask(shape, size, cx, cy, r):
    """Boolean ``size × size`` mask of one filled shape (pixel centres)."""
    y, x = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = x - cx, y - cy
    if shape == "circle":
        return dx ** 2 + dy ** 2 <= r ** 2
    if shape == "square":
        half = 0.85 * r
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if shape == "triangle":
        # apex up, base of width 2r at the bottom
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2)
    if shape == "cross":
        arm = r / 3
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    raise InputError(f"unknown shape {shape!r}")


def render_synthetic(spec):
    """Render the dataset in memory.

    Returns ``(images, labels)``: a uint8 array ``(n, 3, S, S)`` and a list of
    ``{"shape": ..., "color": ...}`` dicts.  Images are laid out
    shape-major, then colour, then copy index.
    """
    rng = np.random.default_rng(spec.seed)
    s = spec.image_size
    images, labels = [], []
    for shape, color in product(spec.shapes, spec.colors):
        for _ in range(spec.per_cell):
            cx, cy = s / 2 + rng.uniform(-1, 1, 2) * spec.position_jitter * s
            r = spec.radius * s * (1 + rng.uniform(-1, 1) * spec.scale_jitter)
            mask = shape_mask(shape, s, cx, cy, r)
            img = np.full((3, s, s), BACKGROUND)
            img[:, mask] = np.asarray(COLORS[color])[:, None]
            if spec.noise_std > 0:
                img = img + rng.normal(0.0, spec.noise_std, img.shape)
            images.append(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8))
            labels.append({"shape": shape, "color": color})
    return np.stack(images), labels


def generate_synthetic(spec, out_dir):
    """Write PNGs plus ``manifest.json`` under ``out_dir``; return the manifest."""
    out = Path(out_dir)
    try:
        (out / "img").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    images, labels = render_synthetic(spec)
    entries = []
    for i, (img, lab) in enumerate(zip(images, labels)):
        rel = f"img/{i:04d}.png"
        try:
            PILImage.fromarray(img.transpose(1, 2, 0), "RGB").save(out / rel)
        except OSError as exc:
            raise InputError(f"cannot write {out / rel}: {exc}") from exc
        entries.append({"path": rel, "labels": {"color": lab["color"], "shape": lab["shape"]}})
    manifest = DatasetManifest(["color", "shape"], entries, out)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
    return manifest


def load_image(path):
    """Decode an 8-bit image to a ``(3, H, W)`` float32 array in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"image file not found: {path}")
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc
    return (arr / 255.0).transpose(2, 0, 1).copy()


def load_manifest(path):
    """Parse and validate a manifest; image paths resolve against its folder."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    entries = raw.get("entries") or []
    if not entries:
        raise InputError(f"manifest {path} has no entries")
    aspects = raw.get("aspects") or sorted(entries[0].get("labels", {}))
    for i, e in enumerate(entries):
        if "path" not in e:
            raise InputError(f"manifest entry {i} has no path")
        if set(e.get("labels", {})) != set(aspects):
            raise InputError(
                f"manifest entry {i} ({e['path']}) has aspects {sorted(e.get('labels', {}))}, "
                f"expected {sorted(aspects)}")
        e["labels"] = {k: str(v) for k, v in e["labels"].items()}
    manifest = DatasetManifest(list(aspects), entries, path.parent)
    for p in manifest.paths:
        if not manifest.resolve(p).is_file():
            raise InputError(f"image file not found: {manifest.resolve(p)}")
    return manifest


def _fmt(v):
    return f"{float(v):.9g}"


def _check_rows(n, manifest, what):
    if n != len(manifest):
        raise InputError(f"{what}: {n} rows but manifest has {len(manifest)} entries")


def export_embeddings(embeddings, manifest, path):
    emb = np.asarray(embeddings)
    _check_rows(len(emb), manifest, "export_embeddings")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path"] + [f"e{j}" for j in range(emb.shape[1])])
        for p, row in zip(manifest.paths, emb):
            w.writerow([p] + [_fmt(v) for v in row])


def read_embeddings(path):
    """Return ``(paths, embeddings)`` from an embeddings CSV.

    Values are read back as float32, which ``%.9g`` round-trips exactly.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "path":
        raise InputError(f"{path} is not an embeddings CSV")
    return [r[0] for r in rows[1:]], np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float32)


def export_clustering(result, manifest, path):
    _check_rows(len(result.labels), manifest, "export_clustering")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "aspect", "predicted"])
        for p, lab in zip(manifest.paths, result.labels):
            w.writerow([p, result.aspect_tag, int(lab)])


def read_clustering(path):
    """Return ``(paths, aspect_tag, predicted labels)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InputError(f"{path} holds no clustering rows")
    return ([r["path"] for r in rows], rows[0]["aspect"],
            np.array([int(r["predicted"]) for r in rows]))


def pca_project(embeddings, out_dim=2):
    """Project centred rows onto the top principal axes.

    Returns ``(coords, explained)`` where ``explained`` holds each
    component's fraction of the total variance.  Each axis is signed so its
    largest-magnitude loading is positive.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise InputError(f"pca_project: need an n×d matrix with n >= 2, got {x.shape}")
    if out_dim > x.shape[1]:
        raise InputError(f"pca_project: out_dim {out_dim} exceeds dimension {x.shape[1]}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (len(x) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:out_dim]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    pivot = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[pivot, np.arange(out_dim)])
    total = np.clip(np.trace(cov), 0.0, None)
    explained = vals / total if total > 0 else np.zeros(out_dim)
    return xc @ vecs, explained


def export_projection(coords, manifest, predicted, path):
    _check_rows(len(coords), manifest, "export_projection")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "x", "y"] + [f"{a}_true" for a in manifest.aspects] + ["predicted"])
        for i, e in enumerate(manifest.entries):
            w.writerow([e["path"], _fmt(coords[i, 0]), _fmt(coords[i, 1])]
                       + [e["labels"][a] for a in manifest.aspects] + [int(predicted[i])])


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
