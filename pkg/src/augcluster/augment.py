"""Image augmentations, adaptive parameter selection and random-subset
composition.

Images are float arrays shaped ``(C, H, W)`` with values in [0, 1]; the
geometric ops only touch the last two axes, so bare ``(H, W)`` arrays work
for them too.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .clustering import kmeans
from .errors import ConfigurationError, DimensionError, InputError

KINDS = ("horizontal_flip", "rotation", "crop_resize", "color_jitter", "grayscale")
RIGHT_ANGLES = (90, 180, 270)
LUMA = np.array([0.299, 0.587, 0.114])
# rng stream ids used by fit(); disjoint from training epochs
FIT_STREAM = 2**31


def image_rng(seed, epoch, index):
    """Independent generator for one (seed, epoch, image) triple."""
    return np.random.default_rng([int(seed), int(epoch), int(index)])


@dataclass
class AugmentationOp:
    """One candidate transform.

    ``params`` by kind:

    * ``rotation``: ``angles`` (multiples of 90); optional ``keep``.  If set,
      :meth:`AugmentationPipeline.fit` replaces ``angles`` with the ``keep``
      most informative ones.
    * ``crop_resize``: ``min_scale`` in [0.5, 1], the smallest crop area as a
      fraction of the image area.
    * ``color_jitter``: ``strength`` in [0, 1]; ``n_colors`` dominant colours
      per image; ``mode`` is ``"shift"`` (move the whole image towards a
      target colour) or ``"recolor"`` (move one dominant-colour region to a
      target colour).  Targets come from a fixed ``palette`` if given, else
      from the image's own dominant colours (``palette_source="image"``) or
      from those of every image (``"dataset"``).  :meth:`AugmentationPipeline.fit`
      caches the per-image colours as ``palettes`` and their union as ``pool``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown augmentation kind {self.kind!r}")
        p = self.params
        if self.kind == "rotation":
            angles = p.get("angles", list(RIGHT_ANGLES))
            if not angles:
                raise ConfigurationError("rotation: empty angle list")
            bad = [a for a in angles if a not in RIGHT_ANGLES]
            if bad:
                raise ConfigurationError(f"rotation: angles must be in {RIGHT_ANGLES}, got {bad}")
            keep = p.get("keep")
            if keep is not None and not 1 <= keep <= len(angles):
                raise ConfigurationError(f"rotation: keep={keep} outside [1, {len(angles)}]")
            p["angles"] = [int(a) for a in angles]
        elif self.kind == "crop_resize":
            s = p.setdefault("min_scale", 0.5)
            if not 0.5 <= s <= 1.0:
                raise ConfigurationError(f"crop_resize: min_scale must be in [0.5, 1], got {s}")
        elif self.kind == "color_jitter":
            lam = p.setdefault("strength", 0.5)
            if not 0.0 <= lam <= 1.0:
                raise ConfigurationError(f"color_jitter: strength must be in [0, 1], got {lam}")
            p.setdefault("n_colors", 3)
            if p.setdefault("mode", "shift") not in ("shift", "recolor"):
                raise ConfigurationError(f"color_jitter: bad mode {p['mode']!r}")
            if p.setdefault("regions", "one") not in ("one", "all"):
                raise ConfigurationError(f"color_jitter: bad regions {p['regions']!r}")
            if p.setdefault("palette_source", "image") not in ("image", "dataset"):
                raise ConfigurationError(f"color_jitter: bad palette_source {p['palette_source']!r}")
            if "palette" in p and len(p["palette"]) == 0:
                raise ConfigurationError("color_jitter: empty palette")

    def to_dict(self):
        d = {"kind": self.kind}
        d.update({k: v for k, v in self.params.items() if k not in ("palettes", "pool")})
        if isinstance(d.get("palette"), np.ndarray):
            d["palette"] = d["palette"].tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, d)


def _check_image(image):
    image = np.asarray(image)
    if image.ndim not in (2, 3) or image.shape[-1] == 0 or image.shape[-2] == 0:
        raise DimensionError(f"image must be (C, H, W) or (H, W), got {image.shape}")
    return image


def horizontal_flip(image):
    return np.ascontiguousarray(image[..., ::-1])


def rotate(image, angle):
    """Clockwise rotation by a multiple of 90 degrees."""
    if angle not in (0, *RIGHT_ANGLES):
        raise ConfigurationError(f"rotation angle must be a multiple of 90, got {angle}")
    if angle in (90, 270) and image.shape[-1] != image.shape[-2]:
        raise DimensionError(f"rotation by {angle} needs a square image, got {image.shape}")
    return np.ascontiguousarray(np.rot90(image, k=-(angle // 90), axes=(-2, -1)))


def resize_bilinear(image, out_h, out_w):
    """Bilinear resampling with half-pixel centres (edge-clamped)."""
    h, w = image.shape[-2:]

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo).astype(image.dtype)

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    top = image[..., y0, :] * (1 - fy)[:, None] + image[..., y1, :] * fy[:, None]
    return top[..., x0] * (1 - fx) + top[..., x1] * fx


def crop_resize(image, top, left, ch, cw):
    h, w = image.shape[-2:]
    crop = image[..., top:top + ch, left:left + cw]
    return resize_bilinear(crop, h, w)


def mean_color(image):
    return image.reshape(image.shape[0], -1).mean(axis=1)


def color_shift(image, color, strength):
    """Shift every pixel by ``strength * (color - mean_color(image))``."""
    color = np.asarray(color, dtype=image.dtype)
    return image + (strength * (color - mean_color(image)))[:, None, None]


def recolor(image, dominant, regions, colors, strength):
    """Move dominant-colour regions towards new colours.

    Pixels are assigned to their closest colour in ``dominant``; region
    ``regions[i]`` is shifted by ``strength * (colors[i] - dominant[regions[i]])``
    so its texture survives while its hue changes.
    """
    dominant = np.asarray(dominant, dtype=image.dtype)
    px = image.reshape(image.shape[0], -1)
    d2 = ((px[None, :, :] - dominant[:, :, None]) ** 2).sum(axis=1)
    nearest = np.argmin(d2, axis=0).reshape(image.shape[1:])
    out = image.copy()
    for j, color in zip(regions, colors):
        shift = strength * (np.asarray(color, dtype=image.dtype) - dominant[j])
        out[:, nearest == j] += shift[:, None]
    return out


def grayscale(image):
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"grayscale needs a 3-channel image, got {image.shape}")
    lum = np.tensordot(LUMA.astype(image.dtype), image, axes=(0, 0))
    return np.broadcast_to(lum, image.shape).copy()


def apply_augmentation(op, image, rng, index=None):
    """Apply one randomly parameterised transform; output is clamped to [0, 1].

    ``index`` selects the per-image palette of a fitted ``color_jitter``.
    """
    image = _check_image(image)
    kind, p = op.kind, op.params
    if kind == "horizontal_flip":
        out = horizontal_flip(image)
    elif kind == "rotation":
        angles = p.get("angles")
        if not angles:
            raise ConfigurationError("rotation: empty angle list")
        out = rotate(image, angles[int(rng.integers(len(angles)))])
    elif kind == "crop_resize":
        h, w = image.shape[-2:]
        side = np.sqrt(rng.uniform(p["min_scale"], 1.0))  # scale is an area fraction
        ch = max(1, int(round(side * h)))
        cw = max(1, int(round(side * w)))
        top = int(rng.integers(h - ch + 1))
        left = int(rng.integers(w - cw + 1))
        out = crop_resize(image, top, left, ch, cw)
    elif kind == "color_jitter":
        fitted = p.get("palettes") is not None and index is not None
        own = p["palettes"][index] if fitted else \
            extract_dominant_colors(image, p["n_colors"], rng)
        targets = p.get("palette")
        if targets is None:
            targets = p["pool"] if fitted and p["palette_source"] == "dataset" else own
        if len(targets) == 0:
            raise ConfigurationError("color_jitter: empty palette")
        if p["mode"] == "shift":
            color = targets[int(rng.integers(len(targets)))]
            out = color_shift(image, color, p["strength"])
        elif p["regions"] == "one":
            which = int(rng.integers(len(own)))
            color = targets[int(rng.integers(len(targets)))]
            out = recolor(image, own, [which], [color], p["strength"])
        else:
            colors = [targets[int(rng.integers(len(targets)))] for _ in own]
            out = recolor(image, own, range(len(own)), colors, p["strength"])
    elif kind == "grayscale":
        out = grayscale(image)
    else:  # pragma: no cover - guarded by AugmentationOp
        raise ConfigurationError(kind)
    return np.clip(out, 0.0, 1.0).astype(image.dtype, copy=False)


def extract_dominant_colors(image, k, rng=None):
    """The ``k`` main colours of an image, largest cluster first.

    Runs k-means over pixels in RGB space.  When the image has at most ``k``
    distinct colours those colours are returned directly (so the result may
    be shorter than ``k``).
    """
    if k < 1:
        raise ConfigurationError(f"extract_dominant_colors: k must be positive, got {k}")
    image = _check_image(image)
    pixels = image.reshape(image.shape[0], -1).T.astype(np.float64)
    distinct, counts = np.unique(pixels, axis=0, return_counts=True)
    if len(distinct) <= k:
        order = np.argsort(-counts, kind="stable")
        return distinct[order]
    seed = 0 if rng is None else int(rng.integers(2**31))
    res = kmeans(pixels, k, seed=seed, max_iters=50, tol=1e-4, n_init=3)
    sizes = np.bincount(res.labels, minlength=k)
    order = np.argsort(-sizes, kind="stable")
    return res.centroids[order]


def select_rotation_angles(images, candidates=RIGHT_ANGLES, keep=2):
    """Keep the rotation angles whose effect varies most across the dataset.

    For every angle, each image scores the mean absolute pixel difference
    between its rotated and original version; the angle's score is the
    (population) variance of those values over the dataset.  Ties go to the
    smaller angle.
    """
    images = list(images)
    if not images:
        raise InputError("select_rotation_angles: empty dataset")
    if not 1 <= keep <= len(candidates):
        raise ConfigurationError(f"keep={keep} outside [1, {len(candidates)}]")
    scores = []
    for angle in candidates:
        diffs = [float(np.abs(rotate(np.asarray(x, np.float64), angle) - x).mean())
                 for x in images]
        scores.append((-float(np.var(diffs)), angle))
    return [a for _, a in sorted(scores)[:keep]]


@dataclass
class AugmentationPipeline:
    candidates: list
    subset_size: int
    aspect_tag: str = ""

    def __post_init__(self):
        self.candidates = [c if isinstance(c, AugmentationOp) else AugmentationOp.from_dict(c)
                           for c in self.candidates]
        if not 0 <= self.subset_size <= len(self.candidates):
            raise ConfigurationError(
                f"subset_size {self.subset_size} outside [0, {len(self.candidates)}]")

    def to_dict(self):
        return {"aspect_tag": self.aspect_tag, "subset_size": self.subset_size,
                "ops": [op.to_dict() for op in self.candidates]}

    @classmethod
    def from_dict(cls, d):
        return cls([AugmentationOp.from_dict(o) for o in d["ops"]],
                   int(d["subset_size"]), d.get("aspect_tag", ""))

    def fit(self, images, seed=0):
        """Resolve data-dependent parameters once, before training.

        Rotation ops with ``keep`` get their angle list narrowed; colour
        jitter ops without a fixed palette get per-image palettes (or one
        pooled palette when ``palette_source == "dataset"``).
        """
        images = [np.asarray(x) for x in images]
        fitted = copy.deepcopy(self)
        for j, op in enumerate(fitted.candidates):
            p = op.params
            if op.kind == "rotation" and p.get("keep"):
                p["angles"] = select_rotation_angles(images, p["angles"], p["keep"])
                p.pop("keep")
            elif op.kind == "color_jitter":
                palettes = [extract_dominant_colors(x, p["n_colors"],
                                                    image_rng(seed, FIT_STREAM + j, i))
                            for i, x in enumerate(images)]
                p["palettes"] = [q.astype(np.float32) for q in palettes]
                pool = np.concatenate(palettes)
                if p.get("pool_size"):
                    # summarise the pooled colours as a (C, 1, m) pseudo-image
                    pool = extract_dominant_colors(pool.T[:, None, :], p["pool_size"],
                                                   image_rng(seed, FIT_STREAM + j, len(images)))
                p["pool"] = pool.astype(np.float32)
        return fitted


def sample_and_compose(pipeline, image, rng, index=None, sample=True):
    """Apply a random size-``subset_size`` subset of the candidates.

    The chosen ops run in candidate-list order.  With ``sample=False`` every
    candidate is applied.
    """
    image = _check_image(image)
    ops = pipeline.candidates
    if sample:
        s = pipeline.subset_size
        if s == 0:
            return image.copy()
        chosen = np.sort(rng.choice(len(ops), size=s, replace=False))
    else:
        chosen = range(len(ops))
    out = image
    for j in chosen:
        out = apply_augmentation(ops[j], out, rng, index)
    return out if out is not image else image.copy()


PRESETS = {
    "color": {
        "aspect_tag": "color",
        "subset_size": 2,
        "ops": [
            {"kind": "rotation", "angles": [90, 180, 270], "keep": 2},
            {"kind": "horizontal_flip"},
            {"kind": "crop_resize", "min_scale": 0.5},
        ],
    },
    "shape": {
        "aspect_tag": "shape",
        "subset_size": 2,
        "ops": [
            {"kind": "rotation", "angles": [90, 180, 270], "keep": 2},
            {"kind": "horizontal_flip"},
            {"kind": "color_jitter", "mode": "recolor", "regions": "all", "strength": 1.0,
             "n_colors": 2, "palette_source": "dataset", "pool_size": 6},
        ],
    },
}
PRESETS["species"] = dict(PRESETS["shape"], aspect_tag="species")


def preset(name):
    """A fresh copy of a shipped pipeline (``color``, ``shape``, ``species``)."""
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return AugmentationPipeline.from_dict(copy.deepcopy(PRESETS[name]))


def load_pipeline(path_or_name):
    """Preset name or path to a JSON augmentation-set file."""
    if path_or_name in PRESETS:
        return preset(path_or_name)
    if not str(path_or_name).endswith(".json") and os.sep not in str(path_or_name):
        raise ConfigurationError(f"unknown preset {path_or_name!r}; choose from {sorted(PRESETS)} "
                                 "or pass a .json file")
    if not os.path.isfile(path_or_name):
        raise InputError(f"augmentation set file not found: {path_or_name}")
    with open(path_or_name, encoding="utf-8") as fh:
        return AugmentationPipeline.from_dict(json.load(fh))


def save_pipeline(pipeline, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pipeline.to_dict(), fh, indent=2)
