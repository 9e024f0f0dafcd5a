"""Prototype-based instance discrimination: loss, training loop, grid search.

Every training image is its own latent class, so the prototype bank has one
row per image.  Each epoch every image is passed through a freshly drawn
augmentation subset, encoded, and scored against all prototypes with a
temperature-scaled softmax; the loss is the mean negative log-likelihood
of each image's own prototype.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product

import numpy as np

from . import numerics as nx
from .augment import apply_augmentation, image_rng, sample_and_compose
from .encoder import ArchConfig, embed, encode, encode_backward, encoder_init
from .errors import ConfigurationError, InputError, NumericError, StateError

log = logging.getLogger(__name__)

LR_GRID = (0.2, 0.1, 0.05, 0.01, 0.005, 0.0001)
WD_GRID = (0.001, 0.0005, 0.0001, 0.00005)
TAU_GRID = (0.8, 0.85, 0.9, 0.95, 1.0)

# rng stream ids, disjoint from per-image augmentation streams
_PROTO_STREAM = 2**31 + 1000
_SHUFFLE_STREAM = 2**31 + 1001


@dataclass(frozen=True)
class TrainConfig:
    temperature: float = 0.9
    learning_rate: float = 0.05
    weight_decay: float = 0.0005
    momentum: float = 0.9
    max_epochs: int = 1000
    patience: int = 20
    min_delta: float = 1e-4
    monitor: str = "accuracy"
    batch_size: int | None = None     # None -> full batch
    seed: int = 0
    use_temperature: bool = True
    use_stable_opt: bool = True
    use_augmentation: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        if self.monitor not in ("accuracy", "loss"):
            raise ConfigurationError(f"monitor must be 'accuracy' or 'loss', got {self.monitor!r}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigurationError("max_epochs and patience must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        # SGD hyperparameters validated by OptimizerState
        nx.OptimizerState(self.learning_rate, self.momentum, self.weight_decay)

    @property
    def effective_temperature(self):
        return self.temperature if self.use_temperature else 1.0

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PrototypeBank:
    prototypes: np.ndarray   # K × d, unit rows

    @property
    def k(self):
        return len(self.prototypes)

    @classmethod
    def random(cls, k, d, seed):
        rng = np.random.default_rng([int(seed), _PROTO_STREAM])
        p = rng.normal(size=(k, d))
        return cls((p / np.linalg.norm(p, axis=1, keepdims=True)).astype(nx.FLOAT))

    def renormalize(self):
        norms = np.linalg.norm(self.prototypes, axis=1, keepdims=True)
        self.prototypes /= np.maximum(norms, 1e-12)


def _bank_array(bank):
    return bank.prototypes if isinstance(bank, PrototypeBank) else np.asarray(bank)


def _check_tau(tau):
    if not tau > 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def class_probabilities(embedding, bank, tau):
    """Softmax over ``prototype · embedding / tau`` (rows if 2-D input)."""
    _check_tau(tau)
    protos = np.asarray(_bank_array(bank), dtype=np.float64)
    emb = np.asarray(embedding, dtype=np.float64)
    if emb.shape[-1] != protos.shape[1]:
        raise nx.DimensionError(f"embedding dim {emb.shape[-1]} != prototype dim {protos.shape[1]}")
    return _softmax(emb @ protos.T / tau)


def nll_loss_and_grad(embeddings, targets, bank, tau):
    """Mean negative log-likelihood of each row's target prototype.

    Returns ``(loss, d_embeddings, d_prototypes)``.  With similarities
    ``s = Z P^T`` the gradient w.r.t. ``s`` is ``(softmax - onehot) / (B tau)``.
    """
    _check_tau(tau)
    protos = np.asarray(_bank_array(bank), dtype=np.float64)
    z = np.asarray(embeddings, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    b, k = len(z), len(protos)
    if targets.shape != (b,):
        raise InputError(f"need one target per row, got {targets.shape} for {b} rows")
    if b and (targets.min() < 0 or targets.max() >= k):
        raise InputError(f"targets must lie in [0, {k}), got range "
                         f"[{targets.min()}, {targets.max()}]")
    logits = z @ protos.T / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    loss = float(-log_probs[rows, targets].mean())
    dsim = np.exp(log_probs)
    dsim[rows, targets] -= 1.0
    dsim /= b * tau
    return loss, dsim @ protos, dsim.T @ z


def prototype_accuracy(embeddings, bank, tau=1.0):
    """Fraction of rows whose most probable prototype is their own index.

    Argmax ties resolve to the smallest index.  ``tau`` cannot change the
    result; it is accepted to mirror :func:`class_probabilities`.
    """
    _check_tau(tau)
    protos = np.asarray(_bank_array(bank), dtype=np.float64)
    z = np.asarray(embeddings, dtype=np.float64)
    if len(z) != len(protos):
        raise StateError(f"prototype_accuracy needs n == K, got n={len(z)}, K={len(protos)}")
    pred = np.argmax(z @ protos.T, axis=1)
    return float(np.mean(pred == np.arange(len(z))))


@dataclass
class TrainResult:
    params: object
    bank: PrototypeBank
    config: TrainConfig
    log: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_ran: int = 0

    @property
    def final_loss(self):
        """Training loss logged at the returned (best) epoch."""
        return self.log[self.best_epoch - 1]["loss"]

    @property
    def final_accuracy(self):
        return self.log[self.best_epoch - 1]["prototype_accuracy"]


LOG_FIELDS = ("epoch", "loss", "prototype_accuracy", "lr", "tau", "elapsed_ms")


def write_log(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.9g}" if isinstance(r[k], float) else r[k]) for k in LOG_FIELDS})


def augment_batch(pipeline, images, seed, epoch, sample=True, workers=1):
    """Augment every image with its own (seed, epoch, index) generator."""
    def one(i):
        return sample_and_compose(pipeline, images[i], image_rng(seed, epoch, i), index=i,
                                  sample=sample)

    idx = range(len(images))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, idx))
    else:
        out = [one(i) for i in idx]
    return np.stack(out).astype(nx.FLOAT, copy=False)


def _all_finite(params, bank):
    return all(np.isfinite(t).all() for t in params.tensors().values()) and \
        np.isfinite(bank.prototypes).all()


@np.errstate(over="ignore", invalid="ignore", divide="ignore")  # divergence is checked explicitly
def train(images, pipeline, config, arch=None, workers=1, params=None):
    """Train one encoder (plus prototype bank) for one augmentation set.

    ``images`` is ``(n, 3, H, W)``.  ``pipeline`` should already be fitted
    to ``images`` (see :meth:`AugmentationPipeline.fit`); it is ignored when
    ``config.use_augmentation`` is false.  The returned parameters are those
    of the best monitored epoch (latest one on ties).
    """
    images = np.asarray(images, dtype=nx.FLOAT)
    n = len(images)
    if n == 0:
        raise InputError("train: empty dataset")
    if arch is None:
        arch = ArchConfig(input_size=images.shape[2:], in_channels=images.shape[1])
    params = encoder_init(arch, config.seed) if params is None else params.copy()
    bank = PrototypeBank.random(n, arch.embedding_dim, config.seed)
    tau = config.effective_temperature
    opt = nx.OptimizerState(config.learning_rate, config.momentum, config.weight_decay)
    batch = config.batch_size or n
    targets_all = np.arange(n)

    rows = []
    best = None
    best_state = None
    unchanged = 0
    t0 = time.perf_counter()
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        if config.use_augmentation:
            batch_images = augment_batch(pipeline, images, config.seed, epoch,
                                         sample=config.use_stable_opt, workers=workers)
        else:
            batch_images = images
        if batch < n:
            order = np.random.default_rng([config.seed, epoch, _SHUFFLE_STREAM]).permutation(n)
        else:
            order = targets_all
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            z, cache = encode(params, batch_images[idx])
            loss, dz, dp = nll_loss_and_grad(z, idx, bank, tau)
            total += loss * len(idx)
            grads = encode_backward(params, cache, dz.astype(nx.FLOAT))
            for name, tensor in params.tensors().items():
                nx.sgd_step(tensor, grads[name], opt, key=name)
            nx.sgd_step(bank.prototypes, dp.astype(nx.FLOAT), opt, key="prototypes")
            bank.renormalize()
            params.version += 1
        loss = total / n
        if not np.isfinite(loss) or not _all_finite(params, bank):
            raise NumericError(f"training diverged at epoch {epoch} (loss={loss})")

        clean = embed(params, images)
        acc = prototype_accuracy(clean, bank, tau)
        if config.monitor == "accuracy":
            value = acc
        else:
            value = nll_loss_and_grad(clean, targets_all, bank, tau)[0]
        rows.append({"epoch": epoch, "loss": loss, "prototype_accuracy": acc,
                     "lr": config.learning_rate, "tau": tau,
                     "elapsed_ms": int(1000 * (time.perf_counter() - t0))})

        if best is None:
            better = True
        elif config.monitor == "accuracy":
            better = value >= best
        else:
            better = value <= best
        if best is not None and abs(value - best) < config.min_delta:
            unchanged += 1
        else:
            unchanged = 0
        if better:
            best = value
            best_state = (epoch, params.copy(), PrototypeBank(bank.prototypes.copy()))
        if unchanged >= config.patience:
            break

    best_epoch, best_params, best_bank = best_state
    log.debug("trained %d epochs, best epoch %d, monitor %.4f", epoch, best_epoch, best)
    return TrainResult(best_params, best_bank, config, rows, best_epoch, epoch)


def grid_search(images, pipeline, base_config, learning_rates=LR_GRID,
                weight_decays=WD_GRID, temperatures=TAU_GRID, arch=None, workers=1):
    """Train at every grid point and keep the lowest final training loss.

    Ties go to the higher prototype accuracy, then to grid order (learning
    rate outermost, temperature innermost).  Diverged runs are skipped.
    Returns ``(best_result, all_results)`` where ``all_results`` maps each
    config to its result, or to ``None`` when it diverged.
    """
    grid = list(product(learning_rates, weight_decays, temperatures))
    if not grid:
        raise ConfigurationError("grid_search: empty grid")
    results = {}
    best_key = None
    best = None
    for rank, (lr, wd, tau) in enumerate(grid):
        cfg = replace(base_config, learning_rate=lr, weight_decay=wd, temperature=tau)
        try:
            res = train(images, pipeline, cfg, arch=arch, workers=workers)
        except NumericError as exc:
            log.info("grid point lr=%g wd=%g tau=%g diverged: %s", lr, wd, tau, exc)
            results[cfg] = None
            continue
        results[cfg] = res
        key = (res.final_loss, -res.final_accuracy, rank)
        if best_key is None or key < best_key:
            best_key, best = key, res
    if best is None:
        raise NumericError("grid_search: every grid point diverged")
    return best, results


def augmentation_shift(params, images, pipeline, seed=0, epoch=0):
    """Mean ``||f(g(x)) - f(x)||`` over images and over each candidate op ``g``."""
    images = np.asarray(images, dtype=nx.FLOAT)
    base = embed(params, images)
    shifts = []
    for j, op in enumerate(pipeline.candidates):
        aug = np.stack([apply_augmentation(op, x, image_rng(seed, epoch + j, i), index=i)
                        for i, x in enumerate(images)])
        shifts.append(np.linalg.norm(embed(params, aug) - base, axis=1).mean())
    return float(np.mean(shifts))
