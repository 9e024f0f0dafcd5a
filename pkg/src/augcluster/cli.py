"""Command-line entry point: ``augcluster <subcommand> [flags]``.

Every flag may also come from a JSON file passed with ``--config``; keys are
flag names (kebab or snake case) and command-line flags win.

Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numeric.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .augment import load_pipeline
from .clustering import kmeans
from .data import (
    SyntheticSpec,
    ensure_dir,
    export_clustering,
    export_embeddings,
    export_projection,
    generate_synthetic,
    load_manifest,
    pca_project,
    read_clustering,
    read_embeddings,
)
from .encoder import ArchConfig, embed, load_checkpoint, save_checkpoint
from .errors import (
    ConfigurationError,
    DimensionError,
    InputError,
    NumericError,
    StateError,
)
from .pipeline import (
    RunConfig,
    StageError,
    cluster_count,
    evaluate,
    fit_encoder,
    run_pipeline,
    write_json,
)
from .training import TrainConfig, write_log

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    return [float(v) for v in text.split(",")] if isinstance(text, str) else list(text)


def _ints(text):
    return [int(v) for v in text.split(",")] if isinstance(text, str) else list(text)


def _k_map(items):
    out = {}
    for item in items or []:
        aspect, _, k = str(item).partition("=")
        if not k:
            raise UsageError(f"--k expects aspect=count, got {item!r}")
        out[aspect] = int(k)
    return out


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--temperature", type=float, default=0.9)
    g.add_argument("--learning-rate", type=float, default=0.05)
    g.add_argument("--weight-decay", type=float, default=0.0005)
    g.add_argument("--momentum", type=float, default=0.9)
    g.add_argument("--max-epochs", type=int, default=1000)
    g.add_argument("--patience", type=int, default=20)
    g.add_argument("--min-delta", type=float, default=1e-4)
    g.add_argument("--monitor", choices=("accuracy", "loss"), default="accuracy")
    g.add_argument("--batch-size", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-temperature", action="store_true", help="fix tau to 1")
    g.add_argument("--no-stable-opt", action="store_true",
                   help="apply every candidate augmentation each epoch instead of a random subset")
    g.add_argument("--no-augmentation", action="store_true")
    g.add_argument("--subset-size", type=int, default=None,
                   help="override the augmentation set's subset size")
    g.add_argument("--grid-learning-rates", type=_floats, default=None,
                   help="comma list; any grid flag turns on grid search")
    g.add_argument("--grid-weight-decays", type=_floats, default=None)
    g.add_argument("--grid-temperatures", type=_floats, default=None)
    g.add_argument("--search-epochs", type=int, default=None,
                   help="epochs per grid point; the winner is retrained at --max-epochs")
    g.add_argument("--workers", type=int, default=1, help="augmentation threads")
    a = p.add_argument_group("architecture")
    a.add_argument("--filters", type=_ints, default=(8, 16))
    a.add_argument("--embedding-dim", type=int, default=64)
    a.add_argument("--raw-inner-product", action="store_true",
                   help="skip L2 normalisation of embeddings")


def build_parser():
    parser = _Parser(prog="augcluster", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file supplying defaults for any flag")
        return p

    p = cmd("gen-data", "render the synthetic shapes x colors dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--shapes", default="circle,square,triangle,cross")
    p.add_argument("--colors", default="red,green,blue,yellow")
    p.add_argument("--per-cell", type=int, default=8)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)

    p = cmd("train", "train one encoder; writes <out-dir>/<aspect>/checkpoint.json")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pipeline", required=True, help="preset name or JSON file")
    p.add_argument("--out-dir", required=True)
    _add_train_flags(p)

    p = cmd("embed", "embed every manifest image with a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = cmd("cluster", "k-means on an embeddings CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--aspect", required=True)
    p.add_argument("--k", type=int, default=None,
                   help="defaults to the number of ground-truth labels for --aspect")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = cmd("eval", "score clustering CSVs against the manifest labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--clustering", nargs="+", required=True)
    p.add_argument("--out", default=None)

    p = cmd("project", "2-D PCA projection CSV for plotting")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--clustering", required=True)
    p.add_argument("--out", required=True)

    p = cmd("pipeline", "train, embed, cluster, evaluate and project for every augmentation set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pipelines", nargs="+", default=["color", "shape"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", nargs="*", default=None, metavar="ASPECT=K")
    _add_train_flags(p)
    return parser


def _config_defaults(argv):
    """Pull ``--config`` out of argv and return its contents keyed by dest."""
    for i, tok in enumerate(argv):
        path = None
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    raw = json.load(fh)
            except OSError as exc:
                raise InputError(f"cannot read config file {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise UsageError(f"config file {path} must hold a JSON object")
            return {k.replace("-", "_"): v for k, v in raw.items()}
    return {}


def parse_args(argv):
    parser = build_parser()
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in subparsers), None)
    defaults = _config_defaults(argv)
    if command is not None and defaults:
        sub = subparsers[command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            raise UsageError(f"unknown keys in config file: {unknown}")
        for action in sub._actions:
            if action.dest in defaults:
                action.required = False
        sub.set_defaults(**defaults)
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise UsageError("a subcommand is required (try --help)")
    return ns


def _require_files(*paths):
    for p in paths:
        if not Path(p).is_file():
            raise InputError(f"file not found: {p}")


def _train_config(ns):
    return TrainConfig(
        temperature=ns.temperature, learning_rate=ns.learning_rate,
        weight_decay=ns.weight_decay, momentum=ns.momentum, max_epochs=ns.max_epochs,
        patience=ns.patience, min_delta=ns.min_delta, monitor=ns.monitor,
        batch_size=ns.batch_size, seed=ns.seed, use_temperature=not ns.no_temperature,
        use_stable_opt=not ns.no_stable_opt, use_augmentation=not ns.no_augmentation)


def _arch(ns):
    return ArchConfig(filters=tuple(ns.filters), embedding_dim=ns.embedding_dim,
                      normalize=not ns.raw_inner_product)


def _grid(ns):
    lrs, wds, taus = ns.grid_learning_rates, ns.grid_weight_decays, ns.grid_temperatures
    if lrs is None and wds is None and taus is None:
        return None
    return {"learning_rates": lrs or [ns.learning_rate],
            "weight_decays": wds or [ns.weight_decay],
            "temperatures": taus or [ns.temperature]}


def _cmd_gen_data(ns):
    spec = SyntheticSpec(shapes=tuple(ns.shapes.split(",")), colors=tuple(ns.colors.split(",")),
                         per_cell=ns.per_cell, image_size=ns.image_size,
                         noise_std=ns.noise_std, seed=ns.seed)
    manifest = generate_synthetic(spec, ns.out_dir)
    print(f"wrote {len(manifest)} images to {ns.out_dir}")


def _cmd_train(ns):
    _require_files(ns.manifest)
    manifest = load_manifest(ns.manifest)
    pipe = load_pipeline(ns.pipeline)
    if ns.subset_size is not None:
        pipe = replace(pipe, subset_size=ns.subset_size)
    images = manifest.load_images()
    res = fit_encoder(images, pipe, _train_config(ns), _arch(ns), _grid(ns),
                      ns.search_epochs, ns.workers)
    sub = ensure_dir(Path(ns.out_dir) / pipe.aspect_tag)
    save_checkpoint(sub / "checkpoint.json", res.params, res.config.to_dict(), pipe.aspect_tag,
                    res.bank.prototypes)
    write_log(res.log, sub / "train_log.csv")
    print(f"{pipe.aspect_tag}: {res.epochs_ran} epochs, loss {res.final_loss:.4f}, "
          f"checkpoint {sub / 'checkpoint.json'}")


def _cmd_embed(ns):
    _require_files(ns.manifest, ns.checkpoint)
    manifest = load_manifest(ns.manifest)
    params, _ = load_checkpoint(ns.checkpoint)
    emb = embed(params, manifest.load_images())
    ensure_dir(Path(ns.out).parent)
    export_embeddings(emb, manifest, ns.out)


def _embeddings_for(manifest, path):
    paths, emb = read_embeddings(path)
    if paths != manifest.paths:
        raise InputError(f"{path}: rows do not match the manifest order")
    return emb


def _cmd_cluster(ns):
    _require_files(ns.manifest, ns.embeddings)
    manifest = load_manifest(ns.manifest)
    emb = _embeddings_for(manifest, ns.embeddings)
    k = ns.k if ns.k is not None else cluster_count(manifest, ns.aspect, {})
    res = kmeans(emb.astype(np.float64), k, seed=ns.seed, aspect_tag=ns.aspect)
    ensure_dir(Path(ns.out).parent)
    export_clustering(res, manifest, ns.out)


def _cmd_eval(ns):
    _require_files(ns.manifest, *ns.clustering)
    manifest = load_manifest(ns.manifest)
    report = {"aspects": {}, "version": __version__}
    for path in ns.clustering:
        paths, aspect, pred = read_clustering(path)
        if paths != manifest.paths:
            raise InputError(f"{path}: rows do not match the manifest order")
        report["aspects"][aspect] = evaluate(manifest, pred, aspect)
    if ns.out:
        ensure_dir(Path(ns.out).parent)
        write_json(report, ns.out)
    print(json.dumps(report, indent=2, sort_keys=True))


def _cmd_project(ns):
    _require_files(ns.manifest, ns.embeddings, ns.clustering)
    manifest = load_manifest(ns.manifest)
    emb = _embeddings_for(manifest, ns.embeddings)
    _, _, pred = read_clustering(ns.clustering)
    coords, _ = pca_project(emb)
    ensure_dir(Path(ns.out).parent)
    export_projection(coords, manifest, np.asarray(pred), ns.out)


def _cmd_pipeline(ns):
    _require_files(ns.manifest)
    for p in ns.pipelines:
        load_pipeline(p)  # fails before any output is written
    cfg = RunConfig(manifest=ns.manifest, out_dir=ns.out_dir, pipelines=list(ns.pipelines),
                    train=_train_config(ns), arch=_arch(ns), k=_k_map(ns.k), seed=ns.seed,
                    grid=_grid(ns), search_epochs=ns.search_epochs,
                    subset_size=ns.subset_size, workers=ns.workers)
    report = run_pipeline(cfg)
    for tag, entry in report["aspects"].items():
        print(f"{tag}: nmi {entry['nmi']:.4f} rand_index {entry['rand_index']:.4f}")


COMMANDS = {"gen-data": _cmd_gen_data, "train": _cmd_train, "embed": _cmd_embed,
            "cluster": _cmd_cluster, "eval": _cmd_eval, "project": _cmd_project,
            "pipeline": _cmd_pipeline}


def exit_code(exc):
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (UsageError, ConfigurationError)):
        return EXIT_USAGE
    if isinstance(exc, (NumericError, StateError)):
        return EXIT_NUMERIC
    if isinstance(exc, (InputError, DimensionError, OSError)):
        return EXIT_DATA
    raise exc


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parse_args(argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[ns.command](ns)
    except (UsageError, ConfigurationError, InputError, DimensionError, NumericError,
            StateError, StageError, OSError) as exc:
        print(f"augcluster: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
