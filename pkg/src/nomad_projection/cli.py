"""Command line entry point: ``nomad {fit,eval,plot,index-debug}``.

Exit codes: 0 success, 1 usage or validation error, 2 numerical divergence.
The ``NOMAD_WORKERS`` environment variable sets the default for
``--workers``; an explicit flag wins.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .ann_index import build_knn, dump_index
from .errors import DivergenceError, NomadError
from .metrics import neighborhood_preservation, random_triplet_accuracy
from .optimizer import TrainConfig, build_clusters, run
from .plot import save_svg
from .vector_io import FORMATS, load_labels, load_layout, load_vectors, save_layout

log = logging.getLogger("nomad_projection")


def _env_workers() -> int:
    raw = os.environ.get("NOMAD_WORKERS")
    if raw is None:
        return 1
    try:
        return int(raw)
    except ValueError:
        raise NomadError(f"NOMAD_WORKERS must be an integer, got {raw!r}") from None


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="vector file")
    p.add_argument("--format", choices=FORMATS, default="raw-f32", help="input format (default: %(default)s)")
    p.add_argument("--rows", type=int, default=None, help="row count for raw-f32 (default: inferred from --dims)")
    p.add_argument("--dims", type=int, default=None, help="column count for raw-f32 (default: inferred from --rows)")
    p.add_argument("--labels", default=None, help="optional file with one label per line (default: none)")


def _add_train(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs, help="training epochs (default: %(default)s)")
    p.add_argument("--k", type=int, default=d.k, help="neighbours per point (default: %(default)s)")
    p.add_argument("--negatives", type=int, default=d.n_negatives, help="nominal negatives |M| per head (default: %(default)s)")
    p.add_argument("--local-draws", type=int, default=d.local_draws, help="local negative draws per head (default: %(default)s)")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="heads per SGD step (default: %(default)s)")
    p.add_argument("--workers", type=int, default=None, help="number of shards (default: $NOMAD_WORKERS or 1)")
    p.add_argument("--clusters", type=int, default=None, help="K-Means clusters (default: ceil(n/4096) clamped to [workers, n])")
    p.add_argument("--seed", type=int, default=d.seed, help="random seed (default: %(default)s)")
    p.add_argument("--lr0", type=float, default=None, help="initial learning rate (default: n/10)")
    p.add_argument("--approximate", choices=("remote", "all-but-own"), default=d.approximate,
                   help="which noise cells are replaced by their means (default: %(default)s)")
    p.add_argument("--update", choices=("all", "head-only"), default=d.update,
                   help="which points receive gradient steps (default: %(default)s)")
    p.add_argument("--kmeans-iters", type=int, default=d.kmeans_max_iters, help="max Lloyd iterations (default: %(default)s)")


def _config(args) -> TrainConfig:
    workers = args.workers if args.workers is not None else _env_workers()
    cfg = TrainConfig(
        epochs=args.epochs,
        k=args.k,
        n_negatives=args.negatives,
        local_draws=args.local_draws,
        batch_size=args.batch_size,
        workers=workers,
        n_clusters=args.clusters,
        seed=args.seed,
        lr0=args.lr0,
        approximate=args.approximate,
        update=args.update,
        kmeans_max_iters=args.kmeans_iters,
        checkpoint_every=getattr(args, "checkpoint_every", 0),
        checkpoint_path=getattr(args, "checkpoint_path", None),
    )
    cfg.validate()
    return cfg


def _load(args):
    labels = load_labels(args.labels) if args.labels else None
    return load_vectors(args.input, args.format, args.rows, args.dims, labels=labels)


def cmd_fit(args) -> int:
    cfg = _config(args)
    ds = _load(args)
    result = run(ds, cfg)
    save_layout(result.layout, ds.ids, args.out, ds.labels)
    last = f"{result.losses[-1]:.6f}" if result.losses else "n/a"
    print(
        f"fit: n={ds.n} d={ds.d} clusters={result.clusters.n_clusters} workers={cfg.workers} "
        f"epochs={cfg.epochs} final_loss={last} -> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    ds = _load(args)
    loaded = load_layout(args.layout)
    if loaded.layout.n != ds.n:
        raise NomadError(f"layout has {loaded.layout.n} rows but the dataset has {ds.n}")
    for metric in args.metric or ["np", "triplet"]:
        if metric == "np":
            rep = neighborhood_preservation(ds, loaded.layout, args.k, sample=args.sample, seed=args.seed)
        else:
            rep = random_triplet_accuracy(ds, loaded.layout, args.triplets, seed=args.seed)
        print(rep.to_json())
    return 0


def cmd_plot(args) -> int:
    loaded = load_layout(args.layout)
    labels = None if args.no_labels else loaded.labels
    save_svg(args.out, loaded.layout.positions, labels, width=args.width, height=args.height, radius=args.radius)
    return 0


def cmd_index_debug(args) -> int:
    cfg = _config(args)
    ds = _load(args)
    clusters = build_clusters(ds, cfg)
    graph = build_knn(ds, clusters, cfg.k)
    cpath, epath = dump_index(clusters, graph, args.out_dir)
    print(f"index: {clusters.n_clusters} clusters, {int(graph.counts.sum())} edges -> {cpath}, {epath}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nomad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress per-epoch progress (default: off)")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("fit", help="train a 2-D layout", formatter_class=fmt)
    _add_input(p)
    _add_train(p)
    p.add_argument("--out", required=True, help="layout CSV to write")
    p.add_argument("--checkpoint-every", type=int, default=0, help="dump the layout every N epochs (0 = never)")
    p.add_argument("--checkpoint-path", default="checkpoint-{epoch}.csv", help="checkpoint filename pattern")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score a layout against its vectors", formatter_class=fmt)
    _add_input(p)
    p.add_argument("--layout", required=True, help="layout CSV")
    p.add_argument("--metric", action="append", choices=("np", "triplet"), help="metric(s) to report (default: both)")
    p.add_argument("--k", type=int, default=10, help="neighbourhood size for np")
    p.add_argument("--sample", type=int, default=None, help="evaluate np on this many random points (default: all)")
    p.add_argument("--triplets", type=int, default=100_000, help="triplets sampled for triplet accuracy")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render a layout CSV as SVG", formatter_class=fmt)
    p.add_argument("--layout", required=True, help="layout CSV")
    p.add_argument("--out", required=True, help="SVG file to write")
    p.add_argument("--width", type=int, default=800, help="image width in px")
    p.add_argument("--height", type=int, default=800, help="image height in px")
    p.add_argument("--radius", type=float, default=1.0, help="circle radius in px")
    p.add_argument("--no-labels", action="store_true", help="ignore the label column")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("index-debug", help="dump cluster assignment and ANN edges", formatter_class=fmt)
    _add_input(p)
    _add_train(p)
    p.add_argument("--out-dir", required=True, help="directory for clusters.csv and edges.csv")
    p.set_defaults(func=cmd_index_debug)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not logging.getLogger().handlers and not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NomadError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
