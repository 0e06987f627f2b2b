"""Command-line surface: pretrain, embed, eval-classify, eval-cluster,
gradcheck, and synth.

Flags mirror :class:`~s3cl.config.TrainConfig` field names one-to-one;
``--config`` loads a JSON document with the same keys and explicit flags
override it. Graph datasets are addressed by a path prefix expanding to
``<prefix>.edges.tsv`` / ``.features.tsv`` / ``.labels.tsv``. Exit codes:
2 usage, 3 data, 4 numerical, 5 config. The ``S3CL_THREADS`` environment
variable caps BLAS worker threads (1 = deterministic mode).
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .errors import ConfigError, DataError, NumericalError
from .evaluate import classify_eval, cluster_eval
from .gradcheck import run_gradient_checks
from .graph import (
    graph_paths,
    load_graph,
    read_label_file,
    read_matrix,
    read_matrix_binary,
    save_graph,
    write_matrix,
    write_matrix_binary,
)
from .synth import SbmSpec, generate_sbm
from .trainer import embed, pretrain

__all__ = ["main", "entrypoint"]

_thread_limiter = None


def _configure_threads():
    global _thread_limiter
    value = os.environ.get("S3CL_THREADS")
    if not value:
        return
    try:
        cap = int(value)
    except ValueError:
        raise ConfigError(f"S3CL_THREADS must be an integer, got {value!r}") from None
    if cap < 1:
        raise ConfigError(f"S3CL_THREADS must be >= 1, got {cap}")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        os.environ.setdefault("OMP_NUM_THREADS", str(cap))
        return
    _thread_limiter = threadpool_limits(limits=cap)


def _add_config_flags(parser):
    group = parser.add_argument_group("hyperparameters (override --config)")
    for field in dataclasses.fields(TrainConfig):
        flag = "--" + field.name.replace("_", "-")
        if isinstance(field.default, bool):
            group.add_argument(
                flag, dest=field.name, action=argparse.BooleanOptionalAction, default=None
            )
        elif isinstance(field.default, int):
            group.add_argument(flag, dest=field.name, type=int, default=None)
        else:
            group.add_argument(flag, dest=field.name, type=float, default=None)


def _build_config(args):
    data = TrainConfig.from_json_file(args.config).to_dict() if args.config else {}
    for field in dataclasses.fields(TrainConfig):
        value = getattr(args, field.name, None)
        if value is not None:
            data[field.name] = value
    return TrainConfig.from_dict(data)


def _load_graph_prefix(prefix, need_labels=False):
    edge_path, feature_path, label_path = graph_paths(prefix)
    if not os.path.exists(label_path):
        if need_labels:
            raise DataError(f"{label_path}: label file required but missing")
        label_path = None
    return load_graph(edge_path, feature_path, label_path)


def _emit_json(payload, path):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _cmd_pretrain(args):
    cfg = _build_config(args)
    graph = _load_graph_prefix(args.graph)
    resume = load_checkpoint(args.resume) if args.resume else None
    params, proto, report = pretrain(
        graph,
        cfg,
        checkpoint_path=args.checkpoint,
        checkpoint_every=args.checkpoint_every,
        resume=resume,
    )
    report_path = args.report or f"{args.checkpoint}.report.json"
    report.write_json(report_path)
    if report.records:
        last = report.records[-1]
        print(
            f"epoch {last.epoch}: total={last.loss_total:.6f} "
            f"structural={last.loss_str:.6f} semantic={last.loss_sem:.6f} K={last.k}"
        )
    print(f"checkpoint written to {args.checkpoint}")
    print(f"report written to {report_path}")
    return 0


def _cmd_embed(args):
    ckpt = load_checkpoint(args.checkpoint)
    graph = _load_graph_prefix(args.graph)
    h = embed(ckpt.params, graph, ckpt.config)
    if args.binary:
        write_matrix_binary(args.out, h)
    else:
        write_matrix(args.out, h)
    print(f"embeddings ({h.shape[0]}x{h.shape[1]}) written to {args.out}")
    return 0


def _read_embedding(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic == b"S3CLEMB\x00":
        return read_matrix_binary(path)
    return read_matrix(path)


def _cmd_eval_classify(args):
    h = _read_embedding(args.embedding)
    labels = read_label_file(args.labels, h.shape[0])
    result = classify_eval(
        h,
        labels,
        runs=args.runs,
        seed=args.seed,
        train_frac=args.train_frac,
        val_frac=args.val_frac,
        reg_lambda=args.reg_lambda,
        epochs=args.probe_epochs,
        lr=args.probe_lr,
    )
    _emit_json(result, args.out)
    return 0


def _cmd_eval_cluster(args):
    h = _read_embedding(args.embedding)
    labels = read_label_file(args.labels, h.shape[0])
    clusters = args.clusters or int(np.unique(labels).size)
    result = cluster_eval(
        h, clusters, labels, runs=args.runs, restarts=args.restarts, seed=args.seed
    )
    result["clusters"] = clusters
    _emit_json(result, args.out)
    return 0


def _cmd_gradcheck(args):
    errors = run_gradient_checks(args.seed, num_nodes=args.nodes, h=args.step)
    worst = max(errors.values())
    for name in ("structural", "semantic", "joint"):
        print(f"{name}: max relative gradient error {errors[name]:.3e}")
    if worst > args.tolerance:
        print(f"FAIL: worst error {worst:.3e} exceeds tolerance {args.tolerance:.1e}")
        return 4
    print(f"OK: worst error {worst:.3e} within tolerance {args.tolerance:.1e}")
    return 0


def _cmd_synth(args):
    spec = SbmSpec(
        blocks=args.blocks,
        block_size=args.block_size,
        p_in=args.p_in,
        p_out=args.p_out,
        feature_dim=args.feature_dim,
        mean_separation=args.separation,
        noise=args.noise,
        seed=args.seed,
    )
    graph = generate_sbm(spec)
    save_graph(graph, args.out)
    print(
        f"wrote {graph.num_nodes} nodes, {graph.num_edges} edges, "
        f"{graph.feature_dim}-dim features to prefix {args.out}"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="s3cl",
        description="Self-supervised node representation learning with "
        "structural and semantic contrastive objectives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train an encoder on a graph dataset")
    p.add_argument("--graph", required=True, help="dataset path prefix")
    p.add_argument("--config", help="JSON config file (flags override)")
    p.add_argument("--checkpoint", default="model.s3cl", help="output checkpoint path")
    p.add_argument("--report", help="training report JSON (default: <checkpoint>.report.json)")
    p.add_argument("--checkpoint-every", type=int, default=0, help="save every N epochs")
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("embed", help="export final node representations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True, help="dataset path prefix")
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true", help="compact binary output")
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("eval-classify", help="linear-probe node classification")
    p.add_argument("--embedding", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--train-frac", type=float, default=0.1)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--reg-lambda", type=float, default=0.0)
    p.add_argument("--probe-epochs", type=int, default=300)
    p.add_argument("--probe-lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_eval_classify)

    p = sub.add_parser("eval-cluster", help="k-means clustering quality")
    p.add_argument("--embedding", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--clusters", type=int, help="default: number of distinct labels")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_eval_cluster)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=12)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a stochastic-block-model dataset")
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--block-size", type=int, default=100)
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None):
    try:
        _configure_threads()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


def entrypoint():
    sys.exit(main())
