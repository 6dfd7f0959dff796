"""Command-line harness: ``nvgf {graph-gen,data-gen,train,eval,sweep}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import datasets, experiment, graph_core, model, training


def _kind(value: str) -> str:
    return value.replace("-", "_")


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _graph(args) -> graph_core.Graph:
    if getattr(args, "graph", None):
        return graph_core.read_graph(args.graph)
    return graph_core.generate_connected_er(args.nodes, args.edge_prob, args.seed)


def _parse_sweep(text: str | None) -> tuple[str, tuple[float, ...]]:
    if not text:
        return "none", ()
    axis, _, values = text.partition("=")
    axis = experiment.normalize_axis(axis.strip())
    if axis == "none":
        return axis, ()
    if not values.strip():
        return axis, tuple(experiment.DEFAULT_SWEEPS[axis])
    try:
        return axis, tuple(float(v) for v in values.split(","))
    except ValueError as exc:
        raise ValueError(f"bad sweep values {values!r}") from exc


def _train_config(args) -> training.TrainConfig:
    return training.TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        dropout_p=args.dropout,
        dropout_layers=args.dropout_layers,
        seed=args.seed,
    )


def cmd_graph_gen(args) -> None:
    g = graph_core.generate_connected_er(args.nodes, args.edge_prob, args.seed)
    _write_or_print(g.to_text(), args.out)


def cmd_data_gen(args) -> None:
    g = _graph(args)
    d = datasets.generate_source_localization(
        g, args.train_size, args.test_size, args.sigma2, _kind(args.normalization),
        args.seed, _kind(args.diffusion),
    )
    if not args.out:
        raise ValueError("data-gen needs --out")
    datasets.write_dataset(d, args.out)


def cmd_train(args) -> None:
    g = _graph(args)
    data = datasets.read_dataset(args.dataset)
    if data.graph_hash and data.graph_hash != g.digest:
        raise ValueError(f"dataset {args.dataset} was generated on a different graph")
    if data.num_nodes != g.num_nodes:
        raise ValueError(f"dataset has N={data.num_nodes} but the graph has {g.num_nodes} nodes")
    specs = experiment.parse_architecture(args.arch)
    m = model.init_parameters(specs, g, data.num_classes, args.seed, _kind(args.gso))
    m, metrics = training.train(m, data, _train_config(args))
    if len(data.test_y):
        metrics = training.evaluate(m, data, metrics)
    if args.out:
        model.save_model(m, args.out)
    sys.stdout.write(metrics.to_csv())


def cmd_eval(args) -> None:
    m = model.load_model(args.model)
    data = datasets.read_dataset(args.dataset)
    if data.graph_hash and data.graph_hash != m.graph.digest:
        raise ValueError(f"dataset {args.dataset} was generated on a different graph than the model")
    metrics = training.evaluate(m, data)
    _write_or_print(f"test_accuracy,{metrics.test_accuracy!r}\n", args.out)


def cmd_sweep(args) -> None:
    axis, values = _parse_sweep(args.sweep)
    cfg = experiment.ExperimentConfig(
        nodes=args.nodes,
        edge_prob=args.edge_prob,
        graph_path=args.graph,
        gso=_kind(args.gso),
        arch=args.arch,
        train=_train_config(args),
        train_size=args.train_size,
        test_size=args.test_size,
        sigma2=args.sigma2,
        normalization=_kind(args.normalization),
        diffusion=_kind(args.diffusion),
        sweep_axis=axis,
        sweep_values=values,
        realizations=args.realizations,
        seed=args.seed,
    )
    res = experiment.run_experiment(cfg, jobs=args.jobs)
    if args.out:
        experiment.emit_csv(res, args.out)
    else:
        sys.stdout.write(experiment.sweep_csv(res))


def build_parser() -> argparse.ArgumentParser:
    defaults = experiment.ExperimentConfig()
    tdef = training.TrainConfig()

    graph_opts = argparse.ArgumentParser(add_help=False)
    graph_opts.add_argument("--nodes", type=int, default=defaults.nodes)
    graph_opts.add_argument("--edge-prob", type=float, default=defaults.edge_prob)
    graph_opts.add_argument("--seed", type=int, default=0)
    graph_opts.add_argument("--out", help="output path (stdout when omitted, where allowed)")

    graph_file = argparse.ArgumentParser(add_help=False)
    graph_file.add_argument("--graph", help="graph file; overrides --nodes/--edge-prob")

    data_opts = argparse.ArgumentParser(add_help=False)
    data_opts.add_argument("--train-size", type=int, default=defaults.train_size)
    data_opts.add_argument("--test-size", type=int, default=defaults.test_size)
    data_opts.add_argument("--sigma2", type=float, default=defaults.sigma2)
    data_opts.add_argument("--normalization", choices=["none", "unit-l2"], default="none")
    data_opts.add_argument("--diffusion", choices=["adjacency", "scaled-adjacency"],
                           default="scaled-adjacency")

    model_opts = argparse.ArgumentParser(add_help=False)
    model_opts.add_argument("--arch", default=defaults.arch)
    model_opts.add_argument(
        "--gso",
        choices=["adjacency", "scaled-adjacency", "laplacian", "normalized-laplacian"],
        default="scaled-adjacency",
    )
    model_opts.add_argument("--epochs", type=int, default=tdef.epochs)
    model_opts.add_argument("--lr", type=float, default=tdef.learning_rate)
    model_opts.add_argument("--batch-size", type=int, default=tdef.batch_size)
    model_opts.add_argument("--dropout", type=float, default=tdef.dropout_p)
    model_opts.add_argument("--dropout-layers", choices=sorted(training.DROPOUT_PLACEMENTS),
                            default=tdef.dropout_layers)

    parser = argparse.ArgumentParser(prog="nvgf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph-gen", parents=[graph_opts], help="sample a connected ER graph")
    p.set_defaults(func=cmd_graph_gen)

    p = sub.add_parser("data-gen", parents=[graph_opts, graph_file, data_opts],
                       help="generate a source-localization dataset")
    p.set_defaults(func=cmd_data_gen)

    p = sub.add_parser("train", parents=[graph_opts, graph_file, model_opts],
                       help="train a model; prints epoch,loss CSV")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset's test split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[graph_opts, graph_file, data_opts, model_opts],
                       help="repeated realizations over a swept parameter; emits CSV")
    p.add_argument("--realizations", type=int, default=defaults.realizations)
    p.add_argument("--sweep", help="AXIS=v1,v2,... with AXIS in B, T, sigma2 (no values: defaults)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for realizations")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"nvgf {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
