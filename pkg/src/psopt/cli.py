"""Command-line harness: persistence, simplification, the value-space
comparison, training, and hyperparameter sweeps.

Outputs are tidy JSON/CSV for external plotting; nothing is rendered in
process.  Every command is deterministic given its flags and --seed, and
exits 0 on success, 1 on usage errors, 2 on data errors, 3 on numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys

import numpy as np

from . import data as data_mod
from .field import DataError, NumericError, ScalarField, build_grid_graph
from .merge_tree import Direction, compute_diagram, compute_merge_tree, diagram_of
from .neural import EpsilonPolicy, TrainConfig, train
from .optim_values import (
    FOUR_GAUSSIANS,
    LossKind,
    gaussian_mixture_field,
    optimize_values,
)
from .simplify import epsilon_largest_gap, epsilon_top_j, simplify

# Sweep defaults follow the tabular-benchmark regression ranges.
DEFAULT_GRID = {
    "k": [10, 15, 20],
    "t": [0.001, 0.01, 0.05, 0.1, 0.5],
    "n": [0, 3, 6, 9, 12],
    "sigma": [0.001, 0.01, 0.1, 0.2],
}


def _load_field(path) -> ScalarField:
    """Field from a ScalarField JSON file, or from a CSV matrix of values
    interpreted as a 4-connected grid."""
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            rows = [line for line in csv.reader(fh) if line]
        if not rows:
            raise DataError(f"{path}: empty CSV")
        try:
            grid = np.array([[float(c) for c in row] for row in rows], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric cell: {exc}") from exc
        if grid.ndim != 2:
            raise DataError(f"{path}: ragged rows")
        graph = build_grid_graph(grid.shape[1], grid.shape[0])
        return ScalarField(graph, grid.ravel())
    field = ScalarField.load(path)
    if field.n == 0:
        raise DataError(f"{path}: field has no vertices")
    return field


def _out_path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _emit_json(args, name, payload, to_stdout=False):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if to_stdout:
        print(text)
    with open(_out_path(args, name), "w") as fh:
        fh.write(text + "\n")


def cmd_persistence(args):
    field = _load_field(args.input)
    diagram = compute_diagram(field, Direction.parse(args.direction))
    _emit_json(args, "diagram.json", diagram.to_json_dict(), to_stdout=True)
    return 0


def _choose_epsilon(args, tree_or_diagram):
    given = (args.epsilon is not None) + (args.top_j is not None) + bool(args.gap)
    if given != 1:
        raise ValueError("choose exactly one of --epsilon, --top-j, --gap")
    if args.epsilon is not None:
        return float(args.epsilon)
    if args.top_j is not None:
        return epsilon_top_j(tree_or_diagram, args.top_j)
    return epsilon_largest_gap(tree_or_diagram)


def cmd_simplify(args):
    field = _load_field(args.input)
    direction = Direction.parse(args.direction)
    tree = compute_merge_tree(field, direction)
    epsilon = _choose_epsilon(args, diagram_of(tree))
    target = simplify(tree, field, epsilon)
    _emit_json(args, "target.json", target.to_json_dict(), to_stdout=True)
    simplified = ScalarField(field.graph, target.values)
    _emit_json(args, "simplified_field.json", simplified.to_json_dict())
    return 0


def _write_grid_csv(path, values, shape):
    grid = np.asarray(values).reshape(shape)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid:
            writer.writerow([repr(float(v)) for v in row])


def cmd_optimize_values(args):
    if args.input:
        field = _load_field(args.input)
        shape = None
        if args.input.endswith(".csv"):
            with open(args.input, newline="") as fh:
                nrows = sum(1 for line in csv.reader(fh) if line)
            shape = (nrows, field.n // nrows)
    else:
        field = gaussian_mixture_field(args.grid, args.grid, FOUR_GAUSSIANS)
        shape = (args.grid, args.grid)
    direction = Direction.parse(args.direction)
    kinds = [LossKind.PSO, LossKind.DIAGRAM] if args.loss == "both" else [LossKind.parse(args.loss)]
    for kind in kinds:
        report = optimize_values(
            field,
            direction,
            kind,
            epsilon=args.epsilon,
            steps=args.steps,
            learning_rate=args.lr,
            anti_squash=args.anti_squash,
        )
        tag = kind.value
        _emit_json(args, f"report_{tag}.json", report.to_json_dict())
        report.vineyard.save_csv(_out_path(args, f"vineyard_{tag}.csv"))
        if shape is not None:
            _write_grid_csv(_out_path(args, f"field_{tag}_initial.csv"), field.values, shape)
            _write_grid_csv(_out_path(args, f"field_{tag}_final.csv"), report.final.values, shape)
        print(
            f"{tag}: loss {report.losses[0]:.6g} -> {report.losses[-1]:.6g} "
            f"over {args.steps} steps (direction={direction.value}, eps={args.epsilon})"
        )
    return 0


def _parse_policy(text):
    try:
        return EpsilonPolicy.parse(text)
    except ValueError as exc:
        raise ValueError(str(exc)) from None


def _train_config_from(args, task):
    trigger = None if args.no_topo else args.t
    start = None if args.no_topo else args.topo_start
    return TrainConfig(
        epochs=args.epochs,
        task=task,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        trigger_threshold=trigger,
        topo_start_epoch=start,
        topo_steps=args.topo_steps,
        knn_k=args.k,
        augment_n=args.n,
        augment_sigma=args.sigma,
        pca_dims=args.pca,
        epsilon_policy=_parse_policy(args.eps_policy),
        seed=args.seed,
        weight_decay=args.l2,
        simplify_directions=args.directions,
    )


def _run_and_emit(args, config, cloud, prefix=""):
    report = train(config, cloud)
    _emit_json(args, f"{prefix}report.json", report.to_json_dict())
    report.vineyard.save_csv(_out_path(args, f"{prefix}vineyard.csv"))
    report.model.save(_out_path(args, f"{prefix}model.json"))
    metric = ", ".join(f"{k}={v:.6g}" for k, v in report.test_metric.items())
    fired = len(report.phase_log)
    print(
        f"{prefix or 'run'}: {config.epochs} epochs, {fired} topo phases, "
        f"final val loss {report.val_losses[-1]:.6g}, test {metric}"
    )
    return report


def cmd_train(args):
    cloud = data_mod.load_csv(args.data, label=_label_arg(args), header=args.header)
    if args.sweep:
        return _sweep_impl(args, cloud)
    config = _train_config_from(args, args.task)
    _run_and_emit(args, config, cloud)
    return 0


def cmd_blobs(args):
    cloud = data_mod.make_blobs(
        n_per_class=args.per_class, shuffle_frac=args.shuffle, seed=args.seed
    )
    config = _train_config_from(args, "classification")
    report = _run_and_emit(args, config, cloud)
    if (
        config.topo_start_epoch is not None
        and 2 <= config.topo_start_epoch <= config.epochs
    ):
        before = report.val_losses[config.topo_start_epoch - 2]
        window = report.val_losses[
            config.topo_start_epoch - 1 : config.topo_start_epoch - 1 + 20
        ]
        drop = (before - min(window)) / before
        print(f"validation-loss drop within 20 epochs of activation: {100 * drop:.1f}%")
    return 0


def _label_arg(args):
    if args.label is None:
        return None
    try:
        return int(args.label)
    except ValueError:
        return args.label


def _sweep_impl(args, cloud):
    grid = dict(DEFAULT_GRID)
    for key in grid:
        override = getattr(args, f"grid_{key}", None)
        if override:
            grid[key] = [type(grid[key][0])(v) for v in override.split(",")]
    rows = []
    best = None
    for k, t, n, sigma in itertools.product(grid["k"], grid["t"], grid["n"], grid["sigma"]):
        if n > 0 and sigma == 0:
            continue
        config = TrainConfig(
            epochs=args.epochs,
            task=args.task,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            trigger_threshold=t,
            topo_steps=args.topo_steps,
            knn_k=k,
            augment_n=n,
            augment_sigma=sigma,
            pca_dims=args.pca,
            epsilon_policy=_parse_policy(args.eps_policy),
            seed=args.seed,
            weight_decay=args.l2,
            simplify_directions=args.directions,
        )
        report = train(config, cloud)
        row = {
            "k": k,
            "t": t,
            "n": n,
            "sigma": sigma,
            "final_val_loss": report.val_losses[-1],
            **{f"test_{key}": v for key, v in report.test_metric.items()},
        }
        rows.append(row)
        if best is None or row["final_val_loss"] < best[0]["final_val_loss"]:
            best = (row, report)
    path = _out_path(args, "sweep_summary.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    _emit_json(args, "sweep_best.json", {"selected": best[0], "report": best[1].to_json_dict()})
    print(f"swept {len(rows)} configurations; best final val loss {best[0]['final_val_loss']:.6g}")
    print(f"summary: {path}")
    return 0


def cmd_sweep(args):
    cloud = data_mod.load_csv(args.data, label=_label_arg(args), header=args.header)
    return _sweep_impl(args, cloud)


def _add_train_flags(p, epochs_default, topo_start_default=None, eps_default="validation"):
    p.add_argument("--epochs", type=int, default=epochs_default, help="training epochs")
    p.add_argument("--batch-size", type=int, default=64, help="minibatch size")
    p.add_argument("--lr", type=float, default=1e-3, help="base learning rate")
    p.add_argument("--t", type=float, default=1e-3, help="validation-loss trigger threshold")
    p.add_argument(
        "--topo-start",
        type=int,
        default=topo_start_default,
        help="fire the topological phase every epoch from this one (overrides --t)",
    )
    p.add_argument("--topo-steps", type=int, default=10, help="steps per topological phase")
    p.add_argument("--k", type=int, default=15, help="k-NN graph neighbors")
    p.add_argument("--n", type=int, default=0, help="augmentation copies per point")
    p.add_argument("--sigma", type=float, default=0.001, help="augmentation noise std dev")
    p.add_argument("--pca", type=int, default=None, help="PCA dims for graph construction")
    p.add_argument(
        "--eps-policy",
        default=eps_default,
        help="epsilon policy: validation | top:J | gap | fixed:VALUE",
    )
    p.add_argument("--l2", type=float, default=0.0, help="weight decay (L2 baseline)")
    p.add_argument("--no-topo", action="store_true", help="plain training baseline")
    p.add_argument(
        "--directions",
        default="both",
        choices=["both", "sublevel", "superlevel"],
        help="regression simplification directions",
    )


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master RNG seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--config", default=None, help="JSON config file (flags override it)")

    parser = argparse.ArgumentParser(
        prog="psopt",
        description="Persistence-sensitive simplification and optimization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "persistence", parents=[common], help="persistence diagram of a scalar field"
    )
    p.add_argument("input", help="ScalarField JSON or CSV value grid")
    p.add_argument(
        "--direction", default="sublevel", choices=["sublevel", "superlevel"]
    )
    p.set_defaults(fn=cmd_persistence)

    p = sub.add_parser(
        "simplify", parents=[common], help="persistence-sensitive simplification"
    )
    p.add_argument("input", help="ScalarField JSON or CSV value grid")
    p.add_argument(
        "--direction", default="sublevel", choices=["sublevel", "superlevel"]
    )
    p.add_argument("--epsilon", type=float, default=None, help="simplification threshold")
    p.add_argument("--top-j", type=int, default=None, help="epsilon keeping top J points")
    p.add_argument("--gap", action="store_true", help="epsilon at the largest persistence gap")
    p.set_defaults(fn=cmd_simplify)

    p = sub.add_parser(
        "optimize-values",
        parents=[common],
        help="gradient descent on vertex values (PSO vs diagram loss)",
    )
    p.add_argument("--input", default=None, help="ScalarField JSON or CSV grid (default: preset)")
    p.add_argument("--grid", type=int, default=100, help="preset grid side length")
    p.add_argument("--loss", default="both", choices=["pso", "diagram", "both"])
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--direction", default="superlevel", choices=["sublevel", "superlevel"])
    p.add_argument("--anti-squash", type=float, default=0.0, help="stretch weight for kept points")
    p.set_defaults(fn=cmd_optimize_values)

    p = sub.add_parser("train", parents=[common], help="two-phase training on a CSV dataset")
    p.add_argument("data", help="dataset CSV")
    p.add_argument("--label", default=None, help="label column name or index (default: last)")
    p.add_argument("--header", default=None, action="store_true", help="CSV has a header row")
    p.add_argument("--task", default="regression", choices=["regression", "classification"])
    p.add_argument("--sweep", action="store_true", help="run the hyperparameter grid instead")
    _add_train_flags(p, epochs_default=100)
    for key in DEFAULT_GRID:
        p.add_argument(f"--grid-{key}", default=None, help=f"sweep values for {key}")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("blobs", parents=[common], help="three-Gaussian class-noise preset")
    p.add_argument("--per-class", type=int, default=1000, help="points per blob")
    p.add_argument("--shuffle", type=float, default=0.2, help="label shuffle fraction")
    _add_train_flags(p, epochs_default=500, topo_start_default=450, eps_default="top:3")
    p.set_defaults(fn=cmd_blobs, k=10)

    p = sub.add_parser("sweep", parents=[common], help="hyperparameter grid over k, t, n, sigma")
    p.add_argument("data", help="dataset CSV")
    p.add_argument("--label", default=None, help="label column name or index (default: last)")
    p.add_argument("--header", default=None, action="store_true", help="CSV has a header row")
    p.add_argument("--task", default="regression", choices=["regression", "classification"])
    _add_train_flags(p, epochs_default=100)
    for key in DEFAULT_GRID:
        p.add_argument(f"--grid-{key}", default=None, help=f"sweep values for {key}")
    p.set_defaults(fn=cmd_sweep)

    return parser


def _apply_config_file(parser, args, argv):
    """Config-file values override defaults; explicit flags override both."""
    if not args.config:
        return args
    try:
        with open(args.config) as fh:
            overrides = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(overrides, dict):
        raise DataError("config file must hold a JSON object")
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValueError(f"config key {key!r} is not a flag of this command")
        flag = "--" + key.replace("_", "-")
        if any(a == flag or a.startswith(flag + "=") for a in argv):
            continue  # explicit flag wins
        setattr(args, attr, value)
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors; our contract says 1
        return 0 if exc.code == 0 else 1
    try:
        args = _apply_config_file(parser, args, argv)
        return args.fn(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
