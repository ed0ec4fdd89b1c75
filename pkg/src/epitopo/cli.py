"""Command line entry point: ``epitopo <verb> [--config FILE] [--set key=value ...] [--out DIR]``.

On failure the last line on stderr is machine-parsable::

    error code=CONFIG_ERROR message="unknown config key 'nn'" key=nn
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment, graphgen, metrics, storage
from .errors import EpiTopoError

log = logging.getLogger("epitopo")


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", help="output directory (default: out_dir from the config)")


def build_parser():
    parser = argparse.ArgumentParser(prog="epitopo",
                                     description="Infer mobility networks from multi-pathogen epidemic data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate", help="generate a mobility network and write its adjacency")
    _common(p)
    p = sub.add_parser("simulate", help="simulate epidemics and write the dataset")
    _common(p)
    p = sub.add_parser("train", help="train on a dataset file, or run every replicate of the config")
    _common(p)
    p.add_argument("--dataset", help="dataset file written by 'simulate'")
    p = sub.add_parser("evaluate", help="compare an inferred adjacency with the ground truth")
    _common(p)
    p.add_argument("--truth", required=True, help="ground-truth adjacency file")
    p.add_argument("--inferred", required=True, help="inferred adjacency file")
    p = sub.add_parser("sweep", help="sweep one axis over several values")
    _common(p)
    p.add_argument("--axis", required=True, choices=sorted(experiment.SWEEP_AXES))
    p.add_argument("--values", help="comma-separated values (mobility_rate defaults to the nine standard rates)")
    return parser


def _out_dir(args, config):
    out = Path(args.out or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_json(obj):
    print(json.dumps(obj, indent=2, default=experiment._json_default))


def cmd_generate(args, config):
    out = _out_dir(args, config)
    graph_seed = experiment.replicate_seeds(config, 0)[0]
    net = graphgen.with_populations(graphgen.generate(config.graph_spec(graph_seed)), config.populations)
    if not net.weighted:
        net = graphgen.assign_mobility(net, config.MobilityRate)
    path = storage.save_adjacency(out / "adjacency.csv", net.A)
    _print_json({"adjacency": str(path), "n": net.n, "links": net.num_links})


def cmd_simulate(args, config):
    out = _out_dir(args, config)
    paths = []
    for r in range(config.replicates):
        ds = experiment.build_dataset(config, r)
        paths.append(str(storage.save_dataset(out / f"dataset_r{r}.txt", ds)))
    _print_json({"datasets": paths})


def cmd_train(args, config):
    out = _out_dir(args, config)
    if args.dataset:
        ds = storage.load_dataset(args.dataset)
        records = [experiment.train_on_dataset(config, ds, 0)]
    else:
        records = experiment.run_replicates(config)
    summary = experiment.emit_outputs(records, out)
    _print_json({"summary": str(summary), "table": experiment.aggregate(records)})
    return 0 if all(r.error is None for r in records) else 3


def cmd_evaluate(args, config):
    A = storage.load_adjacency(args.truth)
    A_hat = storage.load_adjacency(args.inferred)
    weighted = np.unique(A[A != 0]).size > 1
    report = metrics.evaluate(A, A_hat, weighted=weighted).as_dict()
    out = _out_dir(args, config)
    (out / "metrics.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    _print_json(report)


def cmd_sweep(args, config):
    out = _out_dir(args, config)
    if args.values:
        values = [v.strip() for v in args.values.split(",") if v.strip()]
    elif args.axis == "mobility_rate":
        values = list(experiment.MOBILITY_RATES)
    else:
        raise experiment.ConfigError("--values is required for this axis", axis=args.axis)
    records = experiment.run_sweep(config, args.axis, values)
    summary = experiment.emit_outputs(records, out, sweep_axis=args.axis)
    _print_json({"summary": str(summary), "table": experiment.aggregate(records, experiment.SWEEP_AXES[args.axis])})
    return 0


COMMANDS = {"generate": cmd_generate, "simulate": cmd_simulate, "train": cmd_train,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def error_line(exc):
    code = getattr(exc, "code", None) or ("IO_ERROR" if isinstance(exc, OSError) else "INTERNAL_ERROR")
    message = str(exc.args[0]) if exc.args else str(exc)
    parts = [f"error code={code}", f"message={json.dumps(message)}"]
    for k, v in getattr(exc, "context", {}).items():
        parts.append(f"{k}={json.dumps(str(v))}")
    return " ".join(parts)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = experiment.load_config(args.config, args.overrides)
        status = COMMANDS[args.verb](args, config)
    except (EpiTopoError, OSError, ValueError) as exc:
        print(error_line(exc), file=sys.stderr)
        return 2
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
