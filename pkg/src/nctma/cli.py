"""Command-line driver: ``python -m nctma <subcommand> ...``.

Exit status is 0 on success, 1 for usage errors (bad flags or values) and 2
for unreadable or malformed data files and checkpoints.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .encoding import FEATURES
from .experiments import (
    evaluate_dataset,
    iteration_sweep,
    label_dataset,
    permutation_importance,
    train_sample,
)
from .gnn import ShapeMismatch, TrainConfig, load_model, save_model, train_epochs
from .heuristic import deep_tma_delay
from .network import TOPOLOGIES, GenerationFailed, SchemaError, generate_dataset, load_dataset, \
    save_dataset
from .tma import analyzer

USAGE_ERROR = 1
DATA_ERROR = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_range(text: str) -> tuple[int, int]:
    """``"8"`` or ``"2-8"`` (inclusive)."""
    lo, sep, hi = text.partition("-")
    try:
        pair = (int(lo), int(hi)) if sep else (int(lo), int(lo))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO-HI, got {text!r}") from None
    if pair[0] > pair[1]:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return pair


def _float_range(text: str) -> float | tuple[float, float]:
    lo, sep, hi = text.partition(":")
    try:
        return (float(lo), float(hi)) if sep else float(lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected P or LO:HI, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("n values must be positive integers")
    return values


def _topologies(text: str) -> tuple[str, ...]:
    names = tuple(t.strip() for t in text.split(","))
    bad = [t for t in names if t not in TOPOLOGIES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown topology {bad[0]!r}; choose from {TOPOLOGIES}")
    return names


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nctma", description="Delay-bound analysis with learned decompositions.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="draw a random dataset of networks")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--topology", type=_topologies, default=TOPOLOGIES,
                   help="comma-separated subset of " + ",".join(TOPOLOGIES))
    g.add_argument("--servers", type=_int_range, default=(2, 8), help="N or LO-HI")
    g.add_argument("--flows", type=_int_range, default=(1, 30), help="N or LO-HI")
    g.add_argument("--edge-probability", type=_float_range, default=(0.3, 0.8),
                   help="P or LO:HI (Erdos-Renyi only)")
    g.add_argument("--utilization-cap", type=float, default=0.9)
    g.add_argument("--max-hops", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    lab = sub.add_parser("label", help="attach exhaustive optima to every flow")
    lab.add_argument("--in", dest="inp", required=True)
    lab.add_argument("--out", required=True)
    lab.add_argument("--jobs", type=int, default=1)

    t = sub.add_parser("train", help="fit the graph model on a labelled dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--iterations", type=int, default=15)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--attention", type=_on_off, default=True, help="on or off")
    t.add_argument("--out", required=True)

    a = sub.add_parser("analyze", help="delay bound of one flow")
    a.add_argument("--network", required=True, help="JSONL dataset")
    a.add_argument("--network-id", type=int, default=None,
                   help="network to pick from the file (default: the first)")
    a.add_argument("--flow", type=int, required=True)
    a.add_argument("--mode", choices=("exhaustive", "deeptma", "random"), default="exhaustive")
    a.add_argument("--model")
    a.add_argument("--n", type=int, default=1)
    a.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("evaluate", help="DeepTMA_n and random_n against the exhaustive optimum")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--n", type=_int_list, default=[1, 2, 4, 8])
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--csv", help="raw records; the summary goes next to it (default: stdout)")
    e.add_argument("--timing", action="store_true", help="fill in wall_time_s")

    imp = sub.add_parser("importance", help="permutation importance of input features")
    imp.add_argument("--data", required=True)
    imp.add_argument("--model", required=True)
    imp.add_argument("--feature", choices=sorted(FEATURES), action="append",
                     help="repeatable; default all five")
    imp.add_argument("--permutations", type=int, default=10)
    imp.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("sweep-iterations", help="RelErr change when stopping message passing early")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--seed", type=int, default=0)
    return p


def _load_data(path):
    try:
        return load_dataset(path)
    except OSError as err:
        raise DataError(f"cannot read {path}: {err.strerror or err}") from err
    except SchemaError as err:
        raise DataError(f"{path}: {err}") from err


def _load_model(path):
    try:
        return load_model(path)
    except OSError as err:
        raise DataError(f"cannot read {path}: {err.strerror or err}") from err
    except (ShapeMismatch, ValueError, KeyError, TypeError) as err:
        raise DataError(f"{path}: bad checkpoint: {err}") from err


def _write(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as err:
        raise DataError(f"cannot write {path}: {err.strerror or err}") from err


def _positive(name, value):
    if value < 1:
        raise UsageError(f"--{name} must be >= 1")


def cmd_generate(args, out):
    _positive("count", args.count)
    try:
        nets = generate_dataset(args.count, args.seed, servers=args.servers, flows=args.flows,
                                topologies=args.topology, edge_probability=args.edge_probability,
                                utilization_cap=args.utilization_cap, max_hops=args.max_hops)
    except ValueError as err:
        raise UsageError(str(err)) from err
    except GenerationFailed as err:
        raise DataError(str(err)) from err
    save_dataset(nets, args.out)
    print(f"wrote {len(nets)} networks to {args.out}", file=out)


def cmd_label(args, out):
    _positive("jobs", args.jobs)
    nets = label_dataset(_load_data(args.inp), args.jobs)
    save_dataset(nets, args.out)
    labelled = sum(len(n.labels) for n in nets)
    skipped = sum(lab.skip for n in nets for lab in n.labels)
    print(f"labelled {labelled} flows in {len(nets)} networks ({skipped} unbounded, skipped)",
          file=out)


def cmd_train(args, out):
    try:
        cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                          seed=args.seed, attention=args.attention, hidden=args.hidden,
                          iterations=args.iterations)
    except ValueError as err:
        raise UsageError(str(err)) from err
    nets = _load_data(args.data)
    if not nets:
        raise DataError(f"{args.data}: no networks")
    data = [train_sample(n) for n in nets]

    def log(epoch, value):
        print(f"epoch {epoch + 1}/{cfg.epochs} loss {value:.6f}", file=out, flush=True)

    params, _ = train_epochs(data, cfg, log=log)
    save_model(params, args.out)


def cmd_analyze(args, out):
    nets = _load_data(args.network)
    if not nets:
        raise DataError(f"{args.network}: no networks")
    if args.network_id is None:
        net = nets[0]
    else:
        matches = [n for n in nets if n.id == args.network_id]
        if not matches:
            raise UsageError(f"no network with id {args.network_id} in {args.network}")
        net = matches[0]
    if not 0 <= args.flow < net.num_flows:
        raise UsageError(f"network {net.id} has no flow {args.flow}")
    _positive("n", args.n)
    an = analyzer(net)
    if args.mode == "exhaustive":
        res = an.exhaustive(args.flow)
    elif args.mode == "random":
        res = an.random_heuristic(args.flow, args.n, args.seed)
    else:
        if not args.model:
            raise UsageError("--mode deeptma needs --model")
        res = deep_tma_delay(_load_model(args.model), net, args.flow, args.n, args.seed)
    print(json.dumps({"network_id": net.id, "flow_id": args.flow, "mode": args.mode,
                      "delay": res.delay if res.delay != float("inf") else None,
                      "cuts": list(res.decomposition), "evaluated": res.evaluated_count}),
          file=out)


def cmd_evaluate(args, out):
    params = _load_model(args.model)
    nets = _load_data(args.data)
    ev = evaluate_dataset(params, nets, args.n, args.seed, timing=args.timing)
    if args.csv:
        csv_path = Path(args.csv)
        _write(csv_path, ev.to_csv())
        summary_path = csv_path.with_name(csv_path.stem + ".summary.csv")
        _write(summary_path, ev.summary_csv())
        print(f"wrote {len(ev.records)} records to {csv_path} and the summary to {summary_path}",
              file=out)
    else:
        out.write(ev.to_csv())
        out.write("\n")
        out.write(ev.summary_csv())


def cmd_importance(args, out):
    _positive("permutations", args.permutations)
    params = _load_model(args.model)
    nets = _load_data(args.data)
    print("feature,importance", file=out)
    for feature in args.feature or list(FEATURES):
        rec = permutation_importance(params, nets, feature, args.permutations, args.seed)
        print(f"{rec.feature},{rec.importance!r}", file=out)


def cmd_sweep(args, out):
    params = _load_model(args.model)
    nets = _load_data(args.data)
    print("iterations,importance", file=out)
    for rec in iteration_sweep(params, nets, args.seed):
        print(f"{rec.feature},{rec.importance!r}", file=out)


COMMANDS = {
    "generate": cmd_generate,
    "label": cmd_label,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "evaluate": cmd_evaluate,
    "importance": cmd_importance,
    "sweep-iterations": cmd_sweep,
}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args, out)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return DATA_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
