"""Command-line entry point: ``pbgcn <subcommand> [config.toml] [--set k=v ...]``."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .errors import PBGCNError, UnknownSubcommand
from .evaluation import ablation_table, format_report
from .experiment import load_run_config, run_ablate, run_eval, run_gen_synth, run_train
from .graph import load_topology, normalize_adjacency, spatial_operator

COMMANDS = ("train", "eval", "ablate", "inspect-graph", "gen-synth")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "invalid choice" in message:
            raise UnknownSubcommand(message)
        super().error(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pbgcn", description="Part-based graph convolution for skeleton action recognition.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=argparse.ArgumentParser)
    for name in ("train", "eval", "ablate", "gen-synth"):
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="run config (TOML)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        if name == "eval":
            p.add_argument("--checkpoint", help="shorthand for --set eval.checkpoint=PATH")
        if name == "gen-synth":
            p.add_argument("--out", help="dataset directory (default: data.root)")
    p = sub.add_parser("inspect-graph")
    p.add_argument("topology", help="topology TOML or a bundled name (ntu25, toy5)")
    p.add_argument("--scheme", action="append", help="restrict to these schemes")
    return parser


def _fmt(values) -> str:
    # Adding 0.0 turns -0.0 into 0.0 so tiny negative roundoff prints cleanly.
    return " ".join(f"{np.round(v, 4) + 0.0:.4f}" for v in values)


def inspect_graph(path: str, schemes=None, out=None) -> None:
    out = out or sys.stdout
    topo = load_topology(path)
    g = topo.graph
    print(f"graph {g.name}: {g.num_vertices} vertices, {len(g.edges)} edges", file=out)
    if g.reference_joints:
        print(f"reference joints: {list(g.reference_joints)}", file=out)
    for name in schemes or sorted(topo.schemes):
        scheme = topo.scheme(name)
        print(f"\nscheme {name}: {scheme.n} part(s)", file=out)
        for i, part in enumerate(scheme.parts):
            na = normalize_adjacency(part, i).matrix
            spec_na = np.sort(np.linalg.eigvalsh(na))
            spec_op = np.sort(np.linalg.eigvalsh(spatial_operator(part)))
            print(f"  part {i} {part.name}: vertices {list(part.vertices)}", file=out)
            print(f"    normalized adjacency spectrum: {_fmt(spec_na)}", file=out)
            print(f"    with self loops:               {_fmt(spec_op)}", file=out)
        counts = scheme.membership_count()
        print(f"  membership: {counts.tolist()}", file=out)
        shared = scheme.shared_vertices()
        if shared:
            for (a, b), verts in sorted(shared.items()):
                pa, pb = scheme.parts[a].name, scheme.parts[b].name
                print(f"  shared {pa}/{pb}: {sorted(verts)}", file=out)
        else:
            print("  shared: none", file=out)


def _run(args) -> int:
    if args.command == "inspect-graph":
        inspect_graph(args.topology, args.scheme)
        return 0
    cfg = load_run_config(args.config, args.overrides)
    if getattr(args, "checkpoint", None):
        cfg = cfg.with_overrides(eval={"checkpoint": args.checkpoint})
    if args.command == "train":
        outcome = run_train(cfg)
        last = outcome.result.log[-1]
        print(f"trained {len(outcome.result.log)} epochs; final loss {last['train_loss']:.5f}, "
              f"val {last['val_acc']:.4f}; best {outcome.result.best_val_acc:.4f} at epoch {outcome.result.best_epoch}")
        print(f"outputs in {outcome.out_dir}")
    elif args.command == "eval":
        _, cm = run_eval(cfg)
        print(format_report(cm, int(cfg.section("eval").get("top_k", 5))))
        print(f"outputs in {cfg.output_dir}")
    elif args.command == "ablate":
        rows = run_ablate(cfg)
        print(ablation_table(rows))
        print(f"table in {cfg.output_dir / 'ablation.csv'}")
    elif args.command == "gen-synth":
        root = run_gen_synth(cfg, args.out)
        print(f"wrote synthetic dataset to {root}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return _run(args)
    except PBGCNError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ERROR IOError: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
