"""Command-line entry point: ``dexlab <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 partial suite failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, config
from .agents import evaluate
from .envs import generate_demonstrations, make_env, save_demonstrations
from .errors import ConfigurationError, NumericError, UsageError
from .nn import Network, load_checkpoint
from .plots import write_plots

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PARTIAL = 0, 1, 2, 3


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="random seed (suite seed base for bench)")
    p.add_argument("--out", default=d, help="output file or directory")
    p.add_argument("--config", default=d, help="flat YAML config file")


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _non_negative(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> Parser:
    parser = Parser(prog="dexlab", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("gen-demos", help="write scripted-expert demonstrations")
    _global_flags(p, suppress=True)
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=_positive, default=100)

    p = sub.add_parser("train", help="train one agent into a run directory")
    _global_flags(p, suppress=True)
    p.add_argument("--env", default=argparse.SUPPRESS)
    p.add_argument("--variant", default=argparse.SUPPRESS)
    p.add_argument("--alpha", type=float, default=argparse.SUPPRESS)
    p.add_argument("--k", dest="k_neighbors", type=int, default=argparse.SUPPRESS)
    p.add_argument("--total-steps", dest="total_steps", type=_non_negative, default=argparse.SUPPRESS)
    p.add_argument("--eval-every", dest="eval_every", type=_non_negative, default=argparse.SUPPRESS)
    p.add_argument("--demos", dest="demo_path", default=argparse.SUPPRESS, help="demonstration file")
    p.add_argument("--demo-episodes", dest="demo_episodes", type=_non_negative, default=argparse.SUPPRESS)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any config key")

    p = sub.add_parser("eval", help="evaluate an actor checkpoint")
    _global_flags(p, suppress=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=_positive, default=20)

    p = sub.add_parser("bench", help="run a suite of runs and aggregate them")
    _global_flags(p, suppress=True)
    p.add_argument("--suite", required=True, help=f"built-in ({', '.join(bench.BUILTIN_SUITES)}) or YAML file")
    p.add_argument("--steps", dest="total_steps", type=_non_negative, default=argparse.SUPPRESS)
    p.add_argument("--seeds", type=_positive, default=None, help="replicates per condition")
    p.add_argument("--only-env", action="append", default=None, help="restrict to these environments")
    p.add_argument("--jobs", type=_positive, default=None)
    p.add_argument("--grouping", choices=("per-task", "per-domain", "overall"), default="per-domain")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("aggregate", help="IQM report over a results tree")
    _global_flags(p, suppress=True)
    p.add_argument("results")
    p.add_argument("--grouping", choices=("per-task", "per-domain", "overall"), default="per-domain")
    p.add_argument("--resamples", type=_positive, default=2000)

    p = sub.add_parser("plot", help="learning-curve CSV and SVG files")
    _global_flags(p, suppress=True)
    p.add_argument("results")
    return parser


# commands ------------------------------------------------------------------------


def cmd_gen_demos(args) -> int:
    env = make_env(args.env)
    seed = args.seed or 0
    out = Path(args.out or f"demos_{args.env}_{args.episodes}_seed{seed}.jsonl")
    demos = generate_demonstrations(env, args.episodes, seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_demonstrations(out, demos, env)
    attempts = demos.meta.get("attempts", demos.n_episodes)
    print(f"wrote {demos.n_episodes} episodes to {out} (expert success {demos.n_episodes}/{attempts})")
    return EXIT_OK


def _cli_layer(args, keys) -> dict:
    layer = {k: getattr(args, k) for k in keys if hasattr(args, k)}
    layer.update(config.parse_assignments(getattr(args, "set", [])))
    return layer


def cmd_train(args) -> int:
    file_layer = config.load_file(args.config) if args.config else {}
    cli = _cli_layer(args, ("env", "variant", "alpha", "k_neighbors", "total_steps", "eval_every", "demo_path", "demo_episodes"))
    if args.seed is not None:
        cli["seed"] = args.seed
    if cli.get("demo_path"):
        cli["demo_path"] = str(Path(cli["demo_path"]).resolve())
    cfg = config.resolve(file_layer, cli)
    run_dir = Path(args.out) if args.out else bench.run_dir_for("runs", cfg)
    final = bench.execute_run(cfg, run_dir)
    print(f"{run_dir}: {cfg.agent_label} on {cfg.env}, seed {cfg.seed}, final success {final['success']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    spec, params = load_checkpoint(args.checkpoint)
    env = make_env(args.env)
    want_in = env.spec.obs_dim + env.spec.goal_dim
    if spec.in_dim != want_in or spec.out_dim != env.spec.action_dim:
        raise ConfigurationError(
            f"checkpoint maps {spec.in_dim} -> {spec.out_dim} but {args.env} needs {want_in} -> {env.spec.action_dim}"
        )
    seed = args.seed or 0
    success = evaluate(Network(spec, params), args.env, args.episodes, seed)
    record = {
        "checkpoint": str(args.checkpoint),
        "env": args.env,
        "episodes": args.episodes,
        "seed": seed,
        "success": float(np.mean(success)),
    }
    text = json.dumps(record, indent=2, sort_keys=True) + "\n"
    out = Path(args.out) if args.out else Path(str(args.checkpoint) + f".eval_seed{seed}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_bench(args) -> int:
    suite = bench.load_suite(args.suite)
    if args.seeds:
        suite["seeds"] = args.seeds
    if args.seed is not None:
        suite["seed_base"] = args.seed
    file_layer = config.load_file(args.config) if args.config else {}
    cli = _cli_layer(args, ("total_steps",))
    for forbidden in ("env", "seed", "label"):
        if forbidden in cli:
            raise UsageError(f"{forbidden} is set by the suite and cannot be overridden on the command line")
    root = Path(args.out or Path("results") / suite["name"])

    def progress(o):
        print(f"[{o.status}] {o.run_dir}" + (f" ({o.error})" if o.error else ""), flush=True)

    outcomes = bench.run_suite(suite, root, file_layer, cli, args.jobs, args.only_env, progress)
    failed = bench.warn_partial(outcomes)
    try:
        report = bench.aggregate_tree(root, args.grouping)
    except UsageError:
        if failed:
            print(f"all {failed} runs failed", file=sys.stderr)
            return EXIT_PARTIAL
        raise
    bench.write_report(report, root)
    print(report.to_text(), end="")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_aggregate(args) -> int:
    report = bench.aggregate_tree(args.results, args.grouping, args.resamples, seed=args.seed or 0)
    csv_path, _ = bench.write_report(report, args.out or args.results)
    print(report.to_text(), end="")
    print(f"# written to {csv_path.parent}")
    return EXIT_OK


def cmd_plot(args) -> int:
    written = write_plots(args.results, args.out or Path(args.results) / "plots")
    for p in written:
        print(p)
    return EXIT_OK


COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "aggregate": cmd_aggregate,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigurationError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
