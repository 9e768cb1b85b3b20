"""Command-line entry point: ``dreams {gen-worlds,run,ablate,summarize}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import (
    OUT_ENV,
    SweepConfig,
    SweepError,
    ablate,
    default_out_dir,
    format_summary,
    generate_worlds,
    run_sweep,
    summarize,
)
from .errors import ConfigError, DreamsError
from .policies import ALGORITHMS


def _csv_list(kind=str):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def _add_sweep_args(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file with sweep settings")
    p.add_argument(
        "--algorithm",
        type=_csv_list(),
        help=f"comma-separated subset of {','.join(ALGORITHMS)}",
    )
    p.add_argument("--noise", type=_csv_list(), help="low,med,high or explicit eta values")
    p.add_argument("--alpha", type=_csv_list(float), help="collision factors, e.g. 1,10,20")
    p.add_argument("--seeds", type=int, help="episodes per cell")
    p.add_argument("--plans", type=int, help="sampled plans per step")
    p.add_argument("--eval-worlds", type=int, help="evaluation worlds per step")
    p.add_argument("--worlds", type=int, help="worlds per kind")
    p.add_argument("--kinds", type=_csv_list(), help="forest,desert")
    p.add_argument("--world-dir", type=Path, help="load worlds written by gen-worlds")
    p.add_argument("--out", type=Path, help=f"results CSV (default ${OUT_ENV}/results.csv)")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--no-logs", action="store_true", help="skip per-episode JSONL logs")


def _config(args, default_name="results.csv") -> SweepConfig:
    overrides = {
        "algorithms": args.algorithm,
        "noise": args.noise,
        "alphas": args.alpha,
        "seeds": args.seeds,
        "n_plans": args.plans,
        "n_eval_worlds": args.eval_worlds,
        "worlds_per_kind": args.worlds,
        "kinds": args.kinds,
        "world_dir": args.world_dir,
        "out": args.out,
        "jobs": args.jobs,
    }
    if args.no_logs:
        overrides["write_logs"] = False
    overrides = {k: v for k, v in overrides.items() if v is not None}
    base = {}
    if args.config is not None:
        try:
            base = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError("config must be a JSON object")
    merged = {**base, **overrides}
    merged.setdefault("out", default_out_dir() / default_name)
    return SweepConfig.from_dict(merged)


def _progress(total):
    count = [0]

    def report(cell, row):
        count[0] += 1
        print(
            f"[{count[0]}/{total}] {cell.world_id} {cell.algorithm} noise={cell.noise} "
            f"alpha={cell.alpha:g} seed={cell.seed_index} subopt={row.suboptimality:.3f}",
            file=sys.stderr,
        )

    return report


def cmd_gen_worlds(args) -> int:
    cfg = _config(args)
    out_dir = args.world_dir or default_out_dir() / "worlds"
    paths = generate_worlds(cfg, out_dir)
    print(f"wrote {len(paths)} worlds to {out_dir}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    path = run_sweep(cfg, progress=None if args.quiet else _progress(cfg.n_cells))
    print(f"wrote {path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args, default_name=f"ablate_{args.axis}.csv")
    total = cfg.n_cells * len(args.values)
    path = ablate(args.axis, args.values, cfg, progress=None if args.quiet else _progress(total))
    print(f"wrote {path}")
    return 0


def cmd_summarize(args) -> int:
    summary = summarize(args.results)
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(format_summary(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dreams", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-worlds", help="write procedural worlds as PGM + JSON")
    _add_sweep_args(p)
    p.set_defaults(func=cmd_gen_worlds)

    p = sub.add_parser("run", help="run a resumable sweep")
    _add_sweep_args(p)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="sweep one sample-count axis")
    _add_sweep_args(p)
    p.add_argument("axis", choices=["plans", "eval_worlds"])
    p.add_argument("values", type=_csv_list(int), help="comma-separated values, e.g. 1,5,20,100")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("summarize", help="per-cell means and 95%% intervals")
    p.add_argument("results", type=Path)
    p.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SweepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DreamsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
