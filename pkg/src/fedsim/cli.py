"""Command-line entry point: generate, run, compare, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__, report
from .datagen import DatasetError, generate_federation, load_csv_federation, load_preset, spec_from_preset, write_federation
from .engine import COMPARE_ORDER, run_comparison, run_federation
from .strategies import STRATEGIES, StrategyConfig

log = logging.getLogger("fedsim")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def parse_seeds(text: str) -> list[int]:
    """``1..10``, ``1,3,5`` or a mix such as ``1..3,7``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def _seed_list(text):
    try:
        return parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}: {exc}") from None


def _add_config_flags(parser):
    group = parser.add_argument_group("strategy config (overrides --config)")
    group.add_argument("--config", type=Path, help="JSON file with StrategyConfig fields")
    for f in fields(StrategyConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name.endswith("_range"):
            group.add_argument(flag, dest=f.name, type=int, nargs=2, metavar=("MIN", "MAX"), default=None)
        else:
            kind = int if f.type in ("int", int) else float
            group.add_argument(flag, dest=f.name, type=kind, default=None)


def build_config(args) -> StrategyConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(args.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
    for f in fields(StrategyConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            data[f.name] = value
    try:
        return StrategyConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0,
                        help="master seed (default 0)")
    parser.add_argument("--out", type=Path, default=default, help="output directory")
    parser.add_argument("--threads", type=int, default=default,
                        help="client worker threads (default $FEDSIM_THREADS or 1)")
    parser.add_argument("--log-level", default=argparse.SUPPRESS if suppress else "INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__)
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic federation as CSV files")
    p.add_argument("--preset", default="paper13", help="bundled preset name or path to a preset JSON")
    p.add_argument("--max-samples", type=int, default=None,
                   help="scale client sizes so the largest has this many samples")
    p.add_argument("--min-samples", type=int, default=300,
                   help="lower bound kept when scaling down (default 300)")

    p = sub.add_parser("run", parents=[common], help="train one strategy on a dataset directory")
    p.add_argument("--strategy", required=True, choices=sorted(STRATEGIES))
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--rounds", type=int, help="round count (required except for flad)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_config_flags(p)

    p = sub.add_parser("compare", parents=[common], help="run the full comparison protocol over seeds")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--seeds", type=_seed_list, default=list(range(1, 11)), help="e.g. 1..10 (default)")
    p.add_argument("--flad-cap", type=int, default=None, help="safety cap on FLAD rounds (default 1000)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_config_flags(p)

    p = sub.add_parser("report", parents=[common], help="re-export the tables of a finished run")
    p.add_argument("--run", required=True, type=Path, help="directory written by `fedsim run`")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    return parser


def _threads(args) -> int:
    if args.threads is not None:
        value = args.threads
    else:
        env = os.environ.get("FEDSIM_THREADS", "1")
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"FEDSIM_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError("--threads must be >= 1")
    return value


def _require_out(args) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command}: --out is required")
    return args.out


def cmd_generate(args) -> dict:
    out = _require_out(args)
    try:
        preset = load_preset(args.preset)
        spec = spec_from_preset(preset, args.seed, args.max_samples, args.min_samples)
        clients = generate_federation(spec)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    target = report.fresh_directory(out)
    write_federation(clients, target, spec)
    log.info("wrote %d clients to %s", len(clients), target)
    return {"dataset": str(target), "clients": len(clients)}


def _load_data(path: Path, seed: int):
    try:
        return load_csv_federation(path, seed=seed)
    except (DatasetError, OSError) as exc:
        raise UsageError(f"cannot load dataset: {exc}") from None


def cmd_run(args) -> dict:
    config = build_config(args)
    strategy = args.strategy
    rounds = args.rounds
    if strategy == "flad":
        if rounds is not None:
            log.warning("--rounds is ignored for flad: it stops on its own (safety cap 1000)")
        rounds = None
    elif rounds is None:
        raise UsageError(f"run: --rounds is required for {strategy}")
    elif rounds < 1:
        raise UsageError("--rounds must be >= 1")
    federation = _load_data(args.data, args.seed)
    result = run_federation(federation, strategy, config, args.seed, rounds, _threads(args))
    out = args.out or Path("runs") / f"{strategy}-seed{args.seed}"
    target = report.export(result, args.format, out, {"dataset": str(args.data)})
    log.info("%s: %d rounds (%s), results in %s", strategy, result.num_rounds, result.stop_reason, target)
    return {"run": str(target), "rounds": result.num_rounds, "stop_reason": result.stop_reason}


def cmd_compare(args) -> dict:
    config = build_config(args)
    threads = _threads(args)
    out = report.fresh_directory(args.out or Path("runs") / "compare")
    merged: dict[str, list] = {name: [] for name in report.TABLES}
    summary = report.Table(["seed", "strategy", "rounds", "stop_reason", "total_bytes",
                            "mean_participation_pct", "mean_test_f1", "work_units"])
    failures = []
    for seed in args.seeds:
        try:
            federation = _load_data(args.data, seed)
            results = run_comparison(federation, seed, config, args.flad_cap, threads)
        except Exception as exc:  # one bad seed must not sink the others
            log.error("seed %d failed: %s", seed, exc)
            failures.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
            continue
        for name in COMPARE_ORDER:
            result = results[name]
            report.export(result, args.format, out / f"seed{seed}" / name, {"dataset": str(args.data)})
            tables = report.build_tables(result)
            for tname, table in tables.items():
                merged[tname].append(({"seed": seed, "strategy": name}, table))
            summary.rows.append([
                seed, name, result.training_rounds, result.stop_reason,
                tables["bandwidth"].rows[-1][-2], tables["selection"].rows[-1][-1],
                tables["test_f1"].rows[-1][5], report.work_units_total(result),
            ])
        log.info("seed %d done (%d rounds)", seed, results["flad"].training_rounds)

    writer = report.table_to_csv if args.format == "csv" else report.table_to_json
    files = []
    for tname, parts in merged.items():
        if parts:
            report.write_text(out / f"{tname}.{args.format}", writer(report.merge_tables(parts)))
            files.append(f"{tname}.{args.format}")
    report.write_text(out / f"summary.{args.format}", writer(summary))
    files.append(f"summary.{args.format}")
    manifest = {
        "artifact": "fedsim", "version": __version__, "command": "compare", "dataset": str(args.data),
        "seeds": args.seeds, "strategies": list(COMPARE_ORDER), "config": config.to_dict(),
        "format": args.format, "files": files, "failures": failures,
    }
    report.write_text(out / report.MANIFEST_FILE, json.dumps(manifest, indent=1) + "\n")
    status = {"compare": str(out), "seeds_ok": len(args.seeds) - len(failures), "failures": failures}
    if failures:
        status["error"] = f"{len(failures)} of {len(args.seeds)} seeds failed"
    return status


def cmd_report(args) -> dict:
    try:
        result = report.load_result(args.run)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load run {args.run}: {exc}") from None
    target = report.export(result, args.format, args.out or args.run / "report")
    return {"report": str(target)}


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "compare": cmd_compare, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        status = COMMANDS[args.command](args)
    except UsageError as exc:
        print(json.dumps({"status": "error", "error": str(exc)}), file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("unhandled error", exc_info=True)
        print(json.dumps({"status": "error", "error": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return EXIT_FAILED
    if status.get("error"):
        print(json.dumps({"status": "error", **status}), file=sys.stderr)
        return EXIT_FAILED
    print(json.dumps({"status": "ok", **status}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
