"""Command line entry point: ``sdslab run <config>`` and ``sdslab list-presets``.

Exit codes: 0 when every verdict passes, 2 when any verdict fails, 1 on a
config or I/O problem (the message names the offending key).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time

from . import __version__, presets
from .config import ConfigError, load_config
from .experiments import Outcome, Table, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_FAIL = 0, 1, 2


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def render_csv(table: Table, seed: int, config_hash: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns + ["seed", "config_hash"])
    for row in table.rows:
        w.writerow([_cell(v) for v in row] + [str(seed), config_hash])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "item"):  # numpy scalars
        return _jsonable(v.item())
    return v


def write_outputs(out_dir: str, outcome: Outcome, cfg, workers: int, wall: float) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    chash = cfg.config_hash()
    checksums = {}
    for name, table in sorted(outcome.tables.items()):
        data = render_csv(table, cfg.seed, chash).encode()
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(data)
        checksums[name] = hashlib.sha256(data).hexdigest()
    summary = {"command": cfg.command, "verdict": outcome.verdict, "seed": cfg.seed, "config_hash": chash,
               **outcome.summary}
    data = (json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n").encode()
    with open(os.path.join(out_dir, "summary.json"), "wb") as fh:
        fh.write(data)
    checksums["summary.json"] = hashlib.sha256(data).hexdigest()
    manifest = {"config": os.path.abspath(cfg.path), "config_hash": chash, "version": __version__,
                "command": cfg.command, "seed": cfg.seed, "workers": workers, "wall_clock_seconds": wall,
                "rng": "numpy PCG64, SeedSequence(seed, spawn_key=(stream tag, block)), 8192 trials per block",
                "checksums": checksums}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, args.seed_override)
        t0 = time.perf_counter()
        outcome = run_experiment(cfg, args.workers)
        wall = time.perf_counter() - t0
        out_dir = args.out or os.path.join("runs", os.path.splitext(os.path.basename(args.config))[0])
        write_outputs(out_dir, outcome, cfg, args.workers, wall)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for name, table in sorted(outcome.tables.items()):
        if "verdict" in table.columns:
            i = table.columns.index("verdict")
            for row in table.rows:
                print(f"{name}: " + " ".join(f"{c}={_cell(v)}" for c, v in zip(table.columns, row) if c != "verdict")
                      + f" -> {row[i]}")
    print(f"verdict: {outcome.verdict}  (outputs in {out_dir})")
    return EXIT_FAIL if outcome.failed else EXIT_OK


def cmd_list_presets(args) -> int:
    sys.stdout.write(presets.listing())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdslab", description="Random-translation chain experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default runs/<config name>)")
    run.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on it)")
    run.add_argument("--seed-override", type=lambda s: int(s, 0), default=None, dest="seed_override",
                     help="replace the config's master seed")
    run.set_defaults(func=cmd_run)
    lp = sub.add_parser("list-presets", help="list built-in measures, observables and maps")
    lp.set_defaults(func=cmd_list_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("config error: --workers: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
