"""Command line entry point.

    cccompact <subcommand> --config <file> [--out <dir>] [--seed <u64>] [--deterministic]

Subcommands: ``run`` (any scenario), ``validate`` and one per scenario kind
(the config's ``scenario`` must then match).  Exit status: 0 success,
1 configuration error, 2 hypothesis-audit failure, 3 extraction failure.
"""
from __future__ import annotations

import argparse
import os
import sys


def _cap_threads() -> None:
    """Honour ``CCCOMPACT_THREADS`` before numerical libraries spin up pools."""
    n = os.environ.get("CCCOMPACT_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = n


_cap_threads()

import csv  # noqa: E402
import hashlib  # noqa: E402
import io  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import time  # noqa: E402
from pathlib import Path  # noqa: E402

from . import __version__  # noqa: E402
from .config import SCENARIO_KINDS, ConfigError, load_config, validate_config  # noqa: E402

log = logging.getLogger("cccompact")

EXIT_CONFIG = 1


def version_hash() -> str:
    """Hash of the package version and every source file of the package."""
    h = hashlib.sha256(__version__.encode())
    root = Path(__file__).parent
    for p in sorted(root.rglob("*")):
        if p.suffix in (".py", ".pyx", ".json") and "__pycache__" not in p.parts:
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def write_outputs(out: Path, cfg: dict, result, deterministic: bool, elapsed: float) -> Path:
    from .engine import _finite

    out.mkdir(parents=True, exist_ok=True)
    report = {
        "scenario": result.kind,
        "config": cfg,
        "tool": {"name": "cccompact", "version": __version__, "hash": version_hash()},
        "exit_code": result.exit_code,
        "summary": result.summary,
        "tables": sorted(f"{name}.csv" for name in result.tables),
    }
    if not deterministic:
        report["timings"] = dict(result.timings, total=elapsed)
        report["threads"] = os.environ.get("CCCOMPACT_THREADS")
    path = out / "report.json"
    path.write_text(json.dumps(_finite(report), indent=1, sort_keys=True) + "\n")
    for name, rows in result.tables.items():
        (out / f"{name}.csv").write_text(_csv_text(rows))
    for writer in result.artifacts.values():
        writer(out)
    return path


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cccompact", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "validate") + SCENARIO_KINDS:
        sp = sub.add_parser(name, help="validate a config" if name == "validate" else f"run a {name} scenario"
                            if name != "run" else "run the scenario named in the config")
        sp.add_argument("--config", required=True, help="scenario JSON file")
        if name != "validate":
            sp.add_argument("--out", default=None, help="output directory (default: output.dir or out/<name>)")
            sp.add_argument("--seed", type=int, default=None, help="64-bit seed overriding the config")
            sp.add_argument("--deterministic", action="store_true",
                            help="single-threaded, no timings: byte-identical reports for a fixed seed")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        try:
            issues = validate_config(args.config)
        except ConfigError as exc:
            print(exc, file=sys.stderr)
            return EXIT_CONFIG
        for i in issues:
            print(i, file=sys.stderr)
        if not issues:
            print(f"{args.config}: ok")
        return EXIT_CONFIG if issues else 0

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.command != "run" and cfg["scenario"] != args.command:
        print(f"{args.config}: scenario is {cfg['scenario']!r}, not {args.command!r}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            print("--seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_CONFIG
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    if args.deterministic:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = "1"

    from .scenarios import run_scenario

    t0 = time.perf_counter()
    try:
        result = run_scenario(cfg)
    except (ValueError, KeyError) as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    elapsed = time.perf_counter() - t0
    out = Path(args.out or (cfg.get("output") or {}).get("dir") or f"out/{cfg.get('name', cfg['scenario'])}")
    path = write_outputs(out, cfg, result, args.deterministic, elapsed)
    log.info("report written to %s", path)
    msg = result.summary.get("message")
    if result.exit_code != 0 and msg:
        print(msg, file=sys.stderr)
    print(f"{cfg['scenario']}: exit {result.exit_code}, report {path}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
