"""Command-line driver: ``ap-lab <experiment> --config <path> [--out DIR] [--seed N] [--resolution N]``.

Exit status is 0 when every check passes, 2 when a check fails and 1 on any
error (bad config, invalid parameters, I/O failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import SolverError
from .experiments import EXPERIMENTS, resolve_config, run_experiment, thread_limit
from .io import dump_json

logger = logging.getLogger("aplab")

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would read as a failed check
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ap-lab", description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, type=Path, help="flat JSON config file")
    ap.add_argument("--out", type=Path, default=Path("ap-lab-out"), help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="64-bit seed (overrides the config)")
    ap.add_argument("--resolution", type=int, default=None, help="cells per axis (overrides the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"ap-lab {__version__}")
    return ap


def _load_config(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ValueError("--seed must be an unsigned 64-bit integer")
        thread_limit()
        cfg = resolve_config(_load_config(args.config), args.experiment, args.seed, args.resolution)
        args.out.mkdir(parents=True, exist_ok=True)
        manifest = {"tool": "ap-lab", "tool_version": __version__, "seed": cfg["seed"], "config": cfg}
        dump_json(manifest, args.out / "manifest.json")
        t0 = time.perf_counter()
        report = run_experiment(cfg, args.out)
        dump_json(report, args.out / "report.json")
        dump_json({"started": datetime.now(timezone.utc).isoformat(),
                   "wall_time": time.perf_counter() - t0}, args.out / "timing.json")
    except (ValueError, SolverError, OSError) as exc:
        print(f"ap-lab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if report["passed"]:
        print(f"ap-lab {cfg['experiment']}: all {len(report['checks'])} checks passed")
        return EXIT_PASS
    print(f"ap-lab {cfg['experiment']}: failed checks: {', '.join(report['failed_checks'])}", file=sys.stderr)
    return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
