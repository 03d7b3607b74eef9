"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 simulation fault,
4 acceptance threshold missed (``check``, or ``run --check``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from ..core import ConfigError
from ..dynamics import SimulationFault
from ..filter import FilterError
from .checks import SUITES, run_suite
from .config import bundled_config_names, resolve_config
from .scenarios import expectations, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAULT = 3
EXIT_CHECK = 4

log = logging.getLogger("samplesafe")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="path to an INI config, or the name of a bundled one")
    p.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    p.add_argument("--out", help="output directory")
    p.add_argument("--dt", type=float, help="integrator step (or sampling period for training)")
    p.add_argument("--episodes", type=int, help="training episodes per seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="samplesafe", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write CSVs, metrics.json and manifest.json")
    _add_overrides(p)
    p.add_argument("--check", action="store_true", help="exit 4 if the scenario's expectations are not met")

    p = sub.add_parser("compare", help="run the baseline comparison and print the table")
    _add_overrides(p)

    p = sub.add_parser("train", help="run shielded/unshielded REINFORCE")
    _add_overrides(p)

    p = sub.add_parser("check", help="run acceptance criteria")
    p.add_argument("suite", nargs="?", default="acceptance", choices=sorted(SUITES))

    sub.add_parser("configs", help="list bundled configs")
    return ap


def _load(args):
    cfg = resolve_config(args.config)
    return cfg.with_overrides(seed=args.seed, out=args.out, dt=args.dt, episodes=args.episodes)


def _print_table(rows) -> None:
    cols = ["seed", "controller", "violations", "safety_rate", "min_phi", "recovery_time"]
    print("  ".join(f"{c:>13}" for c in cols))
    for r in rows:
        cells = []
        for c in cols:
            v = r.get(c)
            cells.append(f"{v:>13.6g}" if isinstance(v, float) else f"{str(v):>13}")
        print("  ".join(cells))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "configs":
            for name in bundled_config_names():
                print(name)
            return EXIT_OK
        if args.command == "check":
            results = run_suite(args.suite)
            for r in results:
                print(r.line())
            return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK

        cfg = _load(args)
        if args.command == "compare" and cfg.scenario != "baselines_1d":
            raise ConfigError(f"compare needs a baselines_1d config, got scenario {cfg.scenario}")
        if args.command == "train" and cfg.scenario != "train_4d":
            raise ConfigError(f"train needs a train_4d config, got scenario {cfg.scenario}")
        out = run_experiment(cfg)
        if args.command == "compare":
            _print_table([row for r in out.results for row in r.rows])
        for key, agg in out.summary["aggregate"].items():
            print(f"{key}: {agg['mean']:.6g} ± {agg['std']:.3g} (n={agg['n']})")
        print(f"artifacts in {out.out_dir}")
        if getattr(args, "check", False):
            exp = expectations(cfg, out.results)
            for name, ok, detail in exp:
                print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
            if not all(ok for _, ok, _ in exp):
                return EXIT_CHECK
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationFault, FilterError) as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
