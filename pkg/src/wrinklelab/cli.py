"""
Command-line entry point.

Subcommands ``solve``, ``scan``, ``scaling`` and ``repair-test`` run the
experiment of the same name; ``report`` rebuilds report.md and report.json
from the persisted results.

Exit codes: 0 success, 2 invalid configuration, 3 non-convergence (partial
outputs are kept), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .experiments import ConfigError, NonConvergence, load_config, parse_L, report, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_IO = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wrinklelab", description="Wrinkling energy-scaling experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="seed of the first solver restart")
        sp.add_argument("--L", type=parse_L, help="comma-separated half-periods")
        sp.add_argument("--grid-n", type=int, dest="N", help="number of x-grid intervals")
        sp.add_argument("--modes", type=int, dest="M", help="mode cap")
        sp.add_argument("--workers", type=int, help="process-pool size")
        sp.add_argument("--eta", help="repair scale ('default' or a number)")
        sp.add_argument("--L0", type=float, help="base period of the scaling experiment")
        sp.add_argument("--restarts", type=int, help="solver restarts")

    for name, text in [
        ("solve", "minimize S_L for one L and write the diagnostic bundle"),
        ("scan", "sigma_L over a list of L with the pairwise inequalities"),
        ("scaling", "normalized FvK excess of the upper-bound deformation"),
        ("repair-test", "repair of the 0.9-scaled cascade"),
    ]:
        common(sub.add_parser(name, help=text))
    rp = sub.add_parser("report", help="rebuild report.md and report.json")
    rp.add_argument("--out", default=None, help="output directory")
    rp.add_argument("--config", help="JSON configuration file (only its out is used)")
    return p


def _overrides(ns) -> dict:
    o = {"experiment": ns.command}
    for key in ("out", "seed", "L", "N", "M", "workers", "L0"):
        o[key] = getattr(ns, key)
    if ns.eta is not None:
        o["eta"] = ns.eta if ns.eta == "default" else float(ns.eta)
    return o


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        if ns.command == "report":
            cfg = load_config(ns.config, {"out": ns.out})
            report(cfg.out)
            print(f"wrote {cfg.out}/report.md")
            return EXIT_OK
        try:
            cfg = load_config(ns.config, _overrides(ns))
            if ns.restarts is not None:
                cfg = load_config(ns.config, {**_overrides(ns), "solver": {**dict(cfg.solver), "restarts": ns.restarts}})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        summary = run(cfg)
    except ConfigError as exc:
        print(f"wrinklelab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"wrinklelab: {exc}; partial outputs kept in {cfg.out}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except OSError as exc:
        print(f"wrinklelab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for c in summary["checks"]:
        tag = "info" if c["passed"] is None else ("PASS" if c["passed"] else "FAIL")
        keys = {k: v for k, v in c.items() if k in ("L", "L2")}
        print(f"{tag} {c['kind']} {json.dumps(keys)}")
    print(f"config {summary['config_hash']}: {'PASS' if summary['passed'] else 'FAIL'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
