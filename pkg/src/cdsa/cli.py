"""Command-line front end.

Exit status: 0 on success, 1 on usage or configuration errors, 2 on runtime
failures. The default output directory comes from ``$CDSA_OUT`` (falling back
to ``./results``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ConfigError
from .metrics import METRICS, compute_K1
from .network import TopologyError, metropolis_weights, parse_topology
from .problems import validate_assumptions

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, config: bool = True):
    if config:
        p.add_argument("--config", required=True, help="experiment file (INI sections "
                       "[problem] [topology] [policy] [run] [output])")
    p.add_argument("--paths", type=int, help="override run.paths (Monte Carlo sample count)")
    p.add_argument("--kmax", type=int, help="override run.k_max (iterations)")
    p.add_argument("--seed", type=int, help="override run.seed (master seed)")
    p.add_argument("--out", help="output directory (default: output.dir, $CDSA_OUT or ./results)")
    p.add_argument("--svg", action="store_true", help="also write a log-log SVG plot")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cdsa", description="Coupled distributed stochastic approximation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="average Monte Carlo runs of one configuration")
    _common(p)

    p = sub.add_parser("sweep", help="one averaged run per topology on an axis")
    _common(p)
    p.add_argument("--axis", help="comma list such as 'path:5,path:25,mesh:5x5' "
                   "(default: the config's [sweep] axis)")

    for name, text in (("fig2", "ridge regression: path vs complete graphs of several sizes"),
                       ("fig3", "logistic regression: four topologies with 25 agents")):
        p = sub.add_parser(name, help=text)
        _common(p, config=False)

    p = sub.add_parser("validate", help="Monte Carlo check of oracle unbiasedness and variance")
    p.add_argument("--config", required=True, help="experiment file")
    p.add_argument("--points", type=int, default=10, help="random test points (default 10)")
    p.add_argument("--draws", type=int, default=100_000, help="oracle draws per point (default 100000)")
    p.add_argument("--seed", type=int, default=0, help="seed of the check (default 0)")

    p = sub.add_parser("spectra", help="spectral gaps of Metropolis-Hastings networks")
    p.add_argument("topologies", nargs="+", help="specs such as complete:10 path:25 mesh:5x5")
    p.add_argument("--K", type=int, default=1, help="reference K for the K1 column (default 1)")
    return parser


def _apply_overrides(cfg, args):
    kw = {}
    if args.paths is not None:
        kw["paths"] = args.paths
    if args.kmax is not None:
        kw["k_max"] = args.kmax
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["out"] = args.out
    if args.svg:
        kw["svg"] = True
    return replace(cfg, **kw) if kw else cfg


def _cmd_run(args) -> int:
    cfg, _ = harness.load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    trace = harness.monte_carlo(cfg)
    out = Path(cfg.out)
    written = harness.emit(trace, "csv", out / f"{cfg.label}.csv")
    if cfg.svg:
        written += harness.emit([trace], "svg", out / f"{cfg.label}.svg", metric=cfg.svg_metric,
                                labels=[cfg.topology.label], title=cfg.label)
    for w in written:
        print(w)
    return EXIT_OK


def _run_sweep(cfg, axis, tag: str) -> int:
    points = harness.sweep(cfg, axis)
    out = Path(cfg.out)
    ok = [p for p in points if p.trace is not None]
    for p in ok:
        for w in harness.emit(p.trace, "csv", out / f"{tag}_{p.label}.csv"):
            print(w)
    print(harness.write_summary(points, out / f"{tag}_summary.json"))
    if cfg.svg and ok:
        groups = {}
        for p in ok:
            groups.setdefault(p.topology.kind, []).append(p)
        for kind, pts in groups.items():
            target = out / f"{tag}_{kind}.svg"
            harness.emit([p.trace for p in pts], "svg", target, metric=cfg.svg_metric,
                         labels=[p.label for p in pts], title=f"{tag}: {kind}")
            print(target)
    failed = [p for p in points if p.error]
    for p in failed:
        print(f"error: {p.label}: {p.error}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_sweep(args) -> int:
    cfg, axis = harness.load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    if args.axis:
        axis = harness.parse_axis(args.axis)
    if not axis:
        raise ConfigError("sweep.axis: no axis given (use --axis or a [sweep] section)")
    return _run_sweep(cfg, axis, cfg.label)


def _cmd_fig(name):
    def cmd(args) -> int:
        cfg, axis = harness.load_config(harness.canned_config(name))
        cfg = replace(cfg, out=harness.default_out_dir())
        cfg = _apply_overrides(cfg, args)
        return _run_sweep(cfg, axis, name)
    return cmd


def _cmd_validate(args) -> int:
    cfg, _ = harness.load_config(args.config)
    problem = cfg.problem.build(cfg.topology.n)
    report = validate_assumptions(problem, args.points, args.draws, args.seed)
    print(report.summary())
    for c in report.flagged:
        print(f"flagged: agent {c.agent} gap {c.gap:.3g} > 4 x stderr {c.stderr:.3g}")
    return EXIT_OK if report.ok else EXIT_RUNTIME


def _cmd_spectra(args) -> int:
    rows = []
    for spec in args.topologies:
        W = metropolis_weights(parse_topology(spec))
        k1 = compute_K1(args.K, W.rho_w) if W.rho_w < 1 else float("nan")
        rows.append((W.topology.label, W.n, W.rho_w, W.gap, k1))
    print(f"{'topology':<14}{'n':>5}{'rho_w':>14}{'1-rho_w':>14}{'K1':>10}")
    for label, n, rho, gap, k1 in rows:
        print(f"{label:<14}{n:>5}{rho:>14.8f}{gap:>14.8f}{k1:>10}")
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run, "sweep": _cmd_sweep, "fig2": _cmd_fig("fig2"), "fig3": _cmd_fig("fig3"),
    "validate": _cmd_validate, "spectra": _cmd_spectra,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, TopologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic for any failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
