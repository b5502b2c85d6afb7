"""Seeded Monte Carlo ensembles, sweeps over networks, and result files."""

from __future__ import annotations

import configparser
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cdsa import Explicit, harmonic_for, simulate
from .metrics import METRICS, RunTrace, average_traces, default_schedule
from .network import Topology, TopologyError, build_topology, metropolis_weights, parse_topology
from .problems import CoupledProblem, LogisticProblem, RidgeProblem

log = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).with_name("configs")


class ConfigError(ValueError):
    """Malformed experiment configuration; the message names the key."""


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "ridge"
    m: int = 200
    data_seed: int = 0
    learn_noise: float = 0.0

    def build(self, n: int) -> CoupledProblem:
        if self.kind == "ridge":
            return RidgeProblem(n, learn_noise=self.learn_noise)
        if self.kind == "logistic":
            return LogisticProblem(n, m=self.m, data_seed=self.data_seed,
                                   learn_noise=self.learn_noise)
        raise ConfigError(f"problem.kind: unknown problem {self.kind!r}")


@dataclass(frozen=True)
class TopologySpec:
    kind: str = "complete"
    n: int = 10
    rows: Optional[int] = None
    cols: Optional[int] = None
    edges: Optional[tuple] = None

    def build(self) -> Topology:
        return build_topology(self.kind, self.n, self.rows, self.cols, self.edges)

    @classmethod
    def from_topology(cls, t: Topology) -> "TopologySpec":
        edges = t.edges if t.kind == "custom" else None
        return cls(t.kind, t.n, t.rows, t.cols, edges)

    @property
    def label(self) -> str:
        if self.kind == "mesh":
            return f"mesh{self.rows}x{self.cols}"
        return f"{self.kind}{self.n}"


@dataclass(frozen=True)
class PolicySpec:
    kind: str = "explicit"
    a: float = 20.0
    b: float = 20.0
    beta: float = 3.0

    def build(self, problem: CoupledProblem):
        if self.kind == "explicit":
            return Explicit(self.a, self.b)
        if self.kind == "harmonic":
            return harmonic_for(problem, self.beta)
        raise ConfigError(f"policy.kind: unknown policy {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    topology: TopologySpec = field(default_factory=TopologySpec)
    policy: PolicySpec = field(default_factory=PolicySpec)
    k_max: int = 5000
    paths: int = 200
    seed: int = 0
    dense_until: int = 100
    log_points: int = 100
    jobs: int = 1
    out: str = "results"
    name: str = ""
    svg: bool = False
    svg_metric: str = "mse_x"

    def __post_init__(self):
        if self.paths < 1:
            raise ConfigError(f"run.paths: must be at least 1, got {self.paths}")
        if self.k_max < 1:
            raise ConfigError(f"run.k_max: must be at least 1, got {self.k_max}")
        if self.jobs < 1:
            raise ConfigError(f"run.jobs: must be at least 1, got {self.jobs}")
        if self.svg_metric not in METRICS:
            raise ConfigError(f"output.metric: unknown metric {self.svg_metric!r}")

    def schedule(self) -> np.ndarray:
        return default_schedule(self.k_max, self.dense_until, self.log_points)

    @property
    def label(self) -> str:
        return self.name or f"{self.problem.kind}_{self.topology.label}"

    def as_dict(self) -> dict:
        d = asdict(self)
        if d["topology"]["edges"] is not None:
            d["topology"]["edges"] = [list(e) for e in d["topology"]["edges"]]
        return d


# ---------------------------------------------------------------------------
# config files

_SECTIONS = {
    "problem": {"kind": str, "m": int, "data_seed": int, "learn_noise": float},
    "topology": {"kind": str, "n": int, "rows": int, "cols": int, "edges": str},
    "policy": {"kind": str, "a": float, "b": float, "beta": float},
    "run": {"k_max": int, "paths": int, "seed": int, "dense_until": int,
            "log_points": int, "jobs": int},
    "output": {"dir": str, "name": str, "svg": bool, "metric": str},
    "sweep": {"axis": str},
}


def _parse_edges(text: str) -> tuple:
    edges = []
    for tok in text.replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        a, sep, b = tok.partition("-")
        if not sep:
            raise ValueError(f"edge {tok!r} is not of the form i-j")
        edges.append((int(a), int(b)))
    return tuple(edges)


def _read_ini(text: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    out = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"[{section}]: unknown section")
        types = _SECTIONS[section]
        vals = {}
        for key, raw in cp.items(section):
            if key not in types:
                raise ConfigError(f"{section}.{key}: unknown key")
            typ = types[key]
            try:
                if typ is bool:
                    vals[key] = cp.getboolean(section, key)
                elif key == "edges":
                    vals[key] = _parse_edges(raw)
                else:
                    vals[key] = typ(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: invalid value {raw!r} ({exc})") from None
        out[section] = vals
    return out


def config_from_dict(d: dict) -> ExperimentConfig:
    prob = d.get("problem", {})
    topo = d.get("topology", {})
    pol = d.get("policy", {})
    run = d.get("run", {})
    outp = d.get("output", {})
    for sec, key in (("topology", "kind"),):
        if key not in d.get(sec, {}):
            raise ConfigError(f"{sec}.{key}: required key missing")
    topo_spec = TopologySpec(topo["kind"].lower(), topo.get("n", 0), topo.get("rows"),
                             topo.get("cols"), topo.get("edges"))
    if topo_spec.kind == "mesh" and "n" not in topo and topo_spec.rows and topo_spec.cols:
        topo_spec = replace(topo_spec, n=topo_spec.rows * topo_spec.cols)
    if "n" not in topo and topo_spec.kind != "mesh":
        raise ConfigError("topology.n: required key missing")
    try:
        topo_spec.build()
    except TopologyError as exc:
        raise ConfigError(f"topology: {exc}") from None
    prob_spec = ProblemSpec(prob.get("kind", "ridge").lower(), prob.get("m", 200),
                            prob.get("data_seed", 0), prob.get("learn_noise", 0.0))
    if prob_spec.kind not in ("ridge", "logistic"):
        raise ConfigError(f"problem.kind: unknown problem {prob_spec.kind!r}")
    if prob_spec.kind == "logistic" and (prob_spec.m < 2 or prob_spec.m % 2):
        raise ConfigError(f"problem.m: must be a positive even count, got {prob_spec.m}")
    if prob_spec.learn_noise < 0:
        raise ConfigError("problem.learn_noise: must be non-negative")
    pol_spec = PolicySpec(pol.get("kind", "explicit").lower(), pol.get("a", 20.0),
                          pol.get("b", 20.0), pol.get("beta", 3.0))
    if pol_spec.kind not in ("explicit", "harmonic"):
        raise ConfigError(f"policy.kind: unknown policy {pol_spec.kind!r}")
    if pol_spec.kind == "explicit" and (pol_spec.a <= 0 or pol_spec.b <= 0):
        raise ConfigError("policy.a/policy.b: must be positive")
    if pol_spec.kind == "harmonic" and not pol_spec.beta > 2:
        raise ConfigError(f"policy.beta: must exceed 2, got {pol_spec.beta}")
    return ExperimentConfig(
        problem=prob_spec, topology=topo_spec, policy=pol_spec,
        k_max=run.get("k_max", 5000), paths=run.get("paths", 200), seed=run.get("seed", 0),
        dense_until=run.get("dense_until", 100), log_points=run.get("log_points", 100),
        jobs=run.get("jobs", 1), out=outp.get("dir", default_out_dir()),
        name=outp.get("name", ""), svg=outp.get("svg", False),
        svg_metric=outp.get("metric", "mse_x"))


def load_config(path) -> tuple:
    """Read an INI experiment file. Returns ``(config, sweep_axis or None)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    d = _read_ini(text)
    axis = None
    if "sweep" in d and "axis" in d["sweep"]:
        axis = parse_axis(d["sweep"]["axis"])
    return config_from_dict(d), axis


def parse_axis(text: str) -> list:
    """``"path:5, path:25, mesh:5x5"`` to a list of topology specs."""
    specs = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok:
            try:
                specs.append(TopologySpec.from_topology(parse_topology(tok)))
            except TopologyError as exc:
                raise ConfigError(f"sweep.axis: {exc}") from None
    if not specs:
        raise ConfigError("sweep.axis: empty")
    return specs


def default_out_dir() -> str:
    return os.environ.get("CDSA_OUT", "results")


# ---------------------------------------------------------------------------
# running


def _chunks(ids: Sequence[int], jobs: int) -> list:
    size = math.ceil(len(ids) / jobs)
    return [list(ids[i:i + size]) for i in range(0, len(ids), size)]


def _simulate_chunk(config: ExperimentConfig, path_ids, callback=None):
    problem, W, policy = _materialize(config)
    return simulate(problem, W, policy, config.k_max, config.seed, path_ids,
                    schedule=config.schedule(), callback=callback)


def _materialize(config: ExperimentConfig):
    topo = config.topology.build()
    W = metropolis_weights(topo)
    problem = config.problem.build(topo.n)
    return problem, W, config.policy.build(problem)


def monte_carlo(config: ExperimentConfig, path_order: Optional[Sequence[int]] = None,
                callback=None) -> RunTrace:
    """Average ``config.paths`` independent runs.

    Path ``p`` always uses the streams keyed by ``(config.seed, p)``, and the
    average is accumulated in path-index order, so neither ``path_order``
    nor ``config.jobs`` changes the result. ``callback(k, X, Theta)`` sees
    the live states at recorded iterations (serial execution only).
    """
    ids = list(range(config.paths)) if path_order is None else [int(p) for p in path_order]
    if sorted(ids) != list(range(config.paths)):
        raise ValueError("path_order must be a permutation of range(paths)")
    chunks = _chunks(ids, config.jobs)
    if callback is not None and config.jobs > 1:
        raise ValueError("callbacks need jobs=1")
    if config.jobs > 1 and len(chunks) > 1:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=config.jobs)(delayed(_simulate_chunk)(config, c) for c in chunks)
    else:
        parts = [_simulate_chunk(config, c, callback) for c in chunks]
    by_path = {t.meta["path"]: t for part in parts for t in part}
    trace = average_traces([by_path[p] for p in range(config.paths)])
    trace.meta.update(config=config.as_dict(), paths=config.paths, seed=config.seed)
    return trace


@dataclass
class SweepPoint:
    topology: TopologySpec
    trace: Optional[RunTrace] = None
    error: Optional[str] = None

    @property
    def label(self) -> str:
        return self.topology.label


def sweep(base: ExperimentConfig, axis: Sequence) -> list:
    """One averaged trace per topology in ``axis``.

    Every point shares the policy, horizon, schedule and seed of ``base``,
    so points with equal ``n`` see common random numbers. A failing point
    records its error and the others still run.
    """
    points = []
    for spec in axis:
        if isinstance(spec, str):
            spec = TopologySpec.from_topology(parse_topology(spec))
        elif isinstance(spec, Topology):
            spec = TopologySpec.from_topology(spec)
        cfg = replace(base, topology=spec, name=f"{base.name}{'_' if base.name else ''}{spec.label}")
        try:
            points.append(SweepPoint(spec, monte_carlo(cfg)))
        except Exception as exc:  # noqa: BLE001 - reported per point
            log.warning("sweep point %s failed: %s", spec.label, exc)
            points.append(SweepPoint(spec, error=f"{type(exc).__name__}: {exc}"))
    return points


# ---------------------------------------------------------------------------
# output


def emit(traces, fmt: str, path, metric: str = "mse_x", labels=None, title: str = "") -> list:
    """Write traces to disk.

    ``csv`` writes one CSV (plus a ``.json`` metadata sidecar) per trace;
    with several traces ``path`` is a directory and files are named after
    ``labels``. ``svg`` draws one log-log polyline per trace into the file
    ``path``. Returns the written paths.
    """
    if isinstance(traces, RunTrace):
        traces = [traces]
    traces = list(traces)
    if not traces:
        raise ValueError("nothing to emit")
    labels = list(labels) if labels is not None else [_trace_label(t) for t in traces]
    path = Path(path)
    try:
        if fmt == "csv":
            if len(traces) == 1 and path.suffix == ".csv":
                targets = [path]
            else:
                targets = [path / f"{lab}.csv" for lab in labels]
            written = []
            for t, target in zip(traces, targets):
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(t.to_csv())
                target.with_suffix(".json").write_text(t.meta_json())
                written += [target, target.with_suffix(".json")]
            return written
        if fmt == "svg":
            series = [(lab, t.k, t[metric]) for lab, t in zip(labels, traces)]
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(svg_lineplot(series, ylabel=metric, title=title))
            return [path]
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {exc.filename or path}: {exc.strerror}") from None
    raise ValueError(f"unknown format {fmt!r}")


def _trace_label(t: RunTrace) -> str:
    return str(t.meta.get("topology", "trace"))


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def svg_lineplot(series, ylabel: str = "", title: str = "", width: int = 640,
                 height: int = 420) -> str:
    """Static log-log line plot; one ``<polyline>`` per series.

    Non-positive values are dropped since they have no place on a log axis.
    """
    left, right, top, bottom = 70, 150, 30, 50
    pw, ph = width - left - right, height - top - bottom
    clean = []
    for label, k, y in series:
        k, y = np.asarray(k, dtype=float), np.asarray(y, dtype=float)
        keep = (k > 0) & (y > 0) & np.isfinite(y)
        clean.append((label, np.log10(k[keep]), np.log10(y[keep])))
    xs = np.concatenate([c[1] for c in clean]) if clean else np.array([0.0])
    ys = np.concatenate([c[2] for c in clean]) if clean else np.array([0.0])
    if xs.size == 0:
        xs = ys = np.array([0.0])
    x0, x1 = math.floor(xs.min()), math.ceil(xs.max())
    y0, y1 = math.floor(ys.min()), math.ceil(ys.max())
    x1 = max(x1, x0 + 1)
    y1 = max(y1, y0 + 1)

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for d in range(x0, x1 + 1):
        out.append(f'<line x1="{px(d):.2f}" y1="{top + ph}" x2="{px(d):.2f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(d):.2f}" y="{top + ph + 16}" text-anchor="middle">1e{d}</text>')
    for d in range(y0, y1 + 1):
        out.append(f'<line x1="{left - 4}" y1="{py(d):.2f}" x2="{left}" y2="{py(d):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{py(d) + 4:.2f}" text-anchor="end">1e{d}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">iteration k</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{_esc(ylabel)}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2:.1f}" y="18" text-anchor="middle">{_esc(title)}</text>')
    for idx, (label, lx, ly) in enumerate(clean):
        color = _COLORS[idx % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(lx, ly))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly_ = top + 14 + 18 * idx
        out.append(f'<rect x="{left + pw + 12}" y="{ly_ - 8}" width="18" height="3" fill="{color}"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly_}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def canned_config(name: str) -> Path:
    """Path of a shipped figure config (``fig2`` or ``fig3``)."""
    p = CONFIG_DIR / f"{name}.ini"
    if not p.exists():
        raise ConfigError(f"no canned config named {name!r}")
    return p


def write_summary(points, path) -> Path:
    """JSON list of sweep points with their status."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [{"topology": p.label, "ok": p.error is None, "error": p.error,
             "rho_w": p.trace.meta.get("rho_w") if p.trace else None} for p in points]
    path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return path
