"""Error functionals, run traces, slope fits and schedule constants."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

METRICS = ("U1", "V1", "U2", "V2", "mse_x", "mse_theta")


def errors_at(X, Theta, x_star, theta_star):
    """Return ``(U1, V1, U2, V2, mse_x, mse_theta)`` for one state.

    ``X`` and ``Theta`` may carry leading batch axes; the agent axis is
    second to last. Each result then has the batch shape.
    """
    X = np.asarray(X, dtype=float)
    Theta = np.asarray(Theta, dtype=float)
    u1, v1, mx = _split(X, np.asarray(x_star, dtype=float))
    u2, v2, mt = _split(Theta, np.asarray(theta_star, dtype=float).reshape(-1))
    return u1, v1, u2, v2, mx, mt


def _split(A, star):
    mean = A.mean(axis=-2, keepdims=True)
    dev = A - mean
    v = np.sum(dev * dev, axis=(-2, -1))
    d = mean[..., 0, :] - star
    u = np.sum(d * d, axis=-1)
    e = A - star
    mse = np.sum(e * e, axis=(-2, -1)) / A.shape[-2]
    return u, v, mse


def default_schedule(k_max: int, dense_until: int = 100, log_points: int = 100) -> np.ndarray:
    """Every iteration up to ``dense_until``, then about ``log_points``
    log-spaced checkpoints up to and including ``k_max``.

    The 1-2-5 round numbers (200, 500, 1000, ...) are always included so
    traces from different ``k_max`` can be compared at common checkpoints.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    dense = np.arange(1, min(k_max, dense_until) + 1)
    if k_max <= dense_until:
        return dense
    tail = np.geomspace(dense_until, k_max, log_points + 1)[1:]
    tail = np.unique(np.round(tail).astype(int))
    tail = tail[tail > dense_until]
    decades = int(math.log10(k_max)) + 1
    round_ks = [m * 10 ** e for e in range(decades + 1) for m in (1, 2, 5)]
    round_ks = [r for r in round_ks if dense_until < r <= k_max]
    ks = np.unique(np.concatenate([dense, tail, round_ks, [k_max]]))
    return ks.astype(int)


@dataclass
class RunTrace:
    """Error time series recorded at ``k`` (post-step iteration counts)."""

    k: np.ndarray
    values: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=int)
        self.values = {m: np.asarray(self.values[m], dtype=float) for m in METRICS}
        self.meta.setdefault("paths", 1)

    def __getitem__(self, metric: str) -> np.ndarray:
        return self.values[metric]

    def __len__(self) -> int:
        return len(self.k)

    def at(self, k: int, metric: str) -> float:
        idx = np.searchsorted(self.k, k)
        if idx >= len(self.k) or self.k[idx] != k:
            raise KeyError(f"iteration {k} was not recorded")
        return float(self.values[metric][idx])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("k",) + METRICS)
        for r, k in enumerate(self.k):
            w.writerow([int(k)] + [repr(float(self.values[m][r])) for m in METRICS])
        return buf.getvalue()

    def meta_json(self) -> str:
        return json.dumps(self.meta, indent=2, sort_keys=True, default=_jsonable) + "\n"

    @classmethod
    def from_csv(cls, text: str, meta: Optional[dict] = None) -> "RunTrace":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if tuple(header) != ("k",) + METRICS:
            raise ValueError(f"unexpected trace header {header}")
        arr = np.array([[float(v) for v in r] for r in body])
        return cls(arr[:, 0].astype(int), {m: arr[:, j + 1] for j, m in enumerate(METRICS)},
                   dict(meta or {}))


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def average_traces(traces: Sequence[RunTrace]) -> RunTrace:
    """Pointwise mean of every metric; accumulation runs in list order."""
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to average")
    first = traces[0]
    for t in traces[1:]:
        if not np.array_equal(t.k, first.k):
            raise ValueError("traces have different recording schedules")
    sums = {m: np.zeros(len(first.k)) for m in METRICS}
    paths = 0
    for t in traces:
        for m in METRICS:
            sums[m] += t.values[m]
        paths += int(t.meta.get("paths", 1))
    meta = {k: v for k, v in first.meta.items() if k not in ("seed", "path")}
    meta["paths"] = paths
    seeds = [t.meta.get("seed") for t in traces]
    if "seed" in first.meta and all(s == seeds[0] for s in seeds):
        meta["seed"] = seeds[0]
    return RunTrace(first.k.copy(), {m: sums[m] / len(traces) for m in METRICS}, meta)


def loglog_slope(trace, metric: str, k_lo: float, k_hi: float):
    """Least-squares fit of ``log10(metric)`` against ``log10(k)`` on
    ``k_lo <= k <= k_hi``. Returns ``(slope, intercept, r2)``.

    ``trace`` may also be a ``(k, values)`` pair.
    """
    if isinstance(trace, RunTrace):
        k, y = trace.k, trace[metric]
    else:
        k, y = (np.asarray(a, dtype=float) for a in trace)
    mask = (k >= k_lo) & (k <= k_hi)
    k, y = np.asarray(k, dtype=float)[mask], np.asarray(y, dtype=float)[mask]
    if len(k) < 5:
        raise ValueError(f"need at least 5 recorded points in [{k_lo}, {k_hi}], got {len(k)}")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError(f"{metric} has non-positive or non-finite values in the window")
    lx, ly = np.log10(k), np.log10(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def crossover(trace_a: RunTrace, trace_b: RunTrace, metric: str, burn_in: int = 10):
    """Smallest recorded ``k >= burn_in`` with ``a(k) <= b(k)``, else ``None``."""
    if not np.array_equal(trace_a.k, trace_b.k):
        raise ValueError("traces have different recording schedules")
    ok = (trace_a.k >= burn_in) & (trace_a[metric] <= trace_b[metric])
    hits = np.flatnonzero(ok)
    return int(trace_a.k[hits[0]]) if len(hits) else None


def compute_K1(K: int, rho_w: float) -> int:
    """``ceil(max(2K, 16 / (1 - rho_w^2)))``."""
    if not 0 <= rho_w < 1:
        raise ValueError(f"rho_w must lie in [0, 1), got {rho_w}")
    if K < 1:
        raise ValueError("K must be a positive integer")
    return int(math.ceil(max(2 * K, 16.0 / (1.0 - rho_w ** 2))))


def transient_bound(n: int, rho_w: float, c: float = 1.0) -> float:
    """Transient-iteration scale ``c * n / (1 - rho_w)^2``.

    ``c`` is a per-family calibration constant, only meaningful for
    comparing networks within one problem family.
    """
    if not rho_w < 1:
        raise ValueError("rho_w must be < 1")
    if c <= 0:
        raise ValueError("c must be positive")
    return c * n / (1.0 - rho_w) ** 2


def with_meta(trace: RunTrace, **meta) -> RunTrace:
    return replace(trace, meta={**trace.meta, **meta})
