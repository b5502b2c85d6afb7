"""Communication graphs and Metropolis-Hastings mixing matrices."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional

import numpy as np

KINDS = ("path", "cycle", "mesh", "complete", "custom")


class TopologyError(ValueError):
    """Raised for malformed or disconnected graphs."""


class SpectralGapError(RuntimeError):
    """Raised when power iteration fails to converge."""


@dataclass(frozen=True)
class Topology:
    """Undirected graph on vertices ``0..n-1``.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``.
    """

    kind: str
    n: int
    edges: tuple
    rows: Optional[int] = None
    cols: Optional[int] = None

    @property
    def label(self) -> str:
        if self.kind == "mesh":
            return f"mesh{self.rows}x{self.cols}"
        return f"{self.kind}{self.n}"

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self) -> list:
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    w: np.ndarray
    rho_w: float
    topology: Optional[Topology] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def gap(self) -> float:
        return 1.0 - self.rho_w


def _normalize_edges(n: int, edges: Iterable) -> tuple:
    out = set()
    for e in edges:
        i, j = (int(v) for v in e)
        if i == j:
            raise TopologyError(f"self-loop at vertex {i}")
        if not (0 <= i < n and 0 <= j < n):
            raise TopologyError(f"edge ({i}, {j}) has a vertex outside [0, {n})")
        out.add((min(i, j), max(i, j)))
    return tuple(sorted(out))


def check_connected(t: Topology) -> bool:
    """BFS from vertex 0; True iff every vertex is reached."""
    if t.n == 0:
        return False
    adj = t.neighbors()
    seen = [False] * t.n
    seen[0] = True
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for u in adj[v]:
            if not seen[u]:
                seen[u] = True
                queue.append(u)
    return all(seen)


def build_topology(kind: str, n: int, rows: Optional[int] = None,
                   cols: Optional[int] = None, edges: Optional[Iterable] = None) -> Topology:
    """Build one of the supported graph families.

    ``kind`` is one of ``path``, ``cycle``, ``mesh`` (needs ``rows`` and
    ``cols`` with ``rows * cols == n``), ``complete`` or ``custom`` (needs an
    explicit edge list).
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise TopologyError(f"unknown topology kind {kind!r}; expected one of {KINDS}")
    n = int(n)
    if n < 2:
        raise TopologyError(f"need at least 2 agents, got n={n}")

    if kind == "path":
        e = [(i, i + 1) for i in range(n - 1)]
    elif kind == "cycle":
        e = [(i, i + 1) for i in range(n - 1)] + [(n - 1, 0)]
    elif kind == "complete":
        e = list(combinations(range(n), 2))
    elif kind == "mesh":
        if rows is None or cols is None:
            raise TopologyError("mesh topology needs explicit rows and cols")
        rows, cols = int(rows), int(cols)
        if rows < 1 or cols < 1 or rows * cols != n:
            raise TopologyError(f"mesh {rows}x{cols} does not have n={n} vertices")
        e = []
        for r in range(rows):
            for c in range(cols):
                v = r * cols + c
                if c + 1 < cols:
                    e.append((v, v + 1))
                if r + 1 < rows:
                    e.append((v, v + cols))
    else:
        if edges is None:
            raise TopologyError("custom topology needs an edge list")
        e = list(edges)

    t = Topology(kind, n, _normalize_edges(n, e),
                 rows if kind == "mesh" else None, cols if kind == "mesh" else None)
    if not check_connected(t):
        raise TopologyError(f"{kind} graph on {n} vertices is not connected")
    return t


def parse_topology(spec: str) -> Topology:
    """Parse a compact spec such as ``path:10``, ``complete:5`` or ``mesh:5x5``."""
    try:
        kind, _, size = spec.partition(":")
        kind = kind.strip().lower()
        if kind == "mesh":
            rows, cols = (int(s) for s in size.lower().split("x"))
            return build_topology("mesh", rows * cols, rows=rows, cols=cols)
        return build_topology(kind, int(size))
    except TopologyError:
        raise
    except ValueError as exc:
        raise TopologyError(f"cannot parse topology {spec!r}: {exc}") from None


def metropolis_weights(t: Topology) -> WeightMatrix:
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges,
    with the diagonal completing each row to one."""
    if not check_connected(t):
        raise TopologyError("metropolis weights need a connected graph")
    deg = t.degrees()
    w = np.zeros((t.n, t.n))
    for i, j in t.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    w.setflags(write=False)
    rho, _ = spectral_gap(w)
    return WeightMatrix(w, rho, t)


def spectral_gap(w, tol: float = 1e-10, max_iter: int = 100_000,
                 seed: int = 0) -> tuple:
    """Return ``(rho_w, 1 - rho_w)`` where ``rho_w`` is the spectral radius of
    ``W - 11^T/n``.

    Power iteration runs on ``B^2`` with ``B = W - 11^T/n`` so that a pair of
    eigenvalues ``+lambda, -lambda`` cannot make the iterate oscillate. The
    Rayleigh quotient is accepted once the eigen-residual drops below ``tol``.
    """
    w = np.asarray(w.w if isinstance(w, WeightMatrix) else w, dtype=float)
    n = w.shape[0]
    if w.ndim != 2 or w.shape[1] != n:
        raise ValueError("weight matrix must be square")
    b = w - np.full((n, n), 1.0 / n)
    if np.abs(b).max() < 1e-15:
        return 0.0, 1.0
    b2 = b @ b
    rng = np.random.default_rng(seed)

    it = 0
    while it < max_iter:
        v = rng.standard_normal(n)
        v -= v.mean()
        v /= np.linalg.norm(v)
        while it < max_iter:
            it += 1
            u = b2 @ v
            mu = float(v @ u)
            resid = np.linalg.norm(u - mu * v)
            norm_u = np.linalg.norm(u)
            if norm_u < 1e-300:
                # start vector landed in the null space; draw a fresh one
                break
            if resid <= tol:
                rho = float(np.sqrt(max(mu, 0.0)))
                rho = min(rho, 1.0)
                return rho, 1.0 - rho
            v = u / norm_u
    raise SpectralGapError(f"power iteration did not converge in {max_iter} iterations")
