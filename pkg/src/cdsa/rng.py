"""Counter-based random streams.

Every Monte Carlo path owns one Philox stream per oracle tag, keyed by
``(master_seed, path, tag)``. Iteration ``k`` of a stream occupies a fixed,
block-aligned window of the Philox counter, and inside that window agent
``i`` owns a fixed slice, so any ``(path, agent, k)`` draw can be rebuilt in
isolation with :func:`draws_at`.
"""

from __future__ import annotations

import numpy as np

# oracle tags
COMP = 0
LEARN = 1

# Philox4x64 emits four 64-bit words per counter increment
_WORDS = 4
# smallest open-interval guard for inverse-CDF normals
_EPS = 2.0 ** -54


def stream_key(master_seed: int, path: int, tag: int) -> np.ndarray:
    return np.random.SeedSequence([int(master_seed), int(path), int(tag)]).generate_state(2, np.uint64)


def blocks_per_iter(count: int) -> int:
    """Counter increments reserved for one iteration holding ``count`` doubles."""
    return max(1, -(-count // _WORDS))


class Stream:
    """Sequential reader over one ``(master_seed, path, tag)`` stream.

    ``next(k_count)`` returns an array of shape ``(k_count, n, width)`` of
    uniforms in ``[0, 1)`` for consecutive iterations.
    """

    def __init__(self, master_seed: int, path: int, tag: int, n: int, width: int,
                 start: int = 0):
        self.n = n
        self.width = width
        self.count = n * width
        self.blocks = blocks_per_iter(self.count)
        counter = np.array([start * self.blocks, 0, 0, 0], dtype=np.uint64)
        self._gen = np.random.Generator(
            np.random.Philox(key=stream_key(master_seed, path, tag), counter=counter))

    def next(self, k_count: int) -> np.ndarray:
        stride = self.blocks * _WORDS
        raw = self._gen.random(k_count * stride).reshape(k_count, stride)
        return raw[:, : self.count].reshape(k_count, self.n, self.width)


def draws_at(master_seed: int, path: int, tag: int, n: int, width: int,
             k: int, agent: int | None = None) -> np.ndarray:
    """Uniforms consumed at iteration ``k`` (optionally for one agent only)."""
    u = Stream(master_seed, path, tag, n, width, start=k).next(1)[0]
    return u if agent is None else u[agent]


def std_normal(u):
    """Map uniforms in ``[0, 1)`` to standard normals by the inverse CDF."""
    from scipy.special import ndtri

    return ndtri(np.clip(u, _EPS, 1.0 - _EPS))
