"""Edge posteriors and determinized world samples.

Worlds are drawn with a counter-based generator: the uniform for segment
``s`` in world ``seed`` is a SplitMix64 output keyed by ``seed`` at position
``s``. Any subset of segments of a world can therefore be drawn on its own
and still agree with the full world, which lets evaluation touch only the
segments that candidate plans use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensing import PosteriorGrid
from .world import Roadmap

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(x):
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def uniforms(seeds, segments) -> np.ndarray:
    """``(len(seeds), len(segments))`` array of uniforms in [0, 1)."""
    seeds = np.asarray(seeds, dtype=np.int64).astype(np.uint64).reshape(-1, 1)
    segments = np.asarray(segments, dtype=np.int64).astype(np.uint64).reshape(1, -1)
    with np.errstate(over="ignore"):
        key = _mix(seeds * _GOLDEN + np.uint64(1))
        x = _mix(key + (segments + np.uint64(1)) * _GOLDEN)
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True, eq=False)
class EdgePosterior:
    """Blocking probability per physical segment; ``edge_probs`` expands per edge."""

    segment_prob: np.ndarray
    edge_segment: np.ndarray

    @property
    def edge_probs(self) -> np.ndarray:
        return self.segment_prob[self.edge_segment]


@dataclass(frozen=True, eq=False)
class SampledWorld:
    seed: int
    segment_free: np.ndarray
    edge_segment: np.ndarray

    @property
    def edge_status(self) -> np.ndarray:
        """Per-edge 1 = collision-free, 0 = blocked."""
        return self.segment_free[self.edge_segment].astype(np.uint8)

    def __eq__(self, other):
        if not isinstance(other, SampledWorld):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(
            self.segment_free, other.segment_free
        )

    __hash__ = None


def edge_posterior(posterior: PosteriorGrid, roadmap: Roadmap) -> EdgePosterior:
    """Max occupancy probability over each edge's swept footprint."""
    if posterior.probs.shape != roadmap.grid_shape:
        raise ValueError("posterior does not match roadmap")
    prob = roadmap.segment_reduce(posterior.probs.ravel())
    return EdgePosterior(prob, roadmap.edge_segment)


def blocked_matrix(ep: EdgePosterior, seeds, segments=None) -> np.ndarray:
    """Boolean ``blocked[world, segment]`` for the given world seeds.

    Row ``i`` restricted to ``segments`` equals the corresponding entries of
    ``sample_world(ep, seeds[i])``.
    """
    if segments is None:
        segments = np.arange(ep.segment_prob.size)
    segments = np.asarray(segments, dtype=np.int64)
    return uniforms(seeds, segments) < ep.segment_prob[segments][None, :]


def sample_world(ep: EdgePosterior, seed: int) -> SampledWorld:
    """Independent Bernoulli draw per segment; an edge and its reverse share it."""
    blocked = blocked_matrix(ep, [seed])[0]
    return SampledWorld(int(seed), ~blocked, ep.edge_segment)


def sample_worlds(ep: EdgePosterior, n: int, base_seed: int) -> list[SampledWorld]:
    if n < 1:
        raise ValueError("n must be at least 1")
    seeds = base_seed + np.arange(n)
    blocked = blocked_matrix(ep, seeds)
    return [
        SampledWorld(int(s), ~row, ep.edge_segment) for s, row in zip(seeds, blocked)
    ]


def free_world(roadmap: Roadmap, seed: int = 0) -> SampledWorld:
    return SampledWorld(seed, np.ones(roadmap.n_segments, bool), roadmap.edge_segment)
