"""Limited-range noisy occupancy sensing and the per-pixel Bayesian posterior."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .world import OccupancyGrid, Roadmap, _read_pgm, _write_pgm

EPS = 1e-6
DEFAULT_PRIOR = 0.01
DEFAULT_EXTENT = 50.0

NOISE_LEVELS = {"low": 1e-4, "med": 1e-3, "high": 1e-2}


@dataclass(frozen=True)
class NoiseModel:
    eta: float
    p_min: float = 0.6

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if not 0.5 < self.p_min <= 1:
            raise ValueError("p_min must lie in (0.5, 1]")

    @classmethod
    def named(cls, level: str, p_min: float = 0.6) -> NoiseModel:
        return cls(NOISE_LEVELS[level], p_min)


@dataclass(frozen=True, eq=False)
class Observation:
    center: tuple[float, float]
    extent: float
    pixels: np.ndarray
    bits: np.ndarray
    p_correct: np.ndarray


@dataclass(frozen=True, eq=False)
class PosteriorGrid:
    """P(occupied | observations so far) for every pixel."""

    probs: np.ndarray
    resolution: float

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64, copy=True)
        if probs.ndim != 2:
            raise ValueError("probs must be 2-D")
        if probs.size and not (probs.min() >= 0 and probs.max() <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @classmethod
    def prior(cls, grid: OccupancyGrid, value: float = DEFAULT_PRIOR) -> PosteriorGrid:
        return cls(np.full(grid.cells.shape, float(value)), grid.resolution)

    def with_values(self, pixels: np.ndarray, values: np.ndarray) -> PosteriorGrid:
        probs = self.probs.copy()
        probs.flat[pixels] = values
        return PosteriorGrid(probs, self.resolution)


def correctness_probability(model: NoiseModel, d):
    """Probability that a pixel at distance ``d`` (m) is reported correctly."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    p = np.maximum(np.exp(-model.eta * d * d), model.p_min)
    return p if p.ndim else float(p)


def window_pixels(shape, resolution, center, extent=DEFAULT_EXTENT):
    """Flat indices and center distances of pixels inside the square window."""
    h, w = shape
    half = extent / 2
    cx, cy = center
    c0 = max(int(np.floor((cx - half) / resolution)), 0)
    c1 = min(int(np.ceil((cx + half) / resolution)), w - 1)
    r0 = max(int(np.floor((cy - half) / resolution)), 0)
    r1 = min(int(np.ceil((cy + half) / resolution)), h - 1)
    cols = np.arange(c0, c1 + 1)
    rows = np.arange(r0, r1 + 1)
    dx = (cols + 0.5) * resolution - cx
    dy = (rows + 0.5) * resolution - cy
    # half-open so an integer number of pixels spans the window
    keep_c = (dx >= -half) & (dx < half)
    keep_r = (dy >= -half) & (dy < half)
    cols, dx = cols[keep_c], dx[keep_c]
    rows, dy = rows[keep_r], dy[keep_r]
    pix = (rows[:, None] * w + cols[None, :]).ravel()
    dist = np.hypot(dx[None, :], dy[:, None]).ravel()
    return pix, dist


def sense(
    truth: OccupancyGrid,
    robot_pos,
    model: NoiseModel,
    rng: np.random.Generator,
    extent: float = DEFAULT_EXTENT,
) -> Observation:
    """Noisy binary classification of every pixel in the window around the robot."""
    x, y = robot_pos
    if not (0 <= x <= truth.width_m and 0 <= y <= truth.height_m):
        raise ValueError("robot position outside the grid")
    pix, dist = window_pixels(truth.cells.shape, truth.resolution, (x, y), extent)
    p = correctness_probability(model, dist)
    true_bits = truth.cells.ravel()[pix]
    correct = rng.random(pix.size) < p
    bits = np.where(correct, true_bits, 1 - true_bits).astype(np.uint8)
    return Observation((float(x), float(y)), float(extent), pix, bits, p)


def bayes_update(posterior: PosteriorGrid, obs: Observation) -> PosteriorGrid:
    q = posterior.probs.ravel()[obs.pixels]
    p = obs.p_correct
    occupied = obs.bits.astype(bool)
    like_occ = np.where(occupied, p, 1 - p)
    like_free = np.where(occupied, 1 - p, p)
    num = like_occ * q
    q_new = num / (num + like_free * (1 - q))
    return posterior.with_values(obs.pixels, np.clip(q_new, EPS, 1 - EPS))


def reveal_traversed(
    posterior: PosteriorGrid, truth: OccupancyGrid, edge: int, roadmap: Roadmap
) -> PosteriorGrid:
    """Set the edge's footprint to its true occupancy (clamped by EPS)."""
    pix = roadmap.footprint(edge)
    values = np.where(truth.cells.ravel()[pix] > 0, 1 - EPS, EPS)
    return posterior.with_values(pix, values)


def save_posterior(posterior: PosteriorGrid, path) -> Path:
    """16-bit PGM snapshot plus a JSON sidecar carrying the resolution."""
    path = Path(path).with_suffix(".pgm")
    q = np.rint(posterior.probs * 65535).astype(np.int64)
    _write_pgm(path, q, 65535)
    meta = {"resolution_m": posterior.resolution, "quantization": 65535}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")
    return path


def load_posterior(path) -> PosteriorGrid:
    path = Path(path).with_suffix(".pgm")
    img, maxval = _read_pgm(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    return PosteriorGrid(img / maxval, float(meta["resolution_m"]))
