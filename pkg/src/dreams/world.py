"""Ground-truth occupancy grids, procedural generators and the lattice roadmap."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from ._search import astar
from .errors import UnsatisfiableWorld

# Robot swept-volume rectangle, meters.
ROBOT_LENGTH = 3.5
ROBOT_WIDTH = 1.5

# Headings counterclockwise from +x in 45 degree steps.
DIRECTIONS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))

DEFAULT_SPACING = 2.0
ORACLE_SPEED = 10.0


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Binary occupancy field; ``cells[row, col]`` with row 0 at y = 0.

    Pixel ``(r, c)`` covers ``[c*res, (c+1)*res) x [r*res, (r+1)*res)`` meters.
    ``start``/``goal`` are optional positions in meters chosen by a generator.
    """

    cells: np.ndarray
    resolution: float
    start: tuple[float, float] | None = None
    goal: tuple[float, float] | None = None
    generator: str | None = None
    seed: int | None = None

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.uint8, order="C", copy=True)
        if cells.ndim != 2:
            raise ValueError("cells must be a 2-D array")
        if cells.size and cells.max() > 1:
            raise ValueError("cells must be binary")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    @property
    def width_px(self) -> int:
        return self.cells.shape[1]

    @property
    def height_px(self) -> int:
        return self.cells.shape[0]

    @property
    def width_m(self) -> float:
        return self.width_px * self.resolution

    @property
    def height_m(self) -> float:
        return self.height_px * self.resolution

    @property
    def occupancy_fraction(self) -> float:
        return float(self.cells.mean())

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.start == other.start
            and self.goal == other.goal
            and self.generator == other.generator
            and self.seed == other.seed
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Roadmap:
    """Directed 8-connected lattice with forward and reverse edges.

    Every forward edge ``u -> v`` has a reverse twin ``v -> u`` (id offset by
    ``n_forward``) sharing its footprint: the robot backs from ``v`` to ``u``
    while still facing ``u -> v``. Each edge carries a ``facing`` heading and
    the heading after traversal equals it. Footprints are stored once per
    physical segment (unordered vertex pair) in CSR form.
    """

    nx: int
    ny: int
    spacing: float
    positions: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_length: np.ndarray
    edge_reverse: np.ndarray
    edge_facing: np.ndarray
    edge_segment: np.ndarray
    seg_ptr: np.ndarray
    seg_pix: np.ndarray
    out_ptr: np.ndarray
    out_edge: np.ndarray
    n_forward: int
    start: int
    goal: int
    grid_shape: tuple[int, int]
    resolution: float

    @property
    def n_vertices(self) -> int:
        return self.positions.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_src.shape[0]

    @property
    def n_segments(self) -> int:
        return self.seg_ptr.shape[0] - 1

    def footprint(self, edge: int) -> np.ndarray:
        s = self.edge_segment[edge]
        return self.seg_pix[self.seg_ptr[s] : self.seg_ptr[s + 1]]

    def reverse_of(self, edge: int) -> int:
        if edge < self.n_forward:
            return edge + self.n_forward
        return edge - self.n_forward

    def out_edges(self, vertex: int) -> np.ndarray:
        return self.out_edge[self.out_ptr[vertex] : self.out_ptr[vertex + 1]]

    def vertex_at(self, x: float, y: float) -> int:
        i = int(round(x / self.spacing))
        j = int(round(y / self.spacing))
        i = min(max(i, 0), self.nx - 1)
        j = min(max(j, 0), self.ny - 1)
        return j * self.nx + i

    def with_endpoints(self, start: int, goal: int) -> Roadmap:
        _check_endpoints(start, goal, self.n_vertices)
        return dataclasses.replace(self, start=int(start), goal=int(goal))

    def heading_towards(self, src: int, dst: int) -> int:
        """Lattice heading closest to the bearing from ``src`` to ``dst``."""
        dx, dy = self.positions[dst] - self.positions[src]
        if dx == 0 and dy == 0:
            return 0
        return int(round(math.atan2(dy, dx) / (math.pi / 4))) % 8

    def segment_reduce(self, values: np.ndarray, op=np.maximum) -> np.ndarray:
        """Reduce a flat per-pixel array over every segment footprint."""
        return op.reduceat(values[self.seg_pix], self.seg_ptr[:-1])


@dataclass(frozen=True, eq=False)
class WorldTruth:
    grid: OccupancyGrid
    segment_free: np.ndarray
    edge_status: np.ndarray  # per edge, 1 = collision-free


def _check_endpoints(start, goal, n_vertices):
    if not (0 <= start < n_vertices and 0 <= goal < n_vertices):
        raise ValueError("start/goal outside the vertex set")
    if start == goal:
        raise ValueError("start and goal must differ")


def swept_footprint(
    p0,
    p1,
    resolution: float,
    width_px: int,
    height_px: int,
    length: float = ROBOT_LENGTH,
    width: float = ROBOT_WIDTH,
) -> np.ndarray:
    """Flat indices of pixels overlapping the rectangle swept from p0 to p1.

    The robot rectangle (``length`` along travel, ``width`` across) slides
    from p0 to p1, so the union is one rectangle of length ``|p1-p0| +
    length``. A pixel counts when its square overlaps that rectangle with
    positive area (separating-axis test). Pixels off the grid are dropped.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    seg = p1 - p0
    seg_len = float(np.hypot(*seg))
    if seg_len == 0:
        raise ValueError("degenerate edge")
    ux, uy = seg / seg_len
    nx_, ny_ = -uy, ux
    cx, cy = (p0 + p1) / 2
    a = seg_len / 2 + length / 2
    b = width / 2
    half = resolution / 2

    ex = a * abs(ux) + b * abs(nx_)
    ey = a * abs(uy) + b * abs(ny_)
    c0 = max(int(math.floor((cx - ex) / resolution)) - 1, 0)
    c1 = min(int(math.ceil((cx + ex) / resolution)) + 1, width_px - 1)
    r0 = max(int(math.floor((cy - ey) / resolution)) - 1, 0)
    r1 = min(int(math.ceil((cy + ey) / resolution)) + 1, height_px - 1)
    if c1 < c0 or r1 < r0:
        return np.empty(0, dtype=np.int64)
    cols = np.arange(c0, c1 + 1)
    rows = np.arange(r0, r1 + 1)
    qx = (cols + 0.5) * resolution - cx
    qy = (rows + 0.5) * resolution - cy
    QX, QY = np.meshgrid(qx, qy)
    pad = half * (abs(ux) + abs(uy))
    hit = (
        (np.abs(QX) < ex + half)
        & (np.abs(QY) < ey + half)
        & (np.abs(QX * ux + QY * uy) < a + pad)
        & (np.abs(QX * nx_ + QY * ny_) < b + pad)
    )
    R, C = np.nonzero(hit)
    return np.sort((rows[R] * width_px + cols[C]).astype(np.int64))


@lru_cache(maxsize=8)
def _lattice(width_px: int, height_px: int, resolution: float, spacing: float):
    width_m = width_px * resolution
    height_m = height_px * resolution
    nx = int(math.floor(width_m / spacing + 1e-9)) + 1
    ny = int(math.floor(height_m / spacing + 1e-9)) + 1
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    positions = np.stack([ii.ravel() * spacing, jj.ravel() * spacing], axis=1)

    seg_id = {}
    seg_ends = []
    src, dst, facing, segment = [], [], [], []
    for v in range(nx * ny):
        i, j = v % nx, v // nx
        for d, (dx, dy) in enumerate(DIRECTIONS):
            i2, j2 = i + dx, j + dy
            if not (0 <= i2 < nx and 0 <= j2 < ny):
                continue
            u = j2 * nx + i2
            key = (min(u, v), max(u, v))
            if key not in seg_id:
                seg_id[key] = len(seg_ends)
                seg_ends.append(key)
            src.append(v)
            dst.append(u)
            facing.append(d)
            segment.append(seg_id[key])

    n_fwd = len(src)
    src = np.array(src, dtype=np.int64)
    dst = np.array(dst, dtype=np.int64)
    facing = np.array(facing, dtype=np.int64)
    segment = np.array(segment, dtype=np.int64)
    edge_src = np.concatenate([src, dst])
    edge_dst = np.concatenate([dst, src])
    edge_facing = np.concatenate([facing, facing])
    edge_segment = np.concatenate([segment, segment])
    edge_reverse = np.concatenate([np.zeros(n_fwd, bool), np.ones(n_fwd, bool)])
    edge_length = np.hypot(*(positions[edge_dst] - positions[edge_src]).T)

    pix = []
    ptr = [0]
    for a, b in seg_ends:
        fp = swept_footprint(positions[a], positions[b], resolution, width_px, height_px)
        pix.append(fp)
        ptr.append(ptr[-1] + fp.size)
    seg_pix = np.concatenate(pix)
    seg_ptr = np.array(ptr, dtype=np.int64)
    if np.any(np.diff(seg_ptr) == 0):
        raise ValueError("lattice produced an empty footprint")

    out_edge = np.argsort(edge_src, kind="stable").astype(np.int64)
    out_ptr = np.zeros(nx * ny + 1, dtype=np.int64)
    out_ptr[1:] = np.cumsum(np.bincount(edge_src, minlength=nx * ny))

    arrays = dict(
        positions=positions,
        edge_src=edge_src,
        edge_dst=edge_dst,
        edge_length=edge_length,
        edge_reverse=edge_reverse,
        edge_facing=edge_facing,
        edge_segment=edge_segment,
        seg_ptr=seg_ptr,
        seg_pix=seg_pix,
        out_ptr=out_ptr,
        out_edge=out_edge,
    )
    for arr in arrays.values():
        arr.flags.writeable = False
    return nx, ny, n_fwd, arrays


def build_roadmap(
    grid: OccupancyGrid,
    vertex_spacing: float = DEFAULT_SPACING,
    start: int | None = None,
    goal: int | None = None,
) -> Roadmap:
    """Lattice roadmap covering ``grid`` with vertices every ``vertex_spacing`` m.

    Start/goal default to the grid's generator positions (snapped to the
    lattice), else to opposite corners.
    """
    if vertex_spacing < grid.resolution:
        raise ValueError("vertex_spacing must be at least the grid resolution")
    nx, ny, n_fwd, arrays = _lattice(
        grid.width_px, grid.height_px, float(grid.resolution), float(vertex_spacing)
    )
    rm = Roadmap(
        nx=nx,
        ny=ny,
        spacing=float(vertex_spacing),
        n_forward=n_fwd,
        start=0,
        goal=nx * ny - 1,
        grid_shape=grid.cells.shape,
        resolution=float(grid.resolution),
        **arrays,
    )
    if start is None:
        start = rm.vertex_at(*grid.start) if grid.start is not None else 0
    if goal is None:
        goal = rm.vertex_at(*grid.goal) if grid.goal is not None else nx * ny - 1
    return rm.with_endpoints(start, goal)


def truth_edge_status(grid: OccupancyGrid, roadmap: Roadmap) -> WorldTruth:
    if grid.cells.shape != roadmap.grid_shape:
        raise ValueError("grid does not match roadmap")
    blocked = roadmap.segment_reduce(grid.cells.ravel()) > 0
    segment_free = ~blocked
    segment_free.flags.writeable = False
    status = segment_free[roadmap.edge_segment].astype(np.uint8)
    status.flags.writeable = False
    return WorldTruth(grid=grid, segment_free=segment_free, edge_status=status)


def reachable(truth: WorldTruth, roadmap: Roadmap) -> bool:
    """Whether the goal is reachable from the start on true free edges."""
    cost = np.where(
        truth.segment_free[roadmap.edge_segment],
        roadmap.edge_length / ORACLE_SPEED,
        np.inf,
    )
    _, total = astar(
        roadmap.out_ptr,
        roadmap.out_edge,
        roadmap.edge_dst,
        roadmap.edge_facing,
        roadmap.edge_reverse,
        cost,
        roadmap.positions[:, 0],
        roadmap.positions[:, 1],
        roadmap.start,
        roadmap.heading_towards(roadmap.start, roadmap.goal),
        roadmap.goal,
        True,
        1.0 / ORACLE_SPEED,
    )
    return bool(np.isfinite(total))


# --- procedural generators -------------------------------------------------


def _stamp_discs(cells, centers, radii, resolution):
    h, w = cells.shape
    for (cx, cy), r in zip(centers, radii):
        c0 = max(int((cx - r) / resolution), 0)
        c1 = min(int((cx + r) / resolution) + 1, w - 1)
        r0 = max(int((cy - r) / resolution), 0)
        r1 = min(int((cy + r) / resolution) + 1, h - 1)
        if c1 < c0 or r1 < r0:
            continue
        xs = (np.arange(c0, c1 + 1) + 0.5) * resolution - cx
        ys = (np.arange(r0, r1 + 1) + 0.5) * resolution - cy
        inside = xs[None, :] ** 2 + ys[:, None] ** 2 <= r * r
        cells[r0 : r1 + 1, c0 : c1 + 1] |= inside


def _poisson_disk(rng, width_m, height_m, min_dist, n_target, max_tries=5000):
    pts = []
    for _ in range(max_tries):
        if len(pts) >= n_target:
            break
        p = rng.uniform((0, 0), (width_m, height_m))
        if all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= min_dist**2 for q in pts):
            pts.append(p)
    return np.array(pts).reshape(-1, 2)


def _forest(rng, width_m, height_m):
    """Dense clumps of trees around Poisson-disk cluster centers."""
    area = width_m * height_m
    clusters = _poisson_disk(rng, width_m, height_m, 14.0, int(area / 150))
    centers, radii = [], []
    for c in clusters:
        spread = rng.uniform(3.0, 6.0)
        for _ in range(rng.integers(10, 20)):
            ang = rng.uniform(0, 2 * np.pi)
            rad = spread * np.sqrt(rng.uniform())
            centers.append(c + rad * np.array([np.cos(ang), np.sin(ang)]))
            radii.append(rng.uniform(1.0, 2.3))
    n_single = int(area / 400)
    centers.extend(rng.uniform((0, 0), (width_m, height_m), size=(n_single, 2)))
    radii.extend(rng.uniform(0.4, 1.0, size=n_single))
    return centers, radii


def _desert(rng, width_m, height_m):
    """A few large, sparse blobs."""
    area = width_m * height_m
    n_blobs = max(1, int(rng.integers(int(area / 540), int(area / 360) + 1)))
    centers, radii = [], []
    for c in rng.uniform((0, 0), (width_m, height_m), size=(n_blobs, 2)):
        base = rng.uniform(1.5, 3.0)
        for _ in range(rng.integers(2, 5)):
            centers.append(c + rng.normal(0, base * 0.6, size=2))
            radii.append(base * rng.uniform(0.6, 1.1))
    return centers, radii


GENERATORS = {"forest": _forest, "desert": _desert}

ENDPOINT_MARGIN = 5.0
ENDPOINT_INSET = 4.0


def _pick_endpoints(rng, width_m, height_m, spacing):
    def snap(v):
        return round(v / spacing) * spacing

    lo, hi = 0.1, 0.9
    inset = snap(ENDPOINT_INSET)
    if rng.uniform() < 0.5:
        ya = snap(rng.uniform(lo, hi) * height_m)
        yb = snap(rng.uniform(lo, hi) * height_m)
        a = (inset, ya)
        b = (snap(width_m - ENDPOINT_INSET), yb)
    else:
        xa = snap(rng.uniform(lo, hi) * width_m)
        xb = snap(rng.uniform(lo, hi) * width_m)
        a = (xa, inset)
        b = (xb, snap(height_m - ENDPOINT_INSET))
    if rng.uniform() < 0.5:
        a, b = b, a
    return (float(a[0]), float(a[1])), (float(b[0]), float(b[1]))


def generate_world(
    kind: str,
    width_m: float = 100.0,
    height_m: float = 100.0,
    resolution: float = 0.4,
    rng_seed: int = 0,
    *,
    vertex_spacing: float = DEFAULT_SPACING,
    max_retries: int = 25,
) -> OccupancyGrid:
    """Procedural stand-in for a forest (dense) or desert (sparse) world.

    Start and goal sit on opposite sides with a cleared disc around each, and
    the goal is reachable on the true world. Unreachable draws are retried
    with a perturbed seed.
    """
    if kind not in GENERATORS:
        raise ValueError(f"unknown world kind {kind!r}")
    if width_m <= 0 or height_m <= 0:
        raise ValueError("world extent must be positive")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    w = int(round(width_m / resolution))
    h = int(round(height_m / resolution))
    for attempt in range(max_retries):
        rng = np.random.default_rng([int(rng_seed), attempt])
        cells = np.zeros((h, w), dtype=bool)
        centers, radii = GENERATORS[kind](rng, width_m, height_m)
        _stamp_discs(cells, centers, radii, resolution)
        start, goal = _pick_endpoints(rng, width_m, height_m, vertex_spacing)
        clear = np.zeros_like(cells)
        _stamp_discs(clear, [start, goal], [ENDPOINT_MARGIN] * 2, resolution)
        cells &= ~clear
        grid = OccupancyGrid(
            cells.astype(np.uint8),
            resolution,
            start=start,
            goal=goal,
            generator=kind,
            seed=int(rng_seed),
        )
        roadmap = build_roadmap(grid, vertex_spacing)
        if reachable(truth_edge_status(grid, roadmap), roadmap):
            return grid
    raise UnsatisfiableWorld(
        f"no traversable {kind} world for seed {rng_seed} after {max_retries} tries"
    )


# --- file format -----------------------------------------------------------


def _write_pgm(path: Path, image: np.ndarray, maxval: int):
    h, w = image.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.flipud(image).astype(dtype).tobytes())


def _read_pgm(path: Path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    img = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return np.flipud(img).astype(np.int64), maxval


def save_grid(grid: OccupancyGrid, path, vertex_spacing: float = DEFAULT_SPACING) -> Path:
    """Write ``<path>.pgm`` (P5, maxval 1) and a ``<path>.json`` sidecar."""
    path = Path(path).with_suffix(".pgm")
    _write_pgm(path, grid.cells, 1)
    meta = {
        "resolution_m": grid.resolution,
        "start_vertex": list(grid.start) if grid.start is not None else None,
        "goal_vertex": list(grid.goal) if grid.goal is not None else None,
        "vertex_spacing_m": vertex_spacing,
        "generator": grid.generator,
        "seed": grid.seed,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")
    return path


def load_grid(path) -> OccupancyGrid:
    path = Path(path).with_suffix(".pgm")
    img, maxval = _read_pgm(path)
    if maxval != 1:
        raise ValueError(f"{path}: occupancy PGM must have maxval 1, got {maxval}")
    meta = json.loads(path.with_suffix(".json").read_text())
    start = meta.get("start_vertex")
    goal = meta.get("goal_vertex")
    return OccupancyGrid(
        img.astype(np.uint8),
        float(meta["resolution_m"]),
        start=tuple(start) if start is not None else None,
        goal=tuple(goal) if goal is not None else None,
        generator=meta.get("generator"),
        seed=meta.get("seed"),
    )
