"""Experiment sweeps over worlds, noise levels, collision factors and algorithms.

Results go to a CSV with one row per episode. Rows are appended as cells
finish, so an interrupted sweep resumes by skipping keys already present; on
completion the file is rewritten in canonical key order, which makes the
final bytes independent of scheduling and of how many restarts happened.
Wall-clock timings vary between runs and live in a ``.timing.csv`` sidecar.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DreamsError
from .policies import ALGORITHMS, EvalParams
from .sensing import NOISE_LEVELS, NoiseModel
from .simulator import run_episode
from .world import (
    DEFAULT_SPACING,
    build_roadmap,
    generate_world,
    load_grid,
    save_grid,
    truth_edge_status,
)

OUT_ENV = "DREAMS_OUT_DIR"
WORLD_KINDS = ("forest", "desert")
ABLATE_AXES = {"plans": "n_plans", "eval_worlds": "n_eval_worlds"}


class SweepError(DreamsError):
    """One or more cells failed; ``failures`` maps cell key to diagnostic."""

    def __init__(self, failures: dict[str, str]):
        self.failures = failures
        lines = [f"{len(failures)} cell(s) failed:"]
        lines += [f"  {k}: {msg}" for k, msg in sorted(failures.items())]
        super().__init__("\n".join(lines))


class ResultsParseError(DreamsError, ValueError):
    pass


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "dreams-out"))


def noise_eta(level) -> float:
    """Named level (low/med/high) or an explicit eta."""
    if isinstance(level, str):
        if level in NOISE_LEVELS:
            return NOISE_LEVELS[level]
        try:
            level = float(level)
        except ValueError:
            raise ConfigError(f"unknown noise level {level!r}") from None
    eta = float(level)
    if not eta >= 0:
        raise ConfigError(f"noise eta must be non-negative, got {level!r}")
    return eta


def noise_label(level) -> str:
    if isinstance(level, str) and level in NOISE_LEVELS:
        return level
    return repr(noise_eta(level))


@dataclass
class SweepConfig:
    kinds: list[str] = field(default_factory=lambda: list(WORLD_KINDS))
    worlds_per_kind: int = 20
    noise: list = field(default_factory=lambda: ["low", "med", "high"])
    alphas: list[float] = field(default_factory=lambda: [1.0, 10.0, 20.0])
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    seeds: int = 10
    n_plans: int = 100
    n_eval_worlds: int = 10_000
    out: Path | None = None
    world_dir: Path | None = None
    width_m: float = 100.0
    height_m: float = 100.0
    resolution: float = 0.4
    vertex_spacing: float = DEFAULT_SPACING
    jobs: int = 1
    write_logs: bool = True

    def __post_init__(self):
        if self.out is None:
            self.out = default_out_dir() / "results.csv"
        self.out = Path(self.out)
        if self.world_dir is not None:
            self.world_dir = Path(self.world_dir)
        self.kinds = list(self.kinds)
        self.noise = list(self.noise)
        self.alphas = [float(a) for a in self.alphas]
        self.algorithms = list(self.algorithms)
        self.validate()

    def validate(self):
        for name in ("worlds_per_kind", "seeds", "n_plans", "n_eval_worlds", "jobs"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        for name in ("kinds", "noise", "alphas", "algorithms"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must not be empty")
        for k in self.kinds:
            if k not in WORLD_KINDS:
                raise ConfigError(f"unknown world kind {k!r}; choose from {WORLD_KINDS}")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
        for a in self.alphas:
            if not a >= 1:
                raise ConfigError(f"alpha must be >= 1, got {a}")
        for n in self.noise:
            noise_eta(n)
        if not (self.width_m > 0 and self.height_m > 0 and self.resolution > 0):
            raise ConfigError("world size and resolution must be positive")

    @classmethod
    def from_json(cls, path, **overrides) -> SweepConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict({**data, **overrides})

    @classmethod
    def from_dict(cls, data: dict) -> SweepConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**{k: v for k, v in data.items() if v is not None})
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["out"] = str(self.out)
        d["world_dir"] = None if self.world_dir is None else str(self.world_dir)
        return d

    @property
    def n_cells(self) -> int:
        return (
            len(self.kinds)
            * self.worlds_per_kind
            * len(self.noise)
            * len(self.alphas)
            * len(self.algorithms)
            * self.seeds
        )


@dataclass(frozen=True)
class Cell:
    kind: str
    world_index: int
    noise: str
    eta: float
    alpha: float
    algorithm: str
    seed_index: int
    n_plans: int
    n_eval_worlds: int

    @property
    def world_id(self) -> str:
        return f"{self.kind}-{self.world_index:03d}"

    @property
    def sort_key(self):
        return (
            self.kind,
            self.world_index,
            self.eta,
            self.alpha,
            self.algorithm,
            self.n_plans,
            self.n_eval_worlds,
            self.seed_index,
        )

    @property
    def key(self) -> str:
        return "|".join(
            [
                self.world_id,
                repr(self.eta),
                repr(self.alpha),
                self.algorithm,
                str(self.n_plans),
                str(self.n_eval_worlds),
                str(self.seed_index),
            ]
        )

    @property
    def seed(self) -> int:
        """Episode seed from world, eta, alpha, algorithm and seed index."""
        text = "|".join(
            [self.world_id, repr(self.eta), repr(self.alpha), self.algorithm, str(self.seed_index)]
        )
        digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big") >> 1

    @property
    def log_name(self) -> str:
        return hashlib.blake2b(self.key.encode(), digest_size=8).hexdigest() + ".jsonl"


@dataclass
class ResultRow:
    world_id: str
    kind: str
    algorithm: str
    noise: str
    eta: float
    alpha: float
    seed_index: int
    seed: int
    n_plans: int
    n_eval_worlds: int
    status: str
    T: float
    C: float
    J: float
    oracle_time: float
    suboptimality: float
    collisions: int
    steps: int
    n_observations: int
    proposer_seconds: float = field(default=0.0, compare=False)
    acceptor_seconds: float = field(default=0.0, compare=False)
    wall_seconds: float = field(default=0.0, compare=False)


ROW_FIELDS = [f.name for f in dataclasses.fields(ResultRow)]
TIMING_FIELDS = ["proposer_seconds", "acceptor_seconds", "wall_seconds"]
CSV_FIELDS = [f for f in ROW_FIELDS if f not in TIMING_FIELDS]
KEY_FIELDS = ["world_id", "eta", "alpha", "algorithm", "n_plans", "n_eval_worlds", "seed_index"]
_INT_FIELDS = {"seed_index", "seed", "n_plans", "n_eval_worlds", "collisions", "steps", "n_observations"}
_FLOAT_FIELDS = {"eta", "alpha", "T", "C", "J", "oracle_time", "suboptimality", *TIMING_FIELDS}


def row_key(row: dict) -> str:
    return "|".join(
        [
            row["world_id"],
            repr(float(row["eta"])),
            repr(float(row["alpha"])),
            row["algorithm"],
            str(int(row["n_plans"])),
            str(int(row["n_eval_worlds"])),
            str(int(row["seed_index"])),
        ]
    )


def expand_cells(config: SweepConfig, variants: Sequence[dict] | None = None) -> list[Cell]:
    """Every cell of the sweep in canonical order.

    ``variants`` overrides ``n_plans`` / ``n_eval_worlds`` per ablation value.
    """
    variants = variants or [{}]
    cells = []
    for kind in config.kinds:
        for w in range(config.worlds_per_kind):
            for level in config.noise:
                for alpha in config.alphas:
                    for alg in config.algorithms:
                        for var in variants:
                            for s in range(config.seeds):
                                cells.append(
                                    Cell(
                                        kind=kind,
                                        world_index=w,
                                        noise=noise_label(level),
                                        eta=noise_eta(level),
                                        alpha=float(alpha),
                                        algorithm=alg,
                                        seed_index=s,
                                        n_plans=int(var.get("n_plans", config.n_plans)),
                                        n_eval_worlds=int(var.get("n_eval_worlds", config.n_eval_worlds)),
                                    )
                                )
    cells.sort(key=lambda c: c.sort_key)
    keys = [c.key for c in cells]
    if len(set(keys)) != len(keys):
        raise ConfigError("duplicate cells in sweep (repeated noise, alpha or ablation values)")
    return cells


# --- worlds -------------------------------------------------------------------


def world_path(world_dir: Path, kind: str, index: int) -> Path:
    return Path(world_dir) / f"{kind}-{index:03d}.pgm"


def world_seed(kind: str, index: int) -> int:
    # kinds get disjoint seed ranges so forest-3 and desert-3 are unrelated draws
    return WORLD_KINDS.index(kind) * 1_000_000 + index


@lru_cache(maxsize=64)
def _load_world(kind, index, width_m, height_m, resolution, spacing, world_dir):
    if world_dir is not None:
        path = world_path(Path(world_dir), kind, index)
        if path.exists():
            grid = load_grid(path)
        else:
            raise ConfigError(f"world file {path} not found (run gen-worlds first)")
    else:
        grid = generate_world(
            kind, width_m, height_m, resolution, world_seed(kind, index), vertex_spacing=spacing
        )
    roadmap = build_roadmap(grid, spacing)
    return roadmap, truth_edge_status(grid, roadmap)


def load_world(config: SweepConfig, kind: str, index: int):
    return _load_world(
        kind,
        index,
        config.width_m,
        config.height_m,
        config.resolution,
        config.vertex_spacing,
        None if config.world_dir is None else str(config.world_dir),
    )


def generate_worlds(config: SweepConfig, out_dir) -> list[Path]:
    """Write every world of the config as PGM + JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind in config.kinds:
        for w in range(config.worlds_per_kind):
            grid = generate_world(
                kind,
                config.width_m,
                config.height_m,
                config.resolution,
                world_seed(kind, w),
                vertex_spacing=config.vertex_spacing,
            )
            paths.append(save_grid(grid, world_path(out_dir, kind, w), config.vertex_spacing))
    return paths


# --- execution ------------------------------------------------------------------


def run_cell(config: SweepConfig, cell: Cell, log_dir: Path | None = None) -> ResultRow:
    roadmap, truth = load_world(config, cell.kind, cell.world_index)
    params = EvalParams(
        alpha=cell.alpha, n_plans=cell.n_plans, n_eval_worlds=cell.n_eval_worlds
    )
    t0 = time.perf_counter()
    log = run_episode(truth, roadmap, cell.algorithm, NoiseModel(cell.eta), params, cell.seed)
    wall = time.perf_counter() - t0
    if log_dir is not None:
        log.write_jsonl(Path(log_dir) / cell.log_name)
    return ResultRow(
        world_id=cell.world_id,
        kind=cell.kind,
        algorithm=cell.algorithm,
        noise=cell.noise,
        eta=cell.eta,
        alpha=cell.alpha,
        seed_index=cell.seed_index,
        seed=cell.seed,
        n_plans=cell.n_plans,
        n_eval_worlds=cell.n_eval_worlds,
        status=log.status,
        T=log.traversal_time,
        C=log.collision_cost,
        J=log.total,
        oracle_time=log.oracle_time,
        suboptimality=log.suboptimality,
        collisions=log.collisions,
        steps=log.steps,
        n_observations=log.n_observations,
        proposer_seconds=log.proposer_seconds,
        acceptor_seconds=log.acceptor_seconds,
        wall_seconds=wall,
    )


def _run_cell_safe(config, cell, log_dir):
    try:
        return cell, run_cell(config, cell, log_dir), None
    except Exception as exc:  # reported per cell, the sweep carries on
        return cell, None, f"{type(exc).__name__}: {exc}"


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def timing_path(out: Path) -> Path:
    return out.with_name(out.stem + ".timing.csv")


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="") as f:
        return list(csv.DictReader(f))


def _write_csv(path: Path, fields: list[str], rows: Iterable[dict]):
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow(r)
    os.replace(tmp, path)


class _Appender:
    """Appends rows to a CSV, writing the header if the file is new."""

    def __init__(self, path: Path, fields: list[str]):
        new = not path.exists() or path.stat().st_size == 0
        self.f = path.open("a", newline="")
        self.writer = csv.DictWriter(self.f, fieldnames=fields, lineterminator="\n")
        if new:
            self.writer.writeheader()

    def write(self, row: dict):
        self.writer.writerow(row)
        self.f.flush()

    def close(self):
        self.f.close()


def run_sweep(
    config: SweepConfig,
    variants: Sequence[dict] | None = None,
    extra: dict | None = None,
    progress=None,
) -> Path:
    """Run every missing cell and write the canonical results file.

    ``extra`` adds constant columns to every row (used by ``ablate``).
    Raises ``SweepError`` after writing completed rows if any cell failed
    or timed out.
    """
    extra = extra or {}
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fields = CSV_FIELDS + list(extra)
    tfields = KEY_FIELDS + TIMING_FIELDS
    cells = expand_cells(config, variants)
    wanted = {c.key: c for c in cells}

    existing = _read_csv(out)
    if existing and list(existing[0]) != fields:
        raise ConfigError(f"{out} has a different column layout; use a new --out")
    done = {row_key(r): r for r in existing if row_key(r) in wanted}
    timings = {row_key(r): r for r in _read_csv(timing_path(out))}
    todo = [c for c in cells if c.key not in done]

    log_dir = None
    if config.write_logs:
        log_dir = out.parent / (out.stem + "_logs")
        log_dir.mkdir(exist_ok=True)

    failures: dict[str, str] = {}
    rows_out = _Appender(out, fields)
    times_out = _Appender(timing_path(out), tfields)

    def record(cell, row, err):
        if err is not None:
            failures[cell.key] = err
            return
        data = {k: _fmt(getattr(row, k)) for k in CSV_FIELDS}
        data.update({k: _fmt(v) for k, v in extra.items()})
        tdata = {k: data[k] for k in KEY_FIELDS}
        tdata.update({k: _fmt(getattr(row, k)) for k in TIMING_FIELDS})
        rows_out.write(data)
        times_out.write(tdata)
        done[cell.key] = data
        timings[cell.key] = tdata
        if progress is not None:
            progress(cell, row)

    try:
        if config.jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                futures = [pool.submit(_run_cell_safe, config, c, log_dir) for c in todo]
                for fut in as_completed(futures):
                    record(*fut.result())
        else:
            for c in todo:
                record(*_run_cell_safe(config, c, log_dir))
    finally:
        rows_out.close()
        times_out.close()

    ordered = [done[c.key] for c in cells if c.key in done]
    _write_csv(out, fields, ordered)
    _write_csv(
        timing_path(out), tfields, [timings[c.key] for c in cells if c.key in timings]
    )
    for r in ordered:
        if r["status"] != "success":
            failures.setdefault(row_key(r), f"episode ended with status {r['status']}")
    if failures:
        raise SweepError(failures)
    return out


def ablate(axis: str, values: Sequence[int], config: SweepConfig, progress=None) -> Path:
    """Sweep ``config`` once per value of ``n_plans`` or ``n_eval_worlds``."""
    if axis not in ABLATE_AXES:
        raise ConfigError(f"ablation axis must be one of {sorted(ABLATE_AXES)}")
    values = [int(v) for v in values]
    if not values:
        raise ConfigError("ablation needs at least one value")
    if any(v < 1 for v in values):
        raise ConfigError("ablation values must be >= 1")
    name = ABLATE_AXES[axis]
    variants = [{name: v} for v in values]
    return run_sweep(config, variants, extra={"ablate_axis": axis}, progress=progress)


# --- summaries ------------------------------------------------------------------


def read_results(path) -> list[dict]:
    """Parse a results CSV into typed rows, attaching timings from the sidecar."""
    path = Path(path)
    try:
        f = path.open(newline="")
    except OSError as exc:
        raise ResultsParseError(f"cannot open {path}: {exc}") from None
    rows = []
    with f:
        reader = csv.DictReader(f)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ResultsParseError(f"{path}: missing columns {sorted(missing)}")
        for lineno, raw in enumerate(reader, start=2):
            row = dict(raw)
            try:
                for k in _INT_FIELDS & set(row):
                    row[k] = int(row[k])
                for k in (_FLOAT_FIELDS & set(row)) - set(TIMING_FIELDS):
                    row[k] = float(row[k])
            except (TypeError, ValueError) as exc:
                raise ResultsParseError(f"{path}:{lineno}: {exc}") from None
            rows.append(row)
    tpath = timing_path(path)
    if tpath.exists():
        timing = {}
        for lineno, raw in enumerate(_read_csv(tpath), start=2):
            try:
                timing[row_key(raw)] = {k: float(raw[k]) for k in TIMING_FIELDS}
            except (KeyError, TypeError, ValueError) as exc:
                raise ResultsParseError(f"{tpath}:{lineno}: {exc}") from None
        for row in rows:
            row.update(timing.get(row_key(row), {}))
    return rows


SUMMARY_GROUP = ("kind", "algorithm", "noise", "eta", "alpha", "n_plans", "n_eval_worlds")


def summarize(path_or_rows) -> list[dict]:
    """Per (kind, algorithm, eta, alpha, sample counts): mean and 95% CI of
    suboptimality, mean T, C and timing split."""
    rows = read_results(path_or_rows) if isinstance(path_or_rows, (str, Path)) else path_or_rows
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in SUMMARY_GROUP), []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[3], k[4], k[1], k[5], k[6])):
        g = groups[key]
        sub = np.array([r["suboptimality"] for r in g])
        n = sub.size
        half = 1.96 * sub.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
        summary = dict(zip(SUMMARY_GROUP, key))
        summary.update(
            n=n,
            suboptimality_mean=float(sub.mean()),
            suboptimality_ci95=float(half),
            T_mean=float(np.mean([r["T"] for r in g])),
            C_mean=float(np.mean([r["C"] for r in g])),
            collisions_mean=float(np.mean([r["collisions"] for r in g])),
            failures=sum(r["status"] != "success" for r in g),
        )
        for k in ("proposer_seconds", "acceptor_seconds"):
            vals = [r[k] for r in g if k in r]
            summary[k + "_mean"] = float(np.mean(vals)) if vals else float("nan")
        out.append(summary)
    return out


def format_summary(summary: list[dict]) -> str:
    header = (
        f"{'kind':<7} {'algorithm':<16} {'noise':<6} {'alpha':>5} {'plans':>5} {'evals':>6} "
        f"{'n':>4} {'subopt':>8} {'±ci95':>7} {'T':>8} {'C':>8} {'prop s':>8} {'acc s':>8}"
    )
    lines = [header]
    for s in summary:
        lines.append(
            f"{s['kind']:<7} {s['algorithm']:<16} {s['noise']:<6} {s['alpha']:>5g} "
            f"{s['n_plans']:>5} {s['n_eval_worlds']:>6} {s['n']:>4} "
            f"{s['suboptimality_mean']:>8.3f} {s['suboptimality_ci95']:>7.3f} "
            f"{s['T_mean']:>8.2f} {s['C_mean']:>8.2f} "
            f"{s['proposer_seconds_mean']:>8.4f} {s['acceptor_seconds_mean']:>8.4f}"
        )
    return "\n".join(lines)
