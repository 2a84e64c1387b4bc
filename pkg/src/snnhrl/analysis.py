"""Visitation runs, skill-diversity metrics, coverage and learning curves."""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import STREAM_ACTION, STREAM_LATENT, RngStream
from .envs import BatchEnv
from .mi import cells_of
from .policy import SkillBank, SnnPolicy
from .trpo import PROGRESS_COLUMNS

# a latent counts as moving if its mean terminal displacement reaches this
# fraction of a quarter of the longest possible straight-line run
DISTINCT_NORM_FRACTION = 0.3
DISTINCT_MIN_ANGLE_DEG = 45.0

LATENT_MODES = ("per-rollout-uniform", "fixed", "random-manager", "gaussian")
VISITATION_COLUMNS = ("rollout_id", "timestep", "x", "y", "latent")


@dataclass
class VisitationRecords:
    """Column-oriented set of visitation rows (one per low-level step)."""

    rollout_id: np.ndarray
    timestep: np.ndarray
    x: np.ndarray
    y: np.ndarray
    latent: np.ndarray

    def __post_init__(self):
        self.rollout_id = np.asarray(self.rollout_id, dtype=np.int64)
        self.timestep = np.asarray(self.timestep, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.latent = np.asarray(self.latent, dtype=np.int64)
        n = len(self.rollout_id)
        if any(len(a) != n for a in (self.timestep, self.x, self.y, self.latent)):
            raise ValueError("visitation columns differ in length")

    def __len__(self) -> int:
        return len(self.rollout_id)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VisitationRecords):
            return NotImplemented
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in VISITATION_COLUMNS)

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def take(self, idx) -> "VisitationRecords":
        return VisitationRecords(*(getattr(self, c)[idx] for c in VISITATION_COLUMNS))

    def head(self, n: int) -> "VisitationRecords":
        return self.take(slice(0, n))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(VISITATION_COLUMNS) + "\n")
        for r, t, x, y, z in zip(self.rollout_id.tolist(), self.timestep.tolist(), self.x.tolist(), self.y.tolist(),
                                 self.latent.tolist()):
            buf.write(f"{r},{t},{x!r},{y!r},{z}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "VisitationRecords":
        text = Path(source).read_text() if isinstance(source, (str, Path)) and "\n" not in str(source) else source
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != VISITATION_COLUMNS:
            raise ValueError(f"visitation CSV header must be {','.join(VISITATION_COLUMNS)}")
        body = rows[1:]
        cols = list(zip(*body)) if body else [()] * 5
        return cls(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
                   np.array(cols[2], dtype=np.float64), np.array(cols[3], dtype=np.float64),
                   np.array(cols[4], dtype=np.int64))


def visitation_run(source, env: BatchEnv, n_rollouts: int = 100, horizon: int = 500,
                   latent_mode: str = "per-rollout-uniform", rng: RngStream | None = None, z: int | None = None,
                   switch_time: int = 50) -> VisitationRecords:
    """Reset every rollout to the origin and record the position after each step.

    ``source`` is an ``SnnPolicy`` or ``SkillBank`` (ignored for the
    ``gaussian`` mode, which applies i.i.d. standard normal actions).
    ``random-manager`` picks a uniform skill every ``switch_time`` steps.
    """
    if latent_mode not in LATENT_MODES:
        raise ValueError(f"latent_mode must be one of {LATENT_MODES}, got {latent_mode!r}")
    rng = rng if rng is not None else RngStream(0)
    if latent_mode == "random-manager":
        from .training import hierarchical_rollouts

        bank = source if isinstance(source, SkillBank) else SkillBank.from_snn(source)
        hb = hierarchical_rollouts(None, bank, env, switch_time, horizon, rng, 0, n_rollouts)
        lengths = hb.low_lengths
        rid = np.repeat(np.arange(n_rollouts), lengths)
        ts = np.concatenate([np.arange(k) for k in lengths])
        return VisitationRecords(rid, ts, hb.low_com[:, 0], hb.low_com[:, 1], hb.low_latents)

    bank = None
    if latent_mode != "gaussian":
        bank = source if isinstance(source, SkillBank) else SkillBank.from_snn(source)
        if latent_mode == "fixed":
            if z is None or not 0 <= z < bank.K:
                raise ValueError(f"fixed latent mode needs z in [0, {bank.K}), got {z}")
            zs = np.full(n_rollouts, z, dtype=np.int64)
        else:
            zs = np.array([rng.child(STREAM_LATENT, i).integers(bank.K) for i in range(n_rollouts)], dtype=np.int64)
    else:
        zs = np.zeros(n_rollouts, dtype=np.int64)
    noise = np.stack([rng.child(STREAM_ACTION, i).standard_normal((horizon, env.act_dim)) for i in range(n_rollouts)])
    obs = env.reset(n_rollouts)
    agent_dim = env.layout.agent_dim
    pos = np.zeros((horizon, n_rollouts, 2))
    lengths = np.full(n_rollouts, horizon, dtype=np.int64)
    alive = np.ones(n_rollouts, dtype=bool)

    class _Noise:
        def __init__(self, t):
            self.t = t

        def standard_normal(self, shape):
            return noise[:, self.t].reshape(shape)

    T = horizon
    for t in range(horizon):
        if bank is None:
            a = noise[:, t]
        else:
            a = bank.act(obs[:, :agent_dim], zs, _Noise(t))
        obs, _, done = env.step(a)
        pos[t] = env.com
        ended = alive & done
        lengths[ended] = t + 1
        alive &= ~done
        if not alive.any():
            T = t + 1
            break
    tt = np.concatenate([np.arange(k) for k in lengths])
    ii = np.repeat(np.arange(n_rollouts), lengths)
    p = pos[:T][tt, ii]
    return VisitationRecords(ii, tt, p[:, 0], p[:, 1], zs[ii])


def coverage(records: VisitationRecords, mesh_density: float = 10.0) -> int:
    """Number of distinct grid cells visited."""
    if len(records) == 0:
        raise ValueError("coverage of an empty record set is undefined")
    return int(len(np.unique(cells_of(records.xy, mesh_density), axis=0)))


# ---------------------------------------------------------------------------
# diversity
# ---------------------------------------------------------------------------

@dataclass
class SkillDiversityReport:
    K: int
    displacements: dict[int, np.ndarray]
    separations: dict[tuple[int, int], float]
    norm_threshold: float
    distinct_count: int
    distinct_set: tuple[int, ...]
    missing: tuple[int, ...] = ()

    def to_text(self) -> str:
        lines = [f"K {self.K}", f"norm_threshold {self.norm_threshold:.6g}",
                 f"distinct_count {self.distinct_count}",
                 "distinct_set " + " ".join(str(k) for k in self.distinct_set)]
        for k in range(self.K):
            if k in self.displacements:
                d = self.displacements[k]
                lines.append(f"latent {k} dx {d[0]:.6g} dy {d[1]:.6g} norm {np.linalg.norm(d):.6g}")
            else:
                lines.append(f"latent {k} missing")
        for (i, j), a in sorted(self.separations.items()):
            lines.append(f"separation {i} {j} {a:.6g}")
        return "\n".join(lines) + "\n"


def angle_between(u, v) -> float:
    """Unsigned angle in degrees, in [0, 180]."""
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = float(np.dot(u, v)) / (nu * nv)
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def max_distinct_subset(vectors: dict[int, np.ndarray], norm_threshold: float,
                        min_angle: float = DISTINCT_MIN_ANGLE_DEG) -> tuple[int, ...]:
    """Largest set of latents that are pairwise distinct (exhaustive search)."""
    keys = sorted(vectors)
    if not keys:
        return ()
    moving = [k for k in keys if np.linalg.norm(vectors[k]) >= norm_threshold]
    ok = {(i, j): angle_between(vectors[i], vectors[j]) >= min_angle for i, j in itertools.combinations(moving, 2)}
    for size in range(len(moving), 1, -1):
        for sub in itertools.combinations(moving, size):
            if all(ok[p] for p in itertools.combinations(sub, 2)):
                return sub
    # a single latent is trivially distinct from itself
    return (moving[0],) if moving else (keys[0],)


def terminal_displacements(records: VisitationRecords) -> tuple[np.ndarray, np.ndarray]:
    """(latent, displacement) of each rollout's last record, relative to the origin."""
    order = np.lexsort((records.timestep, records.rollout_id))
    rid = records.rollout_id[order]
    last = order[np.r_[rid[1:] != rid[:-1], True]]
    return records.latent[last], records.xy[last]


def diversity_report(records: VisitationRecords, K: int, v_max: float = 0.5, horizon: int | None = None,
                     norm_fraction: float = DISTINCT_NORM_FRACTION,
                     min_angle: float = DISTINCT_MIN_ANGLE_DEG) -> SkillDiversityReport:
    if horizon is None:
        horizon = int(records.timestep.max()) + 1 if len(records) else 0
    thr = norm_fraction * v_max * horizon * 0.25
    lat, disp = terminal_displacements(records)
    means, missing = {}, []
    for k in range(K):
        sel = lat == k
        if sel.any():
            means[k] = disp[sel].mean(axis=0)
        else:
            missing.append(k)
    seps = {(i, j): angle_between(means[i], means[j]) for i, j in itertools.combinations(sorted(means), 2)}
    sub = max_distinct_subset(means, thr, min_angle)
    return SkillDiversityReport(K, means, seps, thr, len(sub), sub, tuple(missing))


# ---------------------------------------------------------------------------
# learning curves
# ---------------------------------------------------------------------------

@dataclass
class LearningCurve:
    iteration: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_runs: int
    column: str = "mean_return"

    def to_csv(self, path=None) -> str:
        lines = ["iteration,mean,std,n_runs"]
        for it, m, s in zip(self.iteration.tolist(), self.mean.tolist(), self.std.tolist()):
            lines.append(f"{it},{m!r},{s!r},{self.n_runs}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def read_progress(path, columns=PROGRESS_COLUMNS) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty progress file")
        for c in columns:
            if c not in header:
                raise ValueError(f"{path}: missing column {c!r}")
        rows = list(reader)
    out = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in rows]
        try:
            out[name] = np.array([float(v) for v in vals])
        except ValueError:
            out[name] = np.array(vals)
    return out


def learning_curve(paths, column: str = "mean_return") -> LearningCurve:
    """Per-iteration mean and population std across runs.

    Shorter runs are padded with their last observed value.
    """
    paths = list(paths)
    if not paths:
        raise ValueError("no progress files given")
    headers = []
    for p in paths:
        with open(p, newline="") as fh:
            headers.append(next(csv.reader(fh), []))
    ref = headers[0]
    for p, h in zip(paths[1:], headers[1:]):
        if h != ref:
            bad = next((c for c in itertools.zip_longest(ref, h) if c[0] != c[1]))
            name = bad[1] if bad[1] is not None and bad[1] not in ref else bad[0]
            raise ValueError(f"{p}: schema mismatch at column {name!r}")
    runs = [read_progress(p) for p in paths]
    if column not in runs[0]:
        raise ValueError(f"column {column!r} not in progress schema")
    series = [r[column] for r in runs]
    n = max(len(s) for s in series)
    if any(len(s) == 0 for s in series):
        raise ValueError("a progress file has no rows")
    mat = np.array([np.concatenate([s, np.full(n - len(s), s[-1])]) for s in series])
    longest = max(runs, key=lambda r: len(r["iteration"]))
    return LearningCurve(longest["iteration"].astype(np.int64), mat.mean(axis=0), mat.std(axis=0), len(paths),
                         column)


def learning_curves(groups: dict[str, list], column: str = "mean_return") -> dict[str, LearningCurve]:
    return {k: learning_curve(v, column) for k, v in sorted(groups.items())}


# ---------------------------------------------------------------------------
# SVG scatter
# ---------------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def scatter_svg(records: VisitationRecords, path=None, extent: float = 30.0, size: int = 480,
                max_points: int = 20000) -> str:
    """Minimal SVG scatter of (x, y) coloured by latent over [-extent, extent]^2."""
    n = len(records)
    idx = np.arange(n) if n <= max_points else np.linspace(0, n - 1, max_points).astype(np.int64)
    scale = size / (2.0 * extent)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white" stroke="black"/>',
             f'<line x1="{size / 2}" y1="0" x2="{size / 2}" y2="{size}" stroke="#ccc"/>',
             f'<line x1="0" y1="{size / 2}" x2="{size}" y2="{size / 2}" stroke="#ccc"/>']
    for i in idx.tolist():
        px = (records.x[i] + extent) * scale
        py = (extent - records.y[i]) * scale
        if 0 <= px <= size and 0 <= py <= size:
            c = PALETTE[int(records.latent[i]) % len(PALETTE)]
            parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="1" fill="{c}"/>')
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
