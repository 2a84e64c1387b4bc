"""Count-based mutual-information bonus over a grid of CoM cells.

For each batch the (x, y) plane is cut into square cells of side
``1 / mesh_density``; ``m_c(z)`` counts the timesteps that rollouts with
latent ``z`` spent in cell ``c``.  The posterior of a latent given a cell is
the count ratio, and each reward gets ``alpha_h * log posterior`` added.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import TrajectoryBatch


@dataclass(frozen=True)
class MiConfig:
    alpha_h: float = 0.01
    posterior_floor: float = 1e-3
    mesh_density: float = 10.0

    def check(self, K: int) -> None:
        if not math.isfinite(self.alpha_h) or self.alpha_h < 0:
            raise ValueError(f"alpha_h must be finite and >= 0, got {self.alpha_h}")
        if not 0.0 < self.posterior_floor < 1.0 / K:
            raise ValueError(f"posterior_floor must lie in (0, 1/K) = (0, {1.0 / K}), got {self.posterior_floor}")


def cell_of(com, mesh_density: float = 10.0) -> tuple[int, int]:
    x, y = float(com[0]), float(com[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite CoM coordinate ({x}, {y})")
    return int(math.floor(x * mesh_density)), int(math.floor(y * mesh_density))


def cells_of(com: np.ndarray, mesh_density: float = 10.0) -> np.ndarray:
    com = np.asarray(com, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(com)):
        raise ValueError("non-finite CoM coordinate")
    return np.floor(com * mesh_density).astype(np.int64)


@dataclass
class VisitationGrid:
    K: int
    mesh_density: float = 10.0
    counts: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(sum(int(v.sum()) for v in self.counts.values()))

    def add(self, cells: np.ndarray, latents: np.ndarray) -> None:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        latents = np.asarray(latents, dtype=np.int64).reshape(-1)
        if np.any(latents < 0) or np.any(latents >= self.K):
            bad = latents[(latents < 0) | (latents >= self.K)][0]
            raise ValueError(f"latent {bad} outside [0, {self.K})")
        if len(cells) == 0:
            return
        keys = np.column_stack([cells, latents])
        uniq, cnt = np.unique(keys, axis=0, return_counts=True)
        for (cx, cy, z), c in zip(uniq.tolist(), cnt.tolist()):
            row = self.counts.get((cx, cy))
            if row is None:
                row = self.counts[(cx, cy)] = np.zeros(self.K, dtype=np.int64)
            row[z] += c

    def merge(self, other: "VisitationGrid") -> "VisitationGrid":
        if other.K != self.K or other.mesh_density != self.mesh_density:
            raise ValueError("cannot merge grids with different K or mesh density")
        out = VisitationGrid(self.K, self.mesh_density, {k: v.copy() for k, v in self.counts.items()})
        for k, v in other.counts.items():
            if k in out.counts:
                out.counts[k] += v
            else:
                out.counts[k] = v.copy()
        return out

    def raw_posterior(self, cell, z: int) -> float:
        row = self.counts.get(tuple(cell))
        if row is None or row.sum() == 0:
            return 0.0
        return float(row[z]) / float(row.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_x", "cell_y"] + [f"count_z{k}" for k in range(self.K)])
            for (cx, cy) in sorted(self.counts):
                w.writerow([cx, cy] + self.counts[(cx, cy)].tolist())

    @classmethod
    def from_csv(cls, path, mesh_density: float = 10.0) -> "VisitationGrid":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            K = len(header) - 2
            grid = cls(K, mesh_density)
            for row in r:
                grid.counts[(int(row[0]), int(row[1]))] = np.array([int(v) for v in row[2:]], dtype=np.int64)
        return grid


def accumulate(batch: TrajectoryBatch, K: int, mesh_density: float = 10.0) -> VisitationGrid:
    """Fresh grid holding the visit counts of one batch."""
    grid = VisitationGrid(K, mesh_density)
    if batch.n_steps:
        grid.add(cells_of(batch.com, mesh_density), batch.latents)
    return grid


def posterior(grid: VisitationGrid, cell, z: int, floor: float = 1e-3) -> float:
    p = grid.raw_posterior(cell, z)
    return p if p >= floor else floor


def batch_posteriors(grid: VisitationGrid, batch: TrajectoryBatch, floor: float = 1e-3) -> np.ndarray:
    """Floored posterior of each timestep's own latent given its cell."""
    if batch.n_steps == 0:
        return np.zeros(0)
    cells = cells_of(batch.com, grid.mesh_density)
    keys = [tuple(c) for c in cells.tolist()]
    out = np.empty(batch.n_steps)
    for i, (key, z) in enumerate(zip(keys, batch.latents.tolist())):
        row = grid.counts.get(key)
        tot = 0 if row is None else int(row.sum())
        p = float(row[z]) / tot if tot else 0.0
        out[i] = p if p >= floor else floor
    return out


def apply_mi_bonus(batch: TrajectoryBatch, grid: VisitationGrid, config: MiConfig) -> TrajectoryBatch:
    """Batch with ``reward + alpha_h * log p(z | cell)``; raw rewards are kept."""
    if config.alpha_h == 0.0:
        return batch.with_rewards(batch.rewards.copy())
    post = batch_posteriors(grid, batch, config.posterior_floor)
    return batch.with_rewards(batch.rewards + config.alpha_h * np.log(post))
