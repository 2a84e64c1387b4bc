"""Shared numeric types, trajectory containers and return arithmetic."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class ObsLayout:
    """Ordered names of the agent block followed by the task block."""

    agent: tuple[str, ...]
    rest: tuple[str, ...] = ()

    @property
    def agent_dim(self) -> int:
        return len(self.agent)

    @property
    def rest_dim(self) -> int:
        return len(self.rest)

    @property
    def dim(self) -> int:
        return len(self.agent) + len(self.rest)

    def names(self) -> tuple[str, ...]:
        return self.agent + self.rest


@dataclass(frozen=True)
class FactoredObservation:
    agent: np.ndarray
    rest: np.ndarray
    layout: ObsLayout

    def __post_init__(self):
        if len(self.agent) != self.layout.agent_dim or len(self.rest) != self.layout.rest_dim:
            raise ValueError(
                f"observation blocks ({len(self.agent)}, {len(self.rest)}) do not match layout "
                f"({self.layout.agent_dim}, {self.layout.rest_dim})"
            )

    def full(self) -> np.ndarray:
        return np.concatenate([self.agent, self.rest])

    @classmethod
    def from_full(cls, vec: np.ndarray, layout: ObsLayout) -> "FactoredObservation":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[: layout.agent_dim].copy(), vec[layout.agent_dim:].copy(), layout)


@dataclass
class Trajectory:
    """One rollout. ``observations`` holds full (agent + rest) vectors row-wise."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    latent: int
    log_probs: np.ndarray
    com_positions: np.ndarray
    raw_rewards: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.rewards)
        lens = {len(self.observations), len(self.actions), len(self.log_probs), len(self.com_positions)}
        if lens != {n} or n < 1:
            raise ValueError(f"trajectory sequences must share one length >= 1, got {sorted(lens | {n})}")
        if self.raw_rewards is None:
            self.raw_rewards = np.array(self.rewards, dtype=np.float64, copy=True)

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass
class TrajectoryBatch:
    """Rollouts stored as flat per-timestep arrays plus rollout lengths.

    ``latents`` is per timestep so it can feed policies directly; within a
    rollout it is constant in pre-training batches.  ``raw_rewards`` keeps the
    environment reward when ``rewards`` has been modified (MI bonus).
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    latents: np.ndarray
    log_probs: np.ndarray
    com: np.ndarray
    lengths: np.ndarray
    timesteps: np.ndarray
    horizon: int
    raw_rewards: np.ndarray = field(default=None)
    terminated: np.ndarray = field(default=None)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.raw_rewards is None:
            self.raw_rewards = self.rewards.copy()
        if self.terminated is None:
            self.terminated = np.zeros(len(self.lengths), dtype=bool)
        n = int(self.lengths.sum())
        for name in ("obs", "actions", "rewards", "latents", "log_probs", "com", "timesteps", "raw_rewards"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"batch field {name!r} has length {len(getattr(self, name))}, expected {n}")

    @property
    def n_steps(self) -> int:
        return int(self.lengths.sum())

    @property
    def n_rollouts(self) -> int:
        return len(self.lengths)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.lengths)])

    def rollout_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rollouts), self.lengths)

    def slices(self) -> Iterator[slice]:
        off = self.offsets
        for i in range(self.n_rollouts):
            yield slice(int(off[i]), int(off[i + 1]))

    def trajectories(self) -> Iterator[Trajectory]:
        for sl in self.slices():
            yield Trajectory(
                observations=self.obs[sl], actions=self.actions[sl], rewards=self.rewards[sl],
                latent=int(self.latents[sl.start]), log_probs=self.log_probs[sl],
                com_positions=self.com[sl], raw_rewards=self.raw_rewards[sl],
            )

    def with_rewards(self, rewards: np.ndarray) -> "TrajectoryBatch":
        return TrajectoryBatch(
            obs=self.obs, actions=self.actions, rewards=np.asarray(rewards, dtype=np.float64),
            latents=self.latents, log_probs=self.log_probs, com=self.com, lengths=self.lengths,
            timesteps=self.timesteps, horizon=self.horizon, raw_rewards=self.raw_rewards,
            terminated=self.terminated, extras=dict(self.extras),
        )

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory], horizon: int) -> "TrajectoryBatch":
        if not trajs:
            return cls.empty(0, 0, horizon)
        lengths = np.array([len(t) for t in trajs])
        return cls(
            obs=np.concatenate([np.atleast_2d(t.observations) for t in trajs]),
            actions=np.concatenate([np.reshape(t.actions, (len(t), -1)) for t in trajs]),
            rewards=np.concatenate([t.rewards for t in trajs]).astype(np.float64),
            latents=np.repeat([t.latent for t in trajs], lengths).astype(np.int64),
            log_probs=np.concatenate([t.log_probs for t in trajs]).astype(np.float64),
            com=np.concatenate([np.reshape(t.com_positions, (-1, 2)) for t in trajs]),
            lengths=lengths,
            timesteps=np.concatenate([np.arange(n) for n in lengths]),
            horizon=horizon,
            raw_rewards=np.concatenate([t.raw_rewards for t in trajs]).astype(np.float64),
        )

    @classmethod
    def empty(cls, obs_dim: int, act_dim: int, horizon: int) -> "TrajectoryBatch":
        z = np.zeros(0)
        return cls(
            obs=np.zeros((0, obs_dim)), actions=np.zeros((0, act_dim)), rewards=z, latents=np.zeros(0, np.int64),
            log_probs=z, com=np.zeros((0, 2)), lengths=np.zeros(0, np.int64), timesteps=np.zeros(0, np.int64),
            horizon=horizon,
        )


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    shape_table: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        total = sum(int(np.prod(d)) for _, d in self.shape_table)
        if total != len(self.values):
            raise ValueError(f"shape table describes {total} values, vector has {len(self.values)}")

    @staticmethod
    def size_of(shape_table) -> int:
        return sum(int(np.prod(d)) for _, d in shape_table)

    @classmethod
    def flatten(cls, arrays: dict[str, np.ndarray]) -> "ParamVector":
        table = tuple((k, tuple(np.shape(v))) for k, v in arrays.items())
        if not arrays:
            return cls(np.zeros(0), table)
        values = np.concatenate([np.ravel(np.asarray(v, dtype=np.float64)) for v in arrays.values()])
        return cls(values, table)

    def unflatten(self) -> dict[str, np.ndarray]:
        out, i = {}, 0
        for name, dims in self.shape_table:
            n = int(np.prod(dims))
            out[name] = self.values[i:i + n].reshape(dims)
            i += n
        return out


class RngStream:
    """Counter-based generator keyed by ``(seed, stream_id)``.

    Backed by Philox, whose output depends only on the key and counter, so a
    stream reproduces the same draws in any process and under any scheduling.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64)))

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, stream_key(self.stream_id, *ids))

    def __getattr__(self, name):
        return getattr(self.generator, name)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def stream_key(*parts: int) -> int:
    """Mix integers into one 64-bit stream id (splitmix64 chain)."""
    h = 0x9E3779B97F4A7C15
    mask = 0xFFFFFFFFFFFFFFFF
    for p in parts:
        h = (h ^ (int(p) & mask)) & mask
        h = (h + 0x9E3779B97F4A7C15) & mask
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        h = z ^ (z >> 31)
    return h


# named stream purposes, combined with iteration / rollout indices via stream_key
STREAM_ENV = 1
STREAM_POLICY_INIT = 2
STREAM_LATENT = 3
STREAM_MANAGER = 4
STREAM_ACTION = 5
STREAM_EVAL = 6


def discounted_return(rewards, gamma: float) -> np.ndarray:
    """Per-timestep suffix sums ``G_t = r_t + gamma * G_{t+1}``."""
    r = np.asarray(rewards, dtype=np.float64)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"discount must lie in [0, 1], got {gamma}")
    bad = np.nonzero(~np.isfinite(r))[0]
    if len(bad):
        raise ValueError(f"non-finite reward {r[bad[0]]} at timestep {bad[0]}")
    out = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def batch_returns(batch: TrajectoryBatch, gamma: float) -> np.ndarray:
    out = np.empty(batch.n_steps)
    for sl in batch.slices():
        out[sl] = discounted_return(batch.rewards[sl], gamma)
    return out


def normalize(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or len(v) < 2:
        raise ValueError(f"normalize needs at least 2 values, got {v.size}")
    std = v.std()
    if std < 1e-8:
        return np.zeros_like(v)
    return (v - v.mean()) / std
