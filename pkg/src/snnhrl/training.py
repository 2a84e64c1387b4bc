"""Pre-training and hierarchical training loops.

Rollouts are simulated in lock-step waves: one ``BatchEnv`` holds every
rollout of the wave, and each rollout draws its latent code, action noise and
(for gather) ball layout from its own ``RngStream`` keyed by
``(seed, purpose, iteration, rollout index)``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import mi
from .core import (STREAM_ACTION, STREAM_ENV, STREAM_LATENT, STREAM_MANAGER, STREAM_POLICY_INIT, RngStream,
                   TrajectoryBatch)
from .envs import BatchEnv, DynamicsConfig, GatherSpec, PretrainEnv, make_env
from .policy import GaussianMlpPolicy, ManagerPolicy, MlpSpec, SkillBank, SnnPolicy
from .trpo import LinearBaseline, StepDiagnostics, TrpoConfig, advantages, trpo_step
from .core import batch_returns


@dataclass
class PretrainConfig:
    K: int = 6
    integration: str = "bilinear"
    alpha_h: float = 0.01
    batch_size: int = 10_000
    horizon: int = 500
    n_iterations: int = 200
    seed: int = 0
    mesh_density: float = 10.0
    posterior_floor: float = 1e-3
    layer_sizes: tuple[int, ...] = (32, 32)
    trpo: TrpoConfig = field(default_factory=TrpoConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)

    def validate(self) -> None:
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        if self.batch_size < self.horizon:
            raise ValueError(f"batch_size ({self.batch_size}) must be >= horizon ({self.horizon})")
        if self.integration not in ("concat", "bilinear"):
            raise ValueError(f"integration must be concat or bilinear, got {self.integration!r}")
        self.mi_config().check(self.K)

    def mi_config(self) -> mi.MiConfig:
        return mi.MiConfig(self.alpha_h, self.posterior_floor, self.mesh_density)


@dataclass
class DownstreamConfig:
    task: str = "maze0"
    switch_time: int = 50
    batch_size: int = 20_000
    horizon: int = 400
    n_iterations: int = 300
    seed: int = 0
    skill_mode: str = "snn"
    skill_source: tuple[str, ...] = ()
    layer_sizes: tuple[int, ...] = (32, 32)
    skill_deterministic: bool = False
    eval_every: int = 10
    eval_episodes: int = 20
    trpo: TrpoConfig = field(default_factory=TrpoConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    gather: GatherSpec = field(default_factory=GatherSpec)

    def validate(self) -> None:
        if not 1 <= self.switch_time <= self.horizon:
            raise ValueError(f"need horizon ({self.horizon}) >= switch_time ({self.switch_time}) >= 1")
        if self.task not in ("maze0", "maze1", "maze2", "maze3", "gather"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.skill_mode not in ("snn", "multipolicy"):
            raise ValueError(f"skill_mode must be snn or multipolicy, got {self.skill_mode!r}")


# ---------------------------------------------------------------------------
# low-level rollouts
# ---------------------------------------------------------------------------

@dataclass
class _Wave:
    obs: np.ndarray      # (T, n, d) observation before each action
    actions: np.ndarray  # (T, n, a)
    rewards: np.ndarray  # (T, n)
    log_probs: np.ndarray
    com: np.ndarray      # (T, n, 2) position after each action
    latents: np.ndarray  # (T, n)
    lengths: np.ndarray  # (n,)
    terminated: np.ndarray


def _env_rngs(env: BatchEnv, rng: RngStream, iteration: int, ids) -> list[RngStream] | int:
    if env.kind == "gather":
        return [rng.child(STREAM_ENV, iteration, int(i)) for i in ids]
    return len(ids)


def _run_wave(env: BatchEnv, n: int, horizon: int, policy_fn, env_rngs) -> _Wave:
    obs = env.reset(env_rngs)
    d, a_dim = env.obs_dim, env.act_dim
    O = np.zeros((horizon, n, d))
    A = np.zeros((horizon, n, a_dim))
    R = np.zeros((horizon, n))
    L = np.zeros((horizon, n))
    C = np.zeros((horizon, n, 2))
    Z = np.zeros((horizon, n), dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    lengths = np.full(n, horizon, dtype=np.int64)
    terminated = np.zeros(n, dtype=bool)
    for t in range(horizon):
        a, logp, z = policy_fn(obs, t)
        O[t], A[t], L[t], Z[t] = obs, a, logp, z
        obs, r, done = env.step(a)
        R[t] = np.where(alive, r, 0.0)
        C[t] = env.com
        ended = alive & done
        lengths[ended] = t + 1
        terminated |= ended
        alive &= ~done
        if not alive.any():
            O, A, R, L, C, Z = (x[: t + 1] for x in (O, A, R, L, C, Z))
            break
    return _Wave(O, A, R, L, C, Z, lengths, terminated)


def _wave_to_batch(w: _Wave, horizon: int) -> TrajectoryBatch:
    n = len(w.lengths)
    rows = [np.arange(int(w.lengths[i])) for i in range(n)]
    cols = [np.full(int(w.lengths[i]), i) for i in range(n)]
    tt, ii = np.concatenate(rows), np.concatenate(cols)
    return TrajectoryBatch(
        obs=w.obs[tt, ii], actions=w.actions[tt, ii], rewards=w.rewards[tt, ii], latents=w.latents[tt, ii],
        log_probs=w.log_probs[tt, ii], com=w.com[tt, ii], lengths=w.lengths, timesteps=tt, horizon=horizon,
        terminated=w.terminated,
    )


def concat_batches(batches: list[TrajectoryBatch]) -> TrajectoryBatch:
    if len(batches) == 1:
        return batches[0]
    b0 = batches[0]
    cat = lambda name: np.concatenate([getattr(b, name) for b in batches])
    extras = {}
    for k in b0.extras:
        extras[k] = np.concatenate([b.extras[k] for b in batches])
    return TrajectoryBatch(
        obs=cat("obs"), actions=cat("actions"), rewards=cat("rewards"), latents=cat("latents"),
        log_probs=cat("log_probs"), com=cat("com"), lengths=cat("lengths"), timesteps=cat("timesteps"),
        horizon=b0.horizon, raw_rewards=cat("raw_rewards"), terminated=cat("terminated"), extras=extras,
    )


def _gaussian_actor(policy, latents_of_rollout, noise, agent_dim=None):
    """Actor sampling ``mean + std * noise`` with per-rollout pre-drawn noise."""

    def act(obs, t):
        o = obs if agent_dim is None else obs[:, :agent_dim]
        d = policy.dist_batch(o, latents_of_rollout)
        a = d.mean + d.std * noise[:, t]
        return a, d.log_prob(a), latents_of_rollout if latents_of_rollout is not None else np.zeros(len(o), np.int64)

    return act


def collect_lowlevel_batch(policy, env: BatchEnv, batch_size: int, horizon: int, rng: RngStream, iteration: int = 0,
                           K: int | None = None) -> TrajectoryBatch:
    """Rollouts of a Gaussian (or SNN) policy until at least ``batch_size`` steps.

    For an SNN each rollout draws its latent uniformly from [0, K) once and
    keeps it for the whole rollout.
    """
    batches, collected, next_id = [], 0, 0
    while collected < batch_size:
        n = math.ceil((batch_size - collected) / horizon)
        ids = range(next_id, next_id + n)
        next_id += n
        if K is not None:
            z = np.array([rng.child(STREAM_LATENT, iteration, i).integers(K) for i in ids], dtype=np.int64)
        else:
            z = None
        noise = np.stack([rng.child(STREAM_ACTION, iteration, i).standard_normal((horizon, env.act_dim))
                          for i in ids])
        wave = _run_wave(env, n, horizon, _gaussian_actor(policy, z, noise), _env_rngs(env, rng, iteration, ids))
        b = _wave_to_batch(wave, horizon)
        batches.append(b)
        collected += b.n_steps
    return concat_batches(batches)


def collect_pretrain_batch(policy: SnnPolicy, env: BatchEnv, config: PretrainConfig, rng: RngStream,
                           iteration: int = 0) -> TrajectoryBatch:
    if policy.obs_dim != env.obs_dim:
        raise ValueError(f"policy expects {policy.obs_dim}-dim observations, env provides {env.obs_dim}")
    return collect_lowlevel_batch(policy, env, config.batch_size, config.horizon, rng, iteration, K=policy.K)


# ---------------------------------------------------------------------------
# policy-gradient plumbing shared by both phases
# ---------------------------------------------------------------------------

@dataclass
class Learner:
    """Policy plus baseline; one call to ``update`` performs one TRPO iteration."""

    policy: object
    trpo: TrpoConfig
    baseline: LinearBaseline = field(default_factory=LinearBaseline)

    def update(self, batch: TrajectoryBatch) -> StepDiagnostics:
        # predict with the previous fit, then refit on this batch
        adv = advantages(batch, self.baseline, self.trpo.discount)
        self.baseline = self.baseline.fit(batch, batch_returns(batch, self.trpo.discount))
        batch.extras["advantages"] = adv
        _, diag = trpo_step(self.policy, batch, self.trpo, adv)
        return diag


def episode_returns(batch: TrajectoryBatch, raw: bool = True) -> np.ndarray:
    r = batch.raw_rewards if raw else batch.rewards
    return np.add.reduceat(r, batch.offsets[:-1]) if batch.n_steps else np.zeros(0)


# ---------------------------------------------------------------------------
# pre-training
# ---------------------------------------------------------------------------

def make_snn(config: PretrainConfig, obs_dim: int, act_dim: int = 2) -> SnnPolicy:
    return SnnPolicy(obs_dim, act_dim, config.K, config.integration,
                     MlpSpec(tuple(config.layer_sizes), act_dim), rng=RngStream(config.seed, STREAM_POLICY_INIT))


@dataclass
class PretrainMetrics:
    iteration: int
    mean_raw_reward: float
    mean_modified_reward: float
    mean_return: float
    per_latent_return: list[float]
    visited_cells: int
    grid_total: int
    diag: StepDiagnostics
    seconds: float = 0.0


def pretrain_iteration(learner: Learner, env: BatchEnv, config: PretrainConfig, rng: RngStream, iteration: int):
    """Collect, count, add the MI bonus, and take one TRPO step."""
    t0 = time.perf_counter()
    policy = learner.policy
    batch = collect_pretrain_batch(policy, env, config, rng, iteration)
    grid = mi.accumulate(batch, config.K, config.mesh_density)
    batch = mi.apply_mi_bonus(batch, grid, config.mi_config())
    diag = learner.update(batch)
    rets = episode_returns(batch)
    z_roll = batch.latents[batch.offsets[:-1]]
    per_latent = [float(rets[z_roll == k].mean()) if np.any(z_roll == k) else float("nan") for k in range(config.K)]
    metrics = PretrainMetrics(
        iteration=iteration, mean_raw_reward=float(batch.raw_rewards.mean()),
        mean_modified_reward=float(batch.rewards.mean()), mean_return=float(rets.mean()),
        per_latent_return=per_latent, visited_cells=len(grid.counts), grid_total=grid.total, diag=diag,
        seconds=time.perf_counter() - t0,
    )
    return policy, metrics, batch, grid


def pretrain(config: PretrainConfig, callback=None) -> tuple[SnnPolicy, list[PretrainMetrics]]:
    config.validate()
    env = PretrainEnv(config.dynamics, config.horizon)
    policy = make_snn(config, env.obs_dim, env.act_dim)
    learner = Learner(policy, config.trpo)
    rng = RngStream(config.seed)
    history = []
    for it in range(config.n_iterations):
        _, m, _, _ = pretrain_iteration(learner, env, config, rng, it)
        history.append(m)
        if callback is not None:
            callback(m, policy)
    return policy, history


def train_gaussian_policy(config: PretrainConfig, seed: int, callback=None) -> tuple[GaussianMlpPolicy, int]:
    """Plain TRPO on the speed reward; returns the policy and environment steps used."""
    env = PretrainEnv(config.dynamics, config.horizon)
    policy = GaussianMlpPolicy(env.obs_dim, env.act_dim, MlpSpec(tuple(config.layer_sizes), env.act_dim),
                               rng=RngStream(seed, STREAM_POLICY_INIT))
    learner = Learner(policy, config.trpo)
    rng = RngStream(seed)
    steps = 0
    for it in range(config.n_iterations):
        batch = collect_lowlevel_batch(policy, env, config.batch_size, config.horizon, rng, it)
        steps += batch.n_steps
        diag = learner.update(batch)
        if callback is not None:
            callback(it, batch, diag)
    return policy, steps


def train_multipolicy_skills(config: PretrainConfig, seeds=None, callback=None):
    """K independently trained Gaussian policies (the multi-policy skill bank).

    Returns ``(SkillBank, total_env_steps)``.
    """
    seeds = list(seeds) if seeds is not None else [config.seed * 1000 + k for k in range(config.K)]
    if len(seeds) != config.K:
        raise ValueError(f"need {config.K} seeds, got {len(seeds)}")
    pols, total = [], 0
    for s in seeds:
        p, n = train_gaussian_policy(config, s, callback)
        pols.append(p)
        total += n
    return SkillBank.from_policies(pols), total


# ---------------------------------------------------------------------------
# hierarchy
# ---------------------------------------------------------------------------

@dataclass
class HierBatch:
    """Manager-level batch plus the low-level record it was built from."""

    macro: TrajectoryBatch
    low_rewards: np.ndarray   # (n_low_steps,) environment rewards, rollout-major
    low_lengths: np.ndarray   # low-level steps per rollout
    low_com: np.ndarray
    low_latents: np.ndarray
    success: np.ndarray       # per rollout: terminated by the task
    episode_score: np.ndarray  # per rollout: undiscounted environment return


def hierarchical_rollouts(manager: ManagerPolicy | None, skills: SkillBank, env: BatchEnv, switch_time: int,
                          horizon: int, rng: RngStream, iteration: int = 0, n_rollouts: int = 1, first_id: int = 0,
                          skill_deterministic: bool = False) -> HierBatch:
    """Run ``n_rollouts`` hierarchical episodes in lock-step.

    At t = 0, T, 2T, ... the manager (or, if ``manager`` is None, a uniform
    choice) picks a skill from the full observation; the frozen skills act on
    the agent block for the next T steps.  Each window becomes one macro-step
    whose reward is the sum of the low-level rewards in it.
    """
    if switch_time < 1 or switch_time > horizon:
        raise ValueError(f"need horizon ({horizon}) >= switch_time ({switch_time}) >= 1")
    ids = range(first_id, first_id + n_rollouts)
    n_windows = math.ceil(horizon / switch_time)
    agent_dim = env.layout.agent_dim
    if skills.obs_dim != agent_dim:
        raise ValueError(f"skills expect {skills.obs_dim}-dim agent observations, env agent block has {agent_dim}")
    K = skills.K
    if manager is not None and manager.K != K:
        raise ValueError(f"manager chooses among {manager.K} skills, bank has {K}")
    u_mgr = np.stack([rng.child(STREAM_MANAGER, iteration, i).random(n_windows) for i in ids])
    noise_rngs = [rng.child(STREAM_ACTION, iteration, i) for i in ids]
    noise = np.stack([r.standard_normal((horizon, env.act_dim)) for r in noise_rngs])

    obs = env.reset(_env_rngs(env, rng, iteration, ids))
    n = n_rollouts
    M_obs = np.zeros((n_windows, n, env.obs_dim))
    M_z = np.zeros((n_windows, n), dtype=np.int64)
    M_logp = np.zeros((n_windows, n))
    M_r = np.zeros((n_windows, n))
    M_com = np.zeros((n_windows, n, 2))
    low_r = np.zeros((horizon, n))
    low_c = np.zeros((horizon, n, 2))
    low_z = np.zeros((horizon, n), dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    lengths = np.full(n, horizon, dtype=np.int64)
    success = np.zeros(n, dtype=bool)
    z = np.zeros(n, dtype=np.int64)

    class _Noise:
        # hands the pre-drawn per-rollout noise for step t to the skill bank
        def __init__(self, t):
            self.t = t

        def standard_normal(self, shape):
            return noise[:, self.t, :].reshape(shape)

    T_used = horizon
    for t in range(horizon):
        w = t // switch_time
        if t % switch_time == 0:
            if manager is None:
                z = np.minimum((u_mgr[:, w] * K).astype(np.int64), K - 1)
                logp = np.full(n, -np.log(K))
            else:
                p = manager.dist_batch(obs).probs
                z = np.minimum((u_mgr[:, w][:, None] > np.cumsum(p, axis=1)).sum(axis=1), K - 1)
                logp = np.log(p[np.arange(n), z])
            M_obs[w], M_z[w], M_logp[w], M_com[w] = obs, z, logp, env.com
        a = skills.act(obs[:, :agent_dim], z, _Noise(t), deterministic=skill_deterministic)
        obs, r, done = env.step(a)
        r = np.where(alive, r, 0.0)
        low_r[t], low_c[t], low_z[t] = r, env.com, z
        M_r[w] += r
        ended = alive & done
        lengths[ended] = t + 1
        success |= ended
        alive &= ~done
        if not alive.any():
            T_used = t + 1
            break

    n_macro = (lengths + switch_time - 1) // switch_time
    ww = np.concatenate([np.arange(k) for k in n_macro])
    ii = np.concatenate([np.full(k, i) for i, k in enumerate(n_macro)])
    macro = TrajectoryBatch(
        obs=M_obs[ww, ii], actions=M_z[ww, ii][:, None].astype(np.float64), rewards=M_r[ww, ii],
        latents=M_z[ww, ii], log_probs=M_logp[ww, ii], com=M_com[ww, ii], lengths=n_macro, timesteps=ww,
        horizon=n_windows, terminated=success.copy(),
    )
    tt = np.concatenate([np.arange(k) for k in lengths])
    jj = np.concatenate([np.full(k, i) for i, k in enumerate(lengths)])
    low_rewards = low_r[:T_used][tt, jj]
    score = np.add.reduceat(low_rewards, np.concatenate([[0], np.cumsum(lengths)[:-1]]))
    return HierBatch(macro, low_rewards, lengths, low_c[:T_used][tt, jj], low_z[:T_used][tt, jj], success, score)


def hierarchical_rollout(manager, skills, env, switch_time, horizon, rng, iteration=0, **kw) -> HierBatch:
    return hierarchical_rollouts(manager, skills, env, switch_time, horizon, rng, iteration, n_rollouts=1, **kw)


def collect_hier_batch(manager, skills, env, config: DownstreamConfig, rng, iteration) -> HierBatch:
    parts, collected, next_id = [], 0, 0
    while collected < config.batch_size:
        n = math.ceil((config.batch_size - collected) / config.horizon)
        hb = hierarchical_rollouts(manager, skills, env, config.switch_time, config.horizon, rng, iteration, n,
                                   next_id, config.skill_deterministic)
        next_id += n
        parts.append(hb)
        collected += int(hb.low_lengths.sum())
    if len(parts) == 1:
        return parts[0]
    return HierBatch(
        concat_batches([p.macro for p in parts]), np.concatenate([p.low_rewards for p in parts]),
        np.concatenate([p.low_lengths for p in parts]), np.concatenate([p.low_com for p in parts]),
        np.concatenate([p.low_latents for p in parts]), np.concatenate([p.success for p in parts]),
        np.concatenate([p.episode_score for p in parts]),
    )


@dataclass
class DownstreamMetrics:
    iteration: int
    mean_return: float
    success_rate: float
    mean_score: float
    low_steps: int
    diag: StepDiagnostics
    eval_success: float | None = None
    eval_score: float | None = None
    skill_params_unchanged: bool = True
    reward_conserved: bool = True


def make_manager(config: DownstreamConfig, obs_dim: int, K: int) -> ManagerPolicy:
    return ManagerPolicy(obs_dim, K, MlpSpec(tuple(config.layer_sizes), K),
                         rng=RngStream(config.seed, STREAM_POLICY_INIT))


def downstream_iteration(learner: Learner, skills: SkillBank, env: BatchEnv, config: DownstreamConfig, rng: RngStream,
                         iteration: int):
    before = skills.flat_params().copy()
    hb = collect_hier_batch(learner.policy, skills, env, config, rng, iteration)
    diag = learner.update(hb.macro)
    conserved = bool(hb.macro.rewards.sum() == hb.low_rewards.sum()) and all(
        hb.macro.rewards[sl].sum() == hb.low_rewards[lo:hi].sum()
        for sl, lo, hi in zip(hb.macro.slices(), np.concatenate([[0], np.cumsum(hb.low_lengths)[:-1]]),
                              np.cumsum(hb.low_lengths)))
    m = DownstreamMetrics(
        iteration=iteration, mean_return=float(episode_returns(hb.macro).mean()),
        success_rate=float(hb.success.mean()), mean_score=float(hb.episode_score.mean()),
        low_steps=int(hb.low_lengths.sum()), diag=diag,
        skill_params_unchanged=bool(np.array_equal(before, skills.flat_params())), reward_conserved=conserved,
    )
    return learner.policy, m, hb


def evaluate_manager(manager, skills, env, config: DownstreamConfig, rng: RngStream, n_episodes: int | None = None,
                     tag: int = 0):
    n = n_episodes or config.eval_episodes
    hb = hierarchical_rollouts(manager, skills, env, config.switch_time, config.horizon,
                               rng.child(0xE7A1, tag), 0, n, 0, config.skill_deterministic)
    return float(hb.success.mean()), float(hb.episode_score.mean())


def train_downstream(config: DownstreamConfig, skills: SkillBank, callback=None, stop_when=None):
    """Train a manager over frozen ``skills``; returns ``(manager, history)``.

    ``stop_when(metrics)`` may end training early once it returns True.
    """
    config.validate()
    env = make_env(config.task, config.dynamics, config.horizon, config.gather)
    manager = make_manager(config, env.obs_dim, skills.K)
    learner = Learner(manager, config.trpo)
    rng = RngStream(config.seed)
    history = []
    for it in range(config.n_iterations):
        _, m, _ = downstream_iteration(learner, skills, env, config, rng, it)
        if config.eval_every and (it + 1) % config.eval_every == 0:
            m.eval_success, m.eval_score = evaluate_manager(manager, skills, env, config, rng, tag=it)
        history.append(m)
        if callback is not None:
            callback(m, manager)
        if stop_when is not None and stop_when(m):
            break
    return manager, history


# ---------------------------------------------------------------------------
# flat baseline with the CoM speed reward added
# ---------------------------------------------------------------------------

def com_proxy_batch(policy, env: BatchEnv, config: DownstreamConfig, rng: RngStream, iteration: int):
    """Low-level batch whose reward is the task reward plus the speed norm."""
    batches, collected, next_id = [], 0, 0
    while collected < config.batch_size:
        n = math.ceil((config.batch_size - collected) / config.horizon)
        ids = range(next_id, next_id + n)
        next_id += n
        noise = np.stack([rng.child(STREAM_ACTION, iteration, i).standard_normal((config.horizon, env.act_dim))
                          for i in ids])
        actor = _gaussian_actor(policy, None, noise)
        speeds = []

        class _SpeedEnv:
            # wraps env.step to add the speed reward while keeping the task reward apart
            def __getattr__(self, name):
                return getattr(env, name)

            def step(self, a):
                obs, r, done = env.step(a)
                speeds.append(env.speed().copy())
                return obs, r, done

        wave = _run_wave(_SpeedEnv(), n, config.horizon, actor, _env_rngs(env, rng, iteration, ids))
        task_r = wave.rewards.copy()
        sp = np.array(speeds)[: len(task_r)]
        wave.rewards = task_r + sp * _alive_mask(wave.lengths, len(task_r))
        b = _wave_to_batch(wave, config.horizon)
        raw = _wave_to_batch(_Wave(wave.obs, wave.actions, task_r, wave.log_probs, wave.com, wave.latents,
                                   wave.lengths, wave.terminated), config.horizon)
        b.raw_rewards = raw.rewards
        batches.append(b)
        collected += b.n_steps
    return concat_batches(batches)


def _alive_mask(lengths, T):
    return (np.arange(T)[:, None] < lengths[None, :]).astype(np.float64)


def train_com_proxy(config: DownstreamConfig, callback=None):
    """Flat Gaussian policy on the task with the speed reward added."""
    config.validate()
    env = make_env(config.task, config.dynamics, config.horizon, config.gather)
    policy = GaussianMlpPolicy(env.obs_dim, env.act_dim, MlpSpec(tuple(config.layer_sizes), env.act_dim),
                               rng=RngStream(config.seed, STREAM_POLICY_INIT))
    learner = Learner(policy, config.trpo)
    rng = RngStream(config.seed)
    history = []
    for it in range(config.n_iterations):
        batch = com_proxy_batch(policy, env, config, rng, it)
        diag = learner.update(batch)
        success = float(batch.terminated.mean())
        score = float(episode_returns(batch, raw=True).mean())
        m = DownstreamMetrics(it, float(episode_returns(batch, raw=False).mean()), success, score, batch.n_steps, diag)
        if config.eval_every and (it + 1) % config.eval_every == 0:
            ev = com_proxy_batch(policy, env, DownstreamConfig(**{**config.__dict__,
                                                                 "batch_size": config.eval_episodes * config.horizon}),
                                 rng.child(0xE7A1, it), 0)
            m.eval_success = float(ev.terminated.mean())
            m.eval_score = float(episode_returns(ev, raw=True).mean())
        history.append(m)
        if callback is not None:
            callback(m, policy)
    return policy, history
