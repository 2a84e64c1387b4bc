import numpy as np
import pytest

from snnhrl.core import RngStream
from snnhrl.envs import DynamicsConfig, GatherSpec, PretrainEnv, make_env
from snnhrl.policy import GaussianMlpPolicy, ManagerPolicy, MlpSpec, SkillBank, SnnPolicy
from snnhrl.training import (DownstreamConfig, Learner, PretrainConfig, collect_hier_batch, collect_lowlevel_batch,
                             com_proxy_batch, downstream_iteration, episode_returns, hierarchical_rollouts,
                             make_manager, pretrain, pretrain_iteration, train_com_proxy, train_downstream,
                             train_multipolicy_skills)
from snnhrl.trpo import TrpoConfig

SMALL = dict(batch_size=400, horizon=100, layer_sizes=(8,))


def small_snn(K=3, seed=0):
    return SnnPolicy(6, 2, K=K, mlp=MlpSpec((8,)), rng=RngStream(seed))


def test_pretrain_config_validation():
    PretrainConfig().validate()
    for bad in (dict(K=1), dict(batch_size=10, horizon=100), dict(integration="sum"), dict(alpha_h=-1.0)):
        with pytest.raises(ValueError):
            PretrainConfig(**bad).validate()
    with pytest.raises(ValueError):
        DownstreamConfig(switch_time=0).validate()
    with pytest.raises(ValueError):
        DownstreamConfig(task="maze7").validate()


def test_lowlevel_batch_shape_and_latents():
    env = PretrainEnv(horizon=100)
    b = collect_lowlevel_batch(small_snn(), env, 450, 100, RngStream(1), 0, K=3)
    assert b.n_steps >= 450 and b.n_rollouts == 5
    for sl in b.slices():
        assert len(set(b.latents[sl].tolist())) == 1
        np.testing.assert_array_equal(b.timesteps[sl], np.arange(sl.stop - sl.start))
    np.testing.assert_allclose(b.log_probs, small_snn().log_likelihood(b.obs, b.latents, b.actions), atol=1e-12)


def test_lowlevel_batch_is_deterministic():
    env = PretrainEnv(horizon=50)
    a = collect_lowlevel_batch(small_snn(), env, 200, 50, RngStream(3), 7, K=3)
    b = collect_lowlevel_batch(small_snn(), env, 200, 50, RngStream(3), 7, K=3)
    assert a.obs.tobytes() == b.obs.tobytes() and a.actions.tobytes() == b.actions.tobytes()
    c = collect_lowlevel_batch(small_snn(), env, 200, 50, RngStream(3), 8, K=3)
    assert a.actions.tobytes() != c.actions.tobytes()


def test_pretrain_iteration_metrics():
    cfg = PretrainConfig(K=3, n_iterations=2, **SMALL)
    env = PretrainEnv(cfg.dynamics, cfg.horizon)
    learner = Learner(SnnPolicy(env.obs_dim, 2, 3, mlp=MlpSpec((8,))), cfg.trpo)
    _, m, batch, grid = pretrain_iteration(learner, env, cfg, RngStream(0), 0)
    assert grid.total == batch.n_steps == 400
    assert m.mean_modified_reward <= m.mean_raw_reward
    np.testing.assert_allclose(batch.rewards - batch.raw_rewards,
                               0.01 * np.log(np.maximum(1e-3, _posteriors(batch, grid))), atol=1e-12)
    assert len(m.per_latent_return) == 3


def _posteriors(batch, grid):
    from snnhrl.mi import batch_posteriors

    return batch_posteriors(grid, batch, 0.0)


def test_pretrain_is_deterministic_and_reports_history():
    cfg = PretrainConfig(K=3, n_iterations=3, seed=4, **SMALL)
    seen = []
    p1, h1 = pretrain(cfg, callback=lambda m, p: seen.append(m.iteration))
    p2, h2 = pretrain(cfg)
    assert seen == [0, 1, 2]
    assert p1.get_flat().tobytes() == p2.get_flat().tobytes()
    assert [m.mean_return for m in h1] == [m.mean_return for m in h2]


def test_multipolicy_bank():
    cfg = PretrainConfig(K=2, n_iterations=1, **SMALL)
    bank, steps = train_multipolicy_skills(cfg)
    assert bank.mode == "multipolicy" and bank.K == 2 and steps == 2 * 400
    with pytest.raises(ValueError):
        train_multipolicy_skills(cfg, seeds=[1])


def _maze_batch(manager, T=20, horizon=120, n=6, seed=0):
    env = make_env("maze0", horizon=horizon)
    bank = SkillBank.from_snn(small_snn(K=4))
    return hierarchical_rollouts(manager, bank, env, T, horizon, RngStream(seed), 0, n), bank, env


def test_hierarchical_windows_and_conservation():
    hb, bank, env = _maze_batch(None)
    macro = hb.macro
    offsets = np.concatenate([[0], np.cumsum(hb.low_lengths)])
    for i, sl in enumerate(macro.slices()):
        low = hb.low_rewards[offsets[i]:offsets[i + 1]]
        zs = hb.low_latents[offsets[i]:offsets[i + 1]]
        assert sl.stop - sl.start == -(-hb.low_lengths[i] // 20)
        for w in range(sl.stop - sl.start):
            window = slice(20 * w, 20 * (w + 1))
            assert macro.rewards[sl.start + w] == low[window].sum()
            assert np.all(zs[window] == macro.latents[sl.start + w])
        assert macro.rewards[sl].sum() == hb.episode_score[i]
    np.testing.assert_allclose(macro.log_probs, -np.log(4))


def test_hierarchical_rollout_errors():
    env = make_env("maze0", horizon=100)
    bank = SkillBank.from_snn(small_snn(K=4))
    with pytest.raises(ValueError):
        hierarchical_rollouts(None, bank, env, 0, 100, RngStream(0))
    with pytest.raises(ValueError):
        hierarchical_rollouts(ManagerPolicy(env.obs_dim, K=3), bank, env, 10, 100, RngStream(0))
    with pytest.raises(ValueError):
        hierarchical_rollouts(None, SkillBank.from_snn(SnnPolicy(5, 2, K=4)), env, 10, 100, RngStream(0))


def test_manager_log_probs_recorded():
    env = make_env("maze0", horizon=60)
    m = ManagerPolicy(env.obs_dim, K=4, mlp=MlpSpec((8,)), rng=RngStream(2))
    hb, _, _ = _maze_batch(m, horizon=60)
    np.testing.assert_allclose(hb.macro.log_probs, m.log_likelihood(hb.macro.obs, None, hb.macro.actions),
                               atol=1e-12)


def test_downstream_iteration_freezes_skills():
    cfg = DownstreamConfig(task="maze0", switch_time=20, batch_size=300, horizon=100, layer_sizes=(8,))
    env = make_env("maze0", horizon=100)
    bank = SkillBank.from_snn(small_snn(K=4))
    before = bank.flat_params().copy()
    learner = Learner(make_manager(cfg, env.obs_dim, 4), cfg.trpo)
    for it in range(2):
        _, m, hb = downstream_iteration(learner, bank, env, cfg, RngStream(0), it)
        assert m.skill_params_unchanged and m.reward_conserved
    assert bank.flat_params().tobytes() == before.tobytes()


def test_train_downstream_gather_runs():
    cfg = DownstreamConfig(task="gather", switch_time=10, batch_size=200, horizon=50, n_iterations=2,
                           layer_sizes=(8,), eval_every=1, eval_episodes=3, gather=GatherSpec())
    bank = SkillBank.from_snn(small_snn(K=3))
    manager, hist = train_downstream(cfg, bank)
    assert len(hist) == 2 and hist[-1].eval_success is not None
    assert all(m.skill_params_unchanged and m.reward_conserved for m in hist)
    stopped = train_downstream(cfg, bank, stop_when=lambda m: True)[1]
    assert len(stopped) == 1


def test_com_proxy_rewards():
    cfg = DownstreamConfig(task="maze0", batch_size=200, horizon=100, layer_sizes=(8,))
    env = make_env("maze0", horizon=100)
    pol = GaussianMlpPolicy(env.obs_dim, 2, MlpSpec((8,)))
    b = com_proxy_batch(pol, env, cfg, RngStream(0), 0)
    # replay the first rollout's actions and read the speed after each step
    replay = make_env("maze0", horizon=100)
    replay.reset(1)
    speed = []
    for a in b.actions[:100]:
        replay.step(a[None])
        speed.append(replay.speed()[0])
    np.testing.assert_array_equal((b.rewards - b.raw_rewards)[:100], speed)
    assert np.all(np.isin(b.raw_rewards, (0.0, 1.0)))
    _, hist = train_com_proxy(DownstreamConfig(task="maze0", batch_size=200, horizon=100, n_iterations=1,
                                               layer_sizes=(8,), eval_every=1, eval_episodes=2))
    assert hist[0].eval_success is not None


def test_episode_returns_raw_vs_modified():
    env = PretrainEnv(horizon=20)
    b = collect_lowlevel_batch(small_snn(), env, 40, 20, RngStream(0), 0, K=3)
    b2 = b.with_rewards(b.rewards - 1.0)
    np.testing.assert_allclose(episode_returns(b2, raw=True), episode_returns(b))
    np.testing.assert_allclose(episode_returns(b2, raw=False), episode_returns(b) - 20)
