import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from snnhrl.core import RngStream
from snnhrl.policy import (CategoricalDist, CheckpointError, GaussianActionDist, GaussianMlpPolicy, ManagerPolicy,
                           MlpSpec, SkillBank, SnnPolicy, dumps_policy, embed_bilinear, embed_concat, forward,
                           grad_log_prob, kl, load_policy, loads_policy, log_prob, manager_forward, one_hot,
                           save_policy)


def test_embeddings():
    np.testing.assert_array_equal(embed_concat([1, 2], [0, 1, 0]), [1, 2, 0, 1, 0])
    np.testing.assert_array_equal(embed_concat([], [1, 0]), [1, 0])
    assert len(embed_concat(np.zeros(13), one_hot(2, 6))) == 19
    np.testing.assert_array_equal(embed_bilinear([1, 2], [0, 1, 0]), [0, 1, 0, 0, 2, 0])
    np.testing.assert_array_equal(embed_bilinear([3], [1, 0]), [3, 0])
    assert len(embed_bilinear(np.zeros(13), one_hot(5, 6))) == 78
    for bad in ([0, 0, 0], [1, 1, 0], [0.5, 0.5]):
        with pytest.raises(ValueError):
            embed_concat([1.0], bad)
        with pytest.raises(ValueError):
            embed_bilinear([1.0], bad)


def _oracle_mean(policy: SnnPolicy, obs, z):
    """Straight-line MLP on the explicit embedding."""
    p = policy.param_vector().unflatten()
    x = policy.embed(obs, z)
    for i in range(len(policy.mlp.layer_sizes)):
        x = np.tanh(x @ p[f"W{i}"] + p[f"b{i}"])
    i = len(policy.mlp.layer_sizes)
    return x @ p[f"W{i}"] + p[f"b{i}"]


@pytest.mark.parametrize("integration", ["concat", "bilinear"])
def test_forward_matches_oracle(integration):
    pol = SnnPolicy(5, 2, K=4, integration=integration, mlp=MlpSpec((8, 8)), rng=RngStream(3))
    pol.set_flat(pol.get_flat() + RngStream(4).normal(scale=0.3, size=pol.n_params))
    assert pol.input_dim == (5 + 4 if integration == "concat" else 20)
    r = RngStream(5)
    for _ in range(10):
        obs, z = r.normal(size=5), int(r.integers(4))
        np.testing.assert_allclose(forward(pol, obs, z).mean, _oracle_mean(pol, obs, z), rtol=0, atol=1e-12)


def test_zero_network_and_dimension_check():
    pol = SnnPolicy(3, 2, K=3)
    pol.set_flat(np.zeros(pol.n_params))
    np.testing.assert_array_equal(forward(pol, [5.0, -1.0, 2.0], 1).mean, [0.0, 0.0])
    with pytest.raises(ValueError):
        forward(pol, np.zeros(4), 0)
    with pytest.raises(ValueError):
        forward(pol, np.zeros(3), 3)


def test_bilinear_equals_per_skill_mlp():
    pol = SnnPolicy(4, 2, K=3, integration="bilinear", mlp=MlpSpec((6,)), rng=RngStream(9))
    p = pol.param_vector().unflatten()
    obs = RngStream(1).normal(size=(7, 4))
    for z in range(3):
        skill = GaussianMlpPolicy(4, 2, MlpSpec((6,)))
        skill.set_flat(np.concatenate([p["W0"][z::3].ravel(), p["b0"], p["W1"].ravel(), p["b1"], p["log_std"]]))
        np.testing.assert_array_equal(pol.forward(obs, z).mean, skill.forward(obs).mean)


def test_log_prob_examples():
    d = GaussianActionDist(np.zeros(1), np.zeros(1))
    assert abs(log_prob(d, [0.0]) - (-0.9189385)) < 1e-7
    assert abs(log_prob(d, [1.0]) - (-1.4189385)) < 1e-7
    with pytest.raises(ValueError):
        log_prob(d, [np.nan])
    with pytest.raises(ValueError):
        GaussianActionDist(np.array([np.inf]), np.zeros(1))


def test_log_prob_three_dims_against_quadrature():
    r = RngStream(2)
    mu, ls = r.normal(size=3), r.normal(scale=0.5, size=3)
    d = GaussianActionDist(mu, ls)
    a = r.normal(size=3)
    total = 0.0
    for i in range(3):
        s = math.exp(ls[i])
        grid = np.linspace(mu[i] - 12 * s, mu[i] + 12 * s, 200001)
        unnorm = np.exp(-0.5 * ((grid - mu[i]) / s) ** 2)
        Z = np.trapezoid(unnorm, grid)
        total += -0.5 * ((a[i] - mu[i]) / s) ** 2 - math.log(Z)
    assert abs(log_prob(d, a) - total) < 1e-10


@given(st.floats(-5, 5), st.floats(-2, 2))
def test_log_prob_integrates_to_one(mu, ls):
    d = GaussianActionDist(np.array([mu]), np.array([ls]))
    s = math.exp(ls)
    grid = np.linspace(mu - 8 * s, mu + 8 * s, 20001)
    mass = np.trapezoid(np.exp(d.log_prob(grid[:, None])), grid)
    assert 1 - 1e-6 <= mass <= 1 + 1e-6


def test_kl_examples():
    a = GaussianActionDist(np.zeros(1), np.zeros(1))
    assert kl(a, a) == 0.0
    assert kl(a, GaussianActionDist(np.ones(1), np.zeros(1))) == 0.5
    b = GaussianActionDist(np.zeros(1), np.log([2.0]))
    expected = math.log(2) + 1 / 8 - 1 / 2
    assert abs(kl(a, b) - expected) < 1e-12
    x = RngStream(0).standard_normal(1_000_000)
    mc = np.mean(a.log_prob(x[:, None]) - b.log_prob(x[:, None]))
    assert abs(mc - kl(a, b)) < 1e-2


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_kl_nonnegative(seed, dim):
    r = np.random.default_rng(seed)
    p = GaussianActionDist(r.normal(size=dim), r.normal(scale=0.7, size=dim))
    q = GaussianActionDist(r.normal(size=dim), r.normal(scale=0.7, size=dim))
    assert kl(p, p) == 0.0
    assert kl(p, q) >= 0.0


def test_manager_forward_examples():
    m = ManagerPolicy(4, K=6, mlp=MlpSpec((8,)))
    m.set_flat(np.zeros(m.n_params))
    np.testing.assert_allclose(manager_forward(m, np.ones(4)), np.full(6, 1 / 6), rtol=0, atol=1e-15)
    logits = RngStream(1).normal(size=(5, 6))
    np.testing.assert_allclose(CategoricalDist.from_logits(logits).probs,
                               CategoricalDist.from_logits(logits + 7.3).probs, rtol=0, atol=1e-12)
    spike = np.zeros(6)
    spike[2] = 10.0
    p = CategoricalDist.from_logits(spike).probs
    assert p[2] > 0.99 and abs(p[2] - math.exp(10) / (math.exp(10) + 5)) < 1e-14
    with pytest.raises(ValueError):
        manager_forward(m, np.ones(5))


@given(st.integers(0, 2 ** 32 - 1))
def test_manager_probabilities_sum_to_one(seed):
    m = ManagerPolicy(3, K=5, mlp=MlpSpec((4,)), rng=RngStream(seed))
    m.set_flat(m.get_flat() * 10)
    p = manager_forward(m, np.random.default_rng(seed).normal(scale=5, size=(6, 3)))
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-10)


def _fd_grad(pol, obs, z, a, h=1e-6):
    theta = pol.get_flat()
    g = np.empty_like(theta)
    for i in range(len(theta)):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (pol.log_likelihood(obs[None], np.array([z]), a[None], tp)[0]
                - pol.log_likelihood(obs[None], np.array([z]), a[None], tm)[0]) / (2 * h)
    return g


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["concat", "bilinear"]))
def test_grad_log_prob_matches_finite_differences(seed, integration):
    r = RngStream(seed)
    pol = SnnPolicy(3, 2, K=3, integration=integration, mlp=MlpSpec((8, 8)), rng=r)
    pol.set_flat(pol.get_flat() + r.normal(scale=0.2, size=pol.n_params))
    obs, z, a = r.normal(size=3), int(r.integers(3)), r.normal(size=2)
    g = grad_log_prob(pol, obs, z, a).values
    fd = _fd_grad(pol, obs, z, a)
    err = np.abs(g - fd) / np.maximum(1e-3, np.abs(fd))
    assert err.max() < 1e-4


def test_grad_special_cases():
    pol = SnnPolicy(3, 2, K=3, integration="bilinear", mlp=MlpSpec((8, 8)), rng=RngStream(1))
    obs = np.array([0.3, -1.0, 2.0])
    mu = forward(pol, obs, 1).mean
    g = grad_log_prob(pol, obs, 1, mu).unflatten()
    np.testing.assert_array_equal(g["log_std"], [-1.0, -1.0])
    g = grad_log_prob(pol, obs, 1, mu + 0.5).unflatten()
    inactive = np.delete(np.arange(9), np.arange(1, 9, 3))
    assert np.all(g["W0"][inactive] == 0.0)
    assert np.any(g["W0"][1::3] != 0.0)


def test_score_function_identity():
    pol = SnnPolicy(3, 2, K=2, mlp=MlpSpec((8,)), rng=RngStream(6))
    obs = np.array([0.5, -0.2, 1.0])
    n = 100_000
    d = pol.forward(obs, 0)
    acts = d.mean + d.std * RngStream(7).standard_normal((n, 2))
    obs_b = np.broadcast_to(obs, (n, 3))
    lat = np.zeros(n, dtype=np.int64)
    # per-sample gradients through the batched gradient with one-hot weights on chunks
    mean_g = pol.grad_weighted_log_prob(obs_b, lat, acts, np.full(n, 1.0 / n))
    chunks = [pol.grad_weighted_log_prob(obs_b[i::100], lat[i::100], acts[i::100], np.full(n // 100, 100.0 / n))
              for i in range(100)]
    se = np.std(chunks, axis=0) / math.sqrt(100)
    assert np.linalg.norm(mean_g) < 3 * np.linalg.norm(se)


def _fd_check_fvp(pol, obs, lat):
    theta = pol.get_flat()
    old = pol.dist_batch(obs, lat, theta)
    v = RngStream(3).normal(size=len(theta))
    Hv = pol.fvp(obs, lat, v, theta)
    h = 1e-4

    def grad_kl(t):
        # gradient of mean KL(old || new) by central differences, only along v
        return (pol.mean_kl(obs, lat, old, t + h * v) - pol.mean_kl(obs, lat, old, t - h * v)) / (2 * h)

    # second directional derivative v^T H v
    vHv = (pol.mean_kl(obs, lat, old, theta + h * v) - 2 * pol.mean_kl(obs, lat, old, theta)
           + pol.mean_kl(obs, lat, old, theta - h * v)) / h ** 2
    assert abs(v @ Hv - vHv) / abs(vHv) < 1e-3
    assert abs(grad_kl(theta)) < 1e-6


def test_fisher_vector_products():
    r = RngStream(8)
    obs = r.normal(size=(50, 4))
    lat = r.integers(3, size=50)
    _fd_check_fvp(SnnPolicy(4, 2, K=3, mlp=MlpSpec((8,)), rng=r), obs, lat)
    _fd_check_fvp(ManagerPolicy(4, K=3, mlp=MlpSpec((8,)), rng=r), obs, lat)


def test_manager_gradients_with_column_actions():
    r = RngStream(4)
    m = ManagerPolicy(3, K=4, mlp=MlpSpec((5,)), rng=r)
    obs = r.normal(size=(6, 3))
    acts = r.integers(4, size=6).astype(float)[:, None]
    w = r.normal(size=6)
    g = m.grad_weighted_log_prob(obs, None, acts, w)
    theta, h = m.get_flat(), 1e-6
    fd = np.array([(w @ m.log_likelihood(obs, None, acts, theta + h * e)
                    - w @ m.log_likelihood(obs, None, acts, theta - h * e)) / (2 * h) for e in np.eye(len(theta))])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("make", [
    lambda: SnnPolicy(5, 2, K=6, integration="bilinear", rng=RngStream(1)),
    lambda: SnnPolicy(5, 2, K=4, integration="concat", mlp=MlpSpec((7,)), rng=RngStream(2)),
    lambda: GaussianMlpPolicy(5, 2, rng=RngStream(3)),
    lambda: ManagerPolicy(9, K=6, rng=RngStream(4)),
])
def test_checkpoint_round_trip(tmp_path, make):
    pol = make()
    save_policy(pol, tmp_path / "p.ckpt")
    back = load_policy(tmp_path / "p.ckpt")
    assert back.descriptor() == pol.descriptor()
    assert back.get_flat().tobytes() == pol.get_flat().tobytes()
    assert dumps_policy(back) == dumps_policy(pol)


def test_checkpoint_errors():
    data = dumps_policy(SnnPolicy(3, 2, K=2))
    with pytest.raises(CheckpointError):
        loads_policy(b"garbage!" + data[8:])
    bad_version = data[:8] + (2).to_bytes(2, "little") + data[10:]
    with pytest.raises(CheckpointError):
        loads_policy(bad_version)


def test_skill_bank_modes(tmp_path):
    snn = SnnPolicy(4, 2, K=3, rng=RngStream(1))
    bank = SkillBank.from_snn(snn)
    assert bank.K == 3 and bank.obs_dim == 4
    obs = RngStream(2).normal(size=(5, 4))
    z = np.array([0, 1, 2, 0, 1])
    det = bank.act(obs, z, RngStream(3), deterministic=True)
    np.testing.assert_allclose(det[1], snn.forward(obs[1], 1).mean, rtol=0, atol=1e-12)
    multi = SkillBank.from_policies([GaussianMlpPolicy(4, 2, rng=RngStream(k)) for k in range(3)])
    det = multi.act(obs, z, RngStream(3), deterministic=True)
    np.testing.assert_allclose(det[2], multi.policies[2].forward(obs[2:3]).mean[0], rtol=0, atol=1e-12)
    multi.save(tmp_path / "skills")
    back = SkillBank.load(tmp_path / "skills")
    assert back.mode == "multipolicy" and back.K == 3
    assert back.flat_params().tobytes() == multi.flat_params().tobytes()
