import numpy as np
import pytest
from hypothesis import given, strategies as st

from snnhrl.core import RngStream, TrajectoryBatch, discounted_return, normalize
from snnhrl.policy import GaussianMlpPolicy, MlpSpec, SnnPolicy
from snnhrl.trpo import (LinearBaseline, ProgressLog, StepDiagnostics, TrpoConfig, advantages, baseline_features,
                         conjugate_gradient, diagnostics_row, fisher_vector_product, fit_baseline, ridge_mask,
                         surrogate_grad, surrogate_loss, trpo_step)


def random_batch(policy, n_rollouts=5, length=12, seed=0, K=None):
    """Rollout-shaped batch with actions sampled from ``policy`` on random observations."""
    r = RngStream(seed)
    n = n_rollouts * length
    obs = r.normal(size=(n, policy.obs_dim))
    lat = np.repeat(r.integers(K, size=n_rollouts), length) if K else np.zeros(n, np.int64)
    acts, logp = policy.sample(obs, lat, r)
    return TrajectoryBatch(obs, acts, r.normal(size=n), lat, logp, np.zeros((n, 2)),
                           np.full(n_rollouts, length, np.int64), np.tile(np.arange(length), n_rollouts), length)


def test_config_validation():
    with pytest.raises(ValueError):
        TrpoConfig(step_kl=0)
    with pytest.raises(ValueError):
        TrpoConfig(discount=1.2)
    with pytest.raises(ValueError):
        TrpoConfig(cg_iters=0)


def test_baseline_constant_and_in_span():
    pol = GaussianMlpPolicy(3)
    b = random_batch(pol, 4, 20)
    b = b.with_rewards(np.zeros(b.n_steps))
    bl = LinearBaseline().fit(b, np.full(b.n_steps, 7.0))
    assert np.max(np.abs(bl.predict(b) - 7.0)) < 1e-6
    single = random_batch(pol, 1, 50, seed=3).with_rewards(np.ones(50))
    bl = fit_baseline(LinearBaseline(), single, gamma=1.0)
    assert np.max(np.abs(bl.predict(single) - np.arange(50, 0, -1.0))) < 1e-8


def test_baseline_matches_normal_equations():
    pol = GaussianMlpPolicy(4)
    b = random_batch(pol, 6, 15, seed=9)
    y = RngStream(1).normal(size=b.n_steps)
    bl = LinearBaseline().fit(b, y)
    X = baseline_features(b.obs, b.timesteps, b.horizon)
    w = np.linalg.solve(X.T @ X + 1e-5 * np.diag(ridge_mask(4)), X.T @ y)
    np.testing.assert_allclose(bl.coefficients, w, rtol=0, atol=1e-8)


def test_baseline_degenerate_features_not_rejected():
    pol = GaussianMlpPolicy(2)
    b = random_batch(pol, 1, 1)
    bl = LinearBaseline().fit(b, np.array([3.0]))
    assert np.all(np.isfinite(bl.predict(b)))
    with pytest.raises(ValueError):
        LinearBaseline().fit(_empty(), np.zeros(0))


def _empty():
    return TrajectoryBatch(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0, np.int64), np.zeros(0),
                           np.zeros((0, 2)), np.zeros(0, np.int64), np.zeros(0, np.int64), 1)


def test_advantages_examples():
    pol = GaussianMlpPolicy(3)
    b = random_batch(pol, 3, 10, seed=2)
    zero = LinearBaseline()
    rets = np.concatenate([discounted_return(b.rewards[s], 0.99) for s in b.slices()])
    np.testing.assert_allclose(advantages(b, zero, 0.99), normalize(rets), rtol=0, atol=1e-12)
    perfect = LinearBaseline().fit(b, rets)
    # rewards whose discounted returns equal the baseline's predictions exactly
    pred = perfect.predict(b)
    rewards = np.concatenate([np.append(pred[s][:-1] - 0.99 * pred[s][1:], pred[s][-1]) for s in b.slices()])
    pb = b.with_rewards(rewards)
    raw = advantages(pb, perfect, 0.99, normalized=False)
    assert np.max(np.abs(raw)) < 1e-9
    np.testing.assert_array_equal(advantages(pb.with_rewards(np.zeros(pb.n_steps)), LinearBaseline(), 0.99),
                                  np.zeros(pb.n_steps))


@given(st.integers(0, 2 ** 32 - 1))
def test_advantages_two_pass_oracle(seed):
    pol = GaussianMlpPolicy(2)
    b = random_batch(pol, 4, 7, seed=seed)
    bl = LinearBaseline().fit(b, RngStream(seed).normal(size=b.n_steps))
    out = []
    for s in b.slices():
        r = b.rewards[s]
        ret = [sum(0.9 ** (k - t) * r[k] for k in range(t, len(r))) for t in range(len(r))]
        out.extend(ret)
    raw = np.array(out) - bl.predict(b)
    np.testing.assert_allclose(advantages(b, bl, 0.9), (raw - raw.mean()) / raw.std(), rtol=0, atol=1e-9)


def test_surrogate_at_old_parameters():
    pol = SnnPolicy(3, 2, K=2, mlp=MlpSpec((8,)), rng=RngStream(1))
    b = random_batch(pol, 5, 10, K=2)
    adv = normalize(b.rewards)
    assert abs(surrogate_loss(pol, b.log_probs, b, adv)) < 1e-12
    zeros = np.zeros(b.n_steps)
    assert surrogate_loss(pol, b.log_probs, b, zeros) == 0.0
    assert np.linalg.norm(surrogate_grad(pol, b.log_probs, b, zeros)) < 1e-12


def test_surrogate_gradient_finite_differences():
    pol = SnnPolicy(3, 2, K=2, mlp=MlpSpec((8,)), rng=RngStream(2))
    b = random_batch(pol, 5, 8, K=2, seed=4)
    adv = normalize(b.rewards)
    theta = pol.get_flat() + RngStream(3).normal(scale=0.05, size=pol.n_params)
    g = surrogate_grad(pol, b.log_probs, b, adv, theta)
    h = 1e-6
    fd = np.array([(surrogate_loss(pol, b.log_probs, b, adv, theta + h * e)
                    - surrogate_loss(pol, b.log_probs, b, adv, theta - h * e)) / (2 * h)
                   for e in np.eye(len(theta))])
    err = np.abs(g - fd) / np.maximum(1e-4, np.abs(fd))
    assert err.max() < 1e-4


def test_surrogate_rejects_huge_ratio():
    pol = GaussianMlpPolicy(2, mlp=MlpSpec((4,)))
    b = random_batch(pol, 1, 5)
    with pytest.raises(FloatingPointError):
        surrogate_loss(pol, b.log_probs - 100.0, b, np.ones(5))


def _dense_kl_hessian(pol, b):
    theta = pol.get_flat()
    old = pol.dist_batch(b.obs, b.latents, theta)
    n, h = len(theta), 1e-4
    f = lambda t: pol.mean_kl(b.obs, b.latents, old, t)  # noqa: E731
    H = np.empty((n, n))
    E = np.eye(n) * h
    for i in range(n):
        for j in range(i, n):
            H[i, j] = H[j, i] = (f(theta + E[i] + E[j]) - f(theta + E[i] - E[j]) - f(theta - E[i] + E[j])
                                 + f(theta - E[i] - E[j])) / (4 * h * h)
    return H


def test_fisher_vector_product_against_dense_hessian():
    pol = SnnPolicy(2, 2, K=2, integration="concat", mlp=MlpSpec((6,)), rng=RngStream(5))
    assert pol.n_params <= 200
    b = random_batch(pol, 4, 6, K=2, seed=5)
    H = _dense_kl_hessian(pol, b)
    r = RngStream(6)
    for _ in range(3):
        v = r.normal(size=pol.n_params)
        fvp = fisher_vector_product(pol, b, v)
        assert np.linalg.norm(fvp - H @ v) / np.linalg.norm(H @ v) < 1e-5
    np.testing.assert_array_equal(fisher_vector_product(pol, b, np.zeros(pol.n_params)), 0.0)
    with pytest.raises(ValueError):
        fisher_vector_product(pol, b, np.zeros(pol.n_params + 1))


def test_fisher_vector_product_psd_bound():
    pol = SnnPolicy(3, 2, K=3, mlp=MlpSpec((8,)), rng=RngStream(7))
    b = random_batch(pol, 5, 10, K=3)
    r = RngStream(8)
    for _ in range(100):
        v = r.normal(size=pol.n_params)
        assert v @ fisher_vector_product(pol, b, v, 1e-5) >= 1e-5 * (v @ v) * (1 - 1e-12)


def test_conjugate_gradient_examples():
    b = np.array([1.0, -2.0, 3.0])
    x, res = conjugate_gradient(lambda v: v, b, iters=1)
    np.testing.assert_array_equal(x, b)
    x, _ = conjugate_gradient(lambda v: np.array([2.0, 4.0]) * v, np.array([2.0, 4.0]))
    np.testing.assert_allclose(x, [1.0, 1.0], rtol=0, atol=1e-14)
    with pytest.raises(FloatingPointError):
        conjugate_gradient(lambda v: np.full_like(v, np.nan), b)


@given(st.integers(0, 2 ** 32 - 1))
def test_conjugate_gradient_dense_oracle(seed):
    r = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(r.normal(size=(10, 10)))
    A = Q @ np.diag(r.uniform(1.0, 3.0, 10)) @ Q.T
    b = r.normal(size=10)
    x, res = conjugate_gradient(lambda v: A @ v, b, iters=10, tol=0.0)
    ref = np.linalg.solve(A, b)
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-8


def test_conjugate_gradient_residual_large_system():
    r = np.random.default_rng(0)
    n = 500
    M = r.normal(size=(n, n)) / np.sqrt(n)
    A = np.eye(n) + 0.1 * (M @ M.T)
    b = r.normal(size=n)
    x, _ = conjugate_gradient(lambda v: A @ v, b, iters=50, tol=0.0)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-6


def test_trpo_step_zero_advantages_is_noop():
    pol = SnnPolicy(3, 2, K=2, mlp=MlpSpec((8,)), rng=RngStream(1))
    b = random_batch(pol, 3, 5, K=2)
    before = pol.get_flat().copy()
    _, diag = trpo_step(pol, b, TrpoConfig(), adv=np.zeros(b.n_steps))
    assert not diag.accepted
    np.testing.assert_array_equal(pol.get_flat(), before)


@given(st.integers(0, 2 ** 32 - 1))
def test_trpo_step_contracts(seed):
    pol = SnnPolicy(3, 2, K=2, mlp=MlpSpec((8,)), rng=RngStream(seed))
    b = random_batch(pol, 4, 10, K=2, seed=seed)
    adv = normalize(b.rewards)
    old = pol.dist_batch(b.obs, b.latents)
    theta0 = pol.get_flat().copy()
    twin = SnnPolicy(3, 2, K=2, mlp=MlpSpec((8,)))
    twin.set_flat(theta0)
    _, diag = trpo_step(pol, b, TrpoConfig(), adv=adv)
    _, diag2 = trpo_step(twin, b, TrpoConfig(), adv=adv)
    assert pol.get_flat().tobytes() == twin.get_flat().tobytes() and diag == diag2
    if diag.accepted:
        assert pol.mean_kl(b.obs, b.latents, old) <= 0.01
        assert diag.surrogate_after > diag.surrogate_before
    else:
        np.testing.assert_array_equal(pol.get_flat(), theta0)


def test_trpo_bandit_converges():
    """Gaussian mean with fixed sigma and reward -a^2 moves from 2 to 0."""
    pol = GaussianMlpPolicy(1, act_dim=1, mlp=MlpSpec((1,)))
    p = pol.param_vector().unflatten()
    p["W0"][:] = 0.0
    p["b0"][:] = 0.0
    p["W1"][:] = 0.0
    p["b1"][:] = 2.0
    p["log_std"][:] = np.log(0.5)
    pol.set_flat(np.concatenate([p[k].ravel() for k in ("W0", "b0", "W1", "b1", "log_std")]))
    free = np.zeros(pol.n_params)
    free[3] = 1.0  # only the output bias (the mean) is trained

    class Bandit:
        obs_dim = 1

        def __getattr__(self, name):
            return getattr(pol, name)

        def grad_weighted_log_prob(self, *a, **kw):
            return pol.grad_weighted_log_prob(*a, **kw) * free

        def fvp(self, obs, lat, v, theta=None):
            return pol.fvp(obs, lat, v * free, theta) * free + (1 - free) * v

    bandit = Bandit()
    r = RngStream(0)
    n = 500
    for it in range(50):
        obs = np.zeros((n, 1))
        acts, logp = pol.sample(obs, None, r)
        rew = -acts[:, 0] ** 2
        b = TrajectoryBatch(obs, acts, rew, np.zeros(n, np.int64), logp, np.zeros((n, 2)), np.ones(n, np.int64),
                            np.zeros(n, np.int64), 1)
        trpo_step(bandit, b, TrpoConfig(), adv=normalize(rew))
    mean = pol.forward(np.zeros(1)).mean[0]
    # brute-force grid of the expected reward confirms the optimum at 0
    grid = np.linspace(-3, 3, 601)
    assert grid[np.argmax(-(grid ** 2) - 0.25)] == 0.0
    assert -0.1 <= mean <= 0.1


def test_progress_log(tmp_path):
    path = tmp_path / "progress.csv"
    log = ProgressLog(str(path), ("coverage",))
    d = StepDiagnostics(surrogate_after=0.5, kl=0.004, step_norm=1.25, backtracks=2, cg_residual=1e-3, accepted=True)
    for it in range(3):
        log.append({**diagnostics_row(it, 1.5 * it, d), "coverage": it * 10})
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,mean_return,surrogate,kl,step_norm,backtracks,residual,coverage"
    assert lines[2] == "1,1.5,0.5,0.004,1.25,2,0.001,10"
    assert len(lines) == 4
