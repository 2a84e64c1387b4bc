"""Trust Region Policy Optimization.

The policy object supplies ``dist_batch``, ``log_likelihood``, ``mean_kl``,
``grad_weighted_log_prob`` and ``fvp`` (see ``policy.py``); this module only
combines them.  Latent codes stored in the batch are passed to the policy as
part of its input, so the update constrains the conditional policy.
"""
from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import TrajectoryBatch, batch_returns, normalize
from .policy import MAX_LOG_RATIO


@dataclass(frozen=True)
class TrpoConfig:
    step_kl: float = 0.01
    discount: float = 0.99
    cg_iters: int = 10
    cg_damping: float = 1e-5
    backtrack_ratio: float = 0.8
    max_backtracks: int = 15
    batch_size: int = 10_000

    def __post_init__(self):
        if self.step_kl <= 0:
            raise ValueError(f"step_kl must be positive, got {self.step_kl}")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError(f"discount must lie in [0, 1], got {self.discount}")
        if self.cg_iters < 1:
            raise ValueError(f"cg_iters must be >= 1, got {self.cg_iters}")


# ---------------------------------------------------------------------------
# baseline and advantages
# ---------------------------------------------------------------------------

RIDGE = 1e-5


def baseline_features(obs: np.ndarray, timesteps: np.ndarray, horizon: int) -> np.ndarray:
    o = np.clip(obs, -10.0, 10.0)
    t = (np.asarray(timesteps, dtype=np.float64) / float(horizon))[:, None]
    return np.hstack([o, o ** 2, t, t ** 2, t ** 3, np.ones_like(t)])


def ridge_mask(obs_dim: int) -> np.ndarray:
    """1 for penalized coefficients (obs and obs squared), 0 for the time polynomial and bias."""
    return np.concatenate([np.ones(2 * obs_dim), np.zeros(4)])


@dataclass
class LinearBaseline:
    coefficients: np.ndarray | None = None
    ridge: float = RIDGE

    def predict(self, batch: TrajectoryBatch) -> np.ndarray:
        if self.coefficients is None:
            return np.zeros(batch.n_steps)
        return baseline_features(batch.obs, batch.timesteps, batch.horizon) @ self.coefficients

    def fit(self, batch: TrajectoryBatch, returns: np.ndarray) -> "LinearBaseline":
        if batch.n_steps == 0:
            raise ValueError("cannot fit a baseline on an empty batch")
        X = baseline_features(batch.obs, batch.timesteps, batch.horizon)
        # ridge regression as an augmented least-squares problem; only the
        # observation features are penalized, so targets spanned by the time
        # polynomial are fit exactly, and lstsq takes the minimum-norm answer
        # when the time columns are collinear (e.g. a single timestep)
        P = np.sqrt(self.ridge) * np.diag(ridge_mask(batch.obs.shape[1]))
        A = np.vstack([X, P])
        b = np.concatenate([returns, np.zeros(len(P))])
        w, *_ = np.linalg.lstsq(A, b, rcond=None)
        return LinearBaseline(w, self.ridge)


def fit_baseline(baseline: LinearBaseline, batch: TrajectoryBatch, gamma: float = 0.99) -> LinearBaseline:
    return baseline.fit(batch, batch_returns(batch, gamma))


def advantages(batch: TrajectoryBatch, baseline: LinearBaseline, gamma: float, normalized: bool = True):
    """Returns minus baseline prediction, normalized across the batch."""
    adv = batch_returns(batch, gamma) - baseline.predict(batch)
    if normalized and len(adv) >= 2:
        return normalize(adv)
    return adv


# ---------------------------------------------------------------------------
# surrogate
# ---------------------------------------------------------------------------

def _ratios(policy, batch: TrajectoryBatch, old_log_probs, theta=None) -> np.ndarray:
    logp = policy.log_likelihood(batch.obs, batch.latents, batch.actions, theta)
    delta = logp - old_log_probs
    if np.any(np.abs(delta) > MAX_LOG_RATIO):
        i = int(np.argmax(np.abs(delta)))
        raise FloatingPointError(f"log-ratio {delta[i]:.3g} at sample {i} exceeds {MAX_LOG_RATIO}")
    return np.exp(delta)


def surrogate_loss(policy, old_log_probs, batch: TrajectoryBatch, adv, theta=None) -> float:
    return float(np.mean(_ratios(policy, batch, old_log_probs, theta) * adv))


def surrogate_grad(policy, old_log_probs, batch: TrajectoryBatch, adv, theta=None) -> np.ndarray:
    r = _ratios(policy, batch, old_log_probs, theta)
    return policy.grad_weighted_log_prob(batch.obs, batch.latents, batch.actions, r * adv / len(adv), theta)


def fisher_vector_product(policy, batch: TrajectoryBatch, v, damping: float = 0.0, theta=None) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return policy.fvp(batch.obs, batch.latents, v, theta) + damping * v


# ---------------------------------------------------------------------------
# conjugate gradient
# ---------------------------------------------------------------------------

def conjugate_gradient(operator, b, iters: int = 10, tol: float = 1e-10):
    """Solve ``operator(x) = b`` for a symmetric positive-definite operator.

    Returns ``(x, residual_norm)``; stops early once the squared residual drops
    below ``tol``.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rr = float(r @ r)
    for _ in range(iters):
        if rr < tol:
            break
        Ap = operator(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp) or pAp <= 0:
            raise FloatingPointError(f"conjugate gradient met non-positive curvature p.Ap = {pAp}")
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(r @ r)
        if not np.isfinite(rr_new):
            raise FloatingPointError("non-finite residual in conjugate gradient")
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, float(np.sqrt(rr))


# ---------------------------------------------------------------------------
# update
# ---------------------------------------------------------------------------

@dataclass
class StepDiagnostics:
    surrogate_before: float = 0.0
    surrogate_after: float = 0.0
    kl: float = 0.0
    step_norm: float = 0.0
    backtracks: int = 0
    cg_residual: float = 0.0
    accepted: bool = False
    reason: str = ""
    grad_norm: float = 0.0


def trpo_step(policy, batch: TrajectoryBatch, config: TrpoConfig, adv=None, old_log_probs=None):
    """One constrained update of ``policy`` (in place); returns ``(policy, diagnostics)``.

    ``adv`` defaults to ``batch.extras["advantages"]`` and ``old_log_probs`` to
    the log-likelihoods recorded at collection time.  A candidate is accepted
    only if its exact mean KL from the old policy is at most ``step_kl`` and
    the surrogate strictly improves; otherwise the parameters are unchanged.
    """
    theta0 = policy.get_flat()
    if adv is None:
        adv = batch.extras["advantages"]
    if old_log_probs is None:
        old_log_probs = batch.log_probs
    old_dist = policy.dist_batch(batch.obs, batch.latents, theta0)
    diag = StepDiagnostics()
    surr0 = surrogate_loss(policy, old_log_probs, batch, adv, theta0)
    diag.surrogate_before = diag.surrogate_after = surr0
    g = surrogate_grad(policy, old_log_probs, batch, adv, theta0)
    diag.grad_norm = float(np.linalg.norm(g))
    if not np.any(g):
        diag.reason = "zero gradient"
        return policy, diag

    def fvp(v):
        return fisher_vector_product(policy, batch, v, config.cg_damping, theta0)

    s, diag.cg_residual = conjugate_gradient(fvp, g, config.cg_iters)
    shs = float(s @ fvp(s))
    if not np.isfinite(shs) or shs <= 0:
        diag.reason = "non-positive curvature"
        return policy, diag
    full = np.sqrt(2.0 * config.step_kl / shs) * s
    for k in range(config.max_backtracks + 1):
        step = config.backtrack_ratio ** k * full
        cand = theta0 + step
        try:
            kl = policy.mean_kl(batch.obs, batch.latents, old_dist, cand)
            surr = surrogate_loss(policy, old_log_probs, batch, adv, cand)
        except FloatingPointError:
            continue
        if kl <= config.step_kl and surr > surr0:
            policy.set_flat(cand)
            diag.accepted = True
            diag.kl = kl
            diag.surrogate_after = surr
            diag.step_norm = float(np.linalg.norm(step))
            diag.backtracks = k
            return policy, diag
    diag.backtracks = config.max_backtracks + 1
    diag.reason = "line search failed"
    return policy, diag


# ---------------------------------------------------------------------------
# progress log
# ---------------------------------------------------------------------------

PROGRESS_COLUMNS = ("iteration", "mean_return", "surrogate", "kl", "step_norm", "backtracks", "residual")


@dataclass
class ProgressLog:
    path: str
    extra_columns: tuple[str, ...] = ()
    _header_written: bool = field(default=False, init=False)

    @property
    def columns(self) -> tuple[str, ...]:
        return PROGRESS_COLUMNS + tuple(self.extra_columns)

    def append(self, row: dict) -> None:
        new = not self._header_written and not (os.path.exists(self.path) and os.path.getsize(self.path) > 0)
        with open(self.path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.columns), extrasaction="ignore", lineterminator="\n")
            if new:
                w.writeheader()
            w.writerow({k: _fmt(row.get(k, "")) for k in self.columns})
        self._header_written = True


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def diagnostics_row(iteration: int, mean_return: float, diag: StepDiagnostics) -> dict:
    return {"iteration": iteration, "mean_return": mean_return, "surrogate": diag.surrogate_after,
            "kl": diag.kl, "step_norm": diag.step_norm, "backtracks": diag.backtracks,
            "residual": diag.cg_residual, **{k: v for k, v in asdict(diag).items() if k == "accepted"}}
