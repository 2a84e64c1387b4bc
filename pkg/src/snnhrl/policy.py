"""Policy networks with hand-written reverse- and forward-mode derivatives.

Three policies share one tanh MLP implementation:

* ``GaussianMlpPolicy``: plain diagonal-Gaussian policy over observations.
* ``SnnPolicy``: the same with a categorical latent code integrated into the
  input, either concatenated or through a bilinear (outer product) embedding.
* ``ManagerPolicy``: softmax over K skills.

Every policy exposes, for a flat parameter vector ``theta`` and a batch of
inputs, the action distribution, log-likelihoods, KL divergences, the gradient
of a weighted log-likelihood sum (reverse mode) and the Hessian-vector product
of the mean KL at ``theta`` (forward mode followed by reverse mode).
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ParamVector, RngStream

LOG_2PI = float(np.log(2.0 * np.pi))
MAX_LOG_RATIO = 80.0


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...] = (32, 32)
    output_dim: int = 2
    nonlinearity: str = "tanh"

    def __post_init__(self):
        if len(self.layer_sizes) < 1 or min(self.layer_sizes) < 1 or self.output_dim < 1:
            raise ValueError(f"invalid MLP sizes {self.layer_sizes} -> {self.output_dim}")
        if self.nonlinearity != "tanh":
            raise ValueError(f"unsupported nonlinearity {self.nonlinearity!r}")


def one_hot(z, k: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.int64)
    if np.any(z < 0) or np.any(z >= k):
        raise ValueError(f"latent index outside [0, {k})")
    out = np.zeros(z.shape + (k,))
    np.put_along_axis(out, z[..., None], 1.0, axis=-1)
    return out


def _check_one_hot(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or not np.all((z == 0) | (z == 1)) or z.sum() != 1:
        raise ValueError(f"latent vector is not one-hot: {z.tolist()}")
    return z


def embed_concat(obs, z) -> np.ndarray:
    z = _check_one_hot(z)
    return np.concatenate([np.asarray(obs, dtype=np.float64).ravel(), z])


def embed_bilinear(obs, z) -> np.ndarray:
    """Row-major flattening of ``obs (x) z``: index ``i * K + k``."""
    z = _check_one_hot(z)
    return np.outer(np.asarray(obs, dtype=np.float64).ravel(), z).ravel()


# ---------------------------------------------------------------------------
# network core
# ---------------------------------------------------------------------------

class Network:
    """tanh MLP whose first layer is dense, latent-concat, or latent-bilinear.

    ``first`` selects the input integration:

    * ``"dense"``: ``x @ W0`` with ``x = obs``.
    * ``"concat"``: ``x = [obs, onehot(z)]``.
    * ``"bilinear"``: ``W0`` has ``obs_dim * K`` rows ordered as the bilinear
      embedding; the product is evaluated as ``obs @ W0[z::K]`` (the one-hot
      factor selects the rows), which equals the embedded product exactly.
    """

    def __init__(self, obs_dim: int, mlp: MlpSpec, first: str = "dense", n_latent: int = 0):
        if first not in ("dense", "concat", "bilinear"):
            raise ValueError(f"unknown input integration {first!r}")
        if first != "dense" and n_latent < 1:
            raise ValueError("latent integration needs n_latent >= 1")
        self.obs_dim = int(obs_dim)
        self.mlp = mlp
        self.first = first
        self.K = int(n_latent)
        if first == "dense":
            in_rows = self.obs_dim
        elif first == "concat":
            in_rows = self.obs_dim + self.K
        else:
            in_rows = self.obs_dim * self.K
        self.input_dim = in_rows
        sizes = (in_rows,) + tuple(mlp.layer_sizes) + (mlp.output_dim,)
        table = []
        for i in range(len(sizes) - 1):
            table.append((f"W{i}", (sizes[i], sizes[i + 1])))
            table.append((f"b{i}", (sizes[i + 1],)))
        self.shape_table = tuple(table)
        self.n_layers = len(sizes) - 1
        self.size = ParamVector.size_of(self.shape_table)

    def init_params(self, rng) -> np.ndarray:
        arrays = {}
        for name, dims in self.shape_table:
            if name.startswith("W"):
                fan_in, fan_out = dims
                if name == "W0" and self.first == "bilinear":
                    fan_in = self.obs_dim  # rows active for any one latent
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                arrays[name] = rng.uniform(-lim, lim, size=dims)
            else:
                arrays[name] = np.zeros(dims)
        return ParamVector.flatten(arrays).values

    def unpack(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        return ParamVector(theta[: self.size], self.shape_table).unflatten()

    def _check(self, obs, z):
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != self.obs_dim:
            raise ValueError(f"observation dimension {obs.shape[-1] if obs.ndim else 0} != {self.obs_dim}")
        if self.first != "dense":
            if z is None:
                raise ValueError("latent codes required")
            z = np.asarray(z, dtype=np.int64).reshape(-1)
            if len(z) != len(obs):
                raise ValueError("one latent per observation row required")
            if np.any(z < 0) or np.any(z >= self.K):
                raise ValueError(f"latent index outside [0, {self.K})")
        return obs, z

    def _groups(self, z):
        order = np.argsort(z, kind="stable")
        zs = z[order]
        bounds = np.searchsorted(zs, np.arange(self.K + 1))
        for k in range(self.K):
            idx = order[bounds[k]:bounds[k + 1]]
            if len(idx):
                yield k, idx

    def _first_pre(self, W0, obs, z):
        if self.first == "dense":
            return obs @ W0
        if self.first == "concat":
            return np.hstack([obs, one_hot(z, self.K)]) @ W0
        out = np.empty((len(obs), W0.shape[1]))
        for k, idx in self._groups(z):
            out[idx] = obs[idx] @ W0[k::self.K]
        return out

    def forward(self, theta, obs, z=None):
        obs, z = self._check(obs, z)
        p = self.unpack(theta)
        hs = []
        h = None
        for i in range(self.n_layers):
            if i == 0:
                pre = self._first_pre(p["W0"], obs, z) + p["b0"]
            else:
                pre = h @ p[f"W{i}"] + p[f"b{i}"]
            if i < self.n_layers - 1:
                h = np.tanh(pre)
                hs.append(h)
            else:
                out = pre
        return out, (obs, z, hs, p)

    def backward(self, cache, dout) -> np.ndarray:
        obs, z, hs, p = cache
        grads = {}
        d = dout
        for i in range(self.n_layers - 1, -1, -1):
            grads[f"b{i}"] = d.sum(axis=0)
            if i > 0:
                grads[f"W{i}"] = hs[i - 1].T @ d
                d = (d @ p[f"W{i}"].T) * (1.0 - hs[i - 1] ** 2)
            elif self.first == "dense":
                grads["W0"] = obs.T @ d
            elif self.first == "concat":
                grads["W0"] = np.hstack([obs, one_hot(z, self.K)]).T @ d
            else:
                gW = np.zeros_like(p["W0"])
                for k, idx in self._groups(z):
                    gW[k::self.K] = obs[idx].T @ d[idx]
                grads["W0"] = gW
        return np.concatenate([grads[name].ravel() for name, _ in self.shape_table])

    def jvp(self, cache, v) -> np.ndarray:
        """Directional derivative of the network output along parameter direction ``v``."""
        obs, z, hs, p = cache
        dp = self.unpack(v)
        dh = None
        for i in range(self.n_layers):
            if i == 0:
                dpre = self._first_pre(dp["W0"], obs, z) + dp["b0"]
            else:
                dpre = dh @ p[f"W{i}"] + hs[i - 1] @ dp[f"W{i}"] + dp[f"b{i}"]
            if i < self.n_layers - 1:
                dh = (1.0 - hs[i] ** 2) * dpre
            else:
                return dpre


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

@dataclass
class GaussianActionDist:
    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.broadcast_to(np.asarray(self.log_std, dtype=np.float64), self.mean.shape)
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.log_std))):
            raise ValueError("non-finite Gaussian parameters")

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def log_prob(self, actions) -> np.ndarray:
        a = np.asarray(actions, dtype=np.float64)
        if a.shape[-1] != self.mean.shape[-1]:
            raise ValueError(f"action dimension {a.shape[-1]} != {self.mean.shape[-1]}")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite action")
        zs = (a - self.mean) / self.std
        return np.sum(-0.5 * zs ** 2 - self.log_std - 0.5 * LOG_2PI, axis=-1)

    def kl(self, other: "GaussianActionDist") -> np.ndarray:
        """KL(self || other), summed over action dimensions."""
        if self.mean.shape[-1] != other.mean.shape[-1]:
            raise ValueError("dimension mismatch in KL")
        s0, s1 = self.std, other.std
        out = np.sum(other.log_std - self.log_std + (s0 ** 2 + (self.mean - other.mean) ** 2) / (2 * s1 ** 2) - 0.5,
                     axis=-1)
        if not np.all(np.isfinite(out)):
            raise ValueError("non-finite KL")
        return out

    def entropy(self) -> np.ndarray:
        return np.sum(self.log_std + 0.5 * (LOG_2PI + 1.0), axis=-1)

    def sample(self, rng) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(self.mean.shape)


def log_prob(dist: GaussianActionDist, action) -> float | np.ndarray:
    return dist.log_prob(action)


def kl(dist_old: GaussianActionDist, dist_new: GaussianActionDist):
    return dist_old.kl(dist_new)


@dataclass
class CategoricalDist:
    probs: np.ndarray
    log_probs_all: np.ndarray

    @classmethod
    def from_logits(cls, logits) -> "CategoricalDist":
        logits = np.asarray(logits, dtype=np.float64)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        logp = shifted - lse
        return cls(np.exp(logp), logp)

    def log_prob(self, actions) -> np.ndarray:
        a = np.asarray(actions, dtype=np.int64)
        return np.take_along_axis(self.log_probs_all, a[..., None], axis=-1)[..., 0]

    def kl(self, other: "CategoricalDist") -> np.ndarray:
        return np.sum(self.probs * (self.log_probs_all - other.log_probs_all), axis=-1)

    def entropy(self) -> np.ndarray:
        return -np.sum(self.probs * self.log_probs_all, axis=-1)

    def sample(self, rng) -> np.ndarray:
        u = rng.random(self.probs.shape[:-1])
        c = np.cumsum(self.probs, axis=-1)
        return np.minimum((u[..., None] > c).sum(axis=-1), self.probs.shape[-1] - 1)


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

class _Policy:
    kind = "base"
    net: Network
    params: np.ndarray

    @property
    def n_params(self) -> int:
        return len(self.params)

    def get_flat(self) -> np.ndarray:
        return self.params.copy()

    def set_flat(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.params.shape:
            raise ValueError(f"parameter vector of size {theta.size}, expected {self.params.size}")
        self.params = theta.copy()

    def param_vector(self) -> ParamVector:
        return ParamVector(self.params.copy(), self.shape_table)

    @property
    def shape_table(self):
        return self.net.shape_table


class GaussianPolicyBase(_Policy):
    """Shared machinery for diagonal-Gaussian heads with state-independent log-std."""

    act_dim: int

    @property
    def shape_table(self):
        return self.net.shape_table + (("log_std", (self.act_dim,)),)

    def _split(self, theta):
        return theta[: self.net.size], theta[self.net.size:]

    def dist_batch(self, obs, latents=None, theta=None) -> GaussianActionDist:
        theta = self.params if theta is None else theta
        mean, _ = self.net.forward(theta, obs, latents)
        return GaussianActionDist(mean, theta[self.net.size:])

    def log_likelihood(self, obs, latents, actions, theta=None) -> np.ndarray:
        return self.dist_batch(obs, latents, theta).log_prob(actions)

    def mean_kl(self, obs, latents, old: GaussianActionDist, theta=None) -> float:
        return float(np.mean(old.kl(self.dist_batch(obs, latents, theta))))

    def grad_weighted_log_prob(self, obs, latents, actions, weights, theta=None) -> np.ndarray:
        """``sum_i w_i * grad log pi(a_i | s_i)`` as a flat vector."""
        theta = self.params if theta is None else theta
        mean, cache = self.net.forward(theta, obs, latents)
        log_std = theta[self.net.size:]
        inv_var = np.exp(-2.0 * log_std)
        diff = np.asarray(actions, dtype=np.float64) - mean
        w = np.asarray(weights, dtype=np.float64)[:, None]
        g_mean = w * diff * inv_var
        g_net = self.net.backward(cache, g_mean)
        g_log_std = np.sum(w * (diff ** 2 * inv_var - 1.0), axis=0)
        return np.concatenate([g_net, g_log_std])

    def fvp(self, obs, latents, v, theta=None) -> np.ndarray:
        """Hessian of the mean KL(theta || theta') at theta' = theta, times ``v``."""
        theta = self.params if theta is None else theta
        if len(v) != len(theta):
            raise ValueError(f"vector of size {len(v)}, expected {len(theta)}")
        _, cache = self.net.forward(theta, obs, latents)
        inv_var = np.exp(-2.0 * theta[self.net.size:])
        n = len(obs)
        jv = self.net.jvp(cache, v[: self.net.size])
        out_net = self.net.backward(cache, jv * inv_var / n)
        out_std = 2.0 * v[self.net.size:]
        return np.concatenate([out_net, out_std])

    def sample(self, obs, latents, rng, deterministic: bool = False) -> tuple[np.ndarray, np.ndarray]:
        d = self.dist_batch(obs, latents)
        a = d.mean.copy() if deterministic else d.sample(rng)
        return a, d.log_prob(a)


class GaussianMlpPolicy(GaussianPolicyBase):
    kind = "gaussian"

    def __init__(self, obs_dim: int, act_dim: int = 2, mlp: MlpSpec | None = None, rng=None,
                 init_log_std: float = 0.0):
        mlp = mlp or MlpSpec(output_dim=act_dim)
        if mlp.output_dim != act_dim:
            mlp = MlpSpec(mlp.layer_sizes, act_dim, mlp.nonlinearity)
        self.obs_dim, self.act_dim, self.mlp = int(obs_dim), int(act_dim), mlp
        self.net = Network(obs_dim, mlp, "dense")
        rng = rng if rng is not None else RngStream(0)
        self.params = np.concatenate([self.net.init_params(rng), np.full(act_dim, float(init_log_std))])

    def forward(self, obs, z=None) -> GaussianActionDist:
        obs = np.asarray(obs, dtype=np.float64)
        d = self.dist_batch(np.atleast_2d(obs))
        return GaussianActionDist(d.mean[0], d.log_std[0]) if obs.ndim == 1 else d

    def descriptor(self) -> dict:
        return {"kind": self.kind, "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "layer_sizes": list(self.mlp.layer_sizes), "nonlinearity": self.mlp.nonlinearity}


class SnnPolicy(GaussianPolicyBase):
    """Gaussian policy conditioned on a categorical latent code in [0, K)."""

    kind = "snn"

    def __init__(self, obs_dim: int, act_dim: int = 2, K: int = 6, integration: str = "bilinear",
                 mlp: MlpSpec | None = None, rng=None, init_log_std: float = 0.0):
        if integration not in ("concat", "bilinear"):
            raise ValueError(f"integration must be 'concat' or 'bilinear', got {integration!r}")
        mlp = mlp or MlpSpec(output_dim=act_dim)
        if mlp.output_dim != act_dim:
            mlp = MlpSpec(mlp.layer_sizes, act_dim, mlp.nonlinearity)
        self.obs_dim, self.act_dim, self.K, self.integration, self.mlp = int(obs_dim), int(act_dim), int(K), \
            integration, mlp
        self.net = Network(obs_dim, mlp, integration, K)
        rng = rng if rng is not None else RngStream(0)
        self.params = np.concatenate([self.net.init_params(rng), np.full(act_dim, float(init_log_std))])

    @property
    def input_dim(self) -> int:
        return self.net.input_dim

    def embed(self, obs, z: int) -> np.ndarray:
        oh = one_hot(z, self.K)
        return embed_concat(obs, oh) if self.integration == "concat" else embed_bilinear(obs, oh)

    def forward(self, obs, z) -> GaussianActionDist:
        """Action distribution for one observation vector and latent index."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim == 1:
            d = self.dist_batch(obs[None, :], np.array([z]))
            return GaussianActionDist(d.mean[0], d.log_std[0])
        return self.dist_batch(obs, np.broadcast_to(np.asarray(z), (len(obs),)))

    def grad_log_prob(self, obs, z, action) -> ParamVector:
        g = self.grad_weighted_log_prob(np.atleast_2d(obs), np.atleast_1d(z), np.atleast_2d(action), np.ones(1))
        return ParamVector(g, self.shape_table)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "obs_dim": self.obs_dim, "act_dim": self.act_dim, "K": self.K,
                "integration": self.integration, "layer_sizes": list(self.mlp.layer_sizes),
                "nonlinearity": self.mlp.nonlinearity}


def _skill_indices(actions) -> np.ndarray:
    # macro batches store the chosen skill as a one-column action array
    return np.asarray(actions).reshape(-1).astype(np.int64)


class ManagerPolicy(_Policy):
    """Categorical policy over K skills from the full observation."""

    kind = "manager"

    def __init__(self, obs_dim: int, K: int = 6, mlp: MlpSpec | None = None, rng=None):
        mlp = mlp or MlpSpec(output_dim=K)
        if mlp.output_dim != K:
            mlp = MlpSpec(mlp.layer_sizes, K, mlp.nonlinearity)
        self.obs_dim, self.K, self.mlp = int(obs_dim), int(K), mlp
        self.net = Network(obs_dim, mlp, "dense")
        rng = rng if rng is not None else RngStream(0)
        self.params = self.net.init_params(rng)

    def logits(self, obs, theta=None) -> np.ndarray:
        out, _ = self.net.forward(self.params if theta is None else theta, np.atleast_2d(obs))
        return out

    def dist_batch(self, obs, latents=None, theta=None) -> CategoricalDist:
        return CategoricalDist.from_logits(self.logits(obs, theta))

    def probabilities(self, obs) -> np.ndarray:
        p = self.dist_batch(np.atleast_2d(obs)).probs
        return p[0] if np.ndim(obs) == 1 else p

    def log_likelihood(self, obs, latents, actions, theta=None) -> np.ndarray:
        return self.dist_batch(obs, None, theta).log_prob(_skill_indices(actions))

    def mean_kl(self, obs, latents, old: CategoricalDist, theta=None) -> float:
        return float(np.mean(old.kl(self.dist_batch(obs, None, theta))))

    def grad_weighted_log_prob(self, obs, latents, actions, weights, theta=None) -> np.ndarray:
        theta = self.params if theta is None else theta
        logits, cache = self.net.forward(theta, np.atleast_2d(obs))
        d = CategoricalDist.from_logits(logits)
        g = one_hot(_skill_indices(actions), self.K) - d.probs
        return self.net.backward(cache, np.asarray(weights, dtype=np.float64)[:, None] * g)

    def fvp(self, obs, latents, v, theta=None) -> np.ndarray:
        theta = self.params if theta is None else theta
        if len(v) != len(theta):
            raise ValueError(f"vector of size {len(v)}, expected {len(theta)}")
        logits, cache = self.net.forward(theta, np.atleast_2d(obs))
        p = CategoricalDist.from_logits(logits).probs
        u = self.net.jvp(cache, v)
        w = p * u - p * np.sum(p * u, axis=1, keepdims=True)
        return self.net.backward(cache, w / len(p))

    def sample(self, obs, latents, rng, deterministic: bool = False):
        d = self.dist_batch(np.atleast_2d(obs))
        z = np.argmax(d.probs, axis=1) if deterministic else d.sample(rng)
        return z, d.log_prob(z)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "obs_dim": self.obs_dim, "K": self.K,
                "layer_sizes": list(self.mlp.layer_sizes), "nonlinearity": self.mlp.nonlinearity}


def manager_forward(manager: ManagerPolicy, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != manager.obs_dim:
        raise ValueError(f"observation dimension {obs.shape[-1]} != {manager.obs_dim}")
    return manager.probabilities(obs)


def forward(policy, obs, z=None):
    return policy.forward(obs, z)


def grad_log_prob(policy: SnnPolicy, obs, z, action) -> ParamVector:
    return policy.grad_log_prob(obs, z, action)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"SNNHRLCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def policy_from_descriptor(desc: dict):
    mlp_sizes = tuple(desc["layer_sizes"])
    kind = desc["kind"]
    if kind == "snn":
        return SnnPolicy(desc["obs_dim"], desc["act_dim"], desc["K"], desc["integration"],
                         MlpSpec(mlp_sizes, desc["act_dim"], desc["nonlinearity"]))
    if kind == "gaussian":
        return GaussianMlpPolicy(desc["obs_dim"], desc["act_dim"], MlpSpec(mlp_sizes, desc["act_dim"],
                                                                            desc["nonlinearity"]))
    if kind == "manager":
        return ManagerPolicy(desc["obs_dim"], desc["K"], MlpSpec(mlp_sizes, desc["K"], desc["nonlinearity"]))
    raise CheckpointError(f"unknown policy kind {kind!r}")


def dumps_policy(policy) -> bytes:
    desc = json.dumps(policy.descriptor(), sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(desc)))
    buf.write(desc)
    buf.write(struct.pack("<Q", policy.n_params))
    buf.write(np.asarray(policy.params, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_policy(data: bytes):
    if data[:8] != MAGIC:
        raise CheckpointError("not a policy checkpoint (bad magic)")
    version, n = struct.unpack_from("<HI", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 14
    desc = json.loads(data[off:off + n].decode())
    off += n
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
    policy = policy_from_descriptor(desc)
    if policy.n_params != count:
        raise CheckpointError(f"descriptor {desc} implies {policy.n_params} parameters, file has {count}")
    policy.set_flat(values)
    return policy


def save_policy(policy, path) -> None:
    Path(path).write_bytes(dumps_policy(policy))


def load_policy(path):
    return loads_policy(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# frozen skills for the hierarchy
# ---------------------------------------------------------------------------

@dataclass
class SkillBank:
    """K low-level skills: one SNN, or K independent Gaussian policies."""

    mode: str
    policies: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.policies[0].K if self.mode == "snn" else len(self.policies)

    @property
    def obs_dim(self) -> int:
        return self.policies[0].obs_dim

    @classmethod
    def from_snn(cls, snn: SnnPolicy) -> "SkillBank":
        return cls("snn", [snn])

    @classmethod
    def from_policies(cls, policies) -> "SkillBank":
        return cls("multipolicy", list(policies))

    def act(self, obs, z, rng, deterministic: bool = False) -> np.ndarray:
        obs = np.atleast_2d(obs)
        z = np.asarray(z, dtype=np.int64)
        if self.mode == "snn":
            a, _ = self.policies[0].sample(obs, z, rng, deterministic)
            return a
        out = np.empty((len(obs), self.policies[0].act_dim))
        noise = rng.standard_normal(out.shape)
        for k, pol in enumerate(self.policies):
            idx = np.nonzero(z == k)[0]
            if len(idx):
                d = pol.dist_batch(obs[idx])
                out[idx] = d.mean if deterministic else d.mean + d.std * noise[idx]
        return out

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.params for p in self.policies])

    def save(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, p in enumerate(self.policies):
            path = d / (f"snn.ckpt" if self.mode == "snn" else f"skill_{i:02d}.ckpt")
            save_policy(p, path)
            paths.append(path)
        return paths

    @classmethod
    def load(cls, paths) -> "SkillBank":
        paths = [Path(p) for p in ([paths] if isinstance(paths, (str, Path)) else paths)]
        expanded = []
        for p in paths:
            expanded.extend(sorted(p.glob("*.ckpt")) if p.is_dir() else [p])
        pols = [load_policy(p) for p in expanded]
        if not pols:
            raise CheckpointError(f"no checkpoints found in {paths}")
        if len(pols) == 1 and pols[0].kind == "snn":
            return cls.from_snn(pols[0])
        if any(p.kind != "gaussian" for p in pols):
            raise CheckpointError("a multi-policy skill bank must contain only Gaussian policies")
        descs = {json.dumps(p.descriptor(), sort_keys=True) for p in pols}
        if len(descs) != 1:
            raise CheckpointError(f"skill bank mixes architectures: {sorted(descs)}")
        return cls.from_policies(pols)
