"""Small tanh MLPs with hand-written backprop, a diagonal Gaussian policy and a value net.

Batches are row-major: inputs have shape ``(N, in)``, outputs ``(N, out)``.
Weight matrices are stored as ``(out, in)`` so a layer computes ``x @ W.T + b``.
Flat parameter vectors list each layer's weights (row-major) then its biases.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

HIDDEN = (32, 16)
LOG_2PI = math.log(2 * math.pi)


class MlpNet:
    def __init__(self, sizes, rng=None, out_scale=1.0):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        rng = np.random.default_rng(rng)
        self.weights, self.biases = [], []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / math.sqrt(n_in)
            W = rng.uniform(-bound, bound, size=(n_out, n_in))
            if i == len(self.sizes) - 2:
                W *= out_scale
            self.weights.append(W)
            self.biases.append(np.zeros(n_out))

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a for W, b in zip(self.weights, self.biases) for a in (W.ravel(), b)])

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        pos = 0
        for W, b in zip(self.weights, self.biases):
            W[...] = theta[pos:pos + W.size].reshape(W.shape)
            pos += W.size
            b[...] = theta[pos:pos + b.size]
            pos += b.size

    def copy(self) -> "MlpNet":
        new = MlpNet.__new__(MlpNet)
        new.sizes = self.sizes
        new.weights = [W.copy() for W in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def _run(self, x):
        """Forward pass keeping the post-activation of every layer."""
        acts = [x]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ W.T + b
            acts.append(z if i == last else np.tanh(z))
        return acts


def _as_batch(net: MlpNet, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.sizes[0]:
        raise ValueError(f"expected input of width {net.sizes[0]}, got shape {x.shape}")
    return xb, single


def forward(net: MlpNet, x) -> np.ndarray:
    xb, single = _as_batch(net, x)
    y = net._run(xb)[-1]
    return y[0] if single else y


def param_gradient(net: MlpNet, x, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * forward(x))`` with respect to the flat parameters."""
    xb, single = _as_batch(net, x)
    g = np.asarray(upstream, dtype=float)
    g = g[None, :] if single else g
    acts = net._run(xb)
    grads = []
    delta = g
    for i in range(len(net.weights) - 1, -1, -1):
        grads.append((delta.T @ acts[i], delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ net.weights[i]) * (1.0 - acts[i] ** 2)
    return np.concatenate([a for dW, db in reversed(grads) for a in (dW.ravel(), db)])


def jacobian_vector_product(net: MlpNet, x, v) -> np.ndarray:
    """Directional derivative of the outputs along flat parameter direction ``v``."""
    xb, _ = _as_batch(net, x)
    tmp = net.copy()
    tmp.set_flat(v)
    acts = net._run(xb)
    last = len(net.weights) - 1
    dh = np.zeros_like(xb)
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        dz = dh @ W.T + acts[i] @ tmp.weights[i].T + tmp.biases[i]
        dh = dz if i == last else dz * (1.0 - acts[i + 1] ** 2)
    return dh


def _input_map(obs_dim, shift, scale, periodic):
    shift = np.zeros(obs_dim) if shift is None else np.asarray(shift, dtype=float)
    scale = np.ones(obs_dim) if scale is None else np.asarray(scale, dtype=float)
    periodic = tuple(int(i) for i in periodic)
    if shift.shape != (obs_dim,) or scale.shape != (obs_dim,):
        raise ValueError(f"obs_shift and obs_scale must have shape ({obs_dim},)")
    if any(not 0 <= i < obs_dim for i in periodic):
        raise ValueError("periodic input index out of range")
    return shift, scale, periodic


def normalize_inputs(obs, shift, scale, periodic=()):
    """Wrap the ``periodic`` columns into (-pi, pi], then apply ``(x - shift) * scale``."""
    x = np.array(obs, dtype=float)
    for i in periodic:
        x[..., i] = np.pi - np.mod(np.pi - x[..., i], 2 * np.pi)
    return (x - shift) * scale


class GaussianPolicy:
    """Diagonal Gaussian over actions with an MLP mean and state-independent log-std.

    Observations pass through :func:`normalize_inputs` (angle wrapping of the
    ``periodic`` columns, then a fixed affine map) before entering the network.
    """

    def __init__(self, obs_dim=5, act_dim=2, rng=None, init_log_std=-1.0,
                 obs_shift=None, obs_scale=None, hidden=HIDDEN, periodic=()):
        self.mean_net = MlpNet((obs_dim, *hidden, act_dim), rng=rng, out_scale=0.01)
        self.log_std = np.full(act_dim, float(init_log_std))
        self.obs_shift, self.obs_scale, self.periodic = _input_map(obs_dim, obs_shift, obs_scale, periodic)

    @property
    def obs_dim(self):
        return self.mean_net.sizes[0]

    @property
    def act_dim(self):
        return self.mean_net.sizes[-1]

    @property
    def n_params(self):
        return self.mean_net.n_params + self.act_dim

    def get_flat(self):
        return np.concatenate([self.mean_net.get_flat(), self.log_std])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        self.mean_net.set_flat(theta[:-self.act_dim])
        self.log_std = theta[-self.act_dim:].copy()

    def copy(self):
        new = GaussianPolicy.__new__(GaussianPolicy)
        new.mean_net = self.mean_net.copy()
        new.log_std = self.log_std.copy()
        new.obs_shift = self.obs_shift.copy()
        new.obs_scale = self.obs_scale.copy()
        new.periodic = self.periodic
        return new

    def normalize(self, obs):
        return normalize_inputs(obs, self.obs_shift, self.obs_scale, self.periodic)

    def mean(self, obs):
        return forward(self.mean_net, self.normalize(obs))


class ValueNet:
    def __init__(self, obs_dim=5, rng=None, obs_shift=None, obs_scale=None, hidden=HIDDEN, periodic=()):
        self.net = MlpNet((obs_dim, *hidden, 1), rng=rng)
        self.obs_shift, self.obs_scale, self.periodic = _input_map(obs_dim, obs_shift, obs_scale, periodic)

    def normalize(self, obs):
        return normalize_inputs(obs, self.obs_shift, self.obs_scale, self.periodic)

    def predict(self, obs):
        return forward(self.net, self.normalize(obs))[..., 0]


def sample_action(policy: GaussianPolicy, obs, rng: np.random.Generator) -> np.ndarray:
    mu = policy.mean(obs)
    return mu + np.exp(policy.log_std) * rng.standard_normal(mu.shape)


def _gauss_log_prob(mu, log_std, act):
    z = (act - mu) * np.exp(-log_std)
    return -0.5 * np.sum(z**2 + 2.0 * log_std + LOG_2PI, axis=-1)


def log_prob(policy: GaussianPolicy, obs, act) -> np.ndarray:
    return _gauss_log_prob(policy.mean(obs), policy.log_std, np.asarray(act, dtype=float))


def log_prob_gradient(policy: GaussianPolicy, obs, act, weights) -> np.ndarray:
    """Gradient of ``sum(weights * log_prob(obs, act))`` over the flat policy parameters."""
    obs = np.atleast_2d(obs)
    act = np.atleast_2d(act)
    w = np.asarray(weights, dtype=float).reshape(-1, 1)
    mu = policy.mean(obs)
    var = np.exp(2 * policy.log_std)
    diff = act - mu
    g_mean = param_gradient(policy.mean_net, policy.normalize(obs), w * diff / var)
    g_log_std = np.sum(w * (diff**2 / var - 1.0), axis=0)
    return np.concatenate([g_mean, g_log_std])


def _gauss_kl(mu_old, log_std_old, mu_new, log_std_new):
    var_old = np.exp(2 * log_std_old)
    var_new = np.exp(2 * log_std_new)
    return np.sum(log_std_new - log_std_old + (var_old + (mu_old - mu_new) ** 2) / (2 * var_new) - 0.5, axis=-1)


def kl_divergence(old: GaussianPolicy, new: GaussianPolicy, obs_batch) -> float:
    """Mean KL(old || new) over a batch of observations."""
    obs_batch = np.atleast_2d(obs_batch)
    if obs_batch.shape[0] == 0:
        raise ValueError("empty observation batch")
    return float(np.mean(_gauss_kl(old.mean(obs_batch), old.log_std, new.mean(obs_batch), new.log_std)))


def kl_gradient(old: GaussianPolicy, new: GaussianPolicy, obs_batch) -> np.ndarray:
    """Gradient of the mean KL(old || new) with respect to ``new``'s parameters."""
    obs_batch = np.atleast_2d(obs_batch)
    n = obs_batch.shape[0]
    mu_old, mu_new = old.mean(obs_batch), new.mean(obs_batch)
    var_old, var_new = np.exp(2 * old.log_std), np.exp(2 * new.log_std)
    g_mean = param_gradient(new.mean_net, new.normalize(obs_batch), (mu_new - mu_old) / var_new / n)
    g_log_std = np.mean(1.0 - (var_old + (mu_old - mu_new) ** 2) / var_new, axis=0)
    return np.concatenate([g_mean, g_log_std])


def fisher_vector_product(policy: GaussianPolicy, obs_batch, v, damping=0.0) -> np.ndarray:
    """Hessian of the mean KL(policy || new) at new = policy, times ``v``, plus damping.

    At coinciding policies the KL Hessian reduces to ``J^T diag(1/sigma^2) J``
    for the mean parameters and ``2 I`` for the log-stds (cross terms vanish).
    """
    obs_batch = np.atleast_2d(obs_batch)
    v = np.asarray(v, dtype=float)
    k = policy.act_dim
    x = policy.normalize(obs_batch)
    jv = jacobian_vector_product(policy.mean_net, x, v[:-k])
    var = np.exp(2 * policy.log_std)
    hv_mean = param_gradient(policy.mean_net, x, jv / var / obs_batch.shape[0])
    return np.concatenate([hv_mean, 2.0 * v[-k:]]) + damping * v


def value_loss(value_net: ValueNet, obs, targets) -> float:
    return float(np.mean((value_net.predict(obs) - targets) ** 2))


def value_loss_gradient(value_net: ValueNet, obs, targets) -> np.ndarray:
    obs = np.atleast_2d(obs)
    resid = value_net.predict(obs) - np.asarray(targets, dtype=float)
    up = (2.0 / len(resid)) * resid[:, None]
    return param_gradient(value_net.net, value_net.normalize(obs), up)


# -- checkpoints ---------------------------------------------------------------------
#
# Layout (all little-endian):
#   magic     8 bytes  b"PIVOTNN\0"
#   version   uint32   (=2)
#   kind      uint32   0 = Gaussian policy, 1 = value net
#   n_sizes   uint32   number of layer sizes (hidden layers + 2)
#   sizes     uint32 * n_sizes
#   n_wrap    uint32   number of periodic (angle-wrapped) inputs
#   wrap      uint32 * n_wrap, input column indices
#   obs_shift float64 * sizes[0]
#   obs_scale float64 * sizes[0]
#   params    float64 * n_params, per layer: weights (out, in) row-major, then biases
#   log_std   float64 * sizes[-1]   (policy only)

MAGIC = b"PIVOTNN\0"
VERSION = 2
KIND_POLICY = 0
KIND_VALUE = 1


class CheckpointError(ValueError):
    pass


def _pack(kind, net, shift, scale, periodic, extra=None) -> bytes:
    parts = [MAGIC, struct.pack("<III", VERSION, kind, len(net.sizes)),
             struct.pack(f"<{len(net.sizes)}I", *net.sizes),
             struct.pack(f"<I{len(periodic)}I", len(periodic), *periodic),
             np.asarray(shift, dtype="<f8").tobytes(), np.asarray(scale, dtype="<f8").tobytes(),
             net.get_flat().astype("<f8").tobytes()]
    if extra is not None:
        parts.append(np.asarray(extra, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(path, model) -> None:
    if isinstance(model, GaussianPolicy):
        data = _pack(KIND_POLICY, model.mean_net, model.obs_shift, model.obs_scale, model.periodic, model.log_std)
    elif isinstance(model, ValueNet):
        data = _pack(KIND_VALUE, model.net, model.obs_shift, model.obs_scale, model.periodic)
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    Path(path).write_bytes(data)


def load_checkpoint(path):
    """Load a policy or value net written by :func:`save_checkpoint`."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        version, kind, n_sizes = struct.unpack_from("<III", buf, 8)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 20
        sizes = struct.unpack_from(f"<{n_sizes}I", buf, pos)
        pos += 4 * n_sizes
        (n_wrap,) = struct.unpack_from("<I", buf, pos)
        periodic = struct.unpack_from(f"<{n_wrap}I", buf, pos + 4)
        pos += 4 + 4 * n_wrap
        arrays = np.frombuffer(buf, dtype="<f8", offset=pos).astype(float)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if n_sizes < 2 or min(sizes) < 1:
        raise CheckpointError(f"{path}: invalid layer sizes {sizes}")
    net = MlpNet(sizes)
    n_in = sizes[0]
    if any(i >= n_in for i in periodic):
        raise CheckpointError(f"{path}: periodic input index out of range")
    expected = 2 * n_in + net.n_params + (sizes[-1] if kind == KIND_POLICY else 0)
    if arrays.size != expected:
        raise CheckpointError(f"{path}: expected {expected} float64 values, found {arrays.size}")
    shift, scale = arrays[:n_in], arrays[n_in:2 * n_in]
    net.set_flat(arrays[2 * n_in:2 * n_in + net.n_params])
    if kind == KIND_POLICY:
        model = GaussianPolicy(n_in, sizes[-1], obs_shift=shift, obs_scale=scale, hidden=sizes[1:-1],
                               periodic=periodic)
        model.mean_net = net
        model.log_std = arrays[2 * n_in + net.n_params:].copy()
    elif kind == KIND_VALUE:
        model = ValueNet(n_in, obs_shift=shift, obs_scale=scale, hidden=sizes[1:-1], periodic=periodic)
        model.net = net
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind}")
    return model
