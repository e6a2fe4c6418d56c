"""Minimal fully-connected network stack with hand-written gradients.

Float64 throughout so finite-difference checks can be tight.  Forward
passes cache activations; backward passes return parameter gradients
plus the gradient w.r.t. the input (needed to differentiate a critic
w.r.t. the action it was fed).
"""

from __future__ import annotations

import json

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
SQUASH_LIMIT = 1.0 - 1e-12   # float tanh saturates to exactly 1 for |u| > ~19
CHECKPOINT_VERSION = 1


class Mlp:
    """Affine-ReLU stack; hidden layers rectified, output linear."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_parameters(self, params: list[np.ndarray]) -> None:
        it = iter(params)
        for i in range(len(self.weights)):
            self.weights[i] = next(it)
            self.biases[i] = next(it)

    def copy(self) -> "Mlp":
        clone = object.__new__(Mlp)
        clone.sizes = list(self.sizes)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """x: (batch, in) or (in,).  Pass a list as `cache` to enable backward."""
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, float))
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {h.shape[1]}")
        if cache is not None:
            cache.clear()
            cache.append(h)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            if cache is not None:
                cache.append(h)
        return h[0] if squeeze else h

    def backward(self, cache: list, grad_out: np.ndarray,
                 need_input_grad: bool = True
                 ) -> tuple[list[np.ndarray], np.ndarray | None]:
        """Reverse-mode pass. Returns (parameter grads, input grad).

        `cache` must come from a forward call on this network; grad_out is
        d(loss)/d(output) with the same shape as the output.  Skipping the
        input gradient saves the first-layer transpose product.
        """
        if not cache:
            raise RuntimeError("backward requires a cached forward pass")
        g = np.atleast_2d(np.asarray(grad_out, float))
        grads: list[np.ndarray] = []
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            h_in = cache[i]
            if i < last:
                g = g * (cache[i + 1] > 0.0)   # ReLU gate
            grads[:0] = [h_in.T @ g, g.sum(axis=0)]
            if i > 0 or need_input_grad:
                g = g @ self.weights[i].T
            else:
                g = None
        return grads, g

    def backward_input(self, cache: list, grad_out: np.ndarray) -> np.ndarray:
        """Input gradient only; used to differentiate through a frozen net."""
        if not cache:
            raise RuntimeError("backward requires a cached forward pass")
        g = np.atleast_2d(np.asarray(grad_out, float))
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last:
                g = g * (cache[i + 1] > 0.0)
            g = g @ self.weights[i].T
        return g


class AdamState:
    """Bias-corrected adaptive-moment optimizer state for one parameter list."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self._scratch = [np.empty_like(p) for p in params]


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray]) -> list[np.ndarray]:
    """One in-place update; returns params for convenience.

    Written with preallocated scratch buffers: the moment updates run in
    the training hot loop and temporary allocation dominates otherwise.
    """
    for g in grads:
        if not np.isfinite(np.sum(g)):
            raise FloatingPointError("non-finite gradient in adam_step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    scale = state.lr / c1
    for p, g, m, v, tmp in zip(params, grads, state.m, state.v, state._scratch):
        m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        m += tmp
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= scale
        p -= tmp
    return params


def log1m_tanh_sq(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), computed stably for large |u|."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class GaussianPolicyHead:
    """Squashed-Gaussian policy: a = tanh(mu(s) + sigma(s) * xi).

    The trunk MLP emits [mu, log_std] side by side; log_std is clamped to
    a sane band before exponentiation.
    """

    def __init__(self, state_dim: int, action_dim: int, hidden: tuple[int, ...],
                 rng: np.random.Generator):
        self.n_act = action_dim
        self.net = Mlp([state_dim, *hidden, 2 * action_dim], rng)

    def _split(self, out: np.ndarray):
        mu = out[..., :self.n_act]
        log_std_raw = out[..., self.n_act:]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std_raw, log_std

    def mean_action(self, s: np.ndarray) -> np.ndarray:
        """Deterministic action tanh(mu), used for evaluation."""
        mu, _, _ = self._split(self.net.forward(s))
        return np.clip(np.tanh(mu), -SQUASH_LIMIT, SQUASH_LIMIT)

    def sample(self, s: np.ndarray, xi: np.ndarray, cache: dict | None = None):
        """Reparameterized sample. Returns (a_rp, log_prob).

        log_prob sums over action dims: Gaussian density of the pre-squash
        variable minus the tanh change-of-variables correction.
        """
        mlp_cache: list = []
        out = self.net.forward(s, cache=mlp_cache)
        mu, log_std_raw, log_std = self._split(out)
        sigma = np.exp(log_std)
        xi = np.asarray(xi, float)
        if not np.all(np.isfinite(xi)):
            raise ValueError("sampling noise must be finite")
        u = mu + sigma * xi
        a = np.clip(np.tanh(u), -SQUASH_LIMIT, SQUASH_LIMIT)
        logp = (-0.5 * xi ** 2 - log_std - 0.5 * np.log(2 * np.pi)
                - log1m_tanh_sq(u)).sum(axis=-1)
        if cache is not None:
            cache.update(mlp_cache=mlp_cache, a=a, sigma=sigma, xi=xi,
                         clip_mask=(log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX))
        return a, logp

    def backward(self, cache: dict, grad_a: np.ndarray, grad_logp: np.ndarray
                 ) -> list[np.ndarray]:
        """Parameter grads of L given dL/da (per dim) and dL/dlog_prob (per sample).

        Uses d(logp)/dmu = 2a and d(logp)/dlog_std = -1 + 2a*sigma*xi, the
        analytic derivatives of the squashed-Gaussian density under the
        reparameterization (xi held fixed).
        """
        a, sigma, xi = cache["a"], cache["sigma"], cache["xi"]
        grad_a = np.atleast_2d(np.asarray(grad_a, float))
        g_lp = np.asarray(grad_logp, float).reshape(-1, 1)
        da_du = 1.0 - a ** 2
        g_mu = grad_a * da_du + g_lp * (2.0 * a)
        g_ls = grad_a * da_du * sigma * xi + g_lp * (-1.0 + 2.0 * a * sigma * xi)
        g_ls = g_ls * cache["clip_mask"]
        upstream = np.concatenate([g_mu, g_ls], axis=-1)
        grads, _ = self.net.backward(cache["mlp_cache"], upstream)
        return grads


def policy_sample(head: GaussianPolicyHead, s: np.ndarray, noise: np.ndarray):
    """Module-level convenience wrapper around GaussianPolicyHead.sample."""
    return head.sample(s, noise)


def save_checkpoint(path, nets: dict[str, Mlp], extra: dict | None = None) -> None:
    """Write named networks to one npz file with a shapes header."""
    arrays = {}
    meta = {"version": CHECKPOINT_VERSION, "nets": {}, "extra": extra or {}}
    for name, net in nets.items():
        meta["nets"][name] = net.sizes
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}__W{i}"] = w
            arrays[f"{name}__b{i}"] = b
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[dict[str, Mlp], dict]:
    data = np.load(path)
    meta = json.loads(bytes(data["__meta__"]).decode())
    if meta["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta['version']}")
    nets = {}
    for name, sizes in meta["nets"].items():
        net = object.__new__(Mlp)
        net.sizes = sizes
        net.weights = [data[f"{name}__W{i}"] for i in range(len(sizes) - 1)]
        net.biases = [data[f"{name}__b{i}"] for i in range(len(sizes) - 1)]
        nets[name] = net
    return nets, meta["extra"]
