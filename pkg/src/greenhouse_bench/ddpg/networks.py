"""Small numpy multilayer perceptrons with manual backpropagation."""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")


class ArchitectureMismatch(ValueError):
    pass


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, dout):
    if name == "relu":
        return dout * (z > 0)
    if name == "tanh":
        return dout * (1.0 - a * a)
    return dout


class Mlp:
    """Fully connected network; ``activations[i]`` follows layer ``i``.

    Weights and biases are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    """

    def __init__(self, sizes, activations, rng: np.random.Generator | None = None):
        sizes = [int(s) for s in sizes]
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = sizes
        self.activations = list(activations)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            self.params.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            self.params.append(rng.uniform(-bound, bound, size=n_out))

    @property
    def spec(self) -> dict:
        return {"sizes": self.sizes, "activations": self.activations}

    def forward(self, x):
        a = np.atleast_2d(np.asarray(x, dtype=float))
        cache = []
        for i, act in enumerate(self.activations):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = a @ W + b
            out = _act(act, z)
            cache.append((a, z, out))
            a = out
        return a, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dout):
        """Gradients of sum(dout * output) w.r.t. the parameters and the input."""
        grads = [None] * len(self.params)
        g = dout
        for i in range(len(self.activations) - 1, -1, -1):
            a_in, z, out = cache[i]
            g = _act_grad(self.activations[i], z, out, g)
            grads[2 * i] = a_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    def copy(self) -> "Mlp":
        new = Mlp.__new__(Mlp)
        new.sizes = list(self.sizes)
        new.activations = list(self.activations)
        new.params = [w.copy() for w in self.params]
        return new


class Actor:
    """Deterministic policy: 3 x 20 ReLU then a tanh layer of width 3.

    The output layer starts in U(-out_init, out_init) so initial actions sit
    near the middle of the input box, away from tanh saturation.
    """

    def __init__(self, n_obs: int = 10, n_act: int = 3, hidden=(20, 20, 20), rng=None,
                 out_init: float | None = 3e-3):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.net = Mlp([n_obs, *hidden, n_act], ["relu"] * len(hidden) + ["tanh"], rng)
        if out_init is not None:
            for w in self.net.params[-2:]:
                w[...] = rng.uniform(-out_init, out_init, size=w.shape)

    @property
    def params(self):
        return self.net.params

    @property
    def spec(self) -> dict:
        return {"type": "actor", **self.net.spec}

    def forward(self, s):
        return self.net.forward(s)

    def __call__(self, s):
        return self.net(s)

    def backward(self, cache, dout):
        return self.net.backward(cache, dout)

    def copy(self) -> "Actor":
        new = Actor.__new__(Actor)
        new.net = self.net.copy()
        return new


class Critic:
    """Q(s, a): observation path 3 x 10 ReLU, action path 2 x 10 ReLU.

    The two feature vectors are concatenated and passed through ``head_hidden``
    ReLU layers before the linear scalar output. With no hidden head layer Q
    separates into g(s) + h(a) and dQ/da no longer depends on the state.
    """

    def __init__(self, n_obs: int = 10, n_act: int = 3, obs_hidden=(10, 10, 10),
                 act_hidden=(10, 10), head_hidden=(10,), rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_net = Mlp([n_obs, *obs_hidden], ["relu"] * len(obs_hidden), rng)
        self.act_net = Mlp([n_act, *act_hidden], ["relu"] * len(act_hidden), rng)
        self.head = Mlp([obs_hidden[-1] + act_hidden[-1], *head_hidden, 1],
                        ["relu"] * len(head_hidden) + ["linear"], rng)

    @property
    def params(self):
        return self.obs_net.params + self.act_net.params + self.head.params

    @property
    def spec(self) -> dict:
        return {"type": "critic", "obs": self.obs_net.spec, "act": self.act_net.spec,
                "head": self.head.spec}

    def forward(self, s, a):
        fo, co = self.obs_net.forward(s)
        fa, ca = self.act_net.forward(a)
        feat = np.concatenate([fo, fa], axis=1)
        q, ch = self.head.forward(feat)
        return q[:, 0], (co, ca, ch, fo.shape[1])

    def __call__(self, s, a):
        return self.forward(s, a)[0]

    def backward(self, cache, dq):
        """Gradients of sum(dq * Q) w.r.t. parameters, plus dQ/da rows."""
        co, ca, ch, n_obs_feat = cache
        gh, dfeat = self.head.backward(ch, np.asarray(dq, dtype=float).reshape(-1, 1))
        go, _ = self.obs_net.backward(co, dfeat[:, :n_obs_feat])
        ga, da = self.act_net.backward(ca, dfeat[:, n_obs_feat:])
        return go + ga + gh, da

    def copy(self) -> "Critic":
        new = Critic.__new__(Critic)
        new.obs_net = self.obs_net.copy()
        new.act_net = self.act_net.copy()
        new.head = self.head.copy()
        return new


def check_same_architecture(a, b) -> None:
    pa, pb = a.params, b.params
    if len(pa) != len(pb) or any(x.shape != y.shape for x, y in zip(pa, pb)):
        raise ArchitectureMismatch("networks have different parameter shapes")


def soft_update(target, main, tau: float):
    """In-place convex blend ``target <- tau * main + (1 - tau) * target``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    check_same_architecture(target, main)
    for t, m in zip(target.params, main.params):
        if tau == 1.0:
            t[...] = m
        elif tau != 0.0:
            t *= 1.0 - tau
            t += tau * m
    return target


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads, threshold: float):
    norm = global_norm(grads)
    if threshold > 0 and norm > threshold:
        return [g * (threshold / norm) for g in grads], norm
    return grads, norm


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}


class Sgd:
    def __init__(self, params, lr: float = 1e-3):
        self.lr = lr
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        for p, g in zip(params, grads):
            p -= self.lr * g


def make_optimizer(name: str, params, lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return Sgd(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")
