"""Deep deterministic policy gradient agent for greenhouse climate control."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..model import U0, U_MAX, U_MIN
from .buffer import Batch, ReplayBuffer
from .env import (N_ACT, N_OBS, GreenhouseEnv, ReferenceSchedule, RewardConfig, StateScaler,
                  action_to_input, build_state)
from .networks import (Actor, Critic, clip_by_global_norm, make_optimizer, soft_update)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "greenhouse-bench-ddpg"
CHECKPOINT_VERSION = 1
CURVE_HEADER = ["epoch", "cum_reward", "eval_reward", "epsilon_sigma"]


class DivergenceDetected(RuntimeError):
    pass


@dataclass
class TrainConfig:
    critic_lr: float = 1e-3
    actor_lr: float = 1e-3
    grad_threshold: float = 1.0
    l2: float = 1e-5
    gamma: float = 0.9
    tau: float = 1e-3
    epochs: int = 500
    steps_per_epoch: int = 96
    batch_size: int = 64
    buffer_size: int = 10_000
    noise_sigma: float = 0.1      # std of action noise, in units of the half input range
    noise_decay: float = 0.995    # per epoch
    optimizer: str = "adam"
    q_bound: float = 1e6
    eval_every: int = 0           # epochs between evaluations, 0 disables
    eval_episodes: int = 10
    eval_seed: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")

    @classmethod
    def from_dict(cls, cfg: dict) -> "TrainConfig":
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown ddpg keys: {sorted(unknown)}")
        return cls(**cfg)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AgentBundle:
    actor: Actor
    critic: Critic
    actor_target: Actor
    critic_target: Critic
    buffer: ReplayBuffer
    config: TrainConfig
    scaler: StateScaler = field(default_factory=StateScaler)
    refs: ReferenceSchedule = field(default_factory=ReferenceSchedule)
    reward_cfg: RewardConfig = field(default_factory=RewardConfig)
    actor_opt: object = None
    critic_opt: object = None
    rng: np.random.Generator = None
    epochs_done: int = 0
    sigma: float = 0.0
    curve: list = field(default_factory=list)

    def policy(self, s_raw) -> np.ndarray:
        """Noise-free input for a raw observation."""
        a = self.actor(self.scaler.normalize(s_raw))[0]
        return action_to_input(a)


def new_bundle(config: TrainConfig | None = None, seed: int = 0, **kw) -> AgentBundle:
    config = config or TrainConfig()
    rng = np.random.default_rng(seed)
    actor = Actor(N_OBS, N_ACT, rng=rng)
    critic = Critic(N_OBS, N_ACT, rng=rng)
    return AgentBundle(
        actor=actor, critic=critic, actor_target=actor.copy(), critic_target=critic.copy(),
        buffer=ReplayBuffer(config.buffer_size, N_OBS, N_ACT), config=config,
        actor_opt=make_optimizer(config.optimizer, actor.params, config.actor_lr),
        critic_opt=make_optimizer(config.optimizer, critic.params, config.critic_lr),
        rng=rng, sigma=config.noise_sigma, **kw)


def act(actor: Actor, s_normalized, noise_on: bool = False, rng: np.random.Generator | None = None,
        sigma: float = 0.0):
    """Return ``(u, a)``: the physical input and the normalized action in [-1, 1]."""
    s = np.asarray(s_normalized, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("observation must be finite")
    a = actor(s)[0]
    if noise_on and sigma > 0:
        a = a + rng.normal(0.0, sigma, size=a.shape)
    a = np.clip(a, -1.0, 1.0)
    return action_to_input(a), a


def target_q(critic_target: Critic, actor_target: Actor, s_next, r, gamma: float, terminal):
    """TD targets ``r + gamma * Q'(s', pi'(s'))``, reduced to ``r`` at terminal transitions."""
    r = np.asarray(r, dtype=float)
    q_next = critic_target(s_next, actor_target(s_next))
    return r + gamma * np.where(terminal, 0.0, q_next)


def _l2(params, l2: float):
    # weights only; biases are the odd entries
    penalty = 0.5 * l2 * sum(float(np.sum(w * w)) for w in params[0::2])
    grads = [l2 * w if i % 2 == 0 else np.zeros_like(w) for i, w in enumerate(params)]
    return penalty, grads


def critic_loss_and_grads(critic: Critic, s, a, targets, l2: float = 0.0):
    """Mean squared TD error (plus L2 on weights) and its parameter gradients."""
    q, cache = critic.forward(s, a)
    err = q - targets
    n = len(err)
    loss = float(np.mean(err * err))
    grads, _ = critic.backward(cache, 2.0 * err / n)
    penalty, l2_grads = _l2(critic.params, l2)
    return loss + penalty, [g + lg for g, lg in zip(grads, l2_grads)]


def actor_loss_and_grads(actor: Actor, critic: Critic, s, l2: float = 0.0):
    """Negative mean critic value of the actor's actions (plus L2) and its gradients."""
    a, a_cache = actor.forward(s)
    q, c_cache = critic.forward(s, a)
    n = len(q)
    _, dq_da = critic.backward(c_cache, np.full(n, -1.0 / n))
    grads, _ = actor.backward(a_cache, dq_da)
    penalty, l2_grads = _l2(actor.params, l2)
    return -float(np.mean(q)) + penalty, [g + lg for g, lg in zip(grads, l2_grads)]


def critic_update(critic: Critic, optimizer, batch: Batch, targets, config: TrainConfig) -> float:
    loss, grads = critic_loss_and_grads(critic, batch.s, batch.a, targets, config.l2)
    grads, _ = clip_by_global_norm(grads, config.grad_threshold)
    optimizer.step(critic.params, grads)
    return loss


def actor_update(actor: Actor, critic: Critic, optimizer, batch: Batch, config: TrainConfig) -> float:
    loss, grads = actor_loss_and_grads(actor, critic, batch.s, config.l2)
    grads, _ = clip_by_global_norm(grads, config.grad_threshold)
    optimizer.step(actor.params, grads)
    return loss


def train_step(bundle: AgentBundle) -> None:
    """One minibatch update of critic, actor and both targets."""
    cfg = bundle.config
    batch = bundle.buffer.sample(cfg.batch_size, bundle.rng)
    y = target_q(bundle.critic_target, bundle.actor_target, batch.s_next, batch.r, cfg.gamma,
                 batch.terminal)
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > cfg.q_bound:
        raise DivergenceDetected(f"TD target magnitude {np.max(np.abs(y)):.3g} exceeds {cfg.q_bound:g}")
    critic_update(bundle.critic, bundle.critic_opt, batch, y, cfg)
    actor_update(bundle.actor, bundle.critic, bundle.actor_opt, batch, cfg)
    soft_update(bundle.critic_target, bundle.critic, cfg.tau)
    soft_update(bundle.actor_target, bundle.actor, cfg.tau)


def run_episode(bundle: AgentBundle, env: GreenhouseEnv, noise: bool = False,
                learn: bool = False) -> float:
    s = env.reset()
    s_n = bundle.scaler.normalize(s)
    total = 0.0
    for _ in range(env.n_steps):
        u, a = act(bundle.actor, s_n, noise, bundle.rng, bundle.sigma)
        s_next, r, done, _ = env.step(u)
        s_next_n = bundle.scaler.normalize(s_next)
        total += r
        if learn:
            bundle.buffer.add(s_n, a, r, s_next_n, done)
            if len(bundle.buffer) >= bundle.config.batch_size:
                train_step(bundle)
        s_n = s_next_n
        if done:
            break
    return total


def evaluate(bundle: AgentBundle, envs) -> list[float]:
    """Noise-free cumulative reward on each environment."""
    return [run_episode(bundle, env, noise=False, learn=False) for env in envs]


def evaluation_envs(env_factory: Callable, n: int, seed: int) -> list[GreenhouseEnv]:
    rng = np.random.default_rng(seed)
    return [env_factory(rng) for _ in range(n)]


def train(env_factory: Callable[[np.random.Generator], GreenhouseEnv],
          config: TrainConfig | None = None, seed: int = 0,
          bundle: AgentBundle | None = None) -> tuple[AgentBundle, list[dict]]:
    """Train until ``config.epochs`` epochs are done, resuming ``bundle`` if given.

    Each epoch runs one episode from ``env_factory(rng)`` with exploration
    noise, updating the networks after every step once the buffer holds a
    full minibatch. Returns the bundle and its learning curve rows.
    """
    if bundle is None:
        bundle = new_bundle(config, seed)
    elif config is not None:
        bundle.config = config
    cfg = bundle.config
    eval_envs = None
    if cfg.eval_every > 0:
        eval_envs = evaluation_envs(env_factory, cfg.eval_episodes, cfg.eval_seed)
    while bundle.epochs_done < cfg.epochs:
        env = env_factory(bundle.rng)
        cum = run_episode(bundle, env, noise=True, learn=True)
        bundle.epochs_done += 1
        eval_reward = float("nan")
        if eval_envs and bundle.epochs_done % cfg.eval_every == 0:
            eval_reward = float(np.mean(evaluate(bundle, eval_envs)))
        bundle.curve.append({"epoch": bundle.epochs_done, "cum_reward": cum,
                             "eval_reward": eval_reward, "epsilon_sigma": bundle.sigma})
        log.info("epoch %d reward %.4f", bundle.epochs_done, cum)
        bundle.sigma *= cfg.noise_decay
    return bundle, bundle.curve


def write_curve(curve: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_HEADER)
        w.writeheader()
        for row in curve:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(bundle: AgentBundle, path) -> None:
    """Write a self-describing ``.npz`` archive: JSON metadata plus every array."""
    arrays = {}
    for name, net in (("actor", bundle.actor), ("critic", bundle.critic),
                      ("actor_target", bundle.actor_target), ("critic_target", bundle.critic_target)):
        for i, w in enumerate(net.params):
            arrays[f"{name}/{i}"] = w
    for name, opt in (("actor_opt", bundle.actor_opt), ("critic_opt", bundle.critic_opt)):
        if hasattr(opt, "m"):
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                arrays[f"{name}/m/{i}"] = m
                arrays[f"{name}/v/{i}"] = v
    for k, v in bundle.buffer.state_arrays().items():
        arrays[f"buffer/{k}"] = v
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "actor": bundle.actor.spec,
        "critic": bundle.critic.spec,
        "train_config": bundle.config.to_dict(),
        "scaler": bundle.scaler.to_dict(),
        "refs": asdict(bundle.refs),
        "reward": bundle.reward_cfg.to_dict(),
        "epochs_done": bundle.epochs_done,
        "sigma": bundle.sigma,
        "optimizer_steps": {"actor": bundle.actor_opt.t, "critic": bundle.critic_opt.t},
        "rng_state": bundle.rng.bit_generator.state,
        "curve": bundle.curve,
    }
    arrays["meta"] = np.array(json.dumps(meta, allow_nan=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> AgentBundle:
    with np.load(Path(path), allow_pickle=False) as data:
        if "meta" not in data.files:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        if meta["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {meta['version']} is newer than supported")
        config = TrainConfig.from_dict(meta["train_config"])
        bundle = new_bundle(config, 0,
                            scaler=StateScaler(**meta["scaler"]),
                            refs=ReferenceSchedule(**{k: tuple(v) for k, v in meta["refs"].items()}),
                            reward_cfg=RewardConfig(**meta["reward"]))
        for name in ("actor", "critic", "actor_target", "critic_target"):
            net = getattr(bundle, name)
            for i, w in enumerate(net.params):
                stored = data[f"{name}/{i}"]
                if stored.shape != w.shape:
                    raise ValueError(f"{path}: {name} parameter {i} has shape {stored.shape}, expected {w.shape}")
                w[...] = stored
        for name in ("actor_opt", "critic_opt"):
            opt = getattr(bundle, name)
            opt.t = meta["optimizer_steps"][name.split("_")[0]]
            if hasattr(opt, "m"):
                for i in range(len(opt.m)):
                    opt.m[i][...] = data[f"{name}/m/{i}"]
                    opt.v[i][...] = data[f"{name}/v/{i}"]
        bundle.buffer = ReplayBuffer.from_arrays(
            config.buffer_size, {k: data[f"buffer/{k}"] for k in ("s", "a", "r", "s_next", "terminal")})
        bundle.rng.bit_generator.state = meta["rng_state"]
        bundle.epochs_done = meta["epochs_done"]
        bundle.sigma = meta["sigma"]
        bundle.curve = meta["curve"]
    return bundle


# -- closed-loop controller -------------------------------------------------------

class RlController:
    """Noise-free policy as a :func:`model.simulate` callback; records inference times."""

    def __init__(self, bundle: AgentBundle, u0=U0):
        self.bundle = bundle
        self.u0 = np.array(u0, dtype=float)
        self.reset()

    def reset(self):
        self.y_prev = None
        self.u_prev = self.u0.copy()
        self.inference_times: list[float] = []

    def __call__(self, k, x, y, window):
        tic = time.perf_counter()
        y_prev = y if self.y_prev is None else self.y_prev
        s = build_state(y, y_prev, np.asarray(window)[0], self.u_prev, self.bundle.refs)
        u = np.clip(self.bundle.policy(s), U_MIN, U_MAX)
        self.inference_times.append(time.perf_counter() - tic)
        self.y_prev = np.array(y, dtype=float)
        self.u_prev = u
        return u


def rl_controller(bundle: AgentBundle) -> RlController:
    return RlController(bundle)
