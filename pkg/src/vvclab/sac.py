"""Soft actor-critic over residual pre-actions, single-period by default.

The critic regresses the immediate reward (discount zero), which is the
right target here because tomorrow's load and sun do not care about
today's reactive setpoints.  A discounted mode with twin target networks
and polyak averaging exists for multi-period problems but is not used by
the default experiments.

The replay buffer stores residual pre-actions, never mapped MVar values:
the reference setpoint is recomputable from the scenario, so the stored
tuple stays model-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import actionspace as aspace
from .actionspace import ActionBox, ResidualBounds, ResidualConfig
from .env import VvcEnv
from .neural import (AdamState, GaussianPolicyHead, Mlp, adam_step,
                     load_checkpoint, save_checkpoint)

REWARD_SCALE = 0.1    # critics see reward/10 to keep targets O(1)


@dataclass(frozen=True)
class SacConfig:
    hidden: tuple[int, ...] = (512, 512)
    batch_size: int = 128
    buffer_capacity: int = 30_000
    critic_lr: float = 3e-4
    actor_lr: float = 1e-4
    temperature_lr: float = 3e-4
    gamma: float = 0.0
    polyak: float = 0.995
    initial_random_steps: int = 960
    updates_per_step: int = 4
    alpha_init: float = 0.1
    entropy_target: float | None = None   # defaults to -action_dim

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")


@dataclass
class MdpTransition:
    s: np.ndarray
    a_rp: np.ndarray
    r: float
    s_next: np.ndarray
    d: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self.s = np.empty((capacity, state_dim))
        self.a = np.empty((capacity, action_dim))
        self.r = np.empty(capacity)
        self.s2 = np.empty((capacity, state_dim))
        self.d = np.empty(capacity)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def push(self, tr: MdpTransition) -> None:
        if not np.isfinite(tr.r):
            raise ValueError("reward must be finite")
        i = self.head
        self.s[i] = tr.s
        self.a[i] = tr.a_rp
        self.r[i] = tr.r
        self.s2[i] = tr.s_next
        self.d[i] = float(tr.d)
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self.size, size=batch_size)
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx],
                "s2": self.s2[idx], "d": self.d[idx]}


class SacAgent:
    def __init__(self, state_dim: int, action_dim: int, cfg: SacConfig, seed: int):
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        init_rng = np.random.default_rng([seed, 1])
        self.actor = GaussianPolicyHead(state_dim, action_dim, cfg.hidden, init_rng)
        self.critics = [Mlp([state_dim + action_dim, *cfg.hidden, 1], init_rng)
                        for _ in range(2)]
        self.targets = [c.copy() for c in self.critics] if cfg.gamma > 0 else None
        self.log_alpha = np.array([np.log(cfg.alpha_init)])
        self.entropy_target = (cfg.entropy_target if cfg.entropy_target is not None
                               else -float(action_dim))

        self.actor_opt = AdamState(self.actor.net.parameters(), cfg.actor_lr)
        self.critic_opts = [AdamState(c.parameters(), cfg.critic_lr) for c in self.critics]
        self.alpha_opt = AdamState([self.log_alpha], cfg.temperature_lr)

        self.rng = np.random.default_rng([seed, 2])
        self.buffer = ReplayBuffer(cfg.buffer_capacity, state_dim, action_dim)
        self.env_steps = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def act(self, s: np.ndarray, mode: str = "train") -> np.ndarray:
        """Residual pre-action in (-1, 1).

        Train mode samples the squashed Gaussian, except during the
        initial random phase where it explores uniformly; eval mode is the
        deterministic squashed mean.
        """
        if mode == "eval":
            return self.actor.mean_action(s)
        if self.env_steps < self.cfg.initial_random_steps:
            # low end of uniform() is inclusive; keep the interval open
            draw = self.rng.uniform(-1.0, 1.0, size=self.action_dim)
            return np.clip(draw, -1.0 + 1e-12, 1.0 - 1e-12)
        xi = self.rng.standard_normal(self.action_dim)
        a, _ = self.actor.sample(s, xi)
        return a

    def critic_update(self, batch: dict) -> float:
        """One Adam step per critic against the (scaled) reward target."""
        y = batch["r"] * REWARD_SCALE
        if self.targets is not None:
            xi = self.rng.standard_normal((len(batch["r"]), self.action_dim))
            a2, logp2 = self.actor.sample(batch["s2"], xi)
            x2 = np.concatenate([batch["s2"], a2], axis=1)
            qt = np.minimum(self.targets[0].forward(x2)[:, 0],
                            self.targets[1].forward(x2)[:, 0])
            y = y + self.cfg.gamma * (1.0 - batch["d"]) * (qt - self.alpha * logp2)

        x = np.concatenate([batch["s"], batch["a"]], axis=1)
        n = len(y)
        losses = []
        for critic, opt in zip(self.critics, self.critic_opts):
            cache: list = []
            q = critic.forward(x, cache=cache)[:, 0]
            err = q - y
            losses.append(float(np.mean(err ** 2)))
            grads, _ = critic.backward(cache, (2.0 * err / n)[:, None],
                                       need_input_grad=False)
            adam_step(opt, critic.parameters(), grads)
        if self.targets is not None:
            tau = self.cfg.polyak
            for tgt, src in zip(self.targets, self.critics):
                for pt, ps in zip(tgt.parameters(), src.parameters()):
                    pt *= tau
                    pt += (1.0 - tau) * ps
        return float(np.mean(losses))

    def actor_update(self, batch: dict) -> float:
        """Ascend E[min_j Q_j(s, pi(s)) - alpha * log pi]; returns its value."""
        s = batch["s"]
        n = len(s)
        xi = self.rng.standard_normal((n, self.action_dim))
        head_cache: dict = {}
        a, logp = self.actor.sample(s, xi, cache=head_cache)
        self._last_logp = logp    # reused by temperature_update in the loop

        x = np.concatenate([s, a], axis=1)
        caches = [[], []]
        q = [c.forward(x, cache=caches[i])[:, 0] for i, c in enumerate(self.critics)]
        first_active = q[0] <= q[1]
        q_min = np.where(first_active, q[0], q[1])
        loss = float(np.mean(q_min - self.alpha * logp))

        # descend -loss: route -1/n through whichever critic is the min,
        # keep only the gradient w.r.t. the action inputs
        grad_a = np.zeros_like(a)
        for i, critic in enumerate(self.critics):
            active = first_active if i == 0 else ~first_active
            if not np.any(active):
                continue
            upstream = np.where(active, -1.0 / n, 0.0)[:, None]
            gx = critic.backward_input(caches[i], upstream)
            grad_a += gx[:, self.state_dim:]
        grad_logp = np.full(n, self.alpha / n)
        grads = self.actor.backward(head_cache, grad_a, grad_logp)
        adam_step(self.actor_opt, self.actor.net.parameters(), grads)
        return loss

    def temperature_update(self, batch: dict, logp: np.ndarray | None = None) -> float:
        """Dual ascent on the entropy constraint; returns the new alpha.

        Reuses the actor update's fresh log-probs when available so the
        three updates of one iteration see the same samples.
        """
        if logp is None:
            logp = getattr(self, "_last_logp", None)
        if logp is None or len(logp) != len(batch["s"]):
            xi = self.rng.standard_normal((len(batch["s"]), self.action_dim))
            _, logp = self.actor.sample(batch["s"], xi)
        # L(alpha) = mean(-alpha logp - alpha H); d/dlog_alpha = -alpha (mean(logp) + H)
        grad = np.array([-self.alpha * (float(np.mean(logp)) + self.entropy_target)])
        adam_step(self.alpha_opt, [self.log_alpha], [grad])
        return self.alpha

    def update_round(self, batch: dict) -> tuple[float, float, float]:
        closs = self.critic_update(batch)
        aloss = self.actor_update(batch)
        alpha = self.temperature_update(batch)
        return closs, aloss, alpha

    def save(self, path) -> None:
        """Write actor/critic parameters and the temperature to one file."""
        nets = {"actor": self.actor.net,
                "critic1": self.critics[0], "critic2": self.critics[1]}
        if self.targets is not None:
            nets.update(target1=self.targets[0], target2=self.targets[1])
        save_checkpoint(path, nets, extra={
            "log_alpha": float(self.log_alpha[0]), "env_steps": self.env_steps})

    def load(self, path) -> None:
        """Restore parameters saved by save(); optimizer state starts fresh."""
        nets, extra = load_checkpoint(path)
        self.actor.net.set_parameters(nets["actor"].parameters())
        self.critics[0].set_parameters(nets["critic1"].parameters())
        self.critics[1].set_parameters(nets["critic2"].parameters())
        if self.targets is not None and "target1" in nets:
            self.targets[0].set_parameters(nets["target1"].parameters())
            self.targets[1].set_parameters(nets["target2"].parameters())
        self.log_alpha[0] = extra["log_alpha"]
        self.env_steps = int(extra["env_steps"])
        self.actor_opt = AdamState(self.actor.net.parameters(), self.cfg.actor_lr)
        self.critic_opts = [AdamState(c.parameters(), self.cfg.critic_lr)
                            for c in self.critics]
        self.alpha_opt = AdamState([self.log_alpha], self.cfg.temperature_lr)


@dataclass
class ResidualPolicy:
    """How reference actions and residual bounds are derived per step.

    mode "rm": bounds clipped around a_m with half-width lambda * delta_o;
    mode "wide": bounds span the whole box relative to a_m;
    mode "full": no reference model (a_m = 0), bounds are the box itself.
    """
    mode: str
    box: ActionBox
    lambda_scale: float = 0.0

    def __post_init__(self):
        if self.mode not in ("rm", "wide", "full"):
            raise ValueError(f"unknown residual mode {self.mode!r}")
        if self.mode == "rm":
            self._cfg = ResidualConfig.from_box(self.box, self.lambda_scale)

    def reference(self, a_m_row: np.ndarray) -> np.ndarray:
        if self.mode == "full":
            return np.zeros(len(self.box.a_low))
        return a_m_row

    def bounds(self, a_m: np.ndarray) -> ResidualBounds:
        if self.mode == "rm":
            return aspace.residual_bounds(a_m, self._cfg, self.box)
        if self.mode == "wide":
            return ResidualBounds(lo=self.box.a_low - a_m, hi=self.box.a_high - a_m)
        return ResidualBounds(lo=self.box.a_low, hi=self.box.a_high)


@dataclass
class StepLog:
    """Per-step training metrics; arrays of length days*96."""
    day: np.ndarray
    step: np.ndarray
    train_reward: np.ndarray
    test_reward: np.ndarray
    test_ploss: np.ndarray
    test_violation: np.ndarray
    critic_loss: np.ndarray
    alpha: np.ndarray
    reference_action_norm: np.ndarray


def train_day_loop(train_env: VvcEnv, eval_env: VvcEnv, a_m_table: np.ndarray,
                   policy: ResidualPolicy, cfg: SacConfig, seed: int,
                   days: int, progress=None) -> tuple[SacAgent, StepLog]:
    """Run the full residual-SAC training protocol and log every step.

    Per environment step: reference action, sampled residual pre-action,
    dynamic mapping, execution, storage, then `updates_per_step` rounds of
    critic/actor/temperature updates.  After each day a deterministic
    evaluation pass replays the same day on a separate environment; during
    the initial random phase the evaluation replays the exploration
    distribution instead, since the policy is untrained there.
    """
    steps_per_day = train_env.scn.steps_per_day
    n_steps = days * steps_per_day
    agent = SacAgent(train_env.feature_dim, train_env.n_dev, cfg, seed)
    box = policy.box

    log = StepLog(*(np.zeros(n_steps) for _ in range(9)))
    log.day[:] = np.repeat(np.arange(days), steps_per_day)
    log.step[:] = np.tile(np.arange(steps_per_day), days)
    log.critic_loss[:] = np.nan
    log.alpha[:] = np.nan

    state = train_env.reset(day=0)
    feat = train_env.featurize(state)
    for g in range(n_steps):
        a_m = policy.reference(a_m_table[g])
        rb_bounds = policy.bounds(a_m)
        a_rp = agent.act(feat, "train")
        a_r = aspace.map_residual(a_rp, rb_bounds)
        a = aspace.compose(a_m, a_r, box)

        reward, state2, done = train_env.step(a)
        feat2 = train_env.featurize(state2)
        agent.buffer.push(MdpTransition(feat, a_rp, reward.r, feat2, done))
        agent.env_steps += 1

        log.train_reward[g] = reward.r
        log.reference_action_norm[g] = np.linalg.norm(a_m)

        if (agent.env_steps >= cfg.initial_random_steps
                and len(agent.buffer) >= cfg.batch_size):
            closs = alpha = 0.0
            for _ in range(cfg.updates_per_step):
                batch = agent.buffer.sample(cfg.batch_size, agent.rng)
                c, _, alpha = agent.update_round(batch)
                closs += c
            log.critic_loss[g] = closs / cfg.updates_per_step
            log.alpha[g] = alpha

        feat = feat2
        if done:
            day = g // steps_per_day
            _evaluate_day(eval_env, agent, a_m_table, policy, seed, day, log)
            if progress is not None:
                progress(day, log)
    return agent, log


def _evaluate_day(eval_env: VvcEnv, agent: SacAgent, a_m_table, policy,
                  seed: int, day: int, log: StepLog) -> None:
    steps_per_day = eval_env.scn.steps_per_day
    random_day = (day + 1) * steps_per_day <= agent.cfg.initial_random_steps
    eval_rng = np.random.default_rng([seed, 3, day])
    state = eval_env.reset(day=day)
    feat = eval_env.featurize(state)
    for t in range(steps_per_day):
        g = day * steps_per_day + t
        a_m = policy.reference(a_m_table[g])
        rb_bounds = policy.bounds(a_m)
        if random_day:
            a_rp = np.clip(eval_rng.uniform(-1.0, 1.0, size=eval_env.n_dev),
                           -1.0 + 1e-12, 1.0 - 1e-12)
        else:
            a_rp = agent.act(feat, "eval")
        a = aspace.compose(a_m, aspace.map_residual(a_rp, rb_bounds), policy.box)
        reward, state, _ = eval_env.step(a)
        feat = eval_env.featurize(state)
        log.test_reward[g] = reward.r
        log.test_ploss[g] = -reward.r_p
        log.test_violation[g] = -reward.r_v
