import copy

import numpy as np
import pytest

from vvclab.actionspace import ActionBox
from vvclab.env import VvcEnv
from vvclab.sac import (REWARD_SCALE, MdpTransition, ReplayBuffer, ResidualPolicy,
                        SacAgent, SacConfig, train_day_loop)

SMALL = SacConfig(hidden=(24, 24), initial_random_steps=40, batch_size=32)


def filled_agent(state_dim=6, action_dim=2, cfg=SMALL, seed=0, n=200, reward=None):
    agent = SacAgent(state_dim, action_dim, cfg, seed)
    rng = np.random.default_rng(5)
    for _ in range(n):
        s = rng.standard_normal(state_dim)
        a = rng.uniform(-0.99, 0.99, action_dim)
        r = reward(s, a) if reward else float(-rng.random())
        agent.buffer.push(MdpTransition(s, a, r, s, False))
    agent.env_steps = n
    return agent


class TestAct:
    def test_eval_deterministic(self):
        agent = filled_agent()
        s = np.ones(6)
        a1 = agent.act(s, "eval")
        a2 = agent.act(s, "eval")
        np.testing.assert_array_equal(a1, a2)

    def test_random_phase_uniform(self):
        agent = SacAgent(6, 2, SacConfig(hidden=(16,), initial_random_steps=10 ** 9), seed=0)
        draws = np.array([agent.act(np.zeros(6), "train") for _ in range(10_000)])
        assert np.all(np.abs(draws) < 1.0)
        assert abs(draws.mean()) < 0.03
        # roughly uniform: variance of U(-1,1) is 1/3
        assert draws.var() == pytest.approx(1 / 3, abs=0.02)

    def test_train_outputs_strictly_inside(self):
        agent = filled_agent()
        for _ in range(200):
            a = agent.act(np.zeros(6), "train")
            assert np.all(np.abs(a) < 1.0)


class TestCriticUpdate:
    def test_perfect_critic_zero_loss(self):
        agent = filled_agent(reward=lambda s, a: 0.0)
        for c in agent.critics:
            for w in c.weights:
                w[:] = 0.0
            for b in c.biases:
                b[:] = 0.0
        batch = agent.buffer.sample(32, agent.rng)
        before = [w.copy() for w in agent.critics[0].weights]
        loss = agent.critic_update(batch)
        assert loss == 0.0
        for w0, w1 in zip(before, agent.critics[0].weights):
            np.testing.assert_array_equal(w0, w1)   # zero gradient, no move

    def test_constant_critic_closed_form(self):
        c_out, r = 0.7, -2.0
        agent = filled_agent(reward=lambda s, a: r)
        for c in agent.critics:
            for w in c.weights:
                w[:] = 0.0
            for b in c.biases:
                b[:] = 0.0
            c.biases[-1][:] = c_out
        batch = agent.buffer.sample(32, agent.rng)
        loss = agent.critic_update(batch)
        assert loss == pytest.approx((c_out - r * REWARD_SCALE) ** 2, rel=1e-12)

    def test_loss_matches_direct_evaluation(self):
        agent = filled_agent()
        batch = agent.buffer.sample(32, agent.rng)
        x = np.concatenate([batch["s"], batch["a"]], axis=1)
        expected = np.mean([np.mean((c.forward(x)[:, 0] - batch["r"] * REWARD_SCALE) ** 2)
                            for c in agent.critics])
        loss = agent.critic_update(batch)
        assert loss == pytest.approx(expected, abs=1e-10)

    def test_single_period_has_no_targets(self):
        agent = filled_agent()
        assert agent.targets is None

    def test_discounted_gamma_zero_matches_single_period(self):
        cfg0 = SacConfig(hidden=(16, 16), initial_random_steps=10, batch_size=16)
        a1 = filled_agent(cfg=cfg0, seed=4)
        # discounted-mode agent with target nets, then force gamma to zero
        cfg_disc = SacConfig(hidden=(16, 16), initial_random_steps=10, batch_size=16,
                             gamma=0.5)
        a2 = filled_agent(cfg=cfg_disc, seed=4)
        assert a2.targets is not None
        object.__setattr__(a2.cfg, "gamma", 0.0)
        batch = a1.buffer.sample(16, np.random.default_rng(0))
        assert a1.critic_update(batch) == pytest.approx(a2.critic_update(batch), abs=1e-12)


class TestActorUpdate:
    def test_flat_objective_no_motion(self):
        agent = filled_agent()
        agent.log_alpha[:] = -60.0   # alpha ~ 0
        for c in agent.critics:      # constant critics
            for w in c.weights:
                w[:] = 0.0
            for b in c.biases:
                b[:] = 0.0
        before = [p.copy() for p in agent.actor.net.parameters()]
        batch = agent.buffer.sample(32, agent.rng)
        agent.actor_update(batch)
        for p0, p1 in zip(before, agent.actor.net.parameters()):
            assert np.abs(p1 - p0).max() < 1e-12

    def test_loss_matches_direct_evaluation(self):
        agent = filled_agent(seed=8)
        batch = agent.buffer.sample(32, agent.rng)
        probe = copy.deepcopy(agent)
        loss = agent.actor_update(batch)
        # independent evaluation with the same noise draw
        xi = probe.rng.standard_normal((32, probe.action_dim))
        a, logp = probe.actor.sample(batch["s"], xi)
        x = np.concatenate([batch["s"], a], axis=1)
        q = np.minimum(probe.critics[0].forward(x)[:, 0],
                       probe.critics[1].forward(x)[:, 0])
        expected = float(np.mean(q - probe.alpha * logp))
        assert loss == pytest.approx(expected, abs=1e-10)

    def test_twin_swap_leaves_loss_unchanged(self):
        a1 = filled_agent(seed=13)
        a2 = copy.deepcopy(a1)
        a2.critics = [a2.critics[1], a2.critics[0]]
        a2.critic_opts = [a2.critic_opts[1], a2.critic_opts[0]]
        batch = a1.buffer.sample(32, np.random.default_rng(3))
        l1 = a1.actor_update(batch)
        l2 = a2.actor_update(batch)
        assert l1 == pytest.approx(l2, abs=1e-12)

    def test_bandit_convergence_direction(self):
        # short bandit run: the mean action must move toward the optimum;
        # the full-accuracy version is an acceptance criterion
        cfg = SacConfig(hidden=(32, 32), initial_random_steps=300, batch_size=64)
        agent = SacAgent(1, 1, cfg, seed=2)
        s = np.zeros(1)
        for step in range(1500):
            a = agent.act(s, "train")
            r = -(a[0] - 0.5) ** 2
            agent.buffer.push(MdpTransition(s, a, r, s, False))
            agent.env_steps += 1
            if agent.env_steps >= 300:
                for _ in range(2):
                    batch = agent.buffer.sample(64, agent.rng)
                    agent.update_round(batch)
        assert agent.actor.mean_action(s)[0] > 0.1


class TestTemperatureUpdate:
    def test_stationary_when_entropy_on_target(self):
        agent = filled_agent()
        batch = agent.buffer.sample(32, agent.rng)
        logp = np.full(32, -agent.entropy_target)   # entropy exactly H
        before = agent.alpha
        agent.temperature_update(batch, logp=logp)
        # mean(logp) + H = 0 -> zero gradient -> alpha unchanged
        assert agent.alpha == before

    def test_alpha_increases_when_entropy_low(self):
        agent = filled_agent()
        batch = agent.buffer.sample(32, agent.rng)
        logp = np.full(32, -agent.entropy_target + 1.0)   # entropy below target
        before = agent.alpha
        agent.temperature_update(batch, logp=logp)
        assert agent.alpha > before

    def test_alpha_decreases_when_entropy_high(self):
        agent = filled_agent()
        batch = agent.buffer.sample(32, agent.rng)
        logp = np.full(32, -agent.entropy_target - 1.0)   # entropy above target
        before = agent.alpha
        agent.temperature_update(batch, logp=logp)
        assert agent.alpha < before

    def test_default_entropy_target(self):
        agent = SacAgent(4, 3, SMALL, seed=0)
        assert agent.entropy_target == -3.0


class TestReplayBuffer:
    def test_stores_pre_actions_not_mapped(self):
        buf = ReplayBuffer(10, 2, 1)
        tr = MdpTransition(np.zeros(2), np.array([0.37]), -1.0, np.zeros(2), False)
        buf.push(tr)
        got = buf.sample(1, np.random.default_rng(0))
        assert got["a"][0, 0] == 0.37
        assert np.all(np.abs(buf.a[:1]) < 1.0)

    def test_ring_overwrite(self):
        buf = ReplayBuffer(3, 1, 1)
        for k in range(5):
            buf.push(MdpTransition(np.array([k]), np.zeros(1), 0.0, np.array([k]), False))
        assert len(buf) == 3
        assert set(buf.s[:, 0]) == {2.0, 3.0, 4.0}

    def test_uniform_sampling(self):
        buf = ReplayBuffer(100, 1, 1)
        for k in range(100):
            buf.push(MdpTransition(np.array([k]), np.zeros(1), 0.0, np.array([k]), False))
        rng = np.random.default_rng(0)
        idx = buf.sample(50_000, rng)["s"][:, 0]
        counts = np.bincount(idx.astype(int), minlength=100)
        assert counts.min() > 300 and counts.max() < 700   # 500 expected

    def test_non_finite_reward_rejected(self):
        buf = ReplayBuffer(4, 1, 1)
        with pytest.raises(ValueError):
            buf.push(MdpTransition(np.zeros(1), np.zeros(1), np.inf, np.zeros(1), False))


class TestCheckpointing:
    def test_roundtrip_restores_policy(self, tmp_path):
        agent = filled_agent(seed=6)
        for _ in range(5):
            agent.update_round(agent.buffer.sample(32, agent.rng))
        path = tmp_path / "agent.npz"
        agent.save(path)
        clone = SacAgent(6, 2, SMALL, seed=999)
        clone.load(path)
        s = np.linspace(-1, 1, 6)
        np.testing.assert_array_equal(agent.act(s, "eval"), clone.act(s, "eval"))
        assert clone.alpha == agent.alpha
        assert clone.env_steps == agent.env_steps


class TestResidualPolicy:
    def test_full_mode_no_reference(self):
        box = ActionBox(np.array([-1.0, 0.0]), np.array([1.0, 2.0]))
        pol = ResidualPolicy("full", box)
        a_m = pol.reference(np.array([0.5, 0.5]))
        np.testing.assert_array_equal(a_m, 0.0)
        rb = pol.bounds(a_m)
        np.testing.assert_array_equal(rb.lo, box.a_low)
        np.testing.assert_array_equal(rb.hi, box.a_high)

    def test_wide_mode_spans_box(self):
        box = ActionBox(np.array([-1.0]), np.array([1.0]))
        pol = ResidualPolicy("wide", box)
        a_m = np.array([0.4])
        rb = pol.bounds(a_m)
        assert rb.lo[0] == pytest.approx(-1.4)
        assert rb.hi[0] == pytest.approx(0.6)
        assert rb.hi[0] - rb.lo[0] == pytest.approx(2.0)   # same size as the box

    def test_rm_mode_uses_lambda(self):
        box = ActionBox(np.array([-1.0]), np.array([1.0]))
        pol = ResidualPolicy("rm", box, lambda_scale=0.5)
        rb = pol.bounds(np.array([0.0]))
        assert (rb.lo[0], rb.hi[0]) == (-0.5, 0.5)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            ResidualPolicy("slim", ActionBox(np.array([0.0]), np.array([1.0])))


@pytest.fixture(scope="module")
def short_run(case33, devices33, scenario33):
    from vvclab.scenario import device_action_box
    table = np.zeros((scenario33.n_steps, len(devices33)))
    box = device_action_box(devices33)
    cfg = SacConfig(hidden=(24, 24), initial_random_steps=48, batch_size=32)
    policy = ResidualPolicy("full", box)
    train_env = VvcEnv(case33, devices33, scenario33)
    eval_env = VvcEnv(case33, devices33, scenario33)
    agent, log = train_day_loop(train_env, eval_env, table, policy, cfg,
                                seed=5, days=2)
    return agent, log


class TestTrainDayLoop:

    def test_one_row_per_step(self, short_run):
        _, log = short_run
        assert len(log.day) == 2 * 96
        assert log.day[-1] == 1 and log.step[-1] == 95

    def test_updates_started_after_warmup(self, short_run):
        _, log = short_run
        assert np.all(np.isnan(log.critic_loss[:47]))
        assert np.all(np.isfinite(log.critic_loss[64:]))

    def test_executed_actions_logged_finite(self, short_run):
        _, log = short_run
        assert np.all(np.isfinite(log.train_reward))
        assert np.all(np.isfinite(log.test_reward))

    def test_buffer_holds_pre_actions(self, short_run):
        agent, _ = short_run
        stored = agent.buffer.a[:len(agent.buffer)]
        assert np.all(np.abs(stored) < 1.0)

    def test_full_reproducibility(self, case33, devices33, scenario33):
        from vvclab.scenario import device_action_box
        box = device_action_box(devices33)
        cfg = SacConfig(hidden=(16, 16), initial_random_steps=24, batch_size=16)
        outs = []
        for _ in range(2):
            policy = ResidualPolicy("full", box)
            agent, log = train_day_loop(VvcEnv(case33, devices33, scenario33),
                                        VvcEnv(case33, devices33, scenario33),
                                        np.zeros((scenario33.n_steps, 4)), policy,
                                        cfg, seed=9, days=1)
            outs.append((log.train_reward.copy(),
                         [p.copy() for p in agent.actor.net.parameters()]))
        np.testing.assert_array_equal(outs[0][0], outs[1][0])
        for a, b in zip(outs[0][1], outs[1][1]):
            assert np.array_equal(a, b)
