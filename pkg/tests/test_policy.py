"""Actor-critic and PPO machinery tests, oracle comparisons first."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    discounted_return_sum,
    finite_difference_gradient,
    gae_double_sum,
    max_relative_error,
)
from rmio import autodiff as ad
from rmio import nn, policy
from rmio.autodiff import Tensor
from rmio.errors import ContractViolationError, DimensionError, NumericError


@pytest.fixture
def rng():
    return np.random.default_rng(321)


def make_actor(rng, obs_dim=5, n_actions=4, hidden=8):
    return policy.RecurrentActor(obs_dim, "discrete", n_actions, rng, hidden=hidden, embed=8)


# -- gae / returns oracles -------------------------------------------------


def test_gae_lambda_zero_equals_delta(rng):
    T = 7
    r = rng.standard_normal(T)
    v = rng.standard_normal(T + 1)
    c = rng.integers(0, 2, T).astype(float)
    adv = policy.gae(r, v, c, gamma=0.9, lam=0.0)
    delta = r + 0.9 * c * v[1:] - v[:-1]
    assert np.allclose(adv, delta, atol=1e-12)


def test_gae_single_step_hand_case():
    adv = policy.gae([1.0], [0.0, 0.0], [1.0], gamma=0.9, lam=0.95)
    assert np.allclose(adv, [1.0])


def test_gae_matches_double_sum_oracle(rng):
    for _ in range(100):
        T = int(rng.integers(1, 9))
        r = rng.standard_normal(T)
        v = rng.standard_normal(T + 1)
        c = rng.choice([0.0, 1.0, 0.5], size=T)
        gamma = float(rng.uniform(0.5, 1.0))
        lam = float(rng.uniform(0.0, 1.0))
        fast = policy.gae(r, v, c, gamma, lam)
        slow = gae_double_sum(r, v, c, gamma, lam)
        assert np.abs(fast - slow).max() < 1e-10


def test_returns_gamma_zero_is_reward(rng):
    r = rng.standard_normal(5)
    out = policy.returns(r, rng.standard_normal(6), np.ones(5), gamma=0.0)
    assert np.allclose(out, r, atol=1e-12)


def test_returns_terminal_cut(rng):
    r = rng.standard_normal(4)
    v = rng.standard_normal(5)
    c = np.array([1.0, 0.0, 1.0, 1.0])
    out = policy.returns(r, v, c, gamma=0.99)
    assert abs(out[1] - r[1]) < 1e-12


def test_returns_matches_summation_oracle(rng):
    for _ in range(100):
        T = int(rng.integers(1, 9))
        r = rng.standard_normal(T)
        v = rng.standard_normal(T + 1)
        c = rng.choice([0.0, 1.0], size=T)
        gamma = float(rng.uniform(0.5, 1.0))
        fast = policy.returns(r, v, c, gamma)
        slow = discounted_return_sum(r, v, c, gamma)
        assert np.abs(fast - slow).max() < 1e-10


def test_returns_equal_gae_lambda_one_plus_values(rng):
    for _ in range(20):
        T = int(rng.integers(1, 9))
        r = rng.standard_normal(T)
        v = rng.standard_normal(T + 1)
        c = rng.choice([0.0, 1.0], size=T)
        gamma = float(rng.uniform(0.5, 1.0))
        lhs = policy.returns(r, v, c, gamma)
        rhs = policy.gae(r, v, c, gamma, lam=1.0) + v[:-1]
        assert np.abs(lhs - rhs).max() < 1e-9


def test_length_mismatch_raises(rng):
    with pytest.raises(DimensionError):
        policy.gae(np.ones(3), np.ones(3), np.ones(3), 0.9, 0.9)
    with pytest.raises(DimensionError):
        policy.returns(np.ones(3), np.ones(4), np.ones(2), 0.9)


# -- actor ------------------------------------------------------------------


def test_zero_weight_actor_uniform_distribution(rng):
    actor = make_actor(rng)
    for p in actor.parameters():
        p.data[...] = 0.0
    pol = policy.Policy(actor)
    obs = rng.standard_normal(5)
    dist, _ = actor.step(Tensor(obs[None]), Tensor(actor.initial_state(1)))
    assert np.allclose(dist.probs(), 0.25, atol=1e-12)


def test_mode_determinism(rng):
    pol = policy.Policy(make_actor(rng))
    obs = rng.standard_normal(5)
    state = pol.initial_state(1)[0]
    a1, lp1, s1 = pol.act(obs, state, explore=False, rng=np.random.default_rng(0))
    a2, lp2, s2 = pol.act(obs, state, explore=False, rng=np.random.default_rng(99))
    assert a1 == a2 and lp1 == lp2 and np.array_equal(s1, s2)


def test_log_prob_matches_softmax_oracle(rng):
    actor = make_actor(rng)
    pol = policy.Policy(actor)
    for _ in range(100):
        obs = rng.standard_normal(5)
        state = rng.standard_normal(actor.hidden) * 0.5
        action, logp, _ = pol.act(obs, state, explore=True, rng=rng)
        # independent re-derivation of the pmf from the head logits
        with ad.no_grad():
            dist, _ = actor.step(Tensor(obs[None]), Tensor(state[None]))
        logits = dist.logits.data[0]
        shifted = logits - logits.max()
        pmf = np.exp(shifted) / np.exp(shifted).sum()
        assert abs(np.exp(logp) - pmf[action]) < 1e-8


def test_continuous_log_prob_density_consistency(rng):
    actor = policy.RecurrentActor(4, "continuous", 2, rng, hidden=8, embed=8, action_scale=0.1)
    pol = policy.Policy(actor)
    for _ in range(100):
        obs = rng.standard_normal(4)
        state = rng.standard_normal(8) * 0.3
        action, logp, _ = pol.act(obs, state, explore=True, rng=rng)
        with ad.no_grad():
            dist, _ = actor.step(Tensor(obs[None]), Tensor(state[None]))
        mean = dist.mean.data[0]
        std = np.exp(actor.log_std.data)
        density = np.prod(np.exp(-0.5 * ((action - mean) / std) ** 2) / (std * np.sqrt(2 * np.pi)))
        assert abs(np.exp(logp) - density) < 1e-8


def test_actor_nonfinite_observation_raises(rng):
    pol = policy.Policy(make_actor(rng))
    with pytest.raises(NumericError):
        pol.act(np.array([np.nan] * 5), pol.initial_state(1)[0], True, rng)


def test_decentralized_act_ignores_other_agents(rng):
    actor = make_actor(rng)
    pol = policy.Policy(actor)
    obs = rng.standard_normal((3, 5))
    states = pol.initial_state(3)
    a, lp, s = pol.act_joint(obs, states, explore=False, rng=rng)
    perturbed = obs.copy()
    perturbed[1:] += 100.0
    a2, lp2, s2 = pol.act_joint(perturbed, states, explore=False, rng=rng)
    assert a[0] == a2[0]
    assert lp[0] == lp2[0]
    assert np.array_equal(s[0], s2[0])


# -- critic -------------------------------------------------------------------


def test_zero_weight_critic_outputs_zero(rng):
    critic = policy.CentralCritic(4, 3, rng, hidden=8)
    for p in critic.parameters():
        p.data[...] = 0.0
    v = critic.value(rng.standard_normal((2, 3, 4)))
    assert np.array_equal(v.data, np.zeros(2))


def test_critic_deterministic(rng):
    critic = policy.CentralCritic(4, 3, rng, hidden=8)
    obs = rng.standard_normal((3, 4))
    assert critic.value(obs).data.tobytes() == critic.value(obs).data.tobytes()


def test_critic_rejects_incomplete_joint_observation(rng):
    critic = policy.CentralCritic(4, 3, rng, hidden=8)
    obs = rng.standard_normal((3, 4))
    obs[1] = np.nan
    with pytest.raises(ContractViolationError):
        critic.value(obs)


def test_critic_overfits_constant_target(rng):
    critic = policy.CentralCritic(3, 2, rng, hidden=16)
    opt = nn.Adam(critic.named_parameters(), lr=3e-3)
    obs = rng.standard_normal((8, 2, 3))
    for _ in range(500):
        opt.zero_grad()
        err = critic.value(obs) - 3.0
        ad.tmean(err * err).backward()
        opt.step()
    assert np.abs(critic.value(obs).data - 3.0).max() < 0.1


# -- ppo loss -----------------------------------------------------------------


def make_batch(rng, actor, B=2, T=3, n=2, obs_dim=5):
    obs = rng.standard_normal((B, T, n, obs_dim))
    actions = rng.integers(0, actor.action_dim, size=(B, T, n))
    hidden0 = np.zeros((B, n, actor.hidden))
    with ad.no_grad():
        state = Tensor(hidden0)
        logps = []
        for t in range(T):
            dist, state = actor.step(Tensor(obs[:, t]), state)
            logps.append(dist.log_prob(actions[:, t]).data)
    old_logp = np.stack(logps, axis=1)
    adv = policy.normalize_advantages(rng.standard_normal((B, T)))
    rets = rng.standard_normal((B, T))
    return policy.PPOBatch(obs, actions, old_logp, adv, rets, hidden0)


def test_ppo_identity_policy_zero_surrogate(rng):
    actor = make_actor(rng)
    critic = policy.CentralCritic(5, 2, rng, hidden=8)
    batch = make_batch(rng, actor)
    actor_loss, critic_loss, entropy = policy.ppo_loss(actor, critic, batch, 0.2, 0.0)
    # ratio == 1 everywhere, so the surrogate is the mean normalized advantage = 0
    assert abs(float(actor_loss.data)) < 1e-10
    assert critic_loss.data >= 0.0


def test_clip_arithmetic():
    out = policy.clipped_objective(Tensor(np.array([1.5])), np.array([1.0]), 0.2)
    assert np.allclose(out.data, [1.2])
    out = policy.clipped_objective(Tensor(np.array([0.5])), np.array([-1.0]), 0.2)
    assert np.allclose(out.data, [-0.8])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_clipped_objective_is_pessimistic(seed):
    # For positive advantages the surrogate never exceeds the unclipped
    # objective; for negative ones it is never smaller in magnitude.
    r = np.random.default_rng(seed)
    ratio = Tensor(r.uniform(0.0, 2.5, size=16))
    adv = r.standard_normal(16)
    clipped = policy.clipped_objective(ratio, adv, 0.2).data
    unclipped = ratio.data * adv
    assert (clipped[adv > 0] <= unclipped[adv > 0] + 1e-12).all()
    assert (np.abs(clipped[adv < 0]) >= np.abs(unclipped[adv < 0]) - 1e-12).all()
    assert (clipped <= unclipped + 1e-12).all()


def test_ppo_missing_old_log_probs(rng):
    actor = make_actor(rng)
    critic = policy.CentralCritic(5, 2, rng, hidden=8)
    batch = make_batch(rng, actor)
    batch.old_log_probs = None
    with pytest.raises(ValueError):
        policy.ppo_loss(actor, critic, batch, 0.2, 0.01)


def test_ppo_actor_gradient_matches_finite_differences(rng):
    actor = make_actor(rng, obs_dim=4, n_actions=3, hidden=6)
    critic = policy.CentralCritic(4, 2, rng, hidden=6)
    batch = make_batch(rng, actor, B=1, T=3, n=2, obs_dim=4)
    # shift old log-probs so ratios are away from the clip kinks
    batch.old_log_probs = batch.old_log_probs + rng.uniform(-0.05, 0.05, batch.old_log_probs.shape)

    def loss_value():
        a, _, _ = policy.ppo_loss(actor, critic, batch, 0.2, 0.01)
        return float(a.data)

    actor.zero_grad()
    actor_loss, _, _ = policy.ppo_loss(actor, critic, batch, 0.2, 0.01)
    actor_loss.backward()
    checked = 0
    for name, p in actor.named_parameters().items():
        fd = finite_difference_gradient(loss_value, p.data)
        err = max_relative_error(p.grad, fd)
        assert err < 1e-4, (name, err)
        checked += 1
    assert checked >= 6


def test_normalize_advantages_guard():
    adv = np.full(5, 3.0)
    out = policy.normalize_advantages(adv)
    assert np.allclose(out, 0.0)
    r = np.random.default_rng(0).standard_normal(64)
    out = policy.normalize_advantages(r)
    assert abs(out.mean()) < 1e-12 and abs(out.std() - 1.0) < 1e-9
