"""Recurrent actor-critic with PPO updates.

The actor is decentralized: one GRU-backed network, shared by all
agents, that reads a single agent's local observation.  The critic is
centralized: an MLP over the concatenated joint observation, used during
training only.  Advantage estimation, bootstrapped returns, and the
clipped surrogate objective live here as standalone functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rmio import autodiff as ad
from rmio import nn
from rmio.autodiff import Tensor
from rmio.errors import ContractViolationError, DimensionError, NumericError


class CategoricalAction:
    """Plain categorical over discrete actions (no straight-through)."""

    def __init__(self, logits: Tensor):
        self.logits = logits  # (..., n_actions)

    def probs(self) -> np.ndarray:
        return ad.softmax(self.logits.detach()).data

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        p = self.probs()
        cdf = np.cumsum(p, axis=-1)
        u = rng.random(p.shape[:-1] + (1,))
        idx = (u > cdf).sum(axis=-1)
        return np.minimum(idx, p.shape[-1] - 1).astype(np.int64)

    def mode(self) -> np.ndarray:
        return self.logits.data.argmax(axis=-1).astype(np.int64)

    def log_prob(self, actions: np.ndarray) -> Tensor:
        lp = ad.log_softmax(self.logits, axis=-1)
        one_hot = np.zeros(lp.shape)
        np.put_along_axis(one_hot, np.asarray(actions)[..., None], 1.0, axis=-1)
        return ad.tsum(lp * one_hot, axis=-1)

    def entropy(self) -> Tensor:
        lp = ad.log_softmax(self.logits, axis=-1)
        return -ad.tsum(ad.exp(lp) * lp, axis=-1)


class GaussianAction:
    """Diagonal gaussian over continuous actions."""

    def __init__(self, mean: Tensor, log_std: Tensor):
        self.mean = mean  # (..., act_dim)
        self.log_std = log_std  # broadcastable to mean

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        std = np.exp(np.broadcast_to(self.log_std.data, self.mean.shape))
        return self.mean.data + std * rng.standard_normal(self.mean.shape)

    def mode(self) -> np.ndarray:
        return self.mean.data.copy()

    def log_prob(self, actions: np.ndarray) -> Tensor:
        z = (ad.as_tensor(actions) - self.mean) * ad.exp(-self.log_std)
        per_dim = -0.5 * (z * z) - self.log_std - 0.5 * np.log(2.0 * np.pi)
        return ad.tsum(per_dim, axis=-1)

    def entropy(self) -> Tensor:
        width = self.mean.shape[-1]
        per = ad.tsum(self.log_std, axis=-1) if self.log_std.ndim else self.log_std * float(width)
        return per + 0.5 * width * (1.0 + np.log(2.0 * np.pi)) + ad.as_tensor(np.zeros(self.mean.shape[:-1]))


class RecurrentActor(nn.Module):
    """Shared-parameter decentralized actor: embed -> GRU -> action head."""

    def __init__(
        self,
        obs_dim: int,
        action_kind: str,
        action_dim: int,
        rng: np.random.Generator,
        hidden: int = 64,
        embed: int = 64,
        action_scale: float = 1.0,
    ):
        self.obs_dim = obs_dim
        self.action_kind = action_kind
        self.action_dim = action_dim
        self.hidden = hidden
        self.action_scale = action_scale
        self.embed = nn.MLP([obs_dim, embed], "tanh", rng)
        self.gru = nn.GRUCell(embed, hidden, rng)
        self.head = nn.MLP([hidden, hidden, action_dim], "tanh", rng)
        if action_kind == "continuous":
            self.log_std = nn.Parameter(np.full(action_dim, -1.5))

    def initial_state(self, *lead: int) -> np.ndarray:
        return np.zeros(lead + (self.hidden,))

    def step(self, obs: Tensor, state: Tensor):
        """One recurrent step; returns (distribution, new_state)."""
        emb = ad.tanh(self.embed(obs))
        new_state = self.gru.step(state, emb)
        raw = self.head(new_state)
        if self.action_kind == "continuous":
            mean = ad.tanh(raw) * self.action_scale
            dist = GaussianAction(mean, ad.as_tensor(self.log_std))
        else:
            dist = CategoricalAction(raw)
        return dist, new_state


class Policy:
    """Per-agent action interface over the shared actor."""

    def __init__(self, actor: RecurrentActor):
        self.actor = actor

    def initial_state(self, n_agents: int) -> np.ndarray:
        return self.actor.initial_state(n_agents)

    def act(self, obs_i: np.ndarray, state_i: np.ndarray, explore: bool, rng: np.random.Generator):
        """Act from one agent's local observation only.

        Returns (action, log_probability, new_state)."""
        obs_i = np.asarray(obs_i, dtype=np.float64)
        if not np.isfinite(obs_i).all():
            raise NumericError("non-finite observation passed to the actor")
        with ad.no_grad():
            dist, new_state = self.actor.step(Tensor(obs_i[None, :]), Tensor(state_i[None, :]))
            action = dist.sample(rng) if explore else dist.mode()
            logp = dist.log_prob(action).data
        return _squeeze_action(action), float(logp[0]), new_state.data[0]

    def act_joint(self, obs: np.ndarray, states: np.ndarray, explore: bool, rng: np.random.Generator):
        """Vectorized act over any leading axes (e.g. batch x agents)."""
        obs = np.asarray(obs, dtype=np.float64)
        if not np.isfinite(obs).all():
            raise NumericError("non-finite observation passed to the actor")
        with ad.no_grad():
            dist, new_state = self.actor.step(Tensor(obs), Tensor(states))
            actions = dist.sample(rng) if explore else dist.mode()
            logp = dist.log_prob(actions).data
        return actions, logp, new_state.data


def _squeeze_action(action: np.ndarray) -> np.ndarray | int:
    if action.ndim == 1 and action.dtype.kind in "iu":
        return int(action[0])
    return action[0]


class CentralCritic(nn.Module):
    """State value from the concatenated joint observation."""

    def __init__(self, obs_dim: int, n_agents: int, rng: np.random.Generator, hidden: int = 64):
        self.obs_dim = obs_dim
        self.n_agents = n_agents
        self.net = nn.MLP([obs_dim * n_agents, hidden, hidden, 1], "tanh", rng)

    def value(self, obs_joint) -> Tensor:
        """obs_joint: (..., n, obs_dim) complete observations -> (...,)."""
        obs_joint = ad.as_tensor(obs_joint)
        if obs_joint.shape[-2:] != (self.n_agents, self.obs_dim):
            raise DimensionError(
                f"critic expects (..., {self.n_agents}, {self.obs_dim}), got {obs_joint.shape}"
            )
        if not np.isfinite(obs_joint.data).all():
            raise ContractViolationError("critic requires a complete joint observation")
        single = obs_joint.ndim == 2
        if single:
            obs_joint = ad.reshape(obs_joint, (1,) + obs_joint.shape)
        flat = ad.reshape(obs_joint, obs_joint.shape[:-2] + (self.n_agents * self.obs_dim,))
        out = self.net(flat)
        out = ad.reshape(out, out.shape[:-1])
        return ad.reshape(out, ()) if single else out


# -- advantage estimation -----------------------------------------------------


def _check_lengths(rewards, values, continuations):
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    continuations = np.asarray(continuations, dtype=np.float64)
    if len(values) != len(rewards) + 1 or len(continuations) != len(rewards):
        raise DimensionError(
            f"need len(values) == T+1 and len(continuations) == T; got "
            f"T={len(rewards)}, values={len(values)}, continuations={len(continuations)}"
        )
    return rewards, values, continuations


def gae(rewards, values, continuations, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimation by backward recursion.

    delta_t = r_t + gamma * c_t * V_{t+1} - V_t
    A_t = delta_t + gamma * lam * c_t * A_{t+1}
    """
    rewards, values, cont = _check_lengths(rewards, values, continuations)
    delta = rewards + gamma * cont * values[1:] - values[:-1]
    adv = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = delta[t] + gamma * lam * cont[t] * acc
        adv[t] = acc
    return adv


def returns(rewards, values, continuations, gamma: float) -> np.ndarray:
    """Bootstrapped discounted returns: R_t = r_t + gamma * c_t * R_{t+1},
    seeded beyond the segment with V_{T+1}."""
    rewards, values, cont = _check_lengths(rewards, values, continuations)
    out = np.zeros_like(rewards)
    acc = values[-1]
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * cont[t] * acc
        out[t] = acc
    return out


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    std = adv.std()
    return (adv - adv.mean()) / max(std, 1e-8)


def clipped_objective(ratio: Tensor, advantages, epsilon: float) -> Tensor:
    """Per-sample min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)."""
    adv = ad.as_tensor(advantages)
    return ad.minimum(ratio * adv, ad.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv)


@dataclass
class PPOBatch:
    """Segment-shaped training batch: leading axes (batch, time)."""

    observations: np.ndarray  # (B, T, n, obs_dim)
    actions: np.ndarray  # (B, T, n) int or (B, T, n, act_dim)
    old_log_probs: np.ndarray | None  # (B, T, n)
    advantages: np.ndarray  # (B, T), normalized by the caller
    returns: np.ndarray  # (B, T)
    actor_hidden0: np.ndarray  # (B, n, hidden) state at window start


def ppo_loss(
    actor: RecurrentActor,
    critic: CentralCritic,
    batch: PPOBatch,
    epsilon: float,
    entropy_coef: float,
):
    """Clipped-surrogate actor loss, squared-error critic loss, mean entropy.

    The ratio is the joint one: per-agent log-prob deltas are summed over
    agents before exponentiation.  Maximizing the surrogate is implemented
    as minimizing its negation.
    """
    if batch.old_log_probs is None:
        raise ValueError("PPO batch is missing old log-probabilities")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"clip epsilon must lie in (0, 1), got {epsilon}")
    B, T = batch.advantages.shape
    state = Tensor(batch.actor_hidden0)
    step_logps = []
    step_entropies = []
    for t in range(T):
        dist, state = actor.step(Tensor(batch.observations[:, t]), state)
        step_logps.append(dist.log_prob(batch.actions[:, t]))  # (B, n)
        step_entropies.append(dist.entropy())
    ratios = []
    for t in range(T):
        delta = ad.tsum(step_logps[t] - batch.old_log_probs[:, t], axis=-1)  # (B,)
        ratios.append(ad.reshape(ad.exp(delta), (B, 1)))
    ratio = ad.concatenate(ratios, axis=1)  # (B, T)
    surrogate = clipped_objective(ratio, batch.advantages, epsilon)
    entropy = ad.tmean(ad.concatenate([ad.reshape(e, (B, 1, -1)) for e in step_entropies], axis=1))
    actor_loss = -ad.tmean(surrogate) - entropy_coef * entropy
    values = critic.value(batch.observations)  # (B, T)
    err = values - batch.returns
    critic_loss = ad.tmean(err * err)
    return actor_loss, critic_loss, float(entropy.data)
