"""Desk-scale cooperative environments and the observation-loss wrapper.

Two toy tasks exercise the full stack: a discrete grid rendezvous task
and a continuous point-mass homing task.  Both are deterministic given
the reset seed, which keeps brute-force oracles exact.

The loss wrapper masks whole observations per agent: a loss event starts
with probability `p_loss` per step (only while no event is active),
covers a subset of agents chosen by the configured rule, and persists
for a fixed number of steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np

from rmio.errors import ContractViolationError, DimensionError

DISCRETE = "discrete"
CONTINUOUS = "continuous"


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    obs_dim: int
    action_kind: str  # DISCRETE or CONTINUOUS
    action_dim: int  # number of actions, or action vector width
    max_steps: int
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError("need at least two agents")
        if self.max_steps < 10:
            raise ValueError("episodes must allow at least 10 steps")


@dataclass
class MaskedJointObservation:
    """Per-agent observation vectors with a presence mask.

    Absent rows are poisoned with NaN so accidental reads propagate
    loudly; use `observed()` / `require_complete()` for checked access.
    """

    values: np.ndarray  # (n, obs_dim); absent rows NaN
    mask: np.ndarray  # (n,) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape[0] != self.mask.shape[0]:
            raise DimensionError("mask length must equal agent count")
        self.values = self.values.copy()
        self.values[~self.mask] = np.nan

    @property
    def n_agents(self) -> int:
        return self.mask.shape[0]

    @property
    def n_observing(self) -> int:
        return int(self.mask.sum())

    def observed(self, agent: int) -> np.ndarray:
        if not self.mask[agent]:
            raise ContractViolationError(f"agent {agent} has no observation this step")
        return self.values[agent]

    def require_complete(self) -> np.ndarray:
        if not self.mask.all():
            missing = np.flatnonzero(~self.mask).tolist()
            raise ContractViolationError(f"observations missing for agents {missing}")
        return self.values

    @classmethod
    def complete(cls, values: np.ndarray) -> "MaskedJointObservation":
        return cls(values=values, mask=np.ones(values.shape[0], dtype=bool))


# -- rendezvous grid task ---------------------------------------------------

RENDEZVOUS_ACTIONS = 5  # stay, up, down, left, right
_MOVES = np.array([[0, 0], [0, -1], [0, 1], [-1, 0], [1, 0]])  # (dx, dy)


def _mean_pairwise_manhattan(positions: np.ndarray) -> float:
    total = 0.0
    pairs = 0
    for i, j in combinations(range(positions.shape[0]), 2):
        total += float(np.abs(positions[i] - positions[j]).sum())
        pairs += 1
    return total / pairs


class RendezvousEnv:
    """Agents on a grid earn shaped reward for closing their mean pairwise
    Manhattan distance and a +1 bonus when all pairs are within Chebyshev
    distance 1 (which also ends the episode)."""

    VISIBILITY_RADIUS = 2
    SHAPING = 0.1

    def __init__(self, n_agents: int = 3, width: int = 7, max_steps: int = 40):
        if n_agents > width * width:
            raise ValueError(f"cannot place {n_agents} agents on a {width}x{width} grid")
        self.width = width
        self.spec = EnvSpec(
            n_agents=n_agents,
            obs_dim=2 + 3 * (n_agents - 1),
            action_kind=DISCRETE,
            action_dim=RENDEZVOUS_ACTIONS,
            max_steps=max_steps,
        )
        self.positions: np.ndarray | None = None
        self.steps = 0

    def reset(self, seed) -> MaskedJointObservation:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        cells = rng.choice(self.width * self.width, size=self.spec.n_agents, replace=False)
        self.positions = np.stack([cells % self.width, cells // self.width], axis=1).astype(np.int64)
        self.steps = 0
        return MaskedJointObservation.complete(self._observe())

    def reset_from(self, positions) -> MaskedJointObservation:
        """Start from explicit agent cells (test and oracle hook)."""
        positions = np.asarray(positions, dtype=np.int64)
        if positions.shape != (self.spec.n_agents, 2):
            raise DimensionError(f"expected positions {(self.spec.n_agents, 2)}, got {positions.shape}")
        if (positions < 0).any() or (positions >= self.width).any():
            raise ValueError("positions outside the grid")
        self.positions = positions.copy()
        self.steps = 0
        return MaskedJointObservation.complete(self._observe())

    def _observe(self) -> np.ndarray:
        n = self.spec.n_agents
        obs = np.zeros((n, self.spec.obs_dim))
        scale = self.width - 1
        for i in range(n):
            obs[i, :2] = self.positions[i] / scale
            col = 2
            for j in range(n):
                if j == i:
                    continue
                delta = self.positions[j] - self.positions[i]
                if np.abs(delta).max() <= self.VISIBILITY_RADIUS:
                    obs[i, col : col + 3] = (1.0, delta[0] / self.width, delta[1] / self.width)
                # else leave the sentinel (0, 0, 0)
                col += 3
        return obs

    def _success(self) -> bool:
        n = self.spec.n_agents
        return all(
            np.abs(self.positions[i] - self.positions[j]).max() <= 1
            for i, j in combinations(range(n), 2)
        )

    def step(self, actions) -> tuple[MaskedJointObservation, float, bool, dict]:
        actions = np.asarray(actions)
        if actions.shape != (self.spec.n_agents,):
            raise DimensionError(f"expected {self.spec.n_agents} actions, got shape {actions.shape}")
        if actions.dtype.kind not in "iu" or (actions < 0).any() or (actions >= RENDEZVOUS_ACTIONS).any():
            raise ValueError(f"actions must be integers in [0, {RENDEZVOUS_ACTIONS}), got {actions}")
        before = _mean_pairwise_manhattan(self.positions)
        moved = self.positions + _MOVES[actions]
        in_grid = ((moved >= 0) & (moved < self.width)).all(axis=1)
        self.positions = np.where(in_grid[:, None], moved, self.positions)
        after = _mean_pairwise_manhattan(self.positions)
        reward = (before - after) * self.SHAPING
        self.steps += 1
        success = self._success()
        if success:
            reward += 1.0
        truncated = not success and self.steps >= self.spec.max_steps
        done = success or truncated
        info = {"success": success, "truncated": truncated, "positions": self.positions.copy()}
        return MaskedJointObservation.complete(self._observe()), reward, done, info


# -- point-mass homing task ---------------------------------------------------


class PointMassEnv:
    """Point masses in [-1, 1]^2 steer toward a shared fixed target at the
    origin; team reward is the negative mean distance after each move."""

    ACTION_LIMIT = 0.1

    def __init__(self, n_agents: int = 3, max_steps: int = 50):
        self.spec = EnvSpec(
            n_agents=n_agents,
            obs_dim=2 + 2 + 2 * (n_agents - 1),
            action_kind=CONTINUOUS,
            action_dim=2,
            max_steps=max_steps,
            action_low=-self.ACTION_LIMIT,
            action_high=self.ACTION_LIMIT,
        )
        self.target = np.zeros(2)
        self.positions: np.ndarray | None = None
        self.steps = 0

    def reset(self, seed) -> MaskedJointObservation:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.positions = rng.uniform(-1.0, 1.0, size=(self.spec.n_agents, 2))
        self.steps = 0
        return MaskedJointObservation.complete(self._observe())

    def reset_from(self, positions) -> MaskedJointObservation:
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != (self.spec.n_agents, 2):
            raise DimensionError(f"expected positions {(self.spec.n_agents, 2)}, got {positions.shape}")
        self.positions = positions.copy()
        self.steps = 0
        return MaskedJointObservation.complete(self._observe())

    def _observe(self) -> np.ndarray:
        n = self.spec.n_agents
        obs = np.zeros((n, self.spec.obs_dim))
        for i in range(n):
            obs[i, :2] = self.positions[i]
            obs[i, 2:4] = self.target - self.positions[i]
            col = 4
            for j in range(n):
                if j == i:
                    continue
                obs[i, col : col + 2] = self.positions[j] - self.positions[i]
                col += 2
        return obs

    def step(self, actions) -> tuple[MaskedJointObservation, float, bool, dict]:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.spec.n_agents, 2):
            raise DimensionError(f"expected actions {(self.spec.n_agents, 2)}, got {actions.shape}")
        if not np.isfinite(actions).all():
            raise ValueError("continuous actions must be finite")
        actions = np.clip(actions, -self.ACTION_LIMIT, self.ACTION_LIMIT)
        self.positions = np.clip(self.positions + actions, -1.0, 1.0)
        distances = np.linalg.norm(self.positions - self.target, axis=1)
        reward = -float(distances.mean())
        self.steps += 1
        truncated = self.steps >= self.spec.max_steps
        info = {"success": False, "truncated": truncated, "positions": self.positions.copy()}
        return MaskedJointObservation.complete(self._observe()), reward, truncated, info


# -- observation loss wrapper -------------------------------------------------

RANDOM_SUBSET = "random-subset"
FIXED_ALL_BUT_ONE = "fixed"


@dataclass(frozen=True)
class LossConfig:
    p_loss: float = 0.0
    duration: int = 10
    subset_rule: str = RANDOM_SUBSET

    def __post_init__(self):
        if not 0.0 <= self.p_loss <= 1.0:
            raise ValueError(f"p_loss must lie in [0, 1], got {self.p_loss}")
        if self.duration < 1:
            raise ValueError(f"loss duration must be >= 1, got {self.duration}")
        if self.subset_rule not in (RANDOM_SUBSET, FIXED_ALL_BUT_ONE):
            raise ValueError(f"unknown subset rule {self.subset_rule!r}")


class ObservationLossWrapper:
    """Applies the loss process on top of a complete-observation env.

    Loss events do not overlap: while any agent's counter is positive no
    new event can start.  The wrapper draws from its own RNG stream, so
    underlying env dynamics are identical with and without it.
    """

    def __init__(self, env, config: LossConfig, rng: np.random.Generator | int = 0):
        self.env = env
        self.spec = env.spec
        self.config = config
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.counters = np.zeros(env.spec.n_agents, dtype=np.int64)
        self.loss_steps = 0  # steps with at least one masked agent
        self.loss_events = 0  # event starts

    def _choose_subset(self) -> np.ndarray:
        n = self.spec.n_agents
        if self.config.subset_rule == FIXED_ALL_BUT_ONE:
            observer = int(self.rng.integers(n))
            return np.array([i for i in range(n) if i != observer])
        size = int(self.rng.integers(1, n + 1))
        return self.rng.choice(n, size=size, replace=False)

    def _apply(self, obs: MaskedJointObservation) -> MaskedJointObservation:
        if (self.counters == 0).all() and self.rng.random() < self.config.p_loss:
            subset = self._choose_subset()
            self.counters[subset] = self.config.duration
            self.loss_events += 1
        mask = self.counters == 0
        if not mask.all():
            self.loss_steps += 1
        np.maximum(self.counters - 1, 0, out=self.counters)
        return MaskedJointObservation(values=obs.values, mask=mask)

    def reset(self, seed) -> MaskedJointObservation:
        self.counters[...] = 0
        obs = self.env.reset(seed)
        return self._apply(obs)

    def step(self, actions):
        obs, reward, done, info = self.env.step(actions)
        info = dict(info)
        info["true_values"] = obs.values.copy()  # evaluation-only channel
        return self._apply(obs), reward, done, info
