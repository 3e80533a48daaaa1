"""Dual experience replay: a real-trajectory buffer (episode granular)
and a pseudo-trajectory buffer (segment granular) with independent
capacities, FIFO eviction, and seed-deterministic window sampling.

Pseudo segments carry the world-model version that generated them, so a
policy batch can be shown to mix segments from multiple model versions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from rmio.errors import EmptyBufferError

REAL = "real"
PSEUDO = "pseudo"


@dataclass
class TrajectorySegment:
    """Time-ordered per-step records for one episode or rollout fragment.

    Real segments hold complete observations and both reward variants;
    pseudo segments hold model predictions plus the rollout-time policy
    bookkeeping PPO needs (old log-probs, actor hidden states).
    """

    observations: np.ndarray  # (L, n, obs_dim)
    mask: np.ndarray  # (L, n) bool
    actions: np.ndarray  # (L, n) int64 or (L, n, act_dim) float64
    reward_raw: np.ndarray  # (L,)
    continuation: np.ndarray  # (L, n) float64 in [0, 1]
    provenance: str
    episode_id: int
    step_range: tuple[int, int] = (0, 0)
    reward_smoothed: np.ndarray | None = None
    old_log_probs: np.ndarray | None = None  # (L, n)
    actor_hidden: np.ndarray | None = None  # (L, n, hidden) state before acting
    model_version: int | None = None

    def __post_init__(self):
        L = len(self.reward_raw)
        if self.observations.shape[0] != L or self.mask.shape[0] != L:
            raise ValueError("segment fields disagree on length")
        if self.provenance not in (REAL, PSEUDO):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance == REAL:
            if not self.mask.all():
                raise ValueError("real segments must have all-present masks")
            if self.reward_smoothed is None:
                raise ValueError("real segments must carry smoothed rewards")
        elif self.reward_smoothed is not None:
            raise ValueError("pseudo segments carry predicted rewards only")
        if self.step_range == (0, 0):
            self.step_range = (0, L)

    def __len__(self) -> int:
        return len(self.reward_raw)

    @property
    def n_agents(self) -> int:
        return self.observations.shape[1]

    def window(self, offset: int, length: int) -> "TrajectorySegment":
        """Contiguous sub-segment [offset, offset + length)."""
        if offset < 0 or offset + length > len(self):
            raise ValueError(f"window [{offset}, {offset + length}) outside segment of length {len(self)}")
        sl = slice(offset, offset + length)
        opt = lambda a: None if a is None else a[sl]
        return replace(
            self,
            observations=self.observations[sl],
            mask=self.mask[sl],
            actions=self.actions[sl],
            reward_raw=self.reward_raw[sl],
            continuation=self.continuation[sl],
            reward_smoothed=opt(self.reward_smoothed),
            old_log_probs=opt(self.old_log_probs),
            actor_hidden=opt(self.actor_hidden),
            step_range=(self.step_range[0] + offset, self.step_range[0] + offset + length),
        )


class DualReplayStore:
    """Paired FIFO buffers; provenance never mixes across them."""

    def __init__(self, real_capacity: int = 200, pseudo_capacity: int = 2000):
        self.real: deque[TrajectorySegment] = deque(maxlen=real_capacity)
        self.pseudo: deque[TrajectorySegment] = deque(maxlen=pseudo_capacity)
        self.pushed = {REAL: 0, PSEUDO: 0}
        self._recent_ids = {REAL: deque(maxlen=4096), PSEUDO: deque(maxlen=4096)}

    def _buffer(self, which: str) -> deque:
        if which == REAL:
            return self.real
        if which == PSEUDO:
            return self.pseudo
        raise ValueError(f"unknown buffer {which!r}")

    def push(self, segment: TrajectorySegment, which: str | None = None) -> None:
        if which is not None and which != segment.provenance:
            raise ValueError(
                f"segment provenance {segment.provenance!r} does not match target buffer {which!r}"
            )
        self._buffer(segment.provenance).append(segment)
        self.pushed[segment.provenance] += 1

    def sample_segments(self, which: str, count: int, length: int, seed) -> list[TrajectorySegment]:
        """`count` contiguous windows, uniform over valid (episode, offset) pairs."""
        buf = self._buffer(which)
        if not buf:
            raise EmptyBufferError(f"{which} buffer is empty")
        if which == REAL:
            shortest = min(len(s) for s in buf)
            if length > shortest:
                raise ValueError(
                    f"window length {length} exceeds shortest stored episode ({shortest})"
                )
        candidates = [s for s in buf if len(s) >= length]
        if not candidates:
            raise ValueError(f"no stored segment is at least {length} steps long")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        counts = np.array([len(s) - length + 1 for s in candidates])
        cumulative = np.cumsum(counts)
        picks = rng.integers(0, cumulative[-1], size=count)
        out = []
        for p in picks:
            idx = int(np.searchsorted(cumulative, p, side="right"))
            offset = int(p - (cumulative[idx - 1] if idx else 0))
            out.append(candidates[idx].window(offset, length))
            self._recent_ids[which].append(candidates[idx].episode_id)
        return out

    def diversity_stat(self, which: str, last_n: int | None = None) -> int:
        """Distinct source episodes among the most recent sampled windows."""
        ids = list(self._recent_ids[which])
        if last_n is not None:
            ids = ids[-last_n:]
        if not ids:
            raise EmptyBufferError("no samples drawn yet")
        return len(set(ids))

    def dump(self, path, which: str = REAL) -> int:
        """Write one step per line: episode id, t, mask bits, observation
        floats, action, raw reward, smoothed reward, continuation bits."""
        rows = 0
        with open(path, "w", encoding="utf-8") as fh:
            for seg in self._buffer(which):
                for t in range(len(seg)):
                    fields = [str(seg.episode_id), str(seg.step_range[0] + t)]
                    fields += [str(int(b)) for b in seg.mask[t]]
                    fields += [repr(float(v)) for v in seg.observations[t].reshape(-1)]
                    fields += [repr(float(v)) for v in np.atleast_1d(seg.actions[t]).reshape(-1)]
                    fields.append(repr(float(seg.reward_raw[t])))
                    smoothed = seg.reward_smoothed[t] if seg.reward_smoothed is not None else float("nan")
                    fields.append(repr(float(smoothed)))
                    fields += [repr(float(c)) for c in np.atleast_1d(seg.continuation[t])]
                    fh.write(" ".join(fields) + "\n")
                    rows += 1
        return rows
