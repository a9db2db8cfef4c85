"""Trajectories, the simulator interface and trajectory sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np


@dataclass
class Trajectory:
    """One episode of ``(action, observation[, reward])`` steps.

    ``probs`` holds the behaviour policy's probability of each chosen action
    and is used by the learner to undo action-selection weighting. ``dones``
    marks transitions whose value must not be bootstrapped (goal resets,
    terminal states).
    """

    actions: list[int]
    observations: list[int]
    rewards: list[float] | None = None
    dones: list[bool] | None = None
    probs: list[float] | None = None
    _pairs: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.actions)
        if len(self.observations) != n:
            raise ValueError("actions and observations differ in length")
        for name in ("rewards", "dones", "probs"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise ValueError(f"{name} length {len(v)} != {n}")

    def __len__(self):
        return len(self.actions)

    @property
    def pairs(self) -> tuple:
        if self._pairs is None:
            self._pairs = tuple(zip(map(int, self.actions), map(int, self.observations)))
        return self._pairs

    def to_record(self) -> dict:
        rec: dict[str, Any] = {"actions": list(map(int, self.actions)),
                               "observations": list(map(int, self.observations))}
        if self.rewards is not None:
            rec["rewards"] = [float(r) for r in self.rewards]
        if self.dones is not None:
            rec["dones"] = [bool(d) for d in self.dones]
        if self.probs is not None:
            rec["probs"] = [float(p) for p in self.probs]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Trajectory":
        return cls(rec["actions"], rec["observations"], rec.get("rewards"),
                   rec.get("dones"), rec.get("probs"))


TrajectorySet = list  # list[Trajectory]


class Domain(Protocol):
    """Discrete partially observable simulator.

    ``step`` must be a pure function of ``(state, action, rng)``. When
    ``done`` is returned and ``continues_after_done`` is false the episode ends.
    """

    name: str
    n_actions: int
    n_observations: int
    max_episode_len: int
    continues_after_done: bool

    def reset(self, rng: np.random.Generator) -> Any: ...

    def step(self, state, action: int, rng: np.random.Generator) -> tuple[Any, int, float, bool]: ...

    def observation_features(self, obs: int) -> np.ndarray: ...


class Agent(Protocol):
    """Action-selection interface used for sampling and evaluation."""

    def begin(self) -> Any: ...

    def act(self, memory, rng: np.random.Generator) -> tuple[int, float]: ...

    def observe(self, memory, action: int, obs: int) -> Any: ...


class UniformPolicy:
    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def begin(self):
        return None

    def act(self, memory, rng):
        return int(rng.integers(self.n_actions)), 1.0 / self.n_actions

    def observe(self, memory, action, obs):
        return None


class FixedPolicy:
    """Replays a fixed action sequence, cycling when it runs out."""

    def __init__(self, actions: Sequence[int]):
        if not actions:
            raise ValueError("empty action sequence")
        self.actions = list(actions)

    def begin(self):
        return 0

    def act(self, memory, rng):
        return self.actions[memory % len(self.actions)], 1.0

    def observe(self, memory, action, obs):
        return memory + 1


class EpsilonGreedy:
    """Wraps a deterministic agent; explores uniformly with probability ``epsilon``.

    The recorded probability is the exact mixture probability of the action.
    """

    def __init__(self, base: Agent, epsilon: float, n_actions: int):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        self.base = base
        self.epsilon = epsilon
        self.n_actions = n_actions

    def begin(self):
        return self.base.begin()

    def act(self, memory, rng):
        greedy, _ = self.base.act(memory, rng)
        explore = rng.random() < self.epsilon
        a = int(rng.integers(self.n_actions)) if explore else greedy
        p = self.epsilon / self.n_actions + (1.0 - self.epsilon) * (a == greedy)
        return a, p

    def observe(self, memory, action, obs):
        return self.base.observe(memory, action, obs)


def run_episode(domain, agent, max_len: int, rng: np.random.Generator,
                record: bool = True) -> Trajectory:
    state = domain.reset(rng)
    memory = agent.begin()
    acts, obs, rews, dones, probs = [], [], [], [], []
    for _ in range(max_len):
        a, p = agent.act(memory, rng)
        state, o, r, done = domain.step(state, a, rng)
        memory = agent.observe(memory, a, o)
        acts.append(a)
        obs.append(o)
        rews.append(r)
        dones.append(done)
        probs.append(p)
        if done and not domain.continues_after_done:
            break
    return Trajectory(acts, obs, rews, dones, probs)


def episode_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-episode generators derived from one root seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def sample_trajectories(domain, policy, n: int, max_len: int, seed: int) -> TrajectorySet:
    """Sample ``n`` independent episodes, each truncated at ``max_len`` steps."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if max_len < 0:
        raise ValueError("max_len must be >= 0")
    return [run_episode(domain, policy, max_len, rng) for rng in episode_rngs(seed, n)]
