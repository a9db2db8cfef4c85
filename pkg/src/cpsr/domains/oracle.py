"""Small POMDPs with exactly computable test probabilities.

These serve as ground truth for the learner: conditional test probabilities
are obtained by forward filtering the belief over latent states.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..errors import ImpossibleHistoryError

MAX_QUERY_LEN = 8


@dataclass(frozen=True, eq=False)
class OraclePomdp:
    """``transition[a, s, s']``, ``observation[a, s', o]`` and a start belief."""

    transition: np.ndarray
    observation: np.ndarray
    start: np.ndarray
    name: str = "oracle"
    max_episode_len: int = 1000
    continues_after_done: bool = True

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=float)
        o = np.asarray(self.observation, dtype=float)
        b = np.asarray(self.start, dtype=float)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "observation", o)
        object.__setattr__(self, "start", b)
        if t.ndim != 3 or t.shape[1] != t.shape[2]:
            raise ValueError("transition must have shape (A, S, S)")
        if o.shape[:2] != t.shape[:2]:
            raise ValueError("observation must have shape (A, S, O)")
        for arr, name in ((t, "transition"), (o, "observation")):
            if np.any(arr < 0) or np.abs(arr.sum(-1) - 1).max() > 1e-12:
                raise ValueError(f"{name} rows must be distributions")
        if abs(b.sum() - 1) > 1e-12 or np.any(b < 0):
            raise ValueError("start must be a distribution")

    @property
    def n_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_observations(self) -> int:
        return self.observation.shape[2]

    # simulator interface
    def reset(self, rng):
        return int(rng.choice(self.n_states, p=self.start))

    def step(self, state, action, rng):
        nxt = int(rng.choice(self.n_states, p=self.transition[action, state]))
        obs = int(rng.choice(self.n_observations, p=self.observation[action, nxt]))
        return nxt, obs, 0.0, False

    def observation_features(self, obs):
        return np.eye(self.n_observations)[obs]

    # exact quantities
    def _advance(self, belief, a, o):
        return (belief @ self.transition[a]) * self.observation[a][:, o]

    def joint(self, pairs, belief=None) -> float:
        """``P(o_1..o_n || a_1..a_n)`` from ``belief`` (default: start)."""
        b = self.start if belief is None else belief
        for a, o in pairs:
            b = self._advance(b, a, o)
        return float(b.sum())

    def belief(self, history):
        b = self.start
        for a, o in history:
            b = self._advance(b, a, o)
            z = b.sum()
            if z <= 0.0:
                raise ImpossibleHistoryError()
            b = b / z
        return b

    def one_step(self, history) -> np.ndarray:
        """``P(o | h || a)`` as an ``(A, O)`` array."""
        b = self.belief(history)
        return np.einsum("s,ast,ato->ao", b, self.transition, self.observation)


def oracle_probabilities(p: OraclePomdp, history, test) -> float:
    """Exact ``P(test observations | history || test actions)``."""
    if len(history) + len(test) > MAX_QUERY_LEN:
        raise ValueError(f"|h| + |t| must be <= {MAX_QUERY_LEN}")
    return p.joint(test, p.belief(history))


def all_sequences(n_actions: int, n_obs: int, length: int):
    pair_set = list(itertools.product(range(n_actions), range(n_obs)))
    return itertools.product(pair_set, repeat=length)


def default_oracle() -> OraclePomdp:
    """Fixed 4-state, 2-action, 2-observation instance of rank 4."""
    transition = np.array([
        [[0.70, 0.20, 0.10, 0.00],
         [0.10, 0.60, 0.20, 0.10],
         [0.00, 0.20, 0.50, 0.30],
         [0.30, 0.00, 0.10, 0.60]],
        [[0.10, 0.60, 0.20, 0.10],
         [0.20, 0.10, 0.60, 0.10],
         [0.50, 0.10, 0.10, 0.30],
         [0.10, 0.30, 0.20, 0.40]],
    ])
    observation = np.array([
        [[0.90, 0.10], [0.20, 0.80], [0.60, 0.40], [0.30, 0.70]],
        [[0.80, 0.20], [0.70, 0.30], [0.10, 0.90], [0.40, 0.60]],
    ])
    start = np.array([1.0, 0.0, 0.0, 0.0])
    return OraclePomdp(transition, observation, start)


def deterministic_chain(n_states: int = 3) -> OraclePomdp:
    """One action cycling through states, each emitting its own index."""
    t = np.roll(np.eye(n_states), 1, axis=1)[None]
    o = np.eye(n_states)[None]
    start = np.eye(n_states)[0]
    return OraclePomdp(t, o, start, name="chain")


def trivial_system() -> OraclePomdp:
    """One state, one action, one observation: every test has probability 1."""
    return OraclePomdp(np.ones((1, 1, 1)), np.ones((1, 1, 1)), np.ones(1), name="trivial")
