"""Fitted-Q iteration over predictive states, the combined learning/planning
loop and the memoryless and random baselines."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import extra_trees as et
from .domains.base import (EpsilonGreedy, Trajectory, UniformPolicy, episode_rngs,
                           run_episode, sample_trajectories)
from .learner import (CpsrModel, LearnerConfig, PredictiveState, gather_statistics,
                      incremental_update, initial_state, learn, try_update)
from .seeding import stream_seed

log = logging.getLogger(__name__)

SAMPLING_MODES = ("random", "epsilon-greedy")


@dataclass(frozen=True)
class PlannerConfig:
    gamma: float = 0.99
    iterations: int = 100           # fitted-Q iterations T
    trees_per_action: int = 25
    k: int | None = None
    n_min: int = 5
    I_m: int = 10000                # model trajectories per outer iteration
    I_p: int = 1000                 # planning trajectories per outer iteration
    N: int = 1                      # outer (sampling) iterations
    sampling: str = "random"
    epsilon: float = 0.1
    max_len: int = 13

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.I_m < self.I_p:
            raise ValueError("I_m must be >= I_p")
        if self.I_p < 1 or self.N < 1:
            raise ValueError("I_p and N must be >= 1")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")

    @property
    def tree_params(self) -> et.TreeParams:
        return et.TreeParams(self.trees_per_action, self.k, self.n_min)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class TupleSet:
    """Column-stored ``(c_t, a_t, r_t, c_{t+1}, terminal)`` tuples.

    ``episode`` and ``step`` locate each tuple in its source trajectory.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray
    episode: np.ndarray
    step: np.ndarray
    skipped: int = 0

    def __len__(self):
        return int(self.actions.shape[0])

    @classmethod
    def from_rows(cls, rows, dim: int, skipped: int = 0) -> "TupleSet":
        if not rows:
            z = np.zeros((0, dim))
            e = np.zeros(0, np.int64)
            return cls(z, e, np.zeros(0), z.copy(), np.zeros(0, bool), e.copy(), e.copy(), skipped)
        s, a, r, s2, d, ep, st = zip(*rows)
        return cls(np.array(s), np.array(a, np.int64), np.array(r, float), np.array(s2),
                   np.array(d, bool), np.array(ep, np.int64), np.array(st, np.int64), skipped)

    def union(self, other: "TupleSet") -> "TupleSet":
        return TupleSet(*(np.concatenate([getattr(self, f), getattr(other, f)]) for f in
                          ("states", "actions", "rewards", "next_states", "terminal",
                           "episode", "step")), self.skipped + other.skipped)


def build_tuples(model: CpsrModel, trajs: Sequence[Trajectory], limit: int | None = None,
                 episode_offset: int = 0) -> TupleSet:
    """Filter trajectories through ``model`` from ``c_start``.

    After the first step whose observation the model rejects, the remaining
    steps of that episode are skipped and counted in ``skipped``.
    """
    rows, skipped = [], 0
    trajs = list(trajs)[:limit] if limit is not None else list(trajs)
    for e, z in enumerate(trajs):
        if z.rewards is None:
            raise ValueError("trajectories must carry rewards")
        dones = z.dones or [False] * len(z)
        s = initial_state(model)
        for t, (a, o) in enumerate(z.pairs):
            nxt = try_update(model, s, a, o)
            if not nxt.valid:
                skipped += len(z) - t
                break
            rows.append((s.vec, a, z.rewards[t], nxt.vec, bool(dones[t]), e + episode_offset, t))
            s = nxt
    return TupleSet.from_rows(rows, model.dim, skipped)


def observation_tuples(domain, trajs: Sequence[Trajectory]) -> TupleSet:
    """Tuples whose state is the latest observation's feature vector.

    The state before the first observation is the zero vector.
    """
    rows = []
    feats = {}

    def fv(o):
        if o not in feats:
            feats[o] = np.asarray(domain.observation_features(o), float)
        return feats[o]

    for e, z in enumerate(trajs):
        if z.rewards is None:
            raise ValueError("trajectories must carry rewards")
        dones = z.dones or [False] * len(z)
        prev = None
        for t, (a, o) in enumerate(z.pairs):
            cur = fv(o)
            s = np.zeros_like(cur) if prev is None else prev
            rows.append((s, a, z.rewards[t], cur, bool(dones[t]), e, t))
            prev = cur
    dim = len(domain.observation_features(0))
    return TupleSet.from_rows(rows, dim)


@dataclass(frozen=True, eq=False)
class QPolicy:
    """Per-action Q ensembles; ties go to the lowest action id."""

    ensembles: tuple
    n_features: int
    meta: dict = field(default_factory=dict)

    @property
    def n_actions(self) -> int:
        return len(self.ensembles)

    def q_values(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, float))
        return np.stack([e.predict(states) for e in self.ensembles], axis=1)

    def act(self, state) -> int:
        return int(np.argmax(self.q_values(state)[0]))


def fitted_q(tuples: TupleSet, n_actions: int, cfg: PlannerConfig, seed: int = 0,
             callback=None) -> QPolicy:
    """Fitted-Q iteration with ``Q_0 = 0`` and a fixed iteration limit.

    Terminal tuples use the bare reward as target. Actions without tuples
    keep a constant zero Q.
    """
    if len(tuples) == 0:
        raise ValueError("no tuples")
    p = tuples.states.shape[1]
    by_action = [np.flatnonzero(tuples.actions == a) for a in range(n_actions)]
    for a, idx in enumerate(by_action):
        if idx.size == 0:
            log.warning("action %d has no tuples; its Q stays 0", a)
    zero = et.constant(0.0, p)
    ens = [zero] * n_actions
    params = cfg.tree_params
    boot = ~tuples.terminal
    for k in range(cfg.iterations):
        if k == 0 or cfg.gamma == 0.0:
            future = np.zeros(len(tuples))
        else:
            q_next = np.stack([e.predict(tuples.next_states) for e in ens], axis=1)
            future = q_next.max(axis=1)
        y = tuples.rewards + cfg.gamma * future * boot
        new = []
        for a, idx in enumerate(by_action):
            if idx.size == 0:
                new.append(zero)
                continue
            s = stream_seed(seed, "trees", k, a)
            new.append(et.fit(tuples.states[idx], y[idx], params, s))
        ens = new
        if callback is not None:
            callback(k, ens)
    return QPolicy(tuple(ens), p, {"iterations": cfg.iterations, "gamma": cfg.gamma,
                                   "n_tuples": len(tuples)})


# ---------------------------------------------------------------------------
# agents


class CpsrAgent:
    """Greedy agent acting on filtered predictive states.

    When the model rejects an observation the state is reset to ``c_start``
    and the next action is drawn uniformly at random.
    """

    def __init__(self, model: CpsrModel, policy: QPolicy):
        self.model = model
        self.policy = policy
        self.n_actions = policy.n_actions
        self.invalid_events = 0

    def begin(self):
        return (initial_state(self.model), False)

    def act(self, memory, rng):
        state, fallback = memory
        if fallback:
            return int(rng.integers(self.n_actions)), 1.0 / self.n_actions
        return self.policy.act(state.vec), 1.0

    def observe(self, memory, action, obs):
        nxt = try_update(self.model, memory[0], action, obs)
        if not nxt.valid:
            self.invalid_events += 1
            return (initial_state(self.model), True)
        return (nxt, False)


class MemorylessAgent:
    """Greedy agent whose state is the last observation's features."""

    def __init__(self, domain, policy: QPolicy):
        self.domain = domain
        self.policy = policy
        self.n_actions = policy.n_actions
        self._feats: dict = {}

    def begin(self):
        return np.zeros(self.policy.n_features)

    def act(self, memory, rng):
        return self.policy.act(memory), 1.0

    def observe(self, memory, action, obs):
        if obs not in self._feats:
            self._feats[obs] = np.asarray(self.domain.observation_features(obs), float)
        return self._feats[obs]


class RandomAgent(UniformPolicy):
    pass


def eval_policy(domain, agent, episodes: int, max_len: int, gamma: float, seed: int) -> dict:
    """Mean (discounted) return over independent episodes with a 95% normal CI."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rets, drets = [], []
    for rng in episode_rngs(stream_seed(seed, "evaluation"), episodes):
        z = run_episode(domain, agent, max_len, rng)
        r = np.asarray(z.rewards, float)
        rets.append(r.sum())
        drets.append(float(np.sum(r * gamma ** np.arange(r.size))))
    rets = np.array(rets)
    sd = float(rets.std(ddof=1)) if episodes > 1 else 0.0
    half = 1.96 * sd / math.sqrt(episodes)
    mean = float(rets.mean())
    return {"mean_return": mean, "mean_discounted_return": float(np.mean(drets)),
            "ci_low": mean - half, "ci_high": mean + half, "ci_half_width": half,
            "std": sd, "episodes": episodes, "max_len": max_len}


def memoryless_baseline(domain, trajs: Sequence[Trajectory], cfg: PlannerConfig,
                        seed: int = 0) -> QPolicy:
    """Fitted-Q on raw observation features (treating the domain as an MDP)."""
    tuples = observation_tuples(domain, trajs)
    return fitted_q(tuples, domain.n_actions, cfg, seed)


# ---------------------------------------------------------------------------
# combined learning and planning


@dataclass
class CombinedResult:
    model: CpsrModel
    policy: QPolicy
    tuples: TupleSet
    metrics: dict
    planning_episodes: list


def run_combined(domain, learner_cfg: LearnerConfig, cfg: PlannerConfig, seed: int,
                 on_iteration=None) -> CombinedResult:
    """Alternate model learning, tuple construction and fitted-Q ``cfg.N`` times.

    The planning set grows cumulatively; tuples of earlier iterations are
    rebuilt with the current model so every state lives in the same basis.
    """
    sampler = UniformPolicy(domain.n_actions)
    model = policy = None
    plan_trajs: list = []
    metrics = {"iterations": []}
    for i in range(cfg.N):
        t0 = time.perf_counter()
        data = sample_trajectories(domain, sampler, cfg.I_m, cfg.max_len,
                                   stream_seed(seed, "data", i))
        if model is None:
            model = learn(data, learner_cfg)
        else:
            model = incremental_update(model, gather_statistics(data, learner_cfg))
        t_model = time.perf_counter() - t0
        rng = np.random.default_rng(stream_seed(seed, "subsample", i))
        pick = np.sort(rng.choice(len(data), cfg.I_p, replace=False))
        plan_trajs.extend(data[j] for j in pick)
        tuples = build_tuples(model, plan_trajs)
        t1 = time.perf_counter()
        policy = fitted_q(tuples, domain.n_actions, cfg, stream_seed(seed, "trees", i))
        t_plan = time.perf_counter() - t1
        metrics["iterations"].append({
            "iteration": i + 1, "model_seconds": t_model, "plan_seconds": t_plan,
            "n_tuples": len(tuples), "skipped": tuples.skipped,
            "n_planning_trajectories": len(plan_trajs), "model_dim": model.dim,
        })
        if on_iteration is not None:
            on_iteration(i, model, policy, tuples)
        if cfg.sampling == "epsilon-greedy":
            sampler = EpsilonGreedy(CpsrAgent(model, policy), cfg.epsilon, domain.n_actions)
    return CombinedResult(model, policy, tuples, metrics, plan_trajs)
