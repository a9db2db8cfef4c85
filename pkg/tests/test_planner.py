import numpy as np
import pytest

from cpsr import extra_trees as et
from cpsr.domains import UniformPolicy, sample_trajectories
from cpsr.domains.base import Trajectory
from cpsr.domains.gridworld import colored_grid_world
from cpsr.domains.oracle import default_oracle, deterministic_chain
from cpsr.learner import LearnerConfig, build_model, exact_statistics, filter_history
from cpsr.planner import (CpsrAgent, MemorylessAgent, PlannerConfig, QPolicy, RandomAgent,
                          TupleSet, build_tuples, eval_policy, fitted_q, memoryless_baseline,
                          run_combined)
from cpsr.seeding import stream_seed


class Corridor:
    """Fully observable: cells 0..3, action 1 moves right, 0 moves left.
    Reaching cell 3 pays 1 and resets to cell 0."""

    n_actions = 2
    n_observations = 4
    continues_after_done = True

    def reset(self, rng):
        return 0

    def step(self, s, a, rng):
        s = min(s + 1, 3) if a == 1 else max(s - 1, 0)
        if s == 3:
            return 0, 0, 1.0, True
        return s, s, 0.0, False

    def observation_features(self, o):
        return np.eye(4)[o]


def two_state_tuples(copies=10):
    # action 0 stays, action 1 switches; staying in state 1 pays 1
    rows = []
    eye = np.eye(2)
    for _ in range(copies):
        for s in range(2):
            for a in range(2):
                nxt = s if a == 0 else 1 - s
                r = 1.0 if (s == 1 and a == 0) else 0.0
                rows.append((eye[s], a, r, eye[nxt], False, 0, 0))
    return TupleSet.from_rows(rows, 2)


def q_star(gamma):
    q = np.zeros((2, 2))
    for _ in range(2000):
        v = q.max(axis=1)
        q = np.array([[0.0 + gamma * v[0], 0.0 + gamma * v[1]],
                      [1.0 + gamma * v[1], 0.0 + gamma * v[0]]])
    return q


def test_two_state_mdp_matches_value_iteration():
    cfg = PlannerConfig(gamma=0.8, iterations=50, trees_per_action=5, I_m=1, I_p=1)
    pol = fitted_q(two_state_tuples(), 2, cfg, seed=0)
    q_hat = pol.q_values(np.eye(2))
    assert np.abs(q_hat - q_star(0.8)).max() <= 0.05


def test_gamma_zero_is_reward_regression():
    rng = np.random.default_rng(0)
    n = 300
    rows = [(rng.random(3), int(rng.integers(2)), float(rng.random()), rng.random(3), False, 0, i)
            for i in range(n)]
    tuples = TupleSet.from_rows(rows, 3)
    cfg = PlannerConfig(gamma=0.0, iterations=1, trees_per_action=4, I_m=1, I_p=1)
    pol = fitted_q(tuples, 2, cfg, seed=7)
    for a in range(2):
        idx = tuples.actions == a
        ref = et.fit(tuples.states[idx], tuples.rewards[idx], cfg.tree_params,
                     stream_seed(7, "trees", 0, a))
        for k, v in ref.to_arrays().items():
            np.testing.assert_array_equal(v, pol.ensembles[a].to_arrays()[k])


def test_gamma_zero_argmax_ignores_reward_shift():
    rng = np.random.default_rng(1)
    rows = [(rng.random(2), int(rng.integers(3)), float(rng.random()), rng.random(2), False, 0, i)
            for i in range(300)]
    shifted = [(s, a, r + 5.0, s2, d, e, t) for s, a, r, s2, d, e, t in rows]
    cfg = PlannerConfig(gamma=0.0, iterations=1, trees_per_action=3, I_m=1, I_p=1)
    p1 = fitted_q(TupleSet.from_rows(rows, 2), 3, cfg, seed=2)
    p2 = fitted_q(TupleSet.from_rows(shifted, 2), 3, cfg, seed=2)
    q = rng.random((50, 2))
    assert [p1.act(x) for x in q] == [p2.act(x) for x in q]


def test_zero_rewards_give_zero_q_and_lowest_action():
    t = two_state_tuples()
    t.rewards[:] = 0.0
    pol = fitted_q(t, 2, PlannerConfig(iterations=5, trees_per_action=2, I_m=1, I_p=1))
    assert np.all(pol.q_values(np.eye(2)) == 0.0)
    assert pol.act(np.eye(2)[1]) == 0


def test_terminal_tuples_do_not_bootstrap():
    eye = np.eye(1)
    rows = [(eye[0], 0, 1.0, eye[0], True, 0, 0)] * 10
    pol = fitted_q(TupleSet.from_rows(rows, 1), 1,
                   PlannerConfig(gamma=0.9, iterations=20, trees_per_action=1, I_m=1, I_p=1))
    assert pol.q_values(eye)[0, 0] == pytest.approx(1.0)


def test_missing_action_stays_zero(caplog):
    t = two_state_tuples()
    pol = fitted_q(t, 3, PlannerConfig(iterations=2, trees_per_action=2, I_m=1, I_p=1))
    assert np.all(pol.q_values(np.eye(2))[:, 2] == 0.0)
    assert "no tuples" in caplog.text


@pytest.fixture(scope="module")
def oracle_model():
    cfg = LearnerConfig(2, 2, d_T=8, d_prime=4, max_test_len=3, max_history_len=3, seed=3)
    return build_model(exact_statistics(default_oracle(), cfg))


def test_tuples_chain_and_match_filtering(oracle_model):
    trajs = sample_trajectories(default_oracle(), UniformPolicy(2), 5, 3, seed=1)
    tuples = build_tuples(oracle_model, trajs)
    assert len(tuples) == 15 and tuples.skipped == 0
    for i in range(len(tuples) - 1):
        if tuples.episode[i] == tuples.episode[i + 1]:
            np.testing.assert_array_equal(tuples.next_states[i], tuples.states[i + 1])
    for i in range(len(tuples)):
        z = trajs[tuples.episode[i]]
        want = filter_history(oracle_model, z.pairs[:tuples.step[i]]).vec
        np.testing.assert_allclose(tuples.states[i], want, atol=1e-8)


def test_impossible_observation_skips_rest():
    cfg = LearnerConfig(1, 3, d_T=6, d_prime=3, max_test_len=2, max_history_len=3)
    model = build_model(exact_statistics(deterministic_chain(3), cfg))
    z = Trajectory([0, 0, 0], [1, 0, 2], rewards=[0.0, 0.0, 0.0])
    tuples = build_tuples(model, [z])
    assert len(tuples) == 1 and tuples.skipped == 2


def test_random_baseline_zero_reward_domain():
    out = eval_policy(default_oracle(), RandomAgent(2), 20, 10, 0.99, seed=0)
    assert out["mean_return"] == 0.0 and out["ci_half_width"] == 0.0
    with pytest.raises(ValueError):
        eval_policy(default_oracle(), RandomAgent(2), 0, 10, 0.99, seed=0)


def test_memoryless_solves_observable_domain():
    dom = Corridor()
    trajs = sample_trajectories(dom, UniformPolicy(2), 200, 12, seed=0)
    cfg = PlannerConfig(gamma=0.9, iterations=30, trees_per_action=5, I_m=1, I_p=1, max_len=12)
    pol = memoryless_baseline(dom, trajs, cfg, seed=0)
    out = eval_policy(dom, MemorylessAgent(dom, pol), 10, 12, 0.9, seed=1)
    assert out["mean_return"] == 4.0


def test_memoryless_zero_reward_ties_to_lowest_action():
    dom = default_oracle()
    trajs = sample_trajectories(dom, UniformPolicy(2), 50, 5, seed=0)
    cfg = PlannerConfig(iterations=3, trees_per_action=2, I_m=1, I_p=1)
    pol = memoryless_baseline(dom, trajs, cfg)
    assert all(pol.act(dom.observation_features(o)) == 0 for o in range(2))


def small_run(seed, **kw):
    dom = colored_grid_world()
    lcfg = LearnerConfig(4, 81, d_T=20, d_prime=5, max_test_len=3, max_history_len=3, seed=1)
    pcfg = PlannerConfig(iterations=3, trees_per_action=3, I_m=300, I_p=40, **kw)
    seen = []
    res = run_combined(dom, lcfg, pcfg, seed, on_iteration=lambda i, m, p, t: seen.append(t))
    return res, seen


def test_combined_is_deterministic():
    a, _ = small_run(4)
    b, _ = small_run(4)
    q = np.random.default_rng(0).normal(size=(20, a.model.dim))
    np.testing.assert_array_equal(a.policy.q_values(q), b.policy.q_values(q))


def test_combined_tuple_set_grows():
    res, seen = small_run(5, N=2, sampling="epsilon-greedy")
    assert len(seen) == 2 and len(seen[1]) > len(seen[0])
    first = set(zip(seen[0].episode.tolist(), seen[0].step.tolist()))
    second = set(zip(seen[1].episode.tolist(), seen[1].step.tolist()))
    assert first <= second
    assert res.metrics["iterations"][1]["n_planning_trajectories"] == 80


def test_cpsr_agent_resets_on_rejected_observation():
    cfg = LearnerConfig(1, 3, d_T=6, d_prime=3, max_test_len=2, max_history_len=3)
    model = build_model(exact_statistics(deterministic_chain(3), cfg))
    pol = QPolicy((et.constant(0.0, model.dim),), model.dim)
    agent = CpsrAgent(model, pol)
    mem = agent.observe(agent.begin(), 0, 2)
    assert agent.invalid_events == 1 and mem[1]
    np.testing.assert_array_equal(mem[0].vec, model.c_start)


def test_planner_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(gamma=1.0)
    with pytest.raises(ValueError):
        PlannerConfig(I_m=10, I_p=20)
    cfg = PlannerConfig(sampling="epsilon-greedy", epsilon=0.3)
    assert PlannerConfig.from_dict(cfg.to_dict()) == cfg
