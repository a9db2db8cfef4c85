import itertools

import numpy as np
import pytest

from cpsr.domains import UniformPolicy, sample_trajectories
from cpsr.domains.base import Trajectory
from cpsr.domains.oracle import (all_sequences, default_oracle, deterministic_chain,
                                 oracle_probabilities, trivial_system)
from cpsr.errors import (RankCollapseError, SpecMismatchError, TpsrInfeasibleError,
                         ZeroProbabilityError)
from cpsr.learner import (LearnerConfig, SufficientStats, _history_pairs, _make_chunk,
                          _split_pairs, accumulate, accumulate_many, build_model, build_tpsr,
                          exact_statistics, filter_history, gather_statistics,
                          incremental_update, initial_state, learn, likelihood_curve,
                          log_likelihood, predict_nstep, predict_test, split_counts,
                          tpsr_memory_estimate, try_update, update_state)
from cpsr.projections import phi_column, phi_history_column

ORACLE = default_oracle()


def oracle_cfg(**kw):
    base = dict(n_actions=2, n_observations=2, d_T=8, d_H=8, d_prime=4, max_test_len=3,
                max_history_len=3, seed=3)
    base.update(kw)
    return LearnerConfig(**base)


@pytest.fixture(scope="module")
def exact_model():
    cfg = oracle_cfg()
    return build_model(exact_statistics(ORACLE, cfg))


@pytest.fixture(scope="module")
def sampled():
    return sample_trajectories(ORACLE, UniformPolicy(2), 3000, 7, seed=5)


def seqs(max_len, n_a=2, n_o=2):
    for n in range(max_len + 1):
        yield from all_sequences(n_a, n_o, n)


def traj(pairs):
    return Trajectory([a for a, _ in pairs], [o for _, o in pairs])


# ---------------------------------------------------------------- first pass


def test_length_one_contributions():
    cfg = LearnerConfig(2, 3, d_T=6, d_prime=2, seed=4)
    st = accumulate(SufficientStats.empty(cfg), traj([(1, 2)]))
    hs, ts = cfg.history_spec, cfg.test_spec
    np.testing.assert_allclose(st.sigma_H, phi_history_column(hs, ()) + phi_history_column(hs, ((1, 2),)))
    np.testing.assert_allclose(st.sigma_TH, np.outer(phi_column(ts, ((1, 2),)), phi_history_column(hs, ())))


def test_empty_trajectory():
    cfg = LearnerConfig(2, 3, d_T=6, d_prime=2)
    st = accumulate(SufficientStats.empty(cfg), traj([]))
    np.testing.assert_allclose(st.sigma_H, phi_history_column(cfg.history_spec, ()))
    assert not st.sigma_TH.any()


def brute_splits(pairs, m, hmax=None):
    out = []
    for p in range(len(pairs) + 1):
        if hmax is not None and p > hmax:
            break
        for l in range(1, m + 1):
            if p + l <= len(pairs):
                out.append((tuple(pairs[:p]), tuple(pairs[p:p + l])))
    return out


def test_length_three_enumeration():
    assert split_counts(3, 2) == (4, 5)
    pairs = [(0, 1), (1, 0), (0, 0)]
    assert len(brute_splits(pairs, 2)) == 5


@pytest.mark.parametrize("length", range(0, 7))
@pytest.mark.parametrize("m", [1, 2, 3, 7])
def test_split_enumeration_matches_brute_force(length, m):
    rng = np.random.default_rng(length * 10 + m)
    pairs = [(int(rng.integers(2)), int(rng.integers(3))) for _ in range(length)]
    cfg = LearnerConfig(2, 3, d_T=4, d_prime=1, max_test_len=m)
    ch = _make_chunk([traj(pairs)], np.ones(1), cfg)
    th, _, _ = _split_pairs(ch, cfg)
    hh, _ = _history_pairs(ch, cfg)
    expected = sum(min(m, length - p) for p in range(length))
    assert th.size == expected == len(brute_splits(pairs, m))
    assert split_counts(length, m) == (hh.size, th.size)


def test_unknown_ids_rejected():
    cfg = LearnerConfig(2, 3, d_T=4, d_prime=1)
    with pytest.raises(ValueError, match="unknown action"):
        accumulate(SufficientStats.empty(cfg), traj([(2, 0)]))
    with pytest.raises(ValueError, match="unknown observation"):
        accumulate(SufficientStats.empty(cfg), traj([(0, 3)]))


def test_merge_order_independent(sampled):
    cfg = oracle_cfg()
    whole = gather_statistics(sampled, cfg)
    parts = [gather_statistics(sampled[i::3], cfg) for i in range(3)]
    merged = parts[2].merge(parts[0]).merge(parts[1])
    regrouped = parts[0].merge(parts[1].merge(parts[2]))
    for st in (merged, regrouped):
        np.testing.assert_allclose(st.sigma_H, whole.sigma_H, rtol=1e-10)
        np.testing.assert_allclose(st.sigma_TH, whole.sigma_TH, rtol=1e-10, atol=1e-10)
        assert st.n_trajectories == whole.n_trajectories


def test_merge_rejects_other_projection():
    a = SufficientStats.empty(oracle_cfg())
    with pytest.raises(SpecMismatchError):
        a.merge(SufficientStats.empty(oracle_cfg(seed=4)))


# ---------------------------------------------------------------- model


def test_c_star_is_sum(exact_model):
    np.testing.assert_allclose(exact_model.c_star, sum(exact_model.c_ao.values()), atol=1e-12)


def test_trivial_system_predicts_one():
    p = trivial_system()
    cfg = LearnerConfig(1, 1, d_T=3, d_prime=1, max_test_len=2, max_history_len=2)
    m = build_model(exact_statistics(p, cfg))
    s = initial_state(m)
    for n in range(4):
        assert predict_test(m, s, ((0, 0),) * n) == pytest.approx(1.0, abs=1e-10)
    s2 = update_state(m, s, 0, 0)
    np.testing.assert_allclose(s2.vec, s.vec, atol=1e-10)


@pytest.mark.parametrize("family", ["spherical", "rademacher", "hashed"])
def test_exact_statistics_recover_oracle(family):
    m = build_model(exact_statistics(ORACLE, oracle_cfg(family=family)))
    err = 0.0
    for h in seqs(3):
        s = filter_history(m, h)
        for t in seqs(3):
            err = max(err, abs(predict_test(m, s, t) - oracle_probabilities(ORACLE, h, t)))
    assert err <= 1e-8


def test_normalization(exact_model):
    for h in seqs(2):
        s = filter_history(exact_model, h)
        assert predict_test(exact_model, s, ()) == pytest.approx(1.0, abs=1e-8)
        for a in range(2):
            assert sum(predict_test(exact_model, s, ((a, o),)) for o in range(2)) == pytest.approx(1, abs=1e-6)
            for n in (1, 2, 3):
                assert sum(predict_nstep(exact_model, s, a, o, n) for o in range(2)) == pytest.approx(1, abs=1e-6)


def test_nstep(exact_model):
    for h in seqs(2):
        s = filter_history(exact_model, h)
        for a, o in itertools.product(range(2), range(2)):
            assert predict_nstep(exact_model, s, a, o, 1) == pytest.approx(
                predict_test(exact_model, s, ((a, o),)), abs=1e-12)
            # two uniform-random intermediate steps, marginalised
            want = sum(oracle_probabilities(ORACLE, h, mid + ((a, o),))
                       for mid in all_sequences(2, 2, 2)) / 4.0
            assert predict_nstep(exact_model, s, a, o, 3) == pytest.approx(want, abs=1e-8)
    with pytest.raises(ValueError):
        predict_nstep(exact_model, initial_state(exact_model), 0, 0, 0)


def test_zero_probability_observation():
    p = deterministic_chain(3)
    cfg = LearnerConfig(1, 3, d_T=6, d_prime=3, max_test_len=2, max_history_len=3)
    m = build_model(exact_statistics(p, cfg))
    s = initial_state(m)
    assert predict_test(m, s, ((0, 1), (0, 2), (0, 0))) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ZeroProbabilityError, match="zero-probability observation"):
        update_state(m, s, 0, 2)
    assert not try_update(m, s, 0, 2).valid


def test_scale_invariance(sampled):
    base = oracle_cfg(scale_constant=1e-3)
    m1 = learn(sampled, base)
    m2 = learn(sampled, oracle_cfg(scale_constant=7.5))
    rng = np.random.default_rng(0)
    for _ in range(50):
        h = tuple((int(rng.integers(2)), int(rng.integers(2))) for _ in range(rng.integers(0, 4)))
        t = tuple((int(rng.integers(2)), int(rng.integers(2))) for _ in range(rng.integers(1, 4)))
        p1 = predict_test(m1, filter_history(m1, h), t)
        p2 = predict_test(m2, filter_history(m2, h), t)
        assert abs(p1 - p2) <= 1e-9


def test_no_data_is_rank_collapse():
    with pytest.raises(RankCollapseError, match="rank collapse"):
        build_model(SufficientStats.empty(oracle_cfg()))


def test_single_pair_corpus_collapses_with_high_tolerance():
    cfg = LearnerConfig(2, 2, d_T=4, d_prime=2, sv_tol=1e6)
    with pytest.raises(RankCollapseError):
        learn([traj([(0, 0), (1, 1)])], cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(2, 2, d_T=4, d_prime=5)
    with pytest.raises(ValueError):
        LearnerConfig(2, 2, max_test_len=0)
    with pytest.raises(ValueError):
        LearnerConfig(2, 2, scale_constant=0.0)
    cfg = oracle_cfg(family="hashed")
    assert LearnerConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- incremental


def lossless_cfg():
    return oracle_cfg(d_T=8, d_H=7, d_prime=8)


def random_queries(rng, n):
    for _ in range(n):
        h = tuple((int(rng.integers(2)), int(rng.integers(2))) for _ in range(rng.integers(0, 4)))
        t = tuple((int(rng.integers(2)), int(rng.integers(2))) for _ in range(rng.integers(1, 4)))
        yield h, t


def max_gap(m1, m2, rng, n=100):
    return max(abs(predict_test(m1, filter_history(m1, h), t) - predict_test(m2, filter_history(m2, h), t))
               for h, t in random_queries(rng, n))


def test_incremental_with_empty_stats(sampled):
    cfg = oracle_cfg()
    m = learn(sampled, cfg)
    m2 = incremental_update(m, SufficientStats.empty(cfg))
    for k in m.c_ao:
        np.testing.assert_allclose(m2.c_ao[k], m.c_ao[k], atol=1e-10)
    np.testing.assert_allclose(m2.c_start, m.c_start, atol=1e-10)


def test_incremental_matches_batch(sampled):
    cfg = lossless_cfg()
    a, b = sampled[:1200], sampled[1200:]
    full = learn(sampled, cfg)
    inc = incremental_update(learn(a, cfg), gather_statistics(b, cfg))
    assert max_gap(full, inc, np.random.default_rng(1)) <= 1e-6


def test_incremental_updates_commute(sampled):
    cfg = lossless_cfg()
    base = learn(sampled[:1000], cfg)
    s1, s2 = gather_statistics(sampled[1000:2000], cfg), gather_statistics(sampled[2000:], cfg)
    m12 = incremental_update(incremental_update(base, s1), s2)
    m21 = incremental_update(incremental_update(base, s2), s1)
    assert max_gap(m12, m21, np.random.default_rng(2)) <= 1e-6


def test_incremental_rejects_other_projection(sampled):
    m = learn(sampled[:200], oracle_cfg())
    with pytest.raises(SpecMismatchError):
        incremental_update(m, gather_statistics(sampled[200:300], oracle_cfg(seed=9)))


# ---------------------------------------------------------------- likelihood


def test_likelihood_deterministic_system_is_zero():
    p = trivial_system()
    cfg = LearnerConfig(1, 1, d_T=3, d_prime=1, max_test_len=2, max_history_len=2)
    m = build_model(exact_statistics(p, cfg))
    rows = likelihood_curve(m, [traj([(0, 0)] * 5)] * 3, range(1, 6))
    for r in rows:
        assert r.mean_ll == pytest.approx(0.0, abs=1e-9) and r.floor_hits == 0


def test_likelihood_matches_oracle(exact_model, sampled):
    ev = sampled[:200]
    for hz in (1, 3, 5):
        want = np.mean([np.log(ORACLE.joint(z.pairs[:hz])) for z in ev])
        assert log_likelihood(exact_model, ev, hz) == pytest.approx(want, abs=1e-6)


def test_likelihood_errors(exact_model, sampled):
    with pytest.raises(ValueError, match="empty eval set"):
        likelihood_curve(exact_model, [], [1])
    with pytest.raises(ValueError):
        likelihood_curve(exact_model, sampled[:5], [8])


# ---------------------------------------------------------------- explicit baseline


def exact_corpus(length):
    trajs, weights = [], []
    for seq in all_sequences(2, 2, length):
        w = ORACLE.joint(seq) / 2 ** length
        trajs.append(Trajectory([a for a, _ in seq], [o for _, o in seq], probs=[0.5] * length))
        weights.append(w)
    return trajs, np.array(weights)


def test_tpsr_recovers_oracle():
    trajs, w = exact_corpus(7)
    m = build_tpsr(trajs, oracle_cfg(), w)
    assert m.kind == "tpsr"
    err = max(abs(predict_test(m, filter_history(m, h), t) - oracle_probabilities(ORACLE, h, t))
              for h in seqs(3) for t in seqs(3))
    assert err <= 1e-8


def test_tpsr_and_cpsr_likelihood_close(sampled):
    cfg = oracle_cfg(d_T=30, d_H=30)
    cp = learn(sampled[:2000], cfg)
    tp = build_tpsr(sampled[:2000], cfg)
    ev = sampled[2000:]
    assert abs(log_likelihood(cp, ev, 5) - log_likelihood(tp, ev, 5)) < 0.05


def test_tpsr_infeasible(sampled):
    est = tpsr_memory_estimate(100, 100)
    assert est == 8 * (2 * 100 * 100 + 200 * 100)
    with pytest.raises(TpsrInfeasibleError, match="TPSR infeasible"):
        build_tpsr(sampled, oracle_cfg(), memory_budget=1000)


def test_accumulate_many_leaves_input_untouched(sampled):
    cfg = oracle_cfg()
    st = SufficientStats.empty(cfg)
    accumulate_many(st, sampled[:10])
    assert not st.sigma_H.any() and st.n_trajectories == 0
