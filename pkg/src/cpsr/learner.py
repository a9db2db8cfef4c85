"""Compressed PSR learning, filtering, prediction and the explicit TPSR baseline.

Statistics are gathered from trajectories with every split taken at the
start of a history (no suffix histories). For a trajectory ``z`` of length
``L`` the history prefixes ``z[:p]`` (``p <= min(L, Hmax)``) feed ``sigma_H``,
and every split ``(z[:p], z[p:p+l])`` with ``1 <= l <= max_test_len`` feeds
``sigma_TH``. The operators ``C_ao`` come from a second scan of the corpus over
triples ``(z[:p], z[p], z[p+1:p+1+l])``.

Each ``C_ao`` triple is weighted by the inverse of the behaviour policy's
probability of the action ``a``, which turns joint counts into estimates of
``P(o, tau | h || a, tau^A)`` so that ``c_inf`` and ``C_ao`` share one scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .domains.base import Trajectory
from .errors import NumericalError, RankCollapseError, SpecMismatchError, TpsrInfeasibleError
from .errors import ZeroProbabilityError
from .linalg import DEFAULT_SV_TOL, SvdFactors, incremental_svd_update, thin_svd
from .projections import (EMPTY_KEY_HASH, LRUCache, ProjectionSpec, _splitmix,
                          columns, extend_hashes, history_columns, pack_pairs)

START_MODES = ("unique-start", "arbitrary-start")
ZERO_PROB_TOL = 1e-12
LL_FLOOR = 1e-12
DEFAULT_TPSR_BUDGET = 8 * 2**30
CHUNK_PAIRS = 200_000


@dataclass(frozen=True)
class LearnerConfig:
    """Learner hyper-parameters.

    ``max_history_len`` bounds the length of histories that enter the
    statistics (``None`` keeps all prefixes). Choosing trajectories of length
    ``max_history_len + 1 + max_test_len`` avoids under-counting long
    histories whose continuations were cut off. ``scale_constant`` defaults to
    one over the corpus mass (the number of trajectories when unweighted).
    """

    n_actions: int
    n_observations: int
    d_T: int = 50
    d_H: int | None = None
    d_prime: int = 5
    sv_tol: float = DEFAULT_SV_TOL
    max_test_len: int = 1
    max_history_len: int | None = None
    family: str = "spherical"
    family_H: str | None = None
    seed: int = 0
    start_state_mode: str = "unique-start"
    scale_constant: float | None = None
    signed_hash: bool = False

    def __post_init__(self):
        if self.d_H is None:
            object.__setattr__(self, "d_H", self.d_T)
        if self.n_actions < 1 or self.n_observations < 1:
            raise ValueError("alphabets must be non-empty")
        if self.d_T < 1 or self.d_H < 1:
            raise ValueError("projection dimensions must be >= 1")
        if not 1 <= self.d_prime <= self.d_T:
            raise ValueError("need 1 <= d_prime <= d_T")
        if self.max_test_len < 1:
            raise ValueError("max_test_len must be >= 1")
        if self.max_history_len is not None and self.max_history_len < 0:
            raise ValueError("max_history_len must be >= 0")
        if self.start_state_mode not in START_MODES:
            raise ValueError(f"start_state_mode must be one of {START_MODES}")
        if self.scale_constant is not None and not self.scale_constant > 0:
            raise ValueError("scale_constant must be > 0")
        if self.sv_tol < 0:
            raise ValueError("sv_tol must be >= 0")

    @property
    def test_spec(self) -> ProjectionSpec:
        return ProjectionSpec(self.family, self.d_T, _splitmix(self.seed ^ 0x7E57),
                              signed=self.signed_hash)

    @property
    def history_spec(self) -> ProjectionSpec:
        return ProjectionSpec(self.family_H or self.family, self.d_H,
                              _splitmix(self.seed ^ 0x4157),
                              unique_start=self.start_state_mode == "unique-start",
                              signed=self.signed_hash)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# ---------------------------------------------------------------------------
# corpus scanning


@dataclass
class _Chunk:
    """Padded arrays for a block of trajectories."""

    codes: np.ndarray      # (n, Lmax) a * |O| + o
    hist: np.ndarray       # (n, Lmax + 1) prefix hashes
    tests: list            # tests[l][:, p] = hash of z[p:p+l], l = 1..m
    lengths: np.ndarray
    weights: np.ndarray
    inv_prob: np.ndarray   # (n, Lmax) 1 / behaviour probability


def _check_ids(z: Trajectory, cfg: LearnerConfig):
    if len(z) == 0:
        return
    a = np.asarray(z.actions)
    o = np.asarray(z.observations)
    if a.min() < 0 or a.max() >= cfg.n_actions:
        raise ValueError(f"unknown action id in trajectory (alphabet {cfg.n_actions})")
    if o.min() < 0 or o.max() >= cfg.n_observations:
        raise ValueError(f"unknown observation id in trajectory (alphabet {cfg.n_observations})")


def _make_chunk(trajs: Sequence[Trajectory], weights: np.ndarray, cfg: LearnerConfig,
                need_tests: bool = True) -> _Chunk:
    n = len(trajs)
    lengths = np.fromiter((len(z) for z in trajs), np.int64, n)
    lmax = int(lengths.max()) if n else 0
    acts = np.zeros((n, lmax), np.int64)
    obs = np.zeros((n, lmax), np.int64)
    inv_prob = np.full((n, lmax), float(cfg.n_actions))
    for i, z in enumerate(trajs):
        _check_ids(z, cfg)
        k = len(z)
        acts[i, :k] = z.actions
        obs[i, :k] = z.observations
        if z.probs is not None and k:
            p = np.asarray(z.probs, dtype=float)
            if np.any(p <= 0) or np.any(p > 1):
                raise ValueError("behaviour probabilities must lie in (0, 1]")
            inv_prob[i, :k] = 1.0 / p
    packed = pack_pairs(acts, obs)
    hist = np.empty((n, lmax + 1), np.uint64)
    hist[:, 0] = EMPTY_KEY_HASH
    for p in range(lmax):
        hist[:, p + 1] = extend_hashes(hist[:, p], packed[:, p])
    tests = [None]
    if need_tests:
        prev = np.full((n, lmax), EMPTY_KEY_HASH, np.uint64)
        for l in range(1, cfg.max_test_len + 1):
            width = lmax - l + 1
            if width <= 0:
                break
            cur = extend_hashes(prev[:, :width], packed[:, l - 1:l - 1 + width])
            tests.append(cur)
            prev = cur
    return _Chunk(acts * cfg.n_observations + obs, hist, tests, lengths,
                  np.asarray(weights, float), inv_prob)


def _hist_limit(cfg: LearnerConfig, lmax: int) -> int:
    return lmax if cfg.max_history_len is None else min(lmax, cfg.max_history_len)


def _history_pairs(ch: _Chunk, cfg: LearnerConfig):
    """(history hash, weight) for every counted prefix."""
    hs, ws = [], []
    for p in range(_hist_limit(cfg, ch.hist.shape[1] - 1) + 1):
        ok = ch.lengths >= p
        hs.append(ch.hist[ok, p])
        ws.append(ch.weights[ok])
    return np.concatenate(hs), np.concatenate(ws)


def _split_pairs(ch: _Chunk, cfg: LearnerConfig):
    """(test hash, history hash, weight) for every counted (h, tau) split."""
    th, hh, ws = [], [], []
    lmax = ch.hist.shape[1] - 1
    for p in range(min(_hist_limit(cfg, lmax), lmax - 1) + 1):
        for l in range(1, len(ch.tests)):
            if p > lmax - l:
                break
            ok = ch.lengths >= p + l
            th.append(ch.tests[l][ok, p])
            hh.append(ch.hist[ok, p])
            ws.append(ch.weights[ok])
    if not th:
        return (np.zeros(0, np.uint64),) * 2 + (np.zeros(0),)
    return np.concatenate(th), np.concatenate(hh), np.concatenate(ws)


def _triples(ch: _Chunk, cfg: LearnerConfig):
    """(test hash, history hash, ao code, weight) for every (h, ao, tau) triple."""
    th, hh, ao, ws = [], [], [], []
    lmax = ch.hist.shape[1] - 1
    for p in range(min(_hist_limit(cfg, lmax), lmax - 2) + 1):
        for l in range(1, len(ch.tests)):
            if p + 1 > lmax - l:
                break
            ok = ch.lengths >= p + 1 + l
            th.append(ch.tests[l][ok, p + 1])
            hh.append(ch.hist[ok, p])
            ao.append(ch.codes[ok, p])
            ws.append(ch.weights[ok] * ch.inv_prob[ok, p])
    if not th:
        z = np.zeros(0, np.uint64)
        return z, z, np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(th), np.concatenate(hh), np.concatenate(ao), np.concatenate(ws)


def _chunks(trajs: Sequence[Trajectory], weights, cfg: LearnerConfig):
    """Yield blocks of trajectories whose split count stays near ``CHUNK_PAIRS``."""
    if weights is None:
        weights = np.ones(len(trajs))
    weights = np.asarray(weights, float)
    if weights.shape != (len(trajs),):
        raise ValueError("weights must have one entry per trajectory")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and non-negative")
    start, budget = 0, 0
    for i, z in enumerate(trajs):
        budget += (len(z) + 1) * cfg.max_test_len
        if budget >= CHUNK_PAIRS:
            yield trajs[start:i + 1], weights[start:i + 1]
            start, budget = i + 1, 0
    if start < len(trajs):
        yield trajs[start:], weights[start:]


def _unique_index(h: np.ndarray):
    uniq, inv = np.unique(h, return_inverse=True)
    return uniq, inv.ravel()


def _hashlist(a: np.ndarray) -> list:
    return [int(x) for x in a]


# ---------------------------------------------------------------------------
# sufficient statistics


@dataclass
class SufficientStats:
    """Unscaled compressed statistics plus the corpus needed for the second pass.

    ``corpus`` is a list of ``(trajectories, weights)`` blocks; it is scanned
    again when operators are built rather than caching raw triples.
    """

    config: LearnerConfig
    sigma_H: np.ndarray
    sigma_TH: np.ndarray
    n_trajectories: int = 0
    mass: float = 0.0
    corpus: list = field(default_factory=list)

    @classmethod
    def empty(cls, cfg: LearnerConfig) -> "SufficientStats":
        return cls(cfg, np.zeros(cfg.d_H + 1), np.zeros((cfg.d_T, cfg.d_H + 1)))

    def _same_specs(self, other_cfg: LearnerConfig) -> bool:
        a, b = self.config, other_cfg
        return (a.test_spec == b.test_spec and a.history_spec == b.history_spec
                and a.max_test_len == b.max_test_len
                and a.max_history_len == b.max_history_len
                and (a.n_actions, a.n_observations) == (b.n_actions, b.n_observations))

    def merge(self, other: "SufficientStats") -> "SufficientStats":
        if not self._same_specs(other.config):
            raise SpecMismatchError("statistics were gathered under different projections")
        return SufficientStats(self.config, self.sigma_H + other.sigma_H,
                               self.sigma_TH + other.sigma_TH,
                               self.n_trajectories + other.n_trajectories,
                               self.mass + other.mass, self.corpus + other.corpus)

    def iter_corpus(self):
        for trajs, w in self.corpus:
            yield from _chunks(trajs, w, self.config)


def accumulate_many(stats: SufficientStats, trajs: Sequence[Trajectory],
                    weights=None, cache: LRUCache | None = None) -> SufficientStats:
    """First pass over ``trajs``; returns new statistics, ``stats`` is untouched.

    ``weights`` optionally scales each trajectory's contribution (used to feed
    exact expectations instead of samples).
    """
    cfg = stats.config
    trajs = list(trajs)
    spec_t, spec_h = cfg.test_spec, cfg.history_spec
    sig_h = stats.sigma_H.copy()
    sig_th = stats.sigma_TH.copy()
    for block, w in _chunks(trajs, weights, cfg):
        ch = _make_chunk(block, w, cfg)
        hh, hw = _history_pairs(ch, cfg)
        uh, inv = _unique_index(hh)
        counts = np.bincount(inv, weights=hw, minlength=uh.size)
        sig_h += history_columns(spec_h, _hashlist(uh), cache) @ counts
        th, hh, ws = _split_pairs(ch, cfg)
        if th.size == 0:
            continue
        ut, ti = _unique_index(th)
        uh, hj = _unique_index(hh)
        wmat = sparse.csr_matrix((ws, (ti, hj)), shape=(ut.size, uh.size))
        right = wmat @ history_columns(spec_h, _hashlist(uh), cache).T
        sig_th += columns(spec_t, _hashlist(ut), cache) @ right
    if not (np.all(np.isfinite(sig_h)) and np.all(np.isfinite(sig_th))):
        raise NumericalError("non-finite accumulation")
    mass = float(np.sum(weights)) if weights is not None else float(len(trajs))
    block = [(trajs, None if weights is None else np.asarray(weights, float))] if trajs else []
    return SufficientStats(cfg, sig_h, sig_th, stats.n_trajectories + len(trajs),
                           stats.mass + mass, stats.corpus + block)


def accumulate(stats: SufficientStats, z: Trajectory, cfg: LearnerConfig | None = None,
               cache: LRUCache | None = None) -> SufficientStats:
    """Add one trajectory."""
    if cfg is not None and not stats._same_specs(cfg):
        raise SpecMismatchError("config does not match the statistics")
    return accumulate_many(stats, [z], cache=cache)


def gather_statistics(trajs: Sequence[Trajectory], cfg: LearnerConfig, weights=None,
                      cache: LRUCache | None = None) -> SufficientStats:
    return accumulate_many(SufficientStats.empty(cfg), trajs, weights, cache)


def split_counts(length: int, max_test_len: int, max_history_len: int | None = None):
    """Number of history and (history, test) contributions of one trajectory."""
    hmax = length if max_history_len is None else min(length, max_history_len)
    n_hist = hmax + 1
    n_split = sum(min(max_test_len, length - p) for p in range(min(hmax, length - 1) + 1))
    return n_hist, n_split


def exact_statistics(pomdp, cfg: LearnerConfig) -> SufficientStats:
    """Noise-free statistics of an oracle POMDP under a uniform behaviour policy.

    Every sequence of length ``max_history_len + 1 + max_test_len`` enters once,
    weighted by its probability of being generated, so the statistics equal
    the expectation of one sampled trajectory.
    """
    from .domains.oracle import all_sequences

    if cfg.max_history_len is None:
        raise ValueError("exact statistics need a finite max_history_len")
    length = cfg.max_history_len + 1 + cfg.max_test_len
    n_a = pomdp.n_actions
    trajs, weights = [], []
    for seq in all_sequences(n_a, pomdp.n_observations, length):
        w = pomdp.joint(seq) * n_a ** -length
        if w <= 0.0:
            continue
        trajs.append(Trajectory([a for a, _ in seq], [o for _, o in seq],
                                probs=[1.0 / n_a] * length))
        weights.append(w)
    return gather_statistics(trajs, cfg, np.array(weights))


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True, eq=False)
class CpsrModel:
    """Learned operators. ``c_ao`` only stores pairs seen in training; the
    rest are zero. ``kind`` is ``"cpsr"`` or ``"tpsr"``."""

    c_start: np.ndarray
    c_inf: np.ndarray
    c_ao: dict
    c_star: np.ndarray
    svd: SvdFactors
    config: LearnerConfig
    sigma_H: np.ndarray
    scale: float
    kind: str = "cpsr"
    n_trajectories: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.c_start.shape[0]

    def op(self, a: int, o: int) -> np.ndarray:
        m = self.c_ao.get((int(a), int(o)))
        return np.zeros((self.dim, self.dim)) if m is None else m


def _start_and_inf(f: SvdFactors, sigma_H: np.ndarray):
    c_inf = (sigma_H @ f.v) / f.s
    c_start = f.s * f.v[0]
    norm = float(c_inf @ c_start)
    if not math.isfinite(norm) or abs(norm) < ZERO_PROB_TOL:
        raise NumericalError("degenerate start state")
    return c_start / norm, c_inf


def _assemble(f: SvdFactors, cfg: LearnerConfig, sigma_H, c_ao, scale, kind, n, meta=None):
    if f.rank == 0:
        raise RankCollapseError()
    c_start, c_inf = _start_and_inf(f, sigma_H)
    c_star = np.zeros((f.rank, f.rank))
    for m in c_ao.values():
        c_star += m
    for arr in (c_start, c_inf, c_star):
        if not np.all(np.isfinite(arr)):
            raise NumericalError("non-finite operators")
    return CpsrModel(c_start, c_inf, c_ao, c_star, f, cfg, sigma_H, scale, kind, n,
                     dict(meta or {}))


def _operator_pass(stats: SufficientStats, f: SvdFactors, scale: float,
                   cache: LRUCache | None = None) -> dict:
    """Second corpus scan: sum of ``(U^T phi_T(tau)) (S^-1 V^T phi'_H(h))^T`` per ao."""
    cfg = stats.config
    spec_t, spec_h = cfg.test_spec, cfg.history_spec
    out: dict = {}
    n_o = cfg.n_observations
    for block, w in stats.iter_corpus():
        ch = _make_chunk(block, w, cfg)
        th, hh, ao, ws = _triples(ch, cfg)
        if th.size == 0:
            continue
        ut, ti = _unique_index(th)
        uh, hj = _unique_index(hh)
        pt = f.u.T @ columns(spec_t, _hashlist(ut), cache)
        ph = (f.v.T @ history_columns(spec_h, _hashlist(uh), cache)) / f.s[:, None]
        _scatter_ops(out, pt, ph, ti, hj, ao, ws * scale, n_o)
    return out


def _scatter_ops(out, pt, ph, ti, hj, ao, ws, n_o):
    order = np.argsort(ao, kind="stable")
    ao_s = ao[order]
    cuts = np.flatnonzero(np.diff(ao_s)) + 1
    for grp in np.split(order, cuts):
        code = int(ao[grp[0]])
        key = (code // n_o, code % n_o)
        m = (pt[:, ti[grp]] * ws[grp]) @ ph[:, hj[grp]].T
        if key in out:
            out[key] += m
        else:
            out[key] = m


def build_model(stats: SufficientStats, cfg: LearnerConfig | None = None,
                cache: LRUCache | None = None) -> CpsrModel:
    """Batch CPSR from first-pass statistics (the corpus is scanned again)."""
    cfg = stats.config if cfg is None else cfg
    if not stats._same_specs(cfg):
        raise SpecMismatchError("config does not match the statistics")
    if stats.n_trajectories == 0:
        raise RankCollapseError("rank collapse: no data")
    scale = cfg.scale_constant if cfg.scale_constant is not None else 1.0 / max(stats.mass, 1e-300)
    sig_th = stats.sigma_TH * scale
    if not np.all(np.isfinite(sig_th)):
        raise NumericalError("non-finite accumulation")
    if not np.any(sig_th):
        raise RankCollapseError()
    f = thin_svd(sig_th, cfg.d_prime, cfg.sv_tol)
    if f.rank == 0:
        raise RankCollapseError()
    c_ao = _operator_pass(replace(stats, config=cfg), f, scale, cache)
    return _assemble(f, cfg, stats.sigma_H * scale, c_ao, scale, "cpsr", stats.n_trajectories)


def learn(trajs: Sequence[Trajectory], cfg: LearnerConfig, weights=None,
          cache: LRUCache | None = None) -> CpsrModel:
    return build_model(gather_statistics(trajs, cfg, weights, cache), cfg, cache)


def incremental_update(model: CpsrModel, stats_new: SufficientStats,
                       cache: LRUCache | None = None) -> CpsrModel:
    """Fold new statistics into ``model`` without revisiting the old corpus.

    Old operators are carried over by projecting them onto the updated
    bases; new triples are added with the updated factors. The scale constant
    of the original model is reused so old and new mass stay comparable.
    """
    if model.kind != "cpsr":
        raise ValueError("only compressed models can be updated")
    cfg = model.config
    if not stats_new._same_specs(cfg):
        raise SpecMismatchError("new statistics use different projections")
    scale = model.scale
    old = model.svd
    new = incremental_svd_update(old, stats_new.sigma_TH * scale, cfg.d_prime, cfg.sv_tol)
    if new.rank == 0:
        raise RankCollapseError()
    left = new.u.T @ old.u                       # U_new^T U_old
    right = ((old.v.T @ new.v) * old.s[:, None]) / new.s[None, :]   # S_old V_old^T V_new S_new^-1
    c_ao = {k: left @ m @ right for k, m in model.c_ao.items()}
    fresh = _operator_pass(replace(stats_new, config=cfg), new, scale, cache)
    for k, m in fresh.items():
        c_ao[k] = c_ao[k] + m if k in c_ao else m
    sigma_H = model.sigma_H + stats_new.sigma_H * scale
    return _assemble(new, cfg, sigma_H, c_ao, scale, "cpsr",
                     model.n_trajectories + stats_new.n_trajectories, model.meta)


# ---------------------------------------------------------------------------
# filtering and prediction


@dataclass(frozen=True, eq=False)
class PredictiveState:
    vec: np.ndarray
    length: int = 0
    valid: bool = True


def initial_state(model: CpsrModel) -> PredictiveState:
    return PredictiveState(model.c_start.copy(), 0, True)


def update_state(model: CpsrModel, state: PredictiveState, a: int, o: int) -> PredictiveState:
    """Condition on one action/observation pair.

    Raises :class:`ZeroProbabilityError` when the normaliser is below 1e-12 in
    magnitude; callers wanting an invalid-flagged state use :func:`try_update`.
    """
    if not state.valid:
        raise ValueError("cannot update an invalid state")
    nxt = model.op(a, o) @ state.vec
    den = float(model.c_inf @ nxt)
    if not math.isfinite(den) or abs(den) < ZERO_PROB_TOL:
        raise ZeroProbabilityError()
    return PredictiveState(nxt / den, state.length + 1, True)


def try_update(model: CpsrModel, state: PredictiveState, a: int, o: int) -> PredictiveState:
    try:
        return update_state(model, state, a, o)
    except ZeroProbabilityError:
        return PredictiveState(state.vec, state.length + 1, False)


def filter_history(model: CpsrModel, history) -> PredictiveState:
    s = initial_state(model)
    for a, o in history:
        s = update_state(model, s, a, o)
    return s


def predict_test(model: CpsrModel, state: PredictiveState, test) -> float:
    """Raw (unclamped) ``c_inf^T C_{a_n o_n} ... C_{a_1 o_1} v``."""
    v = state.vec
    for a, o in test:
        v = model.op(a, o) @ v
    return float(model.c_inf @ v)


def predict_nstep(model: CpsrModel, state: PredictiveState, a: int, o: int, n: int) -> float:
    """Probability of seeing ``o`` after ``a`` taken ``n - 1`` steps from now,
    marginalising over the intermediate steps.

    Operators are interventional (importance weighted), so ``c_star`` sums to
    ``n_actions`` times a stochastic operator; intermediate actions are taken
    as uniform, which divides each step by ``n_actions``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    v = state.vec
    step = model.c_star / model.config.n_actions
    for _ in range(n - 1):
        v = step @ v
    return float(model.c_inf @ (model.op(a, o) @ v))


def one_step_table(model: CpsrModel, state: PredictiveState) -> np.ndarray:
    """Raw ``P(o | h || a)`` predictions as an ``(A, O)`` array."""
    cfg = model.config
    out = np.zeros((cfg.n_actions, cfg.n_observations))
    for (a, o), m in model.c_ao.items():
        out[a, o] = model.c_inf @ (m @ state.vec)
    return out


def clamp_probability(p: float) -> float:
    return min(1.0, max(0.0, p))


@dataclass(frozen=True)
class LikelihoodRow:
    horizon: int
    mean_ll: float
    n: int
    floor_hits: int


def likelihood_curve(model: CpsrModel, eval_set: Sequence[Trajectory],
                     horizons: Iterable[int]) -> list[LikelihoodRow]:
    """Mean log joint probability of the first ``h`` pairs for each horizon ``h``.

    Non-positive raw probabilities are floored at 1e-12; the number of floored
    sequences is reported per horizon.
    """
    eval_set = list(eval_set)
    if not eval_set:
        raise ValueError("empty eval set")
    horizons = sorted(set(int(h) for h in horizons))
    if not horizons or horizons[0] < 1:
        raise ValueError("horizons must be >= 1")
    shortest = min(len(z) for z in eval_set)
    if horizons[-1] > shortest:
        raise ValueError(f"horizon {horizons[-1]} exceeds shortest sequence length {shortest}")
    n = len(eval_set)
    hmax = horizons[-1]
    n_o = model.config.n_observations
    codes = np.array([[a * n_o + o for a, o in z.pairs[:hmax]] for z in eval_set])
    v = np.repeat(model.c_start[:, None], n, axis=1)
    zero = np.zeros((model.dim, model.dim))
    rows, want = [], set(horizons)
    for t in range(hmax):
        col = codes[:, t]
        order = np.argsort(col, kind="stable")
        cuts = np.flatnonzero(np.diff(col[order])) + 1
        nv = np.empty_like(v)
        for grp in np.split(order, cuts):
            code = int(col[grp[0]])
            m = model.c_ao.get((code // n_o, code % n_o), zero)
            nv[:, grp] = m @ v[:, grp]
        v = nv
        if t + 1 in want:
            p = model.c_inf @ v
            floored = ~(p > LL_FLOOR)
            ll = np.log(np.where(floored, LL_FLOOR, p))
            rows.append(LikelihoodRow(t + 1, float(ll.mean()), n, int(floored.sum())))
    return rows


def log_likelihood(model: CpsrModel, eval_set: Sequence[Trajectory], horizon: int) -> float:
    return likelihood_curve(model, eval_set, [horizon])[0].mean_ll


# ---------------------------------------------------------------------------
# explicit (uncompressed) baseline


def tpsr_memory_estimate(n_tests: int, n_hists: int, d_prime: int = 0) -> int:
    """Bytes for the dense ``P_TH`` plus the dense SVD workspace."""
    r = min(n_tests, n_hists)
    return 8 * (2 * n_tests * n_hists + (n_tests + n_hists) * r)


def build_tpsr(trajs: Sequence[Trajectory], cfg: LearnerConfig, weights=None,
               tests: Sequence | None = None, histories: Sequence | None = None,
               memory_budget: int = DEFAULT_TPSR_BUDGET) -> CpsrModel:
    """Subspace-identification TPSR over explicit test/history dictionaries.

    Dictionaries default to every test and history realised in ``trajs``.
    The dense observable matrix is allocated only if its estimated footprint
    fits ``memory_budget``; otherwise :class:`TpsrInfeasibleError` is raised.
    """
    from .projections import key_hash

    trajs = list(trajs)
    if not trajs:
        raise ValueError("empty corpus")
    if cfg.start_state_mode != "unique-start":
        raise ValueError("the explicit baseline supports unique-start systems only")
    chunks = [(_make_chunk(b, w, cfg), ) for b, w in _chunks(trajs, weights, cfg)]
    if tests is None:
        t_keys = np.unique(np.concatenate([_split_pairs(c, cfg)[0] for (c,) in chunks]))
    else:
        t_keys = np.unique(np.array([key_hash(t) for t in tests], np.uint64))
    if histories is None:
        h_keys = np.unique(np.concatenate([_history_pairs(c, cfg)[0] for (c,) in chunks]))
    else:
        h_keys = np.array([key_hash(h) for h in histories], np.uint64)
    # the null history always occupies column 0
    h_keys = np.concatenate([[np.uint64(EMPTY_KEY_HASH)],
                             np.unique(h_keys[h_keys != np.uint64(EMPTY_KEY_HASH)])])
    need = tpsr_memory_estimate(t_keys.size, h_keys.size, cfg.d_prime)
    if need > memory_budget:
        raise TpsrInfeasibleError(need, memory_budget)
    h_sorted = np.argsort(h_keys)

    def h_index(h):
        pos = np.searchsorted(h_keys, h, sorter=h_sorted)
        pos = np.minimum(pos, h_keys.size - 1)
        idx = h_sorted[pos]
        return idx, h_keys[idx] == h

    def t_index(t):
        pos = np.minimum(np.searchsorted(t_keys, t), t_keys.size - 1)
        return pos, t_keys[pos] == t

    mass = float(np.sum(weights)) if weights is not None else float(len(trajs))
    scale = cfg.scale_constant if cfg.scale_constant is not None else 1.0 / mass
    p_th = np.zeros((t_keys.size, h_keys.size))
    p_h = np.zeros(h_keys.size)
    for (c,) in chunks:
        hh, hw = _history_pairs(c, cfg)
        j, ok = h_index(hh)
        np.add.at(p_h, j[ok], hw[ok] * scale)
        th, hh, ws = _split_pairs(c, cfg)
        i, oki = t_index(th)
        j, okj = h_index(hh)
        ok = oki & okj
        np.add.at(p_th, (i[ok], j[ok]), ws[ok] * scale)
    if not np.any(p_th):
        raise RankCollapseError()
    f = thin_svd(p_th, cfg.d_prime, cfg.sv_tol)
    if f.rank == 0:
        raise RankCollapseError()
    c_ao: dict = {}
    pt_all = f.u.T
    ph_all = f.v.T / f.s[:, None]
    for (c,) in chunks:
        th, hh, ao, ws = _triples(c, cfg)
        i, oki = t_index(th)
        j, okj = h_index(hh)
        ok = oki & okj
        if ok.any():
            _scatter_ops(c_ao, pt_all, ph_all, i[ok], j[ok], ao[ok], ws[ok] * scale,
                         cfg.n_observations)
    meta = {"n_tests": int(t_keys.size), "n_histories": int(h_keys.size)}
    return _assemble(f, cfg, p_h, c_ao, scale, "tpsr", len(trajs), meta)
