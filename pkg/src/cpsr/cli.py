"""Command-line entry point.

Verbs: ``gen-data``, ``learn``, ``eval-likelihood``, ``plan``, ``eval-policy``
and ``full``. Any flag may also come from a JSON file given with
``--config``; explicit flags override it.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import io
from .domains.base import UniformPolicy, sample_trajectories
from .domains.gridworld import MapError, colored_grid_world
from .domains.oracle import default_oracle
from .domains.pocman import pocman
from .errors import CpsrError, NumericalError, TpsrInfeasibleError
from .learner import (DEFAULT_TPSR_BUDGET, LearnerConfig, build_tpsr, learn,
                      likelihood_curve)
from .planner import (CpsrAgent, MemorylessAgent, PlannerConfig, RandomAgent, build_tuples,
                      eval_policy, fitted_q, memoryless_baseline, run_combined)
from .seeding import stream_seed

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
DOMAINS = ("colored-grid", "pocman", "s-pocman", "oracle")

log = logging.getLogger("cpsr")


class UsageError(Exception):
    pass


def make_domain(name: str, map_file: str | None = None):
    if name == "colored-grid":
        return colored_grid_world(map_file)
    if name == "pocman":
        return pocman("full")
    if name == "s-pocman":
        return pocman("sparse")
    if name == "oracle":
        return default_oracle()
    raise UsageError(f"unknown domain {name!r}")


# ---------------------------------------------------------------------------
# argument handling


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file supplying defaults for any flag")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    p.add_argument("--out", help="output file or directory")


def _learner_flags(p):
    p.add_argument("--d", type=int, nargs="+", default=[50],
                   help="projection dimension(s); one model per value")
    p.add_argument("--d-prime", type=int, default=5)
    p.add_argument("--max-test-len", type=int, default=7)
    p.add_argument("--max-history-len", type=int, default=None)
    p.add_argument("--family", choices=("spherical", "rademacher", "hashed"), default="spherical")
    p.add_argument("--sv-tol", type=float, default=1e-6)
    p.add_argument("--start-mode", choices=("unique-start", "arbitrary-start"),
                   default="unique-start")
    p.add_argument("--scale", type=float, default=None, help="scale constant (default 1/N)")


def _planner_flags(p):
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--iterations", type=int, default=100, help="fitted-Q iterations")
    p.add_argument("--trees", type=int, default=25, help="trees per action")
    p.add_argument("--n-min", type=int, default=5)
    p.add_argument("--I-m", dest="I_m", type=int, default=10000)
    p.add_argument("--I-p", dest="I_p", type=int, default=1000)
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--sampling", choices=("random", "epsilon-greedy"), default="random")
    p.add_argument("--epsilon", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cpsr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="sample a trajectory corpus")
    _common(p)
    p.add_argument("--domain", choices=DOMAINS, default="colored-grid")
    p.add_argument("--map", dest="map_file")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--max-len", type=int, default=13)

    p = sub.add_parser("learn", help="build CPSR (or TPSR) model files")
    _common(p)
    p.add_argument("--corpus", required=False)
    p.add_argument("--domain", choices=DOMAINS, default="colored-grid")
    p.add_argument("--map", dest="map_file")
    p.add_argument("--baseline", choices=("cpsr", "tpsr"), default="cpsr")
    p.add_argument("--memory-budget-gib", type=float, default=DEFAULT_TPSR_BUDGET / 2**30)
    _learner_flags(p)

    p = sub.add_parser("eval-likelihood", help="log-likelihood per horizon")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--max-horizon", type=int, default=None)

    p = sub.add_parser("plan", help="fitted-Q policy from a model and a corpus")
    _common(p)
    p.add_argument("--model", help="model file; omit with --memoryless")
    p.add_argument("--corpus")
    p.add_argument("--domain", choices=DOMAINS, default="colored-grid")
    p.add_argument("--map", dest="map_file")
    p.add_argument("--memoryless", action="store_true")
    _planner_flags(p)

    p = sub.add_parser("eval-policy", help="roll out a policy")
    _common(p)
    p.add_argument("--policy", help="policy file; omit with --random")
    p.add_argument("--model", help="model file for CPSR policies")
    p.add_argument("--random", action="store_true")
    p.add_argument("--domain", choices=DOMAINS, default="colored-grid")
    p.add_argument("--map", dest="map_file")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--gamma", type=float, default=0.99)

    p = sub.add_parser("full", help="data, models, likelihoods, policies and evaluation")
    _common(p)
    p.add_argument("--domain", choices=DOMAINS, default="colored-grid")
    p.add_argument("--map", dest="map_file")
    p.add_argument("--max-len", type=int, default=13)
    p.add_argument("--eval-n", type=int, default=10000, help="likelihood eval trajectories")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--eval-max-len", type=int, default=None)
    p.add_argument("--tpsr", action="store_true", help="also build the TPSR baseline")
    p.add_argument("--memory-budget-gib", type=float, default=DEFAULT_TPSR_BUDGET / 2**30)
    _learner_flags(p)
    _planner_flags(p)
    return ap


def parse(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                conf = json.load(fh)
        except OSError:
            raise
        except ValueError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        defaults = {k.replace("-", "_"): v for k, v in conf.items()}
        sub = ap._subparsers._group_actions[0].choices[args.verb]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**defaults)
        args = ap.parse_args(argv)
    return args


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "verbose", "out")}


def _require(args, *names):
    for n in names:
        if getattr(args, n, None) in (None, ""):
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _learner_cfg(args, domain, d) -> LearnerConfig:
    try:
        return LearnerConfig(domain.n_actions, domain.n_observations, d_T=d, d_prime=args.d_prime,
                             sv_tol=args.sv_tol, max_test_len=args.max_test_len,
                             max_history_len=args.max_history_len, family=args.family,
                             seed=stream_seed(args.seed, "projections"),
                             start_state_mode=args.start_mode, scale_constant=args.scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _planner_cfg(args, max_len) -> PlannerConfig:
    try:
        return PlannerConfig(gamma=args.gamma, iterations=args.iterations,
                             trees_per_action=args.trees, n_min=args.n_min, I_m=args.I_m,
                             I_p=args.I_p, N=args.N, sampling=args.sampling,
                             epsilon=args.epsilon, max_len=max_len)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# ---------------------------------------------------------------------------
# verbs


def cmd_gen_data(args) -> int:
    _require(args, "out")
    if args.n < 1:
        raise UsageError("empty request: --n must be >= 1")
    if args.max_len < 0:
        raise UsageError("--max-len must be >= 0")
    domain = make_domain(args.domain, args.map_file)
    trajs = sample_trajectories(domain, UniformPolicy(domain.n_actions), args.n, args.max_len,
                                stream_seed(args.seed, "data"))
    _ensure_parent(args.out)
    io.write_corpus(args.out, trajs, _resolved(args))
    mean_len = float(np.mean([len(z) for z in trajs]))
    print(f"wrote {len(trajs)} episodes to {args.out} (mean length {mean_len:.2f})")
    return EXIT_OK


def _model_paths(out, ds):
    if len(ds) == 1 and not out.endswith(os.sep) and not os.path.isdir(out):
        return [out]
    os.makedirs(out, exist_ok=True)
    return [os.path.join(out, f"model_d{d}.cpsr") for d in ds]


def cmd_learn(args) -> int:
    _require(args, "corpus", "out")
    domain = make_domain(args.domain, args.map_file)
    trajs, _ = io.read_corpus(args.corpus)
    if not trajs:
        raise UsageError("corpus holds no trajectories")
    paths = _model_paths(args.out, args.d)
    for d, path in zip(args.d, paths):
        cfg = _learner_cfg(args, domain, d)
        t0 = time.perf_counter()
        if args.baseline == "tpsr":
            model = build_tpsr(trajs, cfg, memory_budget=int(args.memory_budget_gib * 2**30))
        else:
            model = learn(trajs, cfg)
        secs = time.perf_counter() - t0
        _ensure_parent(path)
        h = io.save_model(path, model, volatile={"build_seconds": secs})
        print(f"{args.baseline} d={d}: rank {model.dim}, built in {secs:.2f}s -> {path} [{h[:12]}]")
    return EXIT_OK


def cmd_eval_likelihood(args) -> int:
    _require(args, "model", "corpus", "out")
    model, head = io.load_model(args.model)
    trajs, _ = io.read_corpus(args.corpus)
    if not trajs:
        raise UsageError("corpus holds no trajectories")
    shortest = min(len(z) for z in trajs)
    hmax = args.max_horizon if args.max_horizon is not None else shortest
    if hmax > shortest:
        raise UsageError(f"horizon {hmax} exceeds shortest evaluation sequence ({shortest})")
    if hmax < 1:
        raise UsageError("nothing to evaluate: horizon must be >= 1")
    rows = likelihood_curve(model, trajs, range(1, hmax + 1))
    chash = io.config_hash(head["config"])
    out = [{"horizon": r.horizon, "mean_ll": r.mean_ll, "n": r.n, "floor_hits": r.floor_hits,
            "model": head["model_kind"], "config_hash": chash, "seed": args.seed} for r in rows]
    _ensure_parent(args.out)
    io.write_metrics(args.out, out, {"config": _resolved(args), "model_hash": head["content_hash"],
                                     "config_hash": chash, "seed": args.seed})
    print(f"wrote {len(out)} horizons to {args.out}")
    return EXIT_OK


def cmd_plan(args) -> int:
    _require(args, "corpus", "out")
    domain = make_domain(args.domain, args.map_file)
    trajs, _ = io.read_corpus(args.corpus)
    if not trajs:
        raise UsageError("corpus holds no trajectories")
    max_len = max(len(z) for z in trajs)
    cfg = _planner_cfg(args, max_len)
    seed = stream_seed(args.seed, "trees")
    t0 = time.perf_counter()
    if args.memoryless:
        policy = memoryless_baseline(domain, trajs, cfg, seed)
        agent, model_hash = "memoryless", None
    else:
        _require(args, "model")
        model, head = io.load_model(args.model)
        rng = np.random.default_rng(stream_seed(args.seed, "subsample"))
        k = min(cfg.I_p, len(trajs))
        pick = np.sort(rng.choice(len(trajs), k, replace=False))
        tuples = build_tuples(model, [trajs[i] for i in pick])
        policy = fitted_q(tuples, domain.n_actions, cfg, seed)
        agent, model_hash = "cpsr", head["content_hash"]
        print(f"{len(tuples)} tuples ({tuples.skipped} steps skipped)")
    secs = time.perf_counter() - t0
    _ensure_parent(args.out)
    io.save_policy(args.out, policy, agent, cfg, model_hash, volatile={"plan_seconds": secs})
    print(f"{agent} policy written to {args.out} in {secs:.1f}s")
    return EXIT_OK


def _agent_row(name, metrics, args, chash):
    return {"agent": name, "mean_return": metrics["mean_return"],
            "mean_discounted_return": metrics["mean_discounted_return"],
            "ci_low": metrics["ci_low"], "ci_high": metrics["ci_high"],
            "episodes": metrics["episodes"], "config_hash": chash, "seed": args.seed}


def cmd_eval_policy(args) -> int:
    _require(args, "out")
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    domain = make_domain(args.domain, args.map_file)
    max_len = args.max_len or domain.max_episode_len
    if args.random:
        agent, name = RandomAgent(domain.n_actions), "random"
    else:
        _require(args, "policy")
        policy, head = io.load_policy(args.policy)
        name = head["agent"]
        if name == "memoryless":
            agent = MemorylessAgent(domain, policy)
        else:
            _require(args, "model")
            model, mhead = io.load_model(args.model)
            if head.get("model_hash") and head["model_hash"] != mhead["content_hash"]:
                raise UsageError("policy was planned with a different model")
            agent = CpsrAgent(model, policy)
    m = eval_policy(domain, agent, args.episodes, max_len, args.gamma, args.seed)
    chash = io.config_hash(_resolved(args))
    _ensure_parent(args.out)
    io.write_metrics(args.out, [_agent_row(name, m, args, chash)],
                     {"config": _resolved(args), "config_hash": chash, "seed": args.seed})
    print(f"{name}: mean return {m['mean_return']:.4f} "
          f"[{m['ci_low']:.4f}, {m['ci_high']:.4f}] over {m['episodes']} episodes")
    return EXIT_OK


def cmd_full(args) -> int:
    _require(args, "out")
    os.makedirs(args.out, exist_ok=True)
    domain = make_domain(args.domain, args.map_file)
    cfg_p = _planner_cfg(args, args.max_len)
    resolved = _resolved(args)
    chash = io.config_hash(resolved)
    eval_len = args.eval_max_len or args.max_len
    eval_set = sample_trajectories(domain, UniformPolicy(domain.n_actions), args.eval_n,
                                   args.max_len, stream_seed(args.seed, "evaluation", 1))
    ll_rows, policy_rows, best = [], [], None
    for d in args.d:
        cfg_l = _learner_cfg(args, domain, d)
        t0 = time.perf_counter()
        res = run_combined(domain, cfg_l, cfg_p, args.seed)
        secs = time.perf_counter() - t0
        io.save_model(os.path.join(args.out, f"model_d{d}.cpsr"), res.model,
                      volatile={"seconds": secs})
        hmax = min(len(z) for z in eval_set)
        if hmax >= 1:
            for r in likelihood_curve(res.model, eval_set, range(1, hmax + 1)):
                ll_rows.append({"model": "cpsr", "d": d, "horizon": r.horizon,
                                "mean_ll": r.mean_ll, "n": r.n, "floor_hits": r.floor_hits,
                                "config_hash": chash, "seed": args.seed})
        m = eval_policy(domain, CpsrAgent(res.model, res.policy), args.episodes, eval_len,
                        args.gamma, args.seed)
        policy_rows.append(_agent_row(f"cpsr_d{d}", m, args, chash))
        if best is None or m["mean_return"] > best["mean_return"]:
            best = m
        print(f"cpsr d={d}: mean return {m['mean_return']:.4f} ({secs:.1f}s)")
    if args.tpsr:
        data = sample_trajectories(domain, UniformPolicy(domain.n_actions), cfg_p.I_m,
                                   args.max_len, stream_seed(args.seed, "data", 0))
        try:
            tp = build_tpsr(data, _learner_cfg(args, domain, args.d[0]),
                            memory_budget=int(args.memory_budget_gib * 2**30))
            for r in likelihood_curve(tp, eval_set, range(1, min(len(z) for z in eval_set) + 1)):
                ll_rows.append({"model": "tpsr", "d": 0, "horizon": r.horizon,
                                "mean_ll": r.mean_ll, "n": r.n, "floor_hits": r.floor_hits,
                                "config_hash": chash, "seed": args.seed})
        except TpsrInfeasibleError as exc:
            print(str(exc))
    total = cfg_p.I_m * cfg_p.N
    mem_data = sample_trajectories(domain, UniformPolicy(domain.n_actions), total,
                                   args.max_len, stream_seed(args.seed, "data", 99))
    mq = memoryless_baseline(domain, mem_data, cfg_p, stream_seed(args.seed, "trees", 99))
    mm = eval_policy(domain, MemorylessAgent(domain, mq), args.episodes, eval_len, args.gamma,
                     args.seed)
    rm = eval_policy(domain, RandomAgent(domain.n_actions), args.episodes, eval_len, args.gamma,
                     args.seed)
    policy_rows.append(_agent_row("memoryless", mm, args, chash))
    policy_rows.append(_agent_row("random", rm, args, chash))
    ordered = best["mean_return"] > mm["mean_return"] > rm["mean_return"]
    for row in policy_rows:
        row["ordering_ok"] = ordered
    summary = {"config": resolved, "config_hash": chash, "seed": args.seed}
    if ll_rows:
        io.write_metrics(os.path.join(args.out, "likelihood.csv"), ll_rows, summary)
    io.write_metrics(os.path.join(args.out, "returns.csv"), policy_rows,
                     {**summary, "ordering_ok": ordered})
    print(f"memoryless {mm['mean_return']:.4f}, random {rm['mean_return']:.4f}, "
          f"ordering cpsr > memoryless > random: {ordered}")
    return EXIT_OK


VERBS = {"gen-data": cmd_gen_data, "learn": cmd_learn, "eval-likelihood": cmd_eval_likelihood,
         "plan": cmd_plan, "eval-policy": cmd_eval_policy, "full": cmd_full}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
    except SystemExit as exc:   # argparse reports usage errors this way
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return VERBS[args.verb](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, TpsrInfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MapError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CpsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
