"""Exit criteria for the package, one test per criterion.

Run with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per criterion
is printed in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from agentalloc import (BudgetSpec, Feedback, InfeasibleLatency, InfraDelay, Leaf,
                        NonLlmAgentSpec, Parallel, ParallelMode, PricingModel, Sequential,
                        effective_budget, evaluate, fixed_latency,
                        optimal_reliability_closed_form, water_filling)
from agentalloc.allocation import allocate, marginal_log_reliability
from agentalloc.cli import main
from agentalloc.oracle import OracleConfig, oracle_allocate, oracle_objective
from agentalloc.simulation import SimConfig, simulate, standard_error

from conftest import ACCEPTANCE_RESULTS, PAPER_BETAS, PAPER_BUDGET, fixed, llm

PRICING = PricingModel(1e-4, 1e-6)
BASELINES = ("uniform", "proportional", "inverse_proportional")


def record(num, ok, text):
    ACCEPTANCE_RESULTS.append((num, bool(ok), text))
    assert ok, f"criterion {num}: {text}"


def best_time(fn, repeat=20):
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return min(ts)


def paper_agents():
    return [llm(f"a{i}", b) for i, b in enumerate(PAPER_BETAS, 1)]


def fuzz_instances(seed=20261016, count=1000):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n = int(rng.integers(1, 11))
        betas = np.exp(rng.uniform(math.log(1e-4), math.log(1e-2), n))
        B = float(rng.uniform(1e2, 1e5))
        alphas = np.exp(rng.uniform(math.log(1e-4), math.log(1e-1), n))
        X = rng.uniform(0, 3000, n)
        agents = [llm(f"f{k}_{j}", float(b), alpha=float(a), X=float(x))
                  for j, (b, a, x) in enumerate(zip(betas, alphas, X))]
        out.append((agents, B))
    return out


FUZZ = fuzz_instances()


def test_c01_kkt_equalization():
    agents = paper_agents()
    res = water_filling(agents, PAPER_BUDGET)
    L = np.array([res.allocation[a.id] for a in agents])
    marg = marginal_log_reliability(np.array(PAPER_BETAS), L)
    spread = float(np.max(np.abs(marg - marg[0]) / marg[0]))
    vs_theta = float(np.max(np.abs(marg - res.theta) / res.theta))
    runtime = best_time(lambda: water_filling(agents, PAPER_BUDGET))
    ok = spread <= 1e-8 and vs_theta <= 1e-8 and runtime < 1e-3
    record(1, ok, f"KKT marginals agree (spread {spread:.1e}, vs theta {vs_theta:.1e}; "
                  f"tol 1e-8), runtime {runtime * 1e3:.3f} ms < 1 ms")


def test_c02_budget_tightness():
    res = water_filling(paper_agents(), PAPER_BUDGET)
    paper_err = abs(math.fsum(res.allocation.values()) - PAPER_BUDGET) / PAPER_BUDGET
    t0 = time.perf_counter()
    worst = 0.0
    for agents, B in FUZZ:
        r = water_filling(agents, B)
        worst = max(worst, abs(math.fsum(r.allocation.values()) - B) / B)
    elapsed = time.perf_counter() - t0
    ok = paper_err <= 1e-9 and worst <= 1e-9 and elapsed < 1.0
    record(2, ok, f"sum L* = B (paper rel err {paper_err:.1e}, worst of {len(FUZZ)} fuzz "
                  f"{worst:.1e}; tol 1e-9), runtime {elapsed:.3f} s < 1 s")


ORACLE_FIXTURES = [
    ([0.001, 0.002, 0.003], 3000), ([0.001, 0.001, 0.001], 3000), ([0.0005, 0.002, 0.008], 2500),
    ([0.0001, 0.0002, 0.0003], 3000), ([0.01, 0.005, 0.0025], 1200), ([0.004, 0.004, 0.0004], 2000),
    ([0.003, 0.0015, 0.0006], 1800), ([0.0012, 0.0035, 0.0009], 2700), ([0.002, 0.002, 0.007], 900),
    ([0.0003, 0.006, 0.0011], 3000), ([0.0008, 0.0016, 0.0032], 1500), ([0.005, 0.0002, 0.0007], 2200),
    ([0.009, 0.0045, 0.0009], 600), ([0.0025, 0.0025, 0.0025], 1000), ([0.00015, 0.0095, 0.0040], 2900),
    ([0.0007, 0.0013, 0.0021], 3000), ([0.0060, 0.0030, 0.0010], 1750), ([0.0004, 0.0004, 0.0090], 2400),
    ([0.0018, 0.0027, 0.0036], 500), ([0.0100, 0.0001, 0.0010], 3000), ([0.0022, 0.0005, 0.0049], 100),
    ([0.0033, 0.0066, 0.0099], 2000),
]


def test_c03_oracle_equivalence():
    t0 = time.perf_counter()
    failures = []
    worst = 0.0
    for betas, B in ORACLE_FIXTURES:
        agents = [llm(f"o{j}", b) for j, b in enumerate(betas)]
        res = water_filling(agents, B)
        obj_a = oracle_objective(betas, [res.allocation[a.id] for a in agents])
        _, obj_o = oracle_allocate(betas, B, OracleConfig(grid_step=1))
        worst = max(worst, obj_a - obj_o)
        # 1e-12 absorbs float rounding when the grid point coincides with the optimum
        if not (obj_a >= obj_o - 1e-12 and obj_o >= obj_a - 1 * max(betas)):
            failures.append((betas, B, obj_a, obj_o))
    elapsed = time.perf_counter() - t0
    ok = not failures and len(ORACLE_FIXTURES) >= 20 and elapsed < 60
    record(3, ok, f"analytic >= oracle >= analytic - step*max(beta) on {len(ORACLE_FIXTURES)} "
                  f"3-agent fixtures (max gap {worst:.1e}), runtime {elapsed:.2f} s < 60 s")


def test_c04_corollary_identity():
    worst = 0.0
    for agents, B in FUZZ:
        res = water_filling(agents, B)
        closed = optimal_reliability_closed_form(agents, res.theta)
        direct = math.prod(a.reasoning_factor * -math.expm1(-a.beta * res.allocation[a.id])
                           for a in agents)
        if direct > 0:
            worst = max(worst, abs(closed - direct) / direct)
    record(4, worst <= 1e-10, f"closed-form R* = direct reliability at L* over {len(FUZZ)} "
                              f"instances (worst rel err {worst:.1e}; tol 1e-10)")


def test_c05_figure1_ordering():
    agents = paper_agents()
    wf = water_filling(agents, PAPER_BUDGET).allocation
    inv = allocate("inverse_proportional", agents, PAPER_BUDGET)[0]
    by_beta = sorted(agents, key=lambda a: a.beta)
    wf_seq = [wf[a.id] for a in by_beta]
    inv_seq = [inv[a.id] for a in by_beta]
    decreasing = all(x > y for x, y in zip(wf_seq, wf_seq[1:]))
    inv_decreasing = all(x > y for x, y in zip(inv_seq, inv_seq[1:]))
    max_diff = max(abs(wf[a.id] - inv[a.id]) for a in agents)
    ok = decreasing and inv_decreasing and max_diff > 1.0
    record(5, ok, f"water-filling strictly decreasing in beta; inverse-proportional shares "
                  f"order and differs by up to {max_diff:.0f} tokens (> 1)")


def test_c06_figure2_dominance():
    agents = paper_agents()
    w = Sequential(tuple(Leaf(a) for a in agents))
    budgets = [2000.0 * k for k in range(1, 11)]

    def sweep():
        rows = []
        for B in budgets:
            rel = {s: evaluate(w, allocate(s, agents, B)[0], PRICING).reliability
                   for s in ("water_filling",) + BASELINES}
            rows.append(rel)
        return rows

    rows = sweep()
    runtime = best_time(sweep, repeat=5)
    wf = [r["water_filling"] for r in rows]
    strict = all(r["water_filling"] > r[s] for r in rows for s in BASELINES)
    monotone = all(x <= y for x, y in zip(wf, wf[1:]))
    ok = strict and monotone and runtime < 0.1
    record(6, ok, f"water-filling > every baseline at all {len(budgets)} budgets, "
                  f"monotone ({wf[0]:.3f} -> {wf[-1]:.3f}), runtime {runtime * 1e3:.1f} ms < 100 ms")


def test_c07_latency_model():
    d = InfraDelay("exponential", 0.8)
    w = Sequential((Leaf(NonLlmAgentSpec("svc", 0.97, service_rate=2.5)),
                    Leaf(llm("p", 0.002, tau=0.8, X=400, rate_think=200, dist=d)),
                    Leaf(llm("q", 0.001, tau=0.8, X=100, rate_think=200, dist=d))))
    alloc = {"p": 300.0, "q": 450.0}
    t0 = time.perf_counter()
    rep = simulate(w, alloc, SimConfig(100_000, seed=7))
    elapsed = time.perf_counter() - t0
    analytic = evaluate(w, alloc, PRICING).expected_latency
    se, _ = standard_error(rep)
    z = abs(rep.mean_latency - analytic) / se
    ok = z <= 3 and elapsed < 5
    record(7, ok, f"simulated mean latency {rep.mean_latency:.4f} vs analytic {analytic:.4f} "
                  f"({z:.2f} SE <= 3), runtime {elapsed:.2f} s < 5 s")


def test_c08_aggregation_algebra():
    i, j, k = fixed("i", 1.0, 0.9), fixed("j", 0.5, 0.7), NonLlmAgentSpec("k", 0.8, service_rate=4.0)
    a = llm("a", 0.002, alpha=0.01, X=150)
    alloc = {"a": 400.0}
    fixtures = {
        "sequential": Sequential((Leaf(i), Leaf(j), Leaf(a))),
        "conjunctive": Parallel((Leaf(i), Leaf(j), Leaf(a)), ParallelMode.CONJUNCTIVE),
        "redundant": Parallel((Leaf(i), Leaf(j), Leaf(a)), ParallelMode.REDUNDANT),
        "feedback(K=3)": Feedback(Sequential((Leaf(j), Leaf(k), Leaf(a))), 3),
    }
    zs = {}
    for name, w in fixtures.items():
        rep = simulate(w, alloc, SimConfig(100_000, seed=8))
        _, se = standard_error(rep)
        zs[name] = abs(rep.success_rate - evaluate(w, alloc, PRICING).reliability) / se

    body = Sequential((Leaf(j), Leaf(k), Leaf(a)))
    copies = []
    for c in range(3):
        copies.append(Sequential((Leaf(fixed(f"j{c}", 0.5, 0.7)),
                                  Leaf(NonLlmAgentSpec(f"k{c}", 0.8, service_rate=4.0)),
                                  Leaf(llm(f"a{c}", 0.002, alpha=0.01, X=150)))))
    fb = evaluate(Feedback(body, 3), alloc, PRICING)
    sq = evaluate(Sequential(tuple(copies)), {f"a{c}": 400.0 for c in range(3)}, PRICING)
    exact = fb == sq
    ok = all(z <= 3 for z in zs.values()) and exact
    detail = ", ".join(f"{n} {z:.2f}" for n, z in zs.items())
    record(8, ok, f"simulated success within 3 SE ({detail}); Feedback == 3-fold Sequential "
                  f"exactly: {exact}")


def test_c09_effective_budget():
    agent = llm("a", 0.001, tau=0.5, X=200, rate_think=100, rate_gen=40)
    w = Sequential((Leaf(fixed("n", 1.5, 0.9)), Leaf(agent)))
    t_fixed = fixed_latency(w)                  # 1.5 + 0.5 + 2.0 = 4.0
    p = PricingModel(1e-4, 1e-6)
    checks = []
    B, binding, _ = effective_budget(w, BudgetSpec(t_fixed + 100, 1.0), p)
    checks.append(binding == "latency" and B == pytest.approx(4000, rel=1e-12))
    B, binding, _ = effective_budget(w, BudgetSpec(t_fixed + 100, 0.3), p)
    checks.append(binding == "cost" and B == pytest.approx(3000, rel=1e-12))
    B, binding, _ = effective_budget(w, BudgetSpec(t_fixed + 100, 0.4), p)
    checks.append(binding == "tie" and B == pytest.approx(4000, rel=1e-12))
    # just outside the 1e-12 tie band
    B, binding, _ = effective_budget(w, BudgetSpec(t_fixed + 100, 0.4 * (1 + 1e-10)), p)
    checks.append(binding == "latency")
    for T in (t_fixed, math.nextafter(t_fixed, 0), t_fixed - 1.0):
        try:
            effective_budget(w, BudgetSpec(T, 1.0), p)
            checks.append(False)
        except InfeasibleLatency:
            checks.append(True)
    B, _, b_t = effective_budget(w, BudgetSpec(math.nextafter(t_fixed, math.inf), 1.0), p)
    checks.append(b_t > 0 and B > 0)
    record(9, all(checks), f"binding side correct on latency/cost/tie; InfeasibleLatency "
                           f"iff T <= T_fixed ({sum(checks)}/{len(checks)} checks)")


def test_c10_determinism(tmp_path, paper_config_path, mixed_config_path, capsys):
    def run(argv, out):
        code = main([str(x) for x in argv] + ["--output", str(out)])
        capsys.readouterr()
        assert code == 0
        return out.read_bytes()

    sweeps = [run(["sweep", paper_config_path, "--budgets", "0:20000:2000", "--seed", 1,
                   "--workers", w], tmp_path / f"sweep{n}.csv")
              for n, w in enumerate((1, 1, 4))]
    sweeps_json = [run(["sweep", paper_config_path, "--budgets", "0:20000:2000", "--format", "json",
                        "--workers", w], tmp_path / f"sweep{n}.json")
                   for n, w in enumerate((1, 4))]
    sims = [run(["simulate", mixed_config_path, "--samples", 30000, "--seed", 123, "--format",
                 "json", "--workers", w], tmp_path / f"sim{n}.json")
            for n, w in enumerate((1, 1, 4))]
    ok = (sweeps[0] == sweeps[1] == sweeps[2] and sweeps_json[0] == sweeps_json[1]
          and sims[0] == sims[1] == sims[2])
    record(10, ok, "sweep and simulate outputs byte-identical across repeated runs and "
                   "worker counts 1/4")
