"""Command-line interface: ``agentalloc <command> --input workflow.yaml``.

Exit codes: 0 success, 1 unreadable input, 2 usage error, 3 invalid config
or argument, 4 infeasible latency budget, 5 heterogeneous generation rates,
6 nothing to optimize, 7 solver did not converge, 8 oracle instance too
large, 9 missing allocation, 10 verification failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

from . import __version__, allocation as alloc_mod, model
from .config import load_config
from .errors import AgentAllocError, DomainError, MissingAllocation
from .oracle import OracleConfig, oracle_allocate, oracle_objective
from .simulation import SimConfig, simulate

EXIT_UNREADABLE = 1
EXIT_USAGE = 2
EXIT_VERIFY_FAILED = 10

SWEEP_HEADER = ["budget", "strategy", "reliability", "theta", "latency", "user_cost", "compute_cost"]
# excluded from the manifest so that outputs only depend on input content and results
_VOLATILE = {"input", "path", "output", "manifest", "workers", "func"}


def _num(x) -> str:
    """Round-trip-exact decimal for machine-readable output."""
    if x is None:
        return ""
    return repr(float(x))


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _sig(x) -> str:
    if x is None:
        return "-"
    return f"{x:.4g}"


def _table(header, rows) -> str:
    cells = [[str(h) for h in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _manifest(args, cfg, timestamp=False) -> dict:
    params = {k: v for k, v in sorted(vars(args).items())
              if k not in _VOLATILE and k != "command" and v is not None}
    m = {
        "tool": "agentalloc",
        "version": __version__,
        "input_sha256": cfg.digest if cfg else None,
        "command": args.command,
        "parameters": params,
        "seed": getattr(args, "seed", None),
    }
    if timestamp:
        m["timestamp"] = datetime.now(timezone.utc).isoformat()
    return m


def _emit(args, text: str) -> None:
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump_json(payload) -> str:
    return json.dumps(_jsonable(payload), indent=2, allow_nan=False) + "\n"


def _load(args):
    path = args.input or args.path
    if not path:
        raise _Usage("an input config is required (positional path or --input)")
    return load_config(path)


class _Usage(Exception):
    pass


def _require_budgets(cfg):
    if cfg.budgets is None:
        raise DomainError("config has no `budgets` section (latency_budget, cost_budget)")
    return cfg.budgets


# -- commands ---------------------------------------------------------------

def cmd_validate(args) -> int:
    cfg = _load(args)
    model.validate_workflow(cfg.workflow)
    n_llm = len(model.llm_agents(cfg.workflow))
    print(f"OK: {len(cfg.agents)} agents ({n_llm} LLM), config {cfg.source}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    if cfg.allocation is None:
        raise MissingAllocation("config has no `allocation` section to evaluate")
    full = alloc_mod.full_allocation(cfg.workflow, cfg.allocation)
    metrics = model.evaluate(cfg.workflow, full, cfg.pricing)
    fmt = args.format or "table"
    if fmt == "json":
        _emit(args, _dump_json({"manifest": _manifest(args, cfg), "allocation": full,
                                "metrics": metrics.as_dict()}))
    elif fmt == "csv":
        d = metrics.as_dict()
        _emit(args, _csv(list(d), [[_num(v) for v in d.values()]]))
    else:
        rows = [[k, _sig(v)] for k, v in metrics.as_dict().items()]
        _emit(args, _table(["metric", "value"], rows))
    return 0


def cmd_optimize(args) -> int:
    cfg = _load(args)
    budgets = _require_budgets(cfg)
    res = alloc_mod.optimize(cfg.workflow, budgets, cfg.pricing, cfg.allocation)
    agents = model.top_level_llm_agents(cfg.workflow)
    t_fixed = model.fixed_latency(cfg.workflow, cfg.allocation)
    closed = alloc_mod.optimal_reliability_closed_form(agents, res.theta)
    strategies = {"water_filling": res.allocation}
    if args.compare_baselines:
        for name, fn in alloc_mod.BASELINES.items():
            strategies[name] = fn(agents, res.effective_budget)
    floored = {k: math.floor(v) for k, v in res.allocation.items()} if args.integer else None

    fmt = args.format or "table"
    if fmt == "json":
        payload = {
            "manifest": _manifest(args, cfg),
            "effective_budget": res.effective_budget,
            "binding": res.binding,
            "fixed_latency": t_fixed,
            "theta": res.theta,
            "allocation": res.allocation,
            "predicted": res.predicted.as_dict(),
            "closed_form_llm_reliability": closed,
        }
        if floored is not None:
            payload["integer_allocation"] = floored
            payload["integer_unassigned"] = res.effective_budget - sum(floored.values())
        if args.compare_baselines:
            payload["strategies"] = {
                name: {"allocation": a,
                       "metrics": model.evaluate(
                           cfg.workflow, alloc_mod.full_allocation(cfg.workflow, a, cfg.allocation),
                           cfg.pricing).as_dict()}
                for name, a in strategies.items()}
        _emit(args, _dump_json(payload))
        return 0

    header = ["agent", "beta"] + list(strategies) + (["water_filling_floor"] if floored else [])
    rows = []
    for a in agents:
        row = [a.id, a.beta] + [strategies[s][a.id] for s in strategies]
        if floored:
            row.append(floored[a.id])
        rows.append(row)
    if fmt == "csv":
        _emit(args, _csv(header, [[r[0]] + [_num(v) for v in r[1:]] for r in rows]))
        return 0
    out = [_table(header, [[r[0]] + [_sig(v) for v in r[1:]] for r in rows])]
    p = res.predicted
    out.append(f"\neffective budget B = {_sig(res.effective_budget)} tokens (binding: {res.binding})\n"
               f"fixed latency      = {_sig(t_fixed)} s\n"
               f"shadow price theta = {_sig(res.theta)} per token\n"
               f"latency            = {_sig(p.expected_latency)} s "
               f"(budget {_sig(budgets.latency_budget)})\n"
               f"user cost          = {_sig(p.user_cost)} (budget {_sig(budgets.cost_budget)})\n"
               f"compute cost       = {_sig(p.compute_cost)}\n"
               f"reliability        = {_sig(p.reliability)}\n")
    if floored:
        out.append(f"floored allocation leaves {_sig(res.effective_budget - sum(floored.values()))} "
                   "tokens unassigned\n")
    _emit(args, "".join(out))
    return 0


def parse_budgets(text: str) -> list[float]:
    """``"2000,4000"`` or ``"start:stop:step"`` (stop inclusive)."""
    text = text.strip()
    if not text:
        raise _Usage("empty budget list")
    if ":" in text:
        try:
            start, stop, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise _Usage(f"bad budget range {text!r}; expected start:stop:step") from None
        if step <= 0 or stop < start:
            raise _Usage(f"bad budget range {text!r}")
        n = int(math.floor((stop - start) / step + 1e-9))
        return [start + i * step for i in range(n + 1)]
    try:
        out = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise _Usage(f"bad budget list {text!r}") from None
    if not out:
        raise _Usage("empty budget list")
    if any(b < 0 or not math.isfinite(b) for b in out):
        raise _Usage("budgets must be finite and >= 0")
    return out


def sweep_rows(cfg, budgets, workers=1) -> list[dict]:
    agents = model.top_level_llm_agents(cfg.workflow)
    if not agents:
        raise alloc_mod.NothingToOptimize("top-level sequential workflow has no LLM agent leaves")
    alloc_mod.common_rate_gen(agents)

    def point(B):
        rows = []
        for strategy in alloc_mod.STRATEGIES:
            top, theta = alloc_mod.allocate(strategy, agents, B)
            full = alloc_mod.full_allocation(cfg.workflow, top, cfg.allocation)
            m = model.evaluate(cfg.workflow, full, cfg.pricing)
            rows.append({"budget": B, "strategy": strategy, "reliability": m.reliability,
                         "theta": theta, "latency": m.expected_latency, "user_cost": m.user_cost,
                         "compute_cost": m.compute_cost, "allocation": top})
        return rows

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(point, budgets))
    else:
        parts = [point(B) for B in budgets]
    return [r for p in parts for r in p]


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.budgets is None:
        raise _Usage("--budgets is required (list a,b,c or range start:stop:step)")
    budgets = parse_budgets(args.budgets)
    rows = sweep_rows(cfg, budgets, args.workers)
    ids = [a.id for a in model.top_level_llm_agents(cfg.workflow)]
    fmt = args.format or "csv"
    if fmt == "json":
        _emit(args, _dump_json({"manifest": _manifest(args, cfg), "rows": rows}))
    elif fmt == "csv":
        header = SWEEP_HEADER + [f"L:{i}" for i in ids]
        out = [[_num(r["budget"]), r["strategy"]]
               + [_num(r[k]) for k in SWEEP_HEADER[2:]]
               + [_num(r["allocation"][i]) for i in ids] for r in rows]
        _emit(args, _csv(header, out))
    else:
        by_b: dict = {}
        for r in rows:
            by_b.setdefault(r["budget"], {})[r["strategy"]] = r["reliability"]
        tab = [[_sig(b)] + [_sig(v[s]) for s in alloc_mod.STRATEGIES] for b, v in by_b.items()]
        _emit(args, _table(["budget"] + list(alloc_mod.STRATEGIES), tab))
    return 0


def cmd_verify(args) -> int:
    cfg = _load(args)
    agents = model.top_level_llm_agents(cfg.workflow)
    if not agents:
        raise alloc_mod.NothingToOptimize("top-level sequential workflow has no LLM agent leaves")
    if args.budget is not None:
        B = args.budget
    else:
        B, _, _ = alloc_mod.effective_budget(cfg.workflow, _require_budgets(cfg), cfg.pricing,
                                             cfg.allocation)
    betas = [a.beta for a in agents]
    ocfg = OracleConfig(args.grid_step, args.max_agents, args.refinement_rounds)
    res = alloc_mod.water_filling(agents, B)
    analytic = [res.allocation[a.id] for a in agents]
    obj_a = oracle_objective(betas, analytic)
    grid, obj_o = oracle_allocate(betas, B, ocfg)
    gap = obj_a - obj_o
    bound = args.grid_step * max(betas)
    ok = gap <= bound
    fmt = args.format or "table"
    if fmt == "json":
        _emit(args, _dump_json({
            "manifest": _manifest(args, cfg), "budget": B, "grid_step": args.grid_step,
            "analytic_objective": obj_a, "oracle_objective": obj_o, "objective_gap": gap,
            "bound": bound, "pass": ok,
            "agents": [{"id": a.id, "beta": a.beta, "analytic": x, "oracle": g, "gap": x - g}
                       for a, x, g in zip(agents, analytic, grid)]}))
    else:
        rows = [[a.id, _sig(a.beta), _sig(x), _sig(g), _sig(x - g)]
                for a, x, g in zip(agents, analytic, grid)]
        _emit(args, _table(["agent", "beta", "analytic", "oracle", "gap"], rows)
              + f"\nanalytic objective = {obj_a!r}\noracle objective   = {obj_o!r}\n"
              f"gap = {gap:.3e} (bound {bound:.3e}): {'PASS' if ok else 'FAIL'}\n")
    return 0 if ok else EXIT_VERIFY_FAILED


def cmd_simulate(args) -> int:
    cfg = _load(args)
    closed = None
    if args.use_optimal:
        res = alloc_mod.optimize(cfg.workflow, _require_budgets(cfg), cfg.pricing, cfg.allocation)
        full = res.full_allocation
        agents = model.top_level_llm_agents(cfg.workflow)
        closed = alloc_mod.optimal_reliability_closed_form(agents, res.theta)
    elif cfg.allocation is not None:
        full = alloc_mod.full_allocation(cfg.workflow, cfg.allocation)
        missing = set(model.zero_allocation(cfg.workflow)) - set(cfg.allocation)
        if missing:
            raise MissingAllocation(f"allocation missing LLM agents: {', '.join(sorted(missing))}")
    else:
        raise MissingAllocation("no allocation in config; add `allocation` or pass --use-optimal")
    sc = SimConfig(args.samples, args.seed if args.seed is not None else 0, args.confidence,
                   args.workers)
    rep = simulate(cfg.workflow, full, sc)
    analytic = model.evaluate(cfg.workflow, full, cfg.pricing)
    fmt = args.format or "table"
    if fmt == "json":
        payload = {"manifest": _manifest(args, cfg), "allocation": full,
                   "simulated": rep.as_dict(), "analytic": analytic.as_dict()}
        if closed is not None:
            payload["closed_form_llm_reliability"] = closed
        _emit(args, _dump_json(payload))
    elif fmt == "csv":
        rows = [["mean_latency", _num(rep.mean_latency), _num(rep.latency_half_width),
                 _num(analytic.expected_latency)],
                ["success_rate", _num(rep.success_rate), _num(rep.success_half_width),
                 _num(analytic.reliability)]]
        rows += [[f"node:{k}", _num(v), "", ""] for k, v in rep.node_latency.items()]
        _emit(args, _csv(["quantity", "simulated", "half_width", "analytic"], rows))
    else:
        pct = f"{100 * rep.confidence:g}%"
        rows = [["mean latency (s)", _sig(rep.mean_latency), _sig(rep.latency_half_width),
                 _sig(analytic.expected_latency)],
                ["success rate", _sig(rep.success_rate), _sig(rep.success_half_width),
                 _sig(analytic.reliability)]]
        text = _table(["quantity", "simulated", f"+/- ({pct})", "analytic"], rows)
        text += "\nper-node mean latency (s):\n"
        text += "".join(f"  {k}: {_sig(v)}\n" for k, v in rep.node_latency.items())
        text += f"\n{rep.num_samples} samples, seed {sc.seed}\n"
        _emit(args, text)
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("path", nargs="?", help="workflow config (same as --input)")
    common.add_argument("--input", help="workflow config file (YAML)")
    common.add_argument("--output", help="write results here instead of standard output")
    common.add_argument("--format", choices=("table", "csv", "json"))
    common.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    common.add_argument("--manifest", help="write a run manifest (JSON) to this path")

    p = argparse.ArgumentParser(prog="agentalloc", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"agentalloc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="check a config file").set_defaults(func=cmd_validate)
    sub.add_parser("evaluate", parents=[common],
                   help="metrics of the config's allocation").set_defaults(func=cmd_evaluate)

    o = sub.add_parser("optimize", parents=[common], help="water-filling token allocation")
    o.add_argument("--compare-baselines", action="store_true",
                   help="also show uniform, proportional and inverse-proportional splits")
    o.add_argument("--integer", action="store_true", help="add a floored integer allocation")
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("sweep", parents=[common], help="reliability per strategy over token budgets")
    s.add_argument("--budgets", help="comma list (2000,4000) or range start:stop:step")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", parents=[common], help="cross-check against brute-force search")
    v.add_argument("--grid-step", type=float, default=1.0)
    v.add_argument("--max-agents", type=int, default=3)
    v.add_argument("--refinement-rounds", type=int, default=0)
    v.add_argument("--budget", type=float, help="token budget (default: from budgets section)")
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("simulate", parents=[common], help="Monte Carlo latency and success")
    m.add_argument("--samples", type=int, default=100_000)
    m.add_argument("--confidence", type=float, default=0.95)
    m.add_argument("--use-optimal", action="store_true", help="simulate the optimized allocation")
    m.add_argument("--workers", type=int, default=1)
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: cannot read input: {exc}", file=sys.stderr)
        return EXIT_UNREADABLE
    except AgentAllocError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        hint = getattr(exc, "hint", None)
        if hint:
            print(f"hint: {hint}", file=sys.stderr)
        return exc.exit_code
    if args.manifest:
        cfg = None
        try:
            cfg = load_config(args.input or args.path)
        except (AgentAllocError, OSError):
            pass
        with open(args.manifest, "w", encoding="utf-8") as fh:
            json.dump(_manifest(args, cfg, timestamp=True), fh, indent=2)
            fh.write("\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
