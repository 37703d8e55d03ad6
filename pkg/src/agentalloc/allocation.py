"""Reliability-maximizing output-token allocation for sequential workflows.

Maximizing ``sum_j log(1 - exp(-beta_j L_j))`` subject to a latency budget
and a user-cost budget reduces to one token budget ``B``; the optimum is

    L_j = (1/beta_j) * log(1 + beta_j/theta)

with the shadow price ``theta`` chosen so that the allocations sum to ``B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model
from .errors import (DomainError, HeterogeneousRates, InfeasibleLatency,
                     NoConvergence, NothingToOptimize)
from .model import LlmAgentSpec, PricingModel, WorkflowMetrics, WorkflowNode

BUDGET_RTOL = 1e-9
MAX_ITER = 200
TIE_RTOL = 1e-12

LATENCY = "latency"
COST = "cost"
TIE = "tie"


@dataclass(frozen=True)
class BudgetSpec:
    latency_budget: float
    cost_budget: float

    def __post_init__(self):
        for name in ("latency_budget", "cost_budget"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be > 0, got {v!r}")


@dataclass(frozen=True)
class AllocationResult:
    allocation: dict
    theta: float
    effective_budget: float
    binding: str | None = None
    predicted: WorkflowMetrics | None = None
    # top-level allocation merged with the fixed allocations of nested agents
    full_allocation: dict | None = None


def effective_budget(workflow: WorkflowNode, budgets: BudgetSpec, pricing: PricingModel,
                     nested=None) -> tuple[float, str, float]:
    """Return ``(B, binding, B_T)`` where ``B_T`` is the latency left for output
    generation and ``B = min(rate_gen * B_T, C / c_tok)``."""
    agents = model.top_level_llm_agents(workflow)
    rate = common_rate_gen(agents)
    t_fixed = model.fixed_latency(workflow, nested)
    b_t = budgets.latency_budget - t_fixed
    if b_t <= 0:
        raise InfeasibleLatency(
            f"fixed latency {t_fixed:.6g} s leaves no time for output generation "
            f"under the latency budget {budgets.latency_budget:.6g} s")
    cost = budgets.cost_budget - _nested_user_cost(workflow, pricing, nested)
    if cost <= 0:
        raise DomainError("nested agents' fixed allocations exhaust the cost budget")
    by_latency = rate * b_t if rate is not None else math.inf
    by_cost = cost / pricing.c_tok
    if math.isclose(by_latency, by_cost, rel_tol=TIE_RTOL, abs_tol=0.0):
        return min(by_latency, by_cost), TIE, b_t
    if by_latency < by_cost:
        return by_latency, LATENCY, b_t
    return by_cost, COST, b_t


def _nested_user_cost(workflow, pricing, nested) -> float:
    if not nested:
        return 0.0
    top = {a.id for a in model.top_level_llm_agents(workflow)}
    return math.fsum(pricing.c_tok * float(v) for k, v in nested.items() if k not in top)


def common_rate_gen(agents: Sequence[LlmAgentSpec]) -> float | None:
    if not agents:
        return None
    rates = {a.rate_gen for a in agents}
    first = agents[0].rate_gen
    if any(not math.isclose(r, first, rel_tol=TIE_RTOL, abs_tol=0.0) for r in rates):
        raise HeterogeneousRates(
            "optimized LLM agents have different rate_gen values: "
            + ", ".join(f"{a.id}={a.rate_gen:g}" for a in agents))
    return first


# -- shadow price -------------------------------------------------------------

def _log_expm1(x) -> np.ndarray:
    # log(e^x - 1) without overflow for large x
    x = np.asarray(x, dtype=float)
    small = np.log(np.expm1(np.minimum(x, 30.0)))
    return np.where(x > 30.0, x + np.log1p(-np.exp(-x)), small)


def tokens_at(betas: np.ndarray, log_theta: float) -> np.ndarray:
    """Per-agent tokens ``(1/beta) log(1 + beta/theta)`` given ``log(theta)``."""
    return np.logaddexp(0.0, np.log(betas) - log_theta) / betas


def _check_betas(betas) -> np.ndarray:
    b = np.asarray(betas, dtype=float)
    if b.ndim != 1 or b.size == 0:
        raise DomainError("need a nonempty list of beta values")
    if not np.all(np.isfinite(b)) or np.any(b <= 0):
        raise DomainError("every beta must be finite and > 0")
    return b


def solve_theta(betas: Sequence[float], B: float) -> float:
    """Shadow price ``theta > 0`` at which the water-filling allocation spends
    exactly ``B`` tokens, found by bisection on ``log(theta)`` and finished
    with one Newton step.

    Every ``L_j <= B`` gives the lower bracket and the largest ``L_j >= B/n``
    gives the upper one.
    """
    b = _check_betas(betas)
    if not (math.isfinite(B) and B > 0):
        raise DomainError(f"token budget must be finite and > 0, got {B!r}")
    return math.exp(_solve_log_theta(b, float(B)))


def _solve_log_theta(b: np.ndarray, B: float) -> float:
    logb = np.log(b)
    lo = float(np.max(logb - _log_expm1(b * B)))
    hi = float(np.max(logb - _log_expm1(b * B / b.size)))

    def resid(lt):
        return float(np.sum(tokens_at(b, lt))) - B

    # widen until the sign change is established; fp rounding can shave the analytic bracket
    step = 1e-6
    while resid(lo) < 0:
        lo -= step
        step *= 2
    step = 1e-6
    while resid(hi) > 0:
        hi += step
        step *= 2

    tol = BUDGET_RTOL * B
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        r = resid(mid)
        if abs(r) <= tol:
            # one Newton step on log(theta); d(sum L)/d(log theta) = -sum 1/(beta + theta)
            slope = -float(np.sum(1.0 / (b + math.exp(mid))))
            polished = mid - r / slope
            return polished if abs(resid(polished)) < abs(r) else mid
        if mid in (lo, hi):
            break
        if r > 0:
            lo = mid
        else:
            hi = mid
    raise NoConvergence(f"bisection did not reach budget residual {tol:g} in {MAX_ITER} iterations")


def marginal_log_reliability(beta, L):
    """Derivative of ``log(1 - exp(-beta L))`` with respect to ``L``."""
    x = beta * np.asarray(L, dtype=float)
    # beta e^{-x} / (1 - e^{-x}) equals beta / expm1(x) without overflowing at large x
    with np.errstate(divide="ignore"):
        return beta * np.exp(-x) / -np.expm1(-x)


def water_filling(agents: Sequence[LlmAgentSpec], B: float) -> AllocationResult:
    if not (math.isfinite(B) and B >= 0):
        raise DomainError(f"token budget must be finite and >= 0, got {B!r}")
    if not agents:
        raise NothingToOptimize("no LLM agents to allocate tokens to")
    if B == 0:
        return AllocationResult({a.id: 0.0 for a in agents}, math.inf, 0.0)
    b = _check_betas([a.beta for a in agents])
    lt = _solve_log_theta(b, float(B))
    L = tokens_at(b, lt)
    # log(1 + beta/theta) > 0 for finite theta, so the [.]_+ clamp never binds
    assert np.all(L > 0), "water-filling produced a nonpositive allocation"
    return AllocationResult({a.id: float(x) for a, x in zip(agents, L)}, math.exp(lt), float(B))


def optimal_reliability_closed_form(agents: Sequence[LlmAgentSpec], theta: float) -> float:
    """Product over agents of ``(1 - exp(-alpha X)) * beta / (beta + theta)``.

    ``theta == 0`` is accepted as the limit reached when the shadow price
    underflows at very large ``beta * B``.
    """
    if not (theta >= 0):
        raise DomainError(f"theta must be >= 0, got {theta!r}")
    return math.prod(a.reasoning_factor * (a.beta / (a.beta + theta)) for a in agents)


# -- baselines --------------------------------------------------------------

def _split(agents, weights, B) -> dict:
    if not (math.isfinite(B) and B >= 0):
        raise DomainError(f"token budget must be finite and >= 0, got {B!r}")
    if not agents:
        raise NothingToOptimize("no LLM agents to allocate tokens to")
    total = math.fsum(weights)
    return {a.id: B * w / total for a, w in zip(agents, weights)}


def baseline_uniform(agents, B) -> dict:
    return _split(agents, [1.0] * len(agents), B)


def baseline_proportional(agents, B) -> dict:
    return _split(agents, [a.beta for a in agents], B)


def baseline_inverse_proportional(agents, B) -> dict:
    return _split(agents, [1.0 / a.beta for a in agents], B)


BASELINES = {
    "uniform": baseline_uniform,
    "proportional": baseline_proportional,
    "inverse_proportional": baseline_inverse_proportional,
}
STRATEGIES = ("water_filling",) + tuple(BASELINES)


def allocate(strategy: str, agents, B: float) -> tuple[dict, float | None]:
    """Allocation and shadow price (None for baselines) for a named strategy."""
    if strategy == "water_filling":
        res = water_filling(agents, B)
        return res.allocation, res.theta
    try:
        return BASELINES[strategy](agents, B), None
    except KeyError:
        raise DomainError(f"unknown strategy {strategy!r}") from None


def full_allocation(workflow: WorkflowNode, top: dict, nested=None) -> dict:
    """Merge an allocation of top-level agents with nested fixed allocations."""
    alloc = model.zero_allocation(workflow)
    for k, v in (nested or {}).items():
        if k in alloc:
            alloc[k] = float(v)
    alloc.update(top)
    return alloc


def optimize(workflow: WorkflowNode, budgets: BudgetSpec, pricing: PricingModel,
             nested=None) -> AllocationResult:
    """Optimal output-token allocation for a top-level sequential workflow.

    LLM agents inside parallel or feedback blocks are not optimized; they
    keep the output tokens given in ``nested`` (zero when absent).
    """
    model.validate_workflow(workflow)
    agents = model.top_level_llm_agents(workflow)
    if not agents:
        raise NothingToOptimize("top-level sequential workflow has no LLM agent leaves")
    B, binding, _ = effective_budget(workflow, budgets, pricing, nested)
    res = water_filling(agents, B)
    alloc = full_allocation(workflow, res.allocation, nested)
    predicted = model.evaluate(workflow, alloc, pricing)
    return AllocationResult(res.allocation, res.theta, B, binding, predicted, alloc)
