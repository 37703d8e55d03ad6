"""Agents, workflow composition trees and their analytic metrics.

LLM agents have latency ``tau + X/rate_think + L/rate_gen`` and reliability
``(1 - exp(-alpha X)) (1 - exp(-beta L))``, where ``X`` is the fixed number
of reasoning tokens and ``L`` the number of output tokens. Non-LLM agents
carry a fixed mean latency and reliability. Trees compose them sequentially,
in parallel (conjunctive or redundant) and in feedback loops.

Note: ``n_params`` in :func:`derive_c_comp` is the model parameter count; it
is unrelated to the per-agent reliability rate ``beta``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Union

import numpy as np

from .errors import DomainError, MissingAllocation, ValidationError

Allocation = Mapping[str, float]

_MEAN_RTOL = 1e-9


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DomainError(msg)


def _finite(x: float) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


@dataclass(frozen=True)
class InfraDelay:
    """Sampling distribution of an agent's infrastructure delay.

    ``family`` is one of ``constant``, ``exponential`` or ``lognormal``;
    ``sigma`` is the log-scale standard deviation for ``lognormal``.
    """

    family: str
    mean: float
    sigma: float | None = None

    FAMILIES = ("constant", "exponential", "lognormal")

    def __post_init__(self):
        _require(self.family in self.FAMILIES, f"unknown delay family {self.family!r}")
        _require(_finite(self.mean) and self.mean >= 0, "delay mean must be >= 0")
        if self.family in ("exponential", "lognormal"):
            _require(self.mean > 0, f"{self.family} delay needs mean > 0")
        if self.family == "lognormal":
            _require(self.sigma is not None and _finite(self.sigma) and self.sigma > 0,
                     "lognormal delay needs sigma > 0")
        else:
            _require(self.sigma is None, f"sigma is only valid for lognormal, not {self.family}")

    @property
    def analytic_mean(self) -> float:
        if self.family == "lognormal":
            mu = math.log(self.mean) - 0.5 * self.sigma**2
            return math.exp(mu + 0.5 * self.sigma**2)
        return self.mean

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "constant":
            return np.full(size, float(self.mean))
        if self.family == "exponential":
            return rng.exponential(self.mean, size)
        mu = math.log(self.mean) - 0.5 * self.sigma**2
        return rng.lognormal(mu, self.sigma, size)


@dataclass(frozen=True)
class LlmAgentSpec:
    id: str
    alpha: float
    beta: float
    reasoning_tokens: float
    mean_infra_delay: float
    rate_think: float
    rate_gen: float
    infra_delay_dist: InfraDelay | None = None

    def __post_init__(self):
        for name in ("alpha", "beta", "rate_think", "rate_gen"):
            v = getattr(self, name)
            _require(_finite(v) and v > 0, f"agent {self.id!r}: {name} must be > 0, got {v!r}")
        for name in ("reasoning_tokens", "mean_infra_delay"):
            v = getattr(self, name)
            _require(_finite(v) and v >= 0, f"agent {self.id!r}: {name} must be >= 0, got {v!r}")
        d = self.infra_delay_dist
        if d is not None:
            ok = math.isclose(d.analytic_mean, self.mean_infra_delay, rel_tol=_MEAN_RTOL, abs_tol=0.0)
            _require(ok, f"agent {self.id!r}: infra_delay_dist mean {d.analytic_mean!r} "
                         f"!= mean_infra_delay {self.mean_infra_delay!r}")

    @property
    def reasoning_factor(self) -> float:
        """Reliability factor ``1 - exp(-alpha X)`` contributed by reasoning."""
        return -math.expm1(-self.alpha * self.reasoning_tokens)


@dataclass(frozen=True)
class NonLlmAgentSpec:
    """Fixed agent. Give exactly one of ``mean_latency`` or ``service_rate``."""

    id: str
    reliability: float
    mean_latency: float | None = None
    service_rate: float | None = None

    def __post_init__(self):
        r = self.reliability
        _require(_finite(r) and 0.0 <= r <= 1.0, f"agent {self.id!r}: reliability must be in [0, 1], got {r!r}")
        _require((self.mean_latency is None) != (self.service_rate is None),
                 f"agent {self.id!r}: give exactly one of mean_latency or service_rate")
        if self.mean_latency is not None:
            _require(_finite(self.mean_latency) and self.mean_latency >= 0,
                     f"agent {self.id!r}: mean_latency must be >= 0")
        else:
            _require(_finite(self.service_rate) and self.service_rate > 0,
                     f"agent {self.id!r}: service_rate must be > 0")

    @property
    def expected_latency(self) -> float:
        if self.mean_latency is not None:
            return float(self.mean_latency)
        return 1.0 / self.service_rate


Agent = Union[LlmAgentSpec, NonLlmAgentSpec]


class ParallelMode(enum.Enum):
    CONJUNCTIVE = "conjunctive"
    REDUNDANT = "redundant"


@dataclass(frozen=True)
class Leaf:
    agent: Agent


@dataclass(frozen=True)
class Sequential:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValidationError("sequential node needs at least one child")


@dataclass(frozen=True)
class Parallel:
    children: tuple
    mode: ParallelMode = ParallelMode.CONJUNCTIVE

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "mode", ParallelMode(self.mode))
        if not self.children:
            raise ValidationError("parallel node needs at least one child")


@dataclass(frozen=True)
class Feedback:
    body: "WorkflowNode"
    iterations: int

    def __post_init__(self):
        k = self.iterations
        if isinstance(k, bool) or not isinstance(k, int) or k < 1:
            raise ValidationError(f"feedback iterations must be an integer >= 1, got {k!r}")


WorkflowNode = Union[Leaf, Sequential, Parallel, Feedback]


def derive_c_comp(c_e: float, n_params: int, n_layer: int, n_ctx: int, n_attn: int) -> float:
    """Compute cost per token from per-FLOP cost and transformer dimensions.

    FLOPs per token are ``2 n_params + 2 n_layer n_ctx n_attn``.
    """
    for name, v in (("c_e", c_e), ("n_params", n_params), ("n_layer", n_layer),
                    ("n_ctx", n_ctx), ("n_attn", n_attn)):
        _require(_finite(v) and v > 0, f"{name} must be > 0, got {v!r}")
    return c_e * (2 * n_params + 2 * n_layer * n_ctx * n_attn)


@dataclass(frozen=True)
class PricingModel:
    c_tok: float
    c_comp: float

    def __post_init__(self):
        _require(_finite(self.c_tok) and self.c_tok > 0, f"c_tok must be > 0, got {self.c_tok!r}")
        _require(_finite(self.c_comp) and self.c_comp > 0, f"c_comp must be > 0, got {self.c_comp!r}")

    @classmethod
    def from_flops(cls, c_tok, c_e, n_params, n_layer, n_ctx, n_attn) -> "PricingModel":
        return cls(c_tok, derive_c_comp(c_e, n_params, n_layer, n_ctx, n_attn))


@dataclass(frozen=True)
class WorkflowMetrics:
    expected_latency: float
    reliability: float
    user_cost: float
    compute_cost: float

    def as_dict(self) -> dict:
        return {
            "expected_latency": self.expected_latency,
            "reliability": self.reliability,
            "user_cost": self.user_cost,
            "compute_cost": self.compute_cost,
        }


def _check_tokens(L: float) -> None:
    if not _finite(L) or L < 0:
        raise DomainError(f"output tokens must be finite and >= 0, got {L!r}")


def agent_mean_latency(agent: LlmAgentSpec, L: float) -> float:
    _check_tokens(L)
    return agent.mean_infra_delay + agent.reasoning_tokens / agent.rate_think + L / agent.rate_gen


def agent_reliability(agent: LlmAgentSpec, L: float) -> float:
    _check_tokens(L)
    return agent.reasoning_factor * -math.expm1(-agent.beta * L)


def agent_costs(agent: LlmAgentSpec, L: float, pricing: PricingModel) -> tuple[float, float]:
    """Return ``(user_cost, compute_cost)`` for ``L`` output tokens."""
    _check_tokens(L)
    return pricing.c_tok * L, pricing.c_comp * (agent.reasoning_tokens + L)


# -- tree helpers -----------------------------------------------------------

def iter_agents(node: WorkflowNode) -> Iterator[Agent]:
    """Agents in depth-first, left-to-right order (feedback bodies once)."""
    if isinstance(node, Leaf):
        yield node.agent
    elif isinstance(node, (Sequential, Parallel)):
        for child in node.children:
            yield from iter_agents(child)
    elif isinstance(node, Feedback):
        yield from iter_agents(node.body)
    else:
        raise ValidationError(f"not a workflow node: {node!r}")


def llm_agents(node: WorkflowNode) -> list[LlmAgentSpec]:
    return [a for a in iter_agents(node) if isinstance(a, LlmAgentSpec)]


def validate_workflow(node: WorkflowNode) -> None:
    """Raise ValidationError if agent ids repeat anywhere in the tree."""
    seen: dict[str, int] = {}
    for a in iter_agents(node):
        seen[a.id] = seen.get(a.id, 0) + 1
    dups = sorted(k for k, n in seen.items() if n > 1)
    if dups:
        raise ValidationError(f"duplicate agent ids in workflow: {', '.join(dups)}")


def validate_allocation(node: WorkflowNode, allocation: Allocation) -> None:
    ids = {a.id for a in llm_agents(node)}
    missing = sorted(ids - set(allocation))
    if missing:
        raise MissingAllocation(f"allocation missing LLM agents: {', '.join(missing)}")
    extra = sorted(set(allocation) - ids)
    if extra:
        raise ValidationError(f"allocation names unknown or non-LLM agents: {', '.join(extra)}")
    for k, v in allocation.items():
        if not math.isfinite(v) or v < 0:
            raise DomainError(f"allocation for {k!r} must be finite and >= 0, got {v!r}")


def _eval(node: WorkflowNode, alloc: Allocation, pricing: PricingModel) -> WorkflowMetrics:
    if isinstance(node, Leaf):
        a = node.agent
        if isinstance(a, NonLlmAgentSpec):
            return WorkflowMetrics(a.expected_latency, float(a.reliability), 0.0, 0.0)
        L = float(alloc[a.id])
        user, comp = agent_costs(a, L, pricing)
        return WorkflowMetrics(agent_mean_latency(a, L), agent_reliability(a, L), user, comp)

    if isinstance(node, Feedback):
        body = _eval(node.body, alloc, pricing)
        # repeated +/* rather than K*x and x**K: bit-identical to K sequential copies
        lat, rel = 0.0, 1.0
        for _ in range(node.iterations):
            lat += body.expected_latency
            rel *= body.reliability
        k = node.iterations
        return WorkflowMetrics(lat, rel, k * body.user_cost, k * body.compute_cost)

    parts = [_eval(c, alloc, pricing) for c in node.children]
    user = math.fsum(p.user_cost for p in parts)
    comp = math.fsum(p.compute_cost for p in parts)
    if isinstance(node, Sequential):
        lat = 0.0
        for p in parts:
            lat += p.expected_latency
        return WorkflowMetrics(lat, math.prod(p.reliability for p in parts), user, comp)

    # max of child means: a lower bound on E[max]; the simulator estimates the real thing
    lat = max(p.expected_latency for p in parts)
    if node.mode is ParallelMode.CONJUNCTIVE:
        rel = math.prod(p.reliability for p in parts)
    else:
        rel = 1.0 - math.prod(1.0 - p.reliability for p in parts)
    return WorkflowMetrics(lat, rel, user, comp)


def evaluate(workflow: WorkflowNode, allocation: Allocation, pricing: PricingModel) -> WorkflowMetrics:
    """Expected latency, reliability and both costs of ``workflow`` under ``allocation``."""
    validate_workflow(workflow)
    validate_allocation(workflow, allocation)
    return _eval(workflow, allocation, pricing)


def zero_allocation(workflow: WorkflowNode) -> dict[str, float]:
    return {a.id: 0.0 for a in llm_agents(workflow)}


def top_level_llm_agents(workflow: WorkflowNode) -> list[LlmAgentSpec]:
    """LLM leaves that are direct children of the top-level sequential node."""
    _require_sequential(workflow)
    return [c.agent for c in workflow.children
            if isinstance(c, Leaf) and isinstance(c.agent, LlmAgentSpec)]


def _require_sequential(workflow: WorkflowNode) -> None:
    if not isinstance(workflow, Sequential):
        raise ValidationError("optimization requires a top-level sequential workflow")


def fixed_latency(workflow: WorkflowNode, nested: Allocation | None = None) -> float:
    """Latency of the top-level sequential workflow that does not depend on
    the output tokens of its direct LLM children.

    Composite blocks contribute their evaluated latency with nested LLM
    agents held at ``nested`` (default zero output tokens).
    """
    _require_sequential(workflow)
    validate_workflow(workflow)
    alloc = zero_allocation(workflow)
    top = {a.id for a in top_level_llm_agents(workflow)}
    for k, v in (nested or {}).items():
        if k not in top and k in alloc:
            alloc[k] = float(v)
    total = 0.0
    for child in workflow.children:
        if isinstance(child, Leaf) and isinstance(child.agent, LlmAgentSpec):
            a = child.agent
            total += agent_mean_latency(a, 0.0)
        else:
            total += _eval(child, alloc, _UNIT_PRICING).expected_latency
    return total


_UNIT_PRICING = PricingModel(1.0, 1.0)
