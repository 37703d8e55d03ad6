"""Latency, reliability and cost models for LLM agent workflows, with
water-filling output-token allocation under latency and cost budgets."""

from .allocation import (AllocationResult, BudgetSpec, baseline_inverse_proportional,
                         baseline_proportional, baseline_uniform, effective_budget,
                         optimal_reliability_closed_form, optimize, solve_theta,
                         water_filling)
from .errors import (AgentAllocError, DomainError, HeterogeneousRates, InfeasibleLatency,
                     MissingAllocation, NoConvergence, NothingToOptimize, OracleTooLarge,
                     ValidationError)
from .model import (Feedback, InfraDelay, Leaf, LlmAgentSpec, NonLlmAgentSpec, Parallel,
                    ParallelMode, PricingModel, Sequential, WorkflowMetrics, agent_costs,
                    agent_mean_latency, agent_reliability, derive_c_comp, evaluate,
                    fixed_latency)

__version__ = "0.1.0"
