"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class AgentAllocError(Exception):
    exit_code = 1


class DomainError(AgentAllocError, ValueError):
    """An argument lies outside the domain of the operation."""

    exit_code = 3


class ValidationError(AgentAllocError, ValueError):
    """A workflow, allocation or config violates a structural invariant."""

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class InfeasibleLatency(AgentAllocError):
    exit_code = 4
    hint = "raise the latency budget or shrink fixed latency (reasoning tokens, infra delay, non-LLM agents)"


class HeterogeneousRates(AgentAllocError):
    exit_code = 5
    hint = "give every optimized LLM agent the same rate_gen (set it once under defaults)"


class NothingToOptimize(AgentAllocError):
    exit_code = 6
    hint = "the top-level sequential workflow must contain at least one LLM agent leaf"


class NoConvergence(AgentAllocError):
    exit_code = 7


class OracleTooLarge(AgentAllocError):
    exit_code = 8
    hint = "use a coarser --grid-step, fewer agents, or --max-agents to override"


class MissingAllocation(ValidationError):
    exit_code = 9
    hint = "add an `allocation` map to the config or pass --use-optimal"
