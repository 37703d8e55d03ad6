from pathlib import Path

import pytest

from agentalloc import LlmAgentSpec, Leaf, NonLlmAgentSpec, PricingModel, Sequential

ROOT = Path(__file__).resolve().parents[1]
PAPER_BETAS = [0.001, 0.002, 0.0005, 0.003, 0.0015]
PAPER_BUDGET = 12000.0


def llm(id, beta=0.001, alpha=1.0, X=100.0, tau=0.0, rate_think=100.0, rate_gen=50.0, dist=None):
    return LlmAgentSpec(id, alpha, beta, X, tau, rate_think, rate_gen, dist)


def fixed(id, latency=1.0, rel=0.9):
    return NonLlmAgentSpec(id, rel, mean_latency=latency)


@pytest.fixture
def paper_agents():
    # reasoning factor 1 - exp(-100) == 1.0 in double precision
    return [llm(f"a{i}", b) for i, b in enumerate(PAPER_BETAS, 1)]


@pytest.fixture
def pricing():
    return PricingModel(c_tok=1e-4, c_comp=2e-6)


@pytest.fixture
def paper_config_path():
    return ROOT / "configs" / "paper_instance.yaml"


@pytest.fixture
def mixed_config_path():
    return ROOT / "configs" / "mixed_workflow.yaml"


def seq(*agents):
    return Sequential(tuple(Leaf(a) for a in agents))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, text in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {text}")
