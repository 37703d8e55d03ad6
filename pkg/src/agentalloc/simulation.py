"""Monte Carlo estimates of workflow latency and end-to-end success.

Each sample draws infrastructure delays, non-LLM service times and one
Bernoulli success per agent execution, then aggregates them with the same
node semantics as :func:`agentalloc.model.evaluate`, except that parallel
latency is the sample-wise max rather than the max of means.

Random numbers come from Philox streams keyed by ``(seed, block, agent,
iteration path)``. Samples are processed in fixed-size blocks, so the worker
count never changes the stream a sample sees and reports are bit-identical
for a given seed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from . import model
from .errors import DomainError
from .model import (Feedback, Leaf, LlmAgentSpec, Parallel, ParallelMode,
                    Sequential, WorkflowNode)

BLOCK_SIZE = 8192


@dataclass(frozen=True)
class SimConfig:
    num_samples: int
    seed: int = 0
    confidence: float = 0.95
    workers: int = 1

    def __post_init__(self):
        if int(self.num_samples) < 1:
            raise DomainError("num_samples must be >= 1")
        if not (0 < self.confidence < 1):
            raise DomainError("confidence must be in (0, 1)")
        if not (0 <= int(self.seed) < 2**64):
            raise DomainError("seed must be an unsigned 64-bit integer")
        if int(self.workers) < 1:
            raise DomainError("workers must be >= 1")


@dataclass(frozen=True)
class SimReport:
    mean_latency: float
    latency_half_width: float
    success_rate: float
    success_half_width: float
    num_samples: int
    confidence: float
    # node path -> mean latency per sample, summed over all executions of the node
    node_latency: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "mean_latency": self.mean_latency,
            "latency_half_width": self.latency_half_width,
            "success_rate": self.success_rate,
            "success_half_width": self.success_half_width,
            "num_samples": self.num_samples,
            "confidence": self.confidence,
            "node_latency": dict(self.node_latency),
        }


def node_label(node: WorkflowNode) -> str:
    if isinstance(node, Leaf):
        return f"agent:{node.agent.id}"
    if isinstance(node, Parallel):
        return f"parallel({node.mode.value})"
    if isinstance(node, Feedback):
        return f"feedback(K={node.iterations})"
    return "sequential"


class _Block:
    """Draws and accumulators for one block of samples."""

    def __init__(self, seed, block, size, agent_index, alloc):
        self.seed = seed
        self.block = block
        self.size = size
        self.agent_index = agent_index
        self.alloc = alloc
        self.node_latency: dict[str, np.ndarray] = {}

    def rng(self, agent_id, iters):
        key = (self.block, self.agent_index[agent_id], len(iters), *iters)
        ss = np.random.SeedSequence(self.seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))

    def run(self, node, path, iters):
        lat, ok = self._run(node, path, iters)
        acc = self.node_latency.get(path)
        self.node_latency[path] = lat.copy() if acc is None else acc + lat
        return lat, ok

    def _run(self, node, path, iters):
        n = self.size
        if isinstance(node, Leaf):
            a = node.agent
            rng = self.rng(a.id, iters)
            if isinstance(a, LlmAgentSpec):
                dist = a.infra_delay_dist or model.InfraDelay("constant", a.mean_infra_delay)
                L = float(self.alloc[a.id])
                lat = dist.sample(rng, n) + a.reasoning_tokens / a.rate_think + L / a.rate_gen
                rel = model.agent_reliability(a, L)
            elif a.service_rate is not None:
                lat = rng.exponential(1.0 / a.service_rate, n)
                rel = a.reliability
            else:
                lat = np.full(n, float(a.mean_latency))
                rel = a.reliability
            return lat, rng.random(n) < rel

        if isinstance(node, Feedback):
            lat = np.zeros(n)
            ok = np.ones(n, dtype=bool)
            for k in range(node.iterations):
                lb, okb = self.run(node.body, f"{path}/0:{node_label(node.body)}", iters + (k,))
                lat = lat + lb
                ok &= okb
            return lat, ok

        results = [self.run(c, f"{path}/{i}:{node_label(c)}", iters)
                   for i, c in enumerate(node.children)]
        if isinstance(node, Sequential):
            lat = np.zeros(n)
            for lb, _ in results:
                lat = lat + lb
            ok = np.logical_and.reduce([o for _, o in results])
            return lat, ok
        lat = np.maximum.reduce([lb for lb, _ in results])
        if node.mode is ParallelMode.CONJUNCTIVE:
            ok = np.logical_and.reduce([o for _, o in results])
        else:
            ok = np.logical_or.reduce([o for _, o in results])
        return lat, ok


def _mean_and_sd(x: np.ndarray) -> tuple[float, float]:
    # shift by the first sample: exact for constant data, better conditioned otherwise
    shift = float(x[0])
    d = x - shift
    mean = shift + float(np.mean(d))
    sd = float(np.std(d, ddof=1)) if x.size > 1 else 0.0
    return mean, sd


def simulate(workflow: WorkflowNode, allocation, config: SimConfig) -> SimReport:
    """Estimate mean latency and success rate with normal-approximation
    confidence half-widths (unreliable below roughly 100 samples)."""
    model.validate_workflow(workflow)
    model.validate_allocation(workflow, allocation)
    agent_index = {a.id: i for i, a in enumerate(model.iter_agents(workflow))}
    n = int(config.num_samples)
    sizes = [min(BLOCK_SIZE, n - s) for s in range(0, n, BLOCK_SIZE)]
    root = node_label(workflow)

    def run_block(bi):
        blk = _Block(int(config.seed), bi, sizes[bi], agent_index, allocation)
        lat, ok = blk.run(workflow, root, ())
        return lat, ok, blk.node_latency

    workers = min(int(config.workers), len(sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run_block, range(len(sizes))))
    else:
        parts = [run_block(i) for i in range(len(sizes))]

    lat = np.concatenate([p[0] for p in parts])
    ok = np.concatenate([p[1] for p in parts]).astype(float)
    z = NormalDist().inv_cdf(0.5 + config.confidence / 2)
    mean_lat, sd_lat = _mean_and_sd(lat)
    p = float(np.mean(ok))
    se_p = math.sqrt(p * (1 - p) / n) if n > 1 else 0.0
    node_latency = {}
    for key in parts[0][2]:
        node_latency[key] = _mean_and_sd(np.concatenate([blk[2][key] for blk in parts]))[0]
    return SimReport(
        mean_latency=mean_lat,
        latency_half_width=z * sd_lat / math.sqrt(n),
        success_rate=p,
        success_half_width=z * se_p,
        num_samples=n,
        confidence=config.confidence,
        node_latency=node_latency,
    )


def standard_error(report: SimReport) -> tuple[float, float]:
    """Standard errors ``(latency, success)`` recovered from the half-widths."""
    z = NormalDist().inv_cdf(0.5 + report.confidence / 2)
    return report.latency_half_width / z, report.success_half_width / z
