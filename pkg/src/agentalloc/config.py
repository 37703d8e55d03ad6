"""Workflow definition files (YAML).

Top-level keys: ``agents``, ``workflow``, ``pricing``, ``budgets`` and the
optional ``defaults`` (shared ``rate_think`` / ``rate_gen``) and
``allocation`` (output tokens per LLM agent id). Unknown keys are rejected.
Every problem found is reported with its line number; loading does not stop
at the first one.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .allocation import BudgetSpec
from .errors import AgentAllocError, ValidationError
from .model import (Feedback, InfraDelay, Leaf, LlmAgentSpec, NonLlmAgentSpec,
                    Parallel, PricingModel, Sequential, derive_c_comp)

TOP_KEYS = {"agents", "workflow", "pricing", "budgets", "defaults", "allocation"}
LLM_KEYS = {"kind", "id", "alpha", "beta", "reasoning_tokens", "mean_infra_delay",
            "infra_delay_dist", "rate_think", "rate_gen"}
NON_LLM_KEYS = {"kind", "id", "reliability", "mean_latency", "service_rate"}
DELAY_KEYS = {"family", "mean", "sigma"}
FLOPS_KEYS = {"c_e", "n_params", "n_layer", "n_ctx", "n_attn"}

POSITIVE = "> 0"
NONNEG = ">= 0"


@dataclass(frozen=True)
class Diagnostic:
    line: int | None
    message: str

    def format(self, source: str = "<config>") -> str:
        where = f"{source}:{self.line}" if self.line else source
        return f"{where}: {self.message}"


@dataclass
class WorkflowConfig:
    agents: dict
    workflow: object
    pricing: PricingModel | None
    budgets: BudgetSpec | None = None
    allocation: dict | None = None
    digest: str = ""
    source: str = "<config>"


@dataclass
class _Doc:
    """Plain Python values plus the line of every value, keyed by path."""

    data: object
    lines: dict = field(default_factory=dict)

    def line(self, path) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get(())


def _compose(text: str, diags: list) -> _Doc | None:
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        diags.append(Diagnostic(mark.line + 1 if mark else None, f"YAML parse error: {exc}"))
        return None
    finally:
        loader.dispose()
    if root is None:
        diags.append(Diagnostic(1, "empty document"))
        return None
    doc = _Doc(None)
    cons = yaml.SafeLoader("")

    def walk(node, path):
        doc.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            out = {}
            for k, v in node.value:
                key = cons.construct_object(k)
                if key in out:
                    diags.append(Diagnostic(k.start_mark.line + 1, f"duplicate key {key!r}"))
                out[key] = walk(v, path + (key,))
            return out
        if isinstance(node, yaml.SequenceNode):
            return [walk(v, path + (i,)) for i, v in enumerate(node.value)]
        return cons.construct_object(node)

    doc.data = walk(root, ())
    return doc


class _Checker:
    def __init__(self, doc: _Doc):
        self.doc = doc
        self.diags: list[Diagnostic] = []
        self.declared: set = set()

    def err(self, path, msg):
        self.diags.append(Diagnostic(self.doc.line(path), msg))

    def mapping(self, value, path, what) -> dict | None:
        if not isinstance(value, dict):
            self.err(path, f"{what} must be a mapping")
            return None
        return value

    def unknown(self, m, allowed, path, what):
        for k in m:
            if k not in allowed:
                self.err(path + (k,), f"unknown field {k!r} in {what}")

    def number(self, m, key, path, what, rule=None, required=True, integer=False):
        if key not in m:
            if required:
                self.err(path, f"{what}: missing required field {key!r}")
            return None
        v = m[key]
        p = path + (key,)
        if isinstance(v, str):
            try:
                v = float(v)
            except ValueError:
                pass
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.err(p, f"{what}: {key} must be a finite number, got {m[key]!r}")
            return None
        if integer and v != int(v):
            self.err(p, f"{what}: {key} must be an integer, got {v!r}")
            return None
        if rule == POSITIVE and not v > 0:
            self.err(p, f"{what}: {key} must be > 0, got {v!r}")
            return None
        if rule == NONNEG and not v >= 0:
            self.err(p, f"{what}: {key} must be >= 0, got {v!r}")
            return None
        return int(v) if integer else v


def _build_delay(ck, raw, path, what, mean_default):
    m = ck.mapping(raw, path, f"{what} infra_delay_dist")
    if m is None:
        return None
    ck.unknown(m, DELAY_KEYS, path, f"{what} infra_delay_dist")
    fam = m.get("family")
    if fam not in InfraDelay.FAMILIES:
        ck.err(path + ("family",), f"{what}: infra_delay_dist family must be one of "
                                   f"{', '.join(InfraDelay.FAMILIES)}, got {fam!r}")
        return None
    mean = ck.number(m, "mean", path, what, NONNEG, required=False)
    sigma = ck.number(m, "sigma", path, what, POSITIVE, required=fam == "lognormal")
    if mean is None:
        mean = mean_default
    if mean is None:
        return None
    try:
        return InfraDelay(fam, mean, sigma if fam == "lognormal" else None)
    except AgentAllocError as exc:
        ck.err(path, f"{what}: {exc}")
        return None


def _build_agent(ck, raw, path, defaults):
    m = ck.mapping(raw, path, "agent entry")
    if m is None:
        return None
    aid = m.get("id")
    if not isinstance(aid, str) or not aid:
        ck.err(path, "agent entry needs a nonempty string id")
        aid = None
    what = f"agent {aid!r}" if aid else f"agent #{path[-1]}"
    kind = m.get("kind")
    if kind == "llm":
        ck.unknown(m, LLM_KEYS, path, what)
        vals = {
            "alpha": ck.number(m, "alpha", path, what, POSITIVE),
            "beta": ck.number(m, "beta", path, what, POSITIVE),
            "reasoning_tokens": ck.number(m, "reasoning_tokens", path, what, NONNEG),
            "mean_infra_delay": ck.number(m, "mean_infra_delay", path, what, NONNEG),
        }
        for rate in ("rate_think", "rate_gen"):
            if rate in m:
                vals[rate] = ck.number(m, rate, path, what, POSITIVE)
            elif rate in defaults:
                vals[rate] = defaults[rate]
            else:
                ck.err(path, f"{what}: missing {rate!r} and no value under defaults")
                vals[rate] = None
        dist = None
        if "infra_delay_dist" in m:
            dist = _build_delay(ck, m["infra_delay_dist"], path + ("infra_delay_dist",), what,
                                vals["mean_infra_delay"])
            if dist is None:
                return None
        if aid is None or any(v is None for v in vals.values()):
            return None
        try:
            return LlmAgentSpec(aid, infra_delay_dist=dist, **vals)
        except AgentAllocError as exc:
            ck.err(path, str(exc))
            return None
    if kind == "non_llm":
        ck.unknown(m, NON_LLM_KEYS, path, what)
        rel = ck.number(m, "reliability", path, what, NONNEG)
        if rel is not None and rel > 1:
            ck.err(path + ("reliability",), f"{what}: reliability must be in [0, 1], got {rel!r}")
            rel = None
        has_mean, has_rate = "mean_latency" in m, "service_rate" in m
        if has_mean == has_rate:
            ck.err(path, f"{what}: give exactly one of mean_latency or service_rate")
            return None
        mean = ck.number(m, "mean_latency", path, what, NONNEG, required=False)
        rate = ck.number(m, "service_rate", path, what, POSITIVE, required=False)
        if aid is None or rel is None or (mean is None and rate is None):
            return None
        return NonLlmAgentSpec(aid, rel, mean_latency=mean, service_rate=rate)
    ck.err(path + ("kind",), f"{what}: kind must be 'llm' or 'non_llm', got {kind!r}")
    return None


def _build_node(ck, raw, path, agents, used):
    m = ck.mapping(raw, path, "workflow node")
    if m is None:
        return None
    if len(m) != 1:
        ck.err(path, "workflow node needs exactly one of: agent, sequential, parallel, feedback")
        return None
    (kind, body), = m.items()
    p = path + (kind,)
    if kind == "agent":
        if body not in agents:
            # ids that were declared but failed validation are already reported
            if body not in ck.declared:
                ck.err(p, f"workflow references unknown agent id {body!r}")
            return None
        if body in used:
            ck.err(p, f"agent {body!r} appears more than once in the workflow "
                      f"(first at line {used[body]})")
            return None
        used[body] = ck.doc.line(p)
        return Leaf(agents[body])
    if kind == "sequential":
        if not isinstance(body, list) or not body:
            ck.err(p, "sequential needs a nonempty list of nodes")
            return None
        kids = [_build_node(ck, c, p + (i,), agents, used) for i, c in enumerate(body)]
        return None if any(k is None for k in kids) else Sequential(tuple(kids))
    if kind == "parallel":
        pm = ck.mapping(body, p, "parallel")
        if pm is None:
            return None
        ck.unknown(pm, {"mode", "children"}, p, "parallel")
        mode = pm.get("mode", "conjunctive")
        if mode not in ("conjunctive", "redundant"):
            ck.err(p + ("mode",), f"parallel mode must be 'conjunctive' or 'redundant', got {mode!r}")
            return None
        ch = pm.get("children")
        if not isinstance(ch, list) or not ch:
            ck.err(p, "parallel needs a nonempty children list")
            return None
        kids = [_build_node(ck, c, p + ("children", i), agents, used) for i, c in enumerate(ch)]
        return None if any(k is None for k in kids) else Parallel(tuple(kids), mode)
    if kind == "feedback":
        fm = ck.mapping(body, p, "feedback")
        if fm is None:
            return None
        ck.unknown(fm, {"iterations", "body"}, p, "feedback")
        k = ck.number(fm, "iterations", p, "feedback", POSITIVE, integer=True)
        if "body" not in fm:
            ck.err(p, "feedback needs a body")
            return None
        inner = _build_node(ck, fm["body"], p + ("body",), agents, used)
        if k is None or inner is None:
            return None
        return Feedback(inner, k)
    ck.err(path, f"unknown workflow node type {kind!r}")
    return None


def _build_pricing(ck, raw, path):
    m = ck.mapping(raw, path, "pricing")
    if m is None:
        return None
    ck.unknown(m, {"c_tok", "c_comp", "flops"}, path, "pricing")
    c_tok = ck.number(m, "c_tok", path, "pricing", POSITIVE)
    if ("c_comp" in m) == ("flops" in m):
        ck.err(path, "pricing: give exactly one of c_comp or flops")
        return None
    if "c_comp" in m:
        c_comp = ck.number(m, "c_comp", path, "pricing", POSITIVE)
    else:
        fp = path + ("flops",)
        f = ck.mapping(m["flops"], fp, "pricing flops")
        if f is None:
            return None
        ck.unknown(f, FLOPS_KEYS, fp, "pricing flops")
        vals = {"c_e": ck.number(f, "c_e", fp, "pricing flops", POSITIVE)}
        for k in ("n_params", "n_layer", "n_ctx", "n_attn"):
            vals[k] = ck.number(f, k, fp, "pricing flops", POSITIVE, integer=True)
        if any(v is None for v in vals.values()):
            return None
        c_comp = derive_c_comp(**vals)
    if c_tok is None or c_comp is None:
        return None
    return PricingModel(c_tok, c_comp)


def parse_config(text: str, source: str = "<config>") -> tuple[WorkflowConfig | None, list[Diagnostic]]:
    """Parse and validate a config document; returns ``(config, diagnostics)``
    with ``config`` None whenever any diagnostic was raised."""
    diags: list[Diagnostic] = []
    doc = _compose(text, diags)
    if doc is None:
        return None, diags
    ck = _Checker(doc)
    ck.diags = diags
    top = ck.mapping(doc.data, (), "config")
    if top is None:
        return None, ck.diags
    ck.unknown(top, TOP_KEYS, (), "config")

    defaults = {}
    if "defaults" in top:
        dm = ck.mapping(top["defaults"], ("defaults",), "defaults")
        if dm is not None:
            ck.unknown(dm, {"rate_think", "rate_gen"}, ("defaults",), "defaults")
            for k in ("rate_think", "rate_gen"):
                v = ck.number(dm, k, ("defaults",), "defaults", POSITIVE, required=False)
                if v is not None:
                    defaults[k] = v

    agents: dict = {}
    raw_agents = top.get("agents")
    if not isinstance(raw_agents, list) or not raw_agents:
        ck.err(("agents",), "agents must be a nonempty list")
        raw_agents = []
    first_seen: dict = {}
    for i, raw in enumerate(raw_agents):
        path = ("agents", i)
        aid = raw.get("id") if isinstance(raw, dict) else None
        if isinstance(aid, str) and aid in first_seen:
            ck.err(path + ("id",), f"duplicate agent id {aid!r} (lines {first_seen[aid]} "
                                   f"and {doc.line(path + ('id',))})")
            continue
        if isinstance(aid, str):
            first_seen[aid] = doc.line(path + ("id",))
        agent = _build_agent(ck, raw, path, defaults)
        if agent is not None:
            agents[agent.id] = agent

    workflow = None
    if "workflow" not in top:
        ck.err((), "missing required key 'workflow'")
    else:
        ck.declared = set(first_seen)
        workflow = _build_node(ck, top["workflow"], ("workflow",), agents, {})

    pricing = None
    if "pricing" not in top:
        ck.err((), "missing required key 'pricing'")
    else:
        pricing = _build_pricing(ck, top["pricing"], ("pricing",))

    budgets = None
    if "budgets" in top:
        bm = ck.mapping(top["budgets"], ("budgets",), "budgets")
        if bm is not None:
            ck.unknown(bm, {"latency_budget", "cost_budget"}, ("budgets",), "budgets")
            t = ck.number(bm, "latency_budget", ("budgets",), "budgets", POSITIVE)
            c = ck.number(bm, "cost_budget", ("budgets",), "budgets", POSITIVE)
            if t is not None and c is not None:
                budgets = BudgetSpec(t, c)

    allocation = None
    if "allocation" in top:
        am = ck.mapping(top["allocation"], ("allocation",), "allocation")
        if am is not None:
            allocation = {}
            for k in am:
                if k not in agents or not isinstance(agents[k], LlmAgentSpec):
                    ck.err(("allocation", k), f"allocation names unknown or non-LLM agent {k!r}")
                    continue
                v = ck.number(am, k, ("allocation",), "allocation", NONNEG)
                if v is not None:
                    allocation[k] = float(v)

    if ck.diags:
        return None, ck.diags
    digest = hashlib.sha256(text.encode()).hexdigest()
    return WorkflowConfig(agents, workflow, pricing, budgets, allocation, digest, source), []


def load_config(path) -> WorkflowConfig:
    """Read and validate a config file; raises ValidationError listing every problem."""
    p = Path(path)
    data = p.read_bytes()
    cfg, diags = parse_config(data.decode("utf-8"), str(p))
    if cfg is None:
        lines = "\n".join(d.format(str(p)) for d in diags)
        raise ValidationError(f"{len(diags)} problem(s) in {p}:\n{lines}", diags)
    cfg.digest = hashlib.sha256(data).hexdigest()
    return cfg
