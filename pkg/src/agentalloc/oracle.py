"""Brute-force reference for the token-allocation problem.

Enumerates every grid allocation with ``sum L_j = floor(B/step) * step`` and
keeps the one maximizing ``sum_j log(1 - exp(-beta_j L_j))``. Shares no code
with the analytic solver in :mod:`agentalloc.allocation`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, OracleTooLarge

MAX_POINTS = 10**8


@dataclass(frozen=True)
class OracleConfig:
    grid_step: float = 1.0
    max_agents: int = 3
    refinement_rounds: int = 0

    def __post_init__(self):
        if not (self.grid_step > 0 and math.isfinite(self.grid_step)):
            raise DomainError(f"grid_step must be > 0, got {self.grid_step!r}")
        if self.max_agents < 1:
            raise DomainError(f"max_agents must be >= 1, got {self.max_agents!r}")
        if self.refinement_rounds < 0:
            raise DomainError("refinement_rounds must be >= 0")


def _log1mexp(x: float) -> float:
    # log(1 - exp(-x)) accurate at both ends
    return math.log(-math.expm1(-x)) if x < math.log(2) else math.log1p(-math.exp(-x))


def oracle_objective(betas, allocation) -> float:
    """Sum of per-agent log reliabilities; ``-inf`` when any agent gets 0 tokens."""
    L = [float(x) for x in allocation]
    if len(L) != len(betas):
        raise DomainError("betas and allocation differ in length")
    if any(x < 0 for x in L):
        raise DomainError("allocations must be >= 0")
    if any(x == 0 for x in L):
        return -math.inf
    return math.fsum(_log1mexp(b * x) for b, x in zip(betas, L))


def _table(beta: float, m: int, step: float) -> np.ndarray:
    # per-agent objective at k grid units, k = 0..m
    x = beta * step * np.arange(m + 1)
    with np.errstate(divide="ignore"):
        return np.where(x < math.log(2), np.log(-np.expm1(-x)), np.log1p(-np.exp(-x)))


def num_grid_points(n: int, m: int) -> int:
    return math.comb(m + n - 1, n - 1)


def _exhaustive(tables: list[np.ndarray], m: int) -> tuple[tuple[int, ...], float]:
    n = len(tables)
    if n == 1:
        return (m,), float(tables[0][m])
    best_val, best = -math.inf, None
    t_a, t_b = tables[-2], tables[-1]
    # outer coordinates in lexicographic order; strict > keeps the smallest tie
    for prefix in _prefixes(n - 2, m):
        used = sum(prefix)
        r = m - used
        head = sum(float(tables[i][k]) for i, k in enumerate(prefix))
        vals = t_a[: r + 1] + t_b[r::-1]
        i = int(np.argmax(vals))
        v = head + float(vals[i])
        if v > best_val or best is None:
            best_val, best = v, prefix + (i, r - i)
    return best, best_val


def _prefixes(k: int, m: int):
    if k == 0:
        yield ()
        return
    for first in range(m + 1):
        for rest in _prefixes(k - 1, m - first):
            yield (first,) + rest


def _refine(tables: list[np.ndarray], m: int, rounds: int) -> tuple[int, ...]:
    # pairwise exchange: re-split each pair's combined units optimally
    n = len(tables)
    units = [m // n + (1 if i < m % n else 0) for i in range(n)]
    for _ in range(rounds):
        changed = False
        for i, j in itertools.combinations(range(n), 2):
            s = units[i] + units[j]
            vals = tables[i][: s + 1] + tables[j][s::-1]
            k = int(np.argmax(vals))
            if k != units[i] and vals[k] > vals[units[i]]:
                units[i], units[j] = k, s - k
                changed = True
        if not changed:
            break
    return tuple(units)


def oracle_allocate(betas, B: float, config: OracleConfig = OracleConfig()):
    """Best grid allocation and its objective.

    Exhaustive when ``len(betas) <= config.max_agents``; otherwise pairwise
    coordinate refinement if ``config.refinement_rounds > 0``, else
    :class:`OracleTooLarge`.
    """
    betas = [float(b) for b in betas]
    if not betas or any(not (b > 0) for b in betas):
        raise DomainError("need a nonempty list of positive betas")
    if not (B >= 0 and math.isfinite(B)):
        raise DomainError(f"budget must be finite and >= 0, got {B!r}")
    step = config.grid_step
    m = int(math.floor(B / step + 1e-9))
    n = len(betas)
    tables = [_table(b, m, step) for b in betas]
    if n > config.max_agents:
        if config.refinement_rounds > 0:
            units = _refine(tables, m, config.refinement_rounds)
        else:
            raise OracleTooLarge(f"{n} agents exceeds the exhaustive cap of {config.max_agents}")
    else:
        points = num_grid_points(n, m)
        if points > MAX_POINTS:
            raise OracleTooLarge(f"{points} grid points exceeds the cap of {MAX_POINTS}")
        units, _ = _exhaustive(tables, m)
    alloc = [k * step for k in units]
    return alloc, oracle_objective(betas, alloc)
