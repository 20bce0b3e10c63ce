"""Ground-truth and baseline solvers for desk-scale verification.

``enumerate_optimal`` prices every activation pattern with the convex
subproblem and returns the exact optimum, exploiting anti-monotonicity to
prune: switching BSs off never enlarges the feasible set, so any subset of
an infeasible pattern is infeasible and need not be solved.  At L <= 7 this
is a few hundred conic solves, which makes it the reference every other
method is tested against.

``rba_baseline`` activates a uniformly random subset (each BS on with
probability one half, resampled on infeasibility) and beamforms optimally
for it, mirroring the naive association strategy used for comparison.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .model import BeamformingSolution, NetworkInstance, activation_bits
from .conic import (
    ClarabelEngine,
    Status,
    sinr_dimension_infeasible,
    solve_subproblem,
    DEFAULT_TOL,
)

__all__ = [
    "EnumerationReport",
    "RbaResult",
    "enumerate_optimal",
    "rba_baseline",
    "report_csv",
]


@dataclass
class EnumerationReport:
    """Per-pattern results of the exhaustive scan.

    ``entries`` maps every pattern (bitstring, BS 0 leftmost) to a status in
    {optimal, infeasible, pruned, skipped} and, when solved to optimality,
    the full objective value + a'pi.  ``optimum``/``argmin`` describe the
    best pattern; ``total_solves`` counts conic-engine calls.
    """

    status: str                      # optimal | infeasible | iteration_limit
    entries: dict
    optimum: float | None
    argmin: np.ndarray | None
    solution: BeamformingSolution | None
    total_solves: int
    feasible_count: int


def report_csv(report: EnumerationReport) -> str:
    out = io.StringIO()
    out.write("activation,status,value\n")
    for bits in sorted(report.entries):
        status, value = report.entries[bits]
        out.write(f"{bits},{status},{'' if value is None else value}\n")
    return out.getvalue()


def _pattern_order(L: int):
    """Descending activation count, lexicographic within a count.

    Solving denser patterns first maximizes what an infeasible result can
    prune (all of its subsets).
    """
    keys = []
    for m in range(1 << L):
        bits = tuple((m >> (L - 1 - l)) & 1 for l in range(L))
        keys.append((-sum(bits), m, bits))
    keys.sort()
    return [(m, np.array(bits, dtype=np.int64)) for _, m, bits in keys]


def enumerate_optimal(inst: NetworkInstance, tol: float = DEFAULT_TOL,
                      engine: ClarabelEngine | None = None, mask=None,
                      solve_budget: int | None = None) -> EnumerationReport:
    """Exact optimum of the joint problem by scanning all 2^L patterns.

    Guarded to L <= 24.  Returns status "infeasible" when no pattern admits
    a feasible beamformer, and "iteration_limit" when a solve budget stops
    the scan early (the report then carries the best incumbent found).
    """
    if inst.L > 24:
        raise ValueError("exhaustive enumeration is limited to L <= 24")
    engine = engine or ClarabelEngine(tol)
    start_count = engine.solve_count
    entries = {}
    infeasible_masks: list[int] = []
    best = None          # (value, lexicographic int, pattern, solution)
    truncated = False

    for m, a in _pattern_order(inst.L):
        bits = activation_bits(a)
        if m == 0:
            # no active BS: zero received power cannot meet a positive target
            entries[bits] = ("infeasible", None)
            continue
        if any((m & bad) == m for bad in infeasible_masks) \
                or sinr_dimension_infeasible(inst, a, mask):
            entries[bits] = ("pruned", None)
            continue
        if solve_budget is not None and engine.solve_count - start_count >= solve_budget:
            entries[bits] = ("skipped", None)
            truncated = True
            continue
        outcome = solve_subproblem(inst, a, tol=tol, engine=engine, mask=mask,
                                   certify=False)
        if outcome.status is Status.OPTIMAL:
            full = float(outcome.value + a @ inst.pi)
            entries[bits] = ("optimal", full)
            if best is None or full < best[0] or (full == best[0] and m < best[1]):
                best = (full, m, a, outcome.solution)
        else:
            entries[bits] = ("infeasible", None)
            infeasible_masks.append(m)

    feasible_count = sum(1 for s, _ in entries.values() if s == "optimal")
    total = engine.solve_count - start_count
    if best is None:
        return EnumerationReport(
            status="iteration_limit" if truncated else "infeasible",
            entries=entries, optimum=None, argmin=None, solution=None,
            total_solves=total, feasible_count=0,
        )
    return EnumerationReport(
        status="iteration_limit" if truncated else "optimal",
        entries=entries, optimum=best[0], argmin=best[2], solution=best[3],
        total_solves=total, feasible_count=feasible_count,
    )


@dataclass
class RbaResult:
    status: str                      # feasible | infeasible
    solution: BeamformingSolution | None
    objective: float | None
    activation: np.ndarray | None
    attempts: int
    solve_count: int


def rba_baseline(inst: NetworkInstance, seed: int, tol: float = DEFAULT_TOL,
                 engine: ClarabelEngine | None = None, mask=None,
                 max_resamples: int = 50) -> RbaResult:
    """Random subset activation: Bernoulli(1/2) per BS, resample until feasible.

    Falls back to the all-active pattern after ``max_resamples`` draws;
    reports infeasible only if even that fails.  Deterministic per seed.
    """
    engine = engine or ClarabelEngine(tol)
    start_count = engine.solve_count
    rng = np.random.default_rng(seed)
    attempts = 0
    for _ in range(max_resamples):
        a = rng.integers(0, 2, size=inst.L)
        attempts += 1
        if not a.any():
            continue
        outcome = solve_subproblem(inst, a, tol=tol, engine=engine, mask=mask,
                                   certify=False)
        if outcome.status is Status.OPTIMAL:
            return RbaResult("feasible", outcome.solution,
                             float(outcome.value + a @ inst.pi), a, attempts,
                             engine.solve_count - start_count)
    a = np.ones(inst.L, dtype=np.int64)
    attempts += 1
    outcome = solve_subproblem(inst, a, tol=tol, engine=engine, mask=mask,
                               certify=False)
    if outcome.status is Status.OPTIMAL:
        return RbaResult("feasible", outcome.solution,
                         float(outcome.value + a @ inst.pi), a, attempts,
                         engine.solve_count - start_count)
    return RbaResult("infeasible", None, None, None, attempts,
                     engine.solve_count - start_count)
