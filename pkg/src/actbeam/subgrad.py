"""Near-optimal activation/beamforming by Lagrangian dual subgradient ascent.

Dualizing the per-BS power caps splits the problem: for multipliers
lam >= 0 the beamformers solve one weighted-power SOCP over the SINR set
(weights 1 + lam), while the binary activations separate per BS with the
closed-form rule  a_l = 1  iff  pi_l <= lam_l * P_l.  Projected subgradient
ascent on lam with a diminishing stepsize converges to the dual optimum;
the final activation is then fixed and one more subproblem solve restores a
primal-feasible beamformer.  Each iteration costs a single conic solve, so
the method runs in polynomial time, unlike the exact decomposition.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from .model import (
    BeamformingSolution,
    NetworkInstance,
    activation_bits,
    eval_sinr,
)
from .conic import (
    ClarabelEngine,
    SinrInfeasibleError,
    Status,
    sinr_dimension_infeasible,
    solve_subproblem,
    weighted_power_min,
    DEFAULT_TOL,
)

__all__ = [
    "Constant",
    "Diminishing",
    "DualState",
    "SubgradResult",
    "activation_from_duals",
    "subgradient_step",
    "run_subgradient",
    "trace_csv",
    "TRACE_COLUMNS",
]

SINR_SLACK = 1e-6       # relative slack accepted on SINR targets
_NORM_GUARD = 1e-12     # guards the relative-change test when ||lam|| = 0


@dataclass(frozen=True)
class Constant:
    """Fixed stepsize s(j) = s."""

    s: float

    def at(self, j: int) -> float:
        return self.s


@dataclass(frozen=True)
class Diminishing:
    """Non-summable diminishing stepsizes s(j) = s0 / sqrt(j + 1)."""

    s0: float

    def at(self, j: int) -> float:
        return self.s0 / np.sqrt(j + 1.0)


@dataclass
class DualState:
    """Multipliers and bookkeeping of the ascent."""

    lam: np.ndarray
    iteration: int = 0
    rule: object = field(default_factory=lambda: Diminishing(1.0))
    dual_values: list = field(default_factory=list)

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if (self.lam < 0).any():
            raise ValueError("multipliers must be nonnegative")


def activation_from_duals(inst: NetworkInstance, lam) -> np.ndarray:
    """Closed-form activation minimizing sum_l (pi_l - lam_l P_l) a_l.

    BS l switches on exactly when pi_l <= lam_l * P_l; the tie keeps it on.
    """
    lam = np.asarray(lam, dtype=np.float64)
    return (inst.pi <= lam * inst.P).astype(np.int64)


def subgradient_step(inst: NetworkInstance, state: DualState, W, a) -> DualState:
    """Projected ascent step from the current primal pair (W, a).

    The subgradient is g_l = (BS l transmit power of W) - a_l P_l and the
    update lam <- max(0, lam + s(j) g).
    """
    W = np.asarray(W)
    a = np.asarray(a)
    g = np.array([
        float(np.sum(np.abs(W[:, inst.block(l)]) ** 2)) - a[l] * inst.P[l]
        for l in range(inst.L)
    ])
    s = state.rule.at(state.iteration)
    lam_next = np.maximum(0.0, state.lam + s * g)
    return DualState(lam=lam_next, iteration=state.iteration + 1,
                     rule=state.rule, dual_values=state.dual_values)


TRACE_COLUMNS = ("j", "dual_value", "g_norm", "lambda_norm", "a", "stepsize")


@dataclass
class SubgradResult:
    status: str                          # feasible | infeasible | iteration_limit
    solution: BeamformingSolution | None
    objective: float | None
    converged: bool
    iterations: int
    lam: np.ndarray
    dual_value: float | None
    trace: list
    solve_count: int
    restored: bool = False


def trace_csv(result: SubgradResult) -> str:
    out = io.StringIO()
    out.write(",".join(TRACE_COLUMNS) + "\n")
    for row in result.trace:
        out.write(",".join(str(v) for v in row) + "\n")
    return out.getvalue()


def _primal_feasible(inst, sol: BeamformingSolution) -> bool:
    cap_slack = 1e-9 * (1.0 + float(inst.P.max()))
    if (sol.tx_power > sol.activation * inst.P + cap_slack).any():
        return False
    return all(
        eval_sinr(inst, sol, k) >= inst.gamma[k] * (1.0 - SINR_SLACK)
        for k in range(inst.K)
    )


def run_subgradient(inst: NetworkInstance, lambda0=None, rule=None,
                    epsilon: float = 1e-4, max_iters: int = 500,
                    tol: float = DEFAULT_TOL,
                    engine: ClarabelEngine | None = None, mask=None,
                    solve_budget: int | None = None) -> SubgradResult:
    """Dual ascent, then feasibility restoration.

    Starts at lam_l = pi_l / P_l (the activation-rule tie point) with the
    diminishing rule s0 = 1 / max_l P_l unless told otherwise.  Stops when
    the relative multiplier change drops below epsilon or at max_iters.  If
    the final (W, a) pair is not primal feasible, the activation is fixed
    and the subproblem re-solved; if that activation admits no feasible
    beamformer, BSs are added greedily in decreasing lam_l P_l - pi_l order.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    engine = engine or ClarabelEngine(tol)
    start_count = engine.solve_count
    lam0 = np.asarray(lambda0, dtype=np.float64) if lambda0 is not None \
        else inst.pi / inst.P
    state = DualState(lam=lam0, rule=rule or Diminishing(1.0 / float(inst.P.max())))
    trace = []
    W = a = None
    converged = False

    def used():
        return engine.solve_count - start_count

    while state.iteration < max_iters:
        if solve_budget is not None and used() >= solve_budget:
            break
        j = state.iteration
        try:
            c1, W = weighted_power_min(inst, 1.0 + state.lam, tol=tol,
                                       engine=engine, mask=mask, return_beams=True)
        except SinrInfeasibleError:
            return SubgradResult(
                status="infeasible", solution=None, objective=None,
                converged=False, iterations=j, lam=state.lam, dual_value=None,
                trace=trace, solve_count=used(),
            )
        a = activation_from_duals(inst, state.lam)
        dual_value = c1 + float(np.minimum(0.0, inst.pi - state.lam * inst.P).sum())
        state.dual_values.append(dual_value)
        nxt = subgradient_step(inst, state, W, a)
        trace.append((j, dual_value,
                      float(np.linalg.norm(_subgradient(inst, W, a))),
                      float(np.linalg.norm(state.lam)),
                      activation_bits(a), state.rule.at(j)))
        rel_change = float(np.linalg.norm(nxt.lam - state.lam)) / max(
            float(np.linalg.norm(state.lam)), _NORM_GUARD)
        state = nxt
        if rel_change <= epsilon:
            converged = True
            break

    if W is None:
        return SubgradResult(status="iteration_limit", solution=None,
                             objective=None, converged=False, iterations=0,
                             lam=state.lam, dual_value=None, trace=trace,
                             solve_count=used())

    # Step 3: accept the dual pair if already feasible, otherwise restore.
    sol = BeamformingSolution.from_beams(inst, a, W)
    restored = False
    if not _primal_feasible(inst, sol):
        restored = True
        sol = _restore(inst, a, state.lam, tol, engine, mask)
        if sol is None:
            return SubgradResult(
                status="infeasible", solution=None, objective=None,
                converged=converged, iterations=state.iteration, lam=state.lam,
                dual_value=state.dual_values[-1] if state.dual_values else None,
                trace=trace, solve_count=used(),
            )
    return SubgradResult(
        status="feasible", solution=sol, objective=sol.objective,
        converged=converged, iterations=state.iteration, lam=state.lam,
        dual_value=state.dual_values[-1] if state.dual_values else None,
        trace=trace, solve_count=used(), restored=restored,
    )


def _subgradient(inst, W, a):
    return np.array([
        float(np.sum(np.abs(np.asarray(W)[:, inst.block(l)]) ** 2)) - a[l] * inst.P[l]
        for l in range(inst.L)
    ])


def _try_solve(inst, a, tol, engine, mask):
    if not a.any() or sinr_dimension_infeasible(inst, a, mask):
        return None
    outcome = solve_subproblem(inst, a, tol=tol, engine=engine, mask=mask,
                               certify=False)
    return outcome.solution if outcome.status is Status.OPTIMAL else None


def _restore(inst, a, lam, tol, engine, mask):
    """Optimal beams for the dual's activation, greedily repaired if needed.

    BSs are added in decreasing lam_l P_l - pi_l order (the dual's
    activation prices) until the subproblem is feasible, then further while
    each addition strictly lowers the objective.  A final pass tries
    dropping each active BS in increasing price order, keeping strict
    improvements.  The dual's final activation is snapshot noise around the
    activation-rule tie, so the candidate with the least total power over
    this deterministic chain is returned; at most 2L + 1 extra solves.
    """
    a = np.array(a, dtype=np.int64, copy=True)
    best = _try_solve(inst, a, tol, engine, mask)
    order = sorted((l for l in range(inst.L) if a[l] == 0),
                   key=lambda l: (-(lam[l] * inst.P[l] - inst.pi[l]), l))
    for l in order:
        a[l] = 1
        sol = _try_solve(inst, a, tol, engine, mask)
        if sol is not None:
            if best is None or sol.objective < best.objective:
                best = sol
            elif best is not None:
                break
    if best is None:
        return None
    a = np.array(best.activation, dtype=np.int64, copy=True)
    for l in sorted((l for l in range(inst.L) if a[l] == 1),
                    key=lambda l: (lam[l] * inst.P[l] - inst.pi[l], l)):
        a[l] = 0
        sol = _try_solve(inst, a, tol, engine, mask)
        if sol is not None and sol.objective < best.objective:
            best = sol
        else:
            a[l] = 1
    return best
