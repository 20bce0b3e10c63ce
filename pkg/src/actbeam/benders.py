"""Exact joint activation/beamforming by generalized Benders decomposition.

The master problem searches binary activation patterns against an
accumulating set of affine cuts; each candidate pattern is priced by the
convex beamforming subproblem, whose dual multipliers generate the next cut:

* optimality cut (feasible subproblem, cap multipliers mu):
      a0 >= a' (pi - mu*P) + C1,   tight at the generating pattern, where
  a0 tracks the full objective v(a) + a'pi and C1 is recovered from the
  subproblem value by strong duality, no extra solve;
* feasibility cut (infeasible subproblem, simplex certificate lam):
      a' (lam*P) >= C2(lam),       which the generating pattern violates.

Inactive BSs are eliminated from the subproblem, so their cap multipliers
are not produced by the solve.  Their cut coefficients are padded with the
full Lagrangian constant (pi_l - C1): switching any new BS on can save at
most C1, so the padded cut stays a global under-estimator while remaining
tight at the generating pattern.  Coefficients pi_l - mu_l P_l < 0 are
legitimate (activating BS l lowers the bound) and are never clamped.

The relaxed master min a0 s.t. all cuts is solved exactly: for fixed a the
optimal a0 is the pointwise max of the optimality cuts, so enumerating the
(at most 2^L, L <= 24) patterns that satisfy the feasibility cuts and
taking the min-max is equivalent to the bisection/binary-feasibility
scheme.  Ties break to the lexicographically smallest pattern.
"""

from __future__ import annotations

import enum
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .model import BeamformingSolution, NetworkInstance, activation_bits, as_activation
from .conic import (
    ClarabelEngine,
    ConicOutcome,
    NumericalFailureError,
    Status,
    infeasibility_probe,
    sinr_dimension_infeasible,
    solve_subproblem,
    weighted_power_min,
    DEFAULT_TOL,
)

__all__ = [
    "Cut",
    "CutKind",
    "MasterInfeasible",
    "BendersResult",
    "NominalSubproblem",
    "make_optimality_cut",
    "make_feasibility_cut",
    "monotonicity_cut",
    "solve_master",
    "run_benders",
    "a0_box",
    "trace_csv",
    "TRACE_COLUMNS",
]


class CutKind(enum.Enum):
    OPTIMALITY = "optimality"
    FEASIBILITY = "feasibility"


class MasterInfeasible(Exception):
    """The feasibility cuts exclude every binary pattern."""


@dataclass(frozen=True)
class Cut:
    """Affine cut in the activation variables.

    Optimality: a0 >= a'coeff + constant.  Feasibility: a'coeff >= constant.
    """

    kind: CutKind
    coeff: np.ndarray
    constant: float
    source_iteration: int = 0

    def value(self, a) -> float:
        """Optimality-cut lower bound on the full objective at pattern a."""
        return float(np.asarray(a) @ self.coeff + self.constant)

    def admits(self, a) -> bool:
        """Feasibility-cut test: does pattern a satisfy the cut?"""
        return float(np.asarray(a) @ self.coeff) >= self.constant


class NominalSubproblem:
    """Adapter bundling the conic calls for one instance (and serving mask).

    The decomposition loop only touches this surface, so variants with the
    same dual structure (e.g. the worst-case-SINR semidefinite subproblem)
    plug in by providing the same three methods.
    """

    def __init__(self, inst: NetworkInstance, tol: float = DEFAULT_TOL,
                 engine: ClarabelEngine | None = None, mask=None):
        self.inst = inst
        self.tol = tol
        self.engine = engine or ClarabelEngine(tol)
        self.mask = mask

    def solve(self, a) -> ConicOutcome:
        return solve_subproblem(self.inst, a, tol=self.tol, engine=self.engine,
                                mask=self.mask)

    def probe(self, a):
        return infeasibility_probe(self.inst, a, tol=self.tol, engine=self.engine,
                                   mask=self.mask)

    def weighted_min(self, weights) -> float:
        return weighted_power_min(self.inst, weights, tol=self.tol,
                                  engine=self.engine, mask=self.mask)


def make_optimality_cut(inst: NetworkInstance, a_hat, outcome: ConicOutcome,
                        source_iteration: int = 0) -> Cut:
    """Cut from an optimal subproblem at a_hat: a0 >= a'(pi - mu*P) + C1.

    C1 = v(a_hat) + a_hat'(mu*P) by strong duality of the subproblem, so no
    extra solve is needed; the cut equals v(a_hat) + a_hat'pi at a_hat.
    Eliminated (inactive) BSs carry the padded coefficient pi_l - C1, which
    over-accounts the saving any newly activated BS could bring (at most C1,
    since weighted powers are nonnegative), preserving global validity.
    """
    if outcome.status is not Status.OPTIMAL:
        raise ValueError(f"optimality cut needs an optimal outcome, got {outcome.status}")
    a = as_activation(a_hat, inst.L)
    mu = np.asarray(outcome.mu, dtype=np.float64)
    c1 = float(outcome.value + a @ (mu * inst.P))
    coeff = inst.pi - mu * inst.P
    coeff = np.where(a == 1, coeff, inst.pi - c1)
    return Cut(CutKind.OPTIMALITY, coeff, c1, source_iteration)


def make_feasibility_cut(inst: NetworkInstance, a_hat, lambda_hat,
                         tol: float = DEFAULT_TOL,
                         engine: ClarabelEngine | None = None, mask=None,
                         weighted_min=None, constant: float | None = None,
                         source_iteration: int = 0) -> Cut:
    """Cut from an infeasibility certificate lam: a'(lam*P) >= C2(lam).

    C2(lam) is the lam-weighted minimum power over the SINR set, evaluated
    by one weighted solve -- or passed in directly via ``constant`` when the
    caller already knows it (the cap-relaxation probe yields it for free:
    C2 = t_star + a_hat'(lam*P) by strong duality).  Any feasible pattern
    satisfies the cut; the generating pattern violates it strictly.
    """
    lam = np.asarray(lambda_hat, dtype=np.float64)
    if lam.shape != (inst.L,) or (lam < -1e-12).any():
        raise ValueError("lambda_hat must be a nonnegative vector over the BSs")
    lam = np.maximum(lam, 0.0)
    if constant is not None:
        c2 = constant
    elif weighted_min is None:
        c2 = weighted_power_min(inst, lam, tol=tol, engine=engine, mask=mask)
    else:
        c2 = weighted_min(lam)
    return Cut(CutKind.FEASIBILITY, lam * inst.P, float(c2), source_iteration)


def monotonicity_cut(a_hat, source_iteration: int = 0) -> Cut:
    """Every feasible pattern activates some BS outside an infeasible one.

    The subproblem's feasible set only grows with the activation, so an
    infeasible a_hat makes every subset infeasible: feasible patterns must
    satisfy sum_{l: a_hat_l = 0} a_l >= 1.  One such cut excludes the whole
    subset lattice below a_hat at once.
    """
    a = np.asarray(a_hat, dtype=np.float64)
    return Cut(CutKind.FEASIBILITY, 1.0 - a, 1.0, source_iteration)


def _exclusion_cut(a_hat, source_iteration: int = 0) -> Cut:
    """Exact single-point exclusion of one certified-infeasible pattern.

    sum_{l off} a_l + sum_{l on} (1 - a_l) >= 1 holds for every binary
    pattern except a_hat.  Used as a guard when a dual certificate is too
    weak numerically to exclude its own generating pattern in the master.
    """
    a = np.asarray(a_hat, dtype=np.float64)
    return Cut(CutKind.FEASIBILITY, 1.0 - 2.0 * a, 1.0 - float(a.sum()),
               source_iteration)


def a0_box(inst: NetworkInstance, slack_factor: float = 4.0) -> tuple[float, float]:
    """Bounds [0, sum(pi + slack_factor*P)] that always contain the optimum.

    Any feasible solution's objective is at most sum(pi) + sum(P); the
    default slack factor 4 (one over the 25% amplifier efficiency) keeps a
    comfortable margin.
    """
    return 0.0, float(np.sum(inst.pi + slack_factor * inst.P))


_MASTER_CHUNK = 1 << 16


def _patterns(L: int, start: int, stop: int) -> np.ndarray:
    """Rows start..stop of the lexicographic {0,1}^L enumeration (a[0] leftmost)."""
    m = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(L - 1, -1, -1, dtype=np.int64)
    return ((m[:, None] >> shifts[None, :]) & 1).astype(np.float64)


def solve_master(cuts, inst: NetworkInstance, a0_bounds=None):
    """Exact relaxed master: min over patterns of max over optimality cuts.

    Enumerates {0,1}^L (guarded to L <= 24) in lexicographic order; the
    first minimizer wins, which is the lexicographically smallest.  Raises
    MasterInfeasible when the feasibility cuts exclude every pattern.
    """
    L = inst.L
    if L > 24:
        raise ValueError("master enumeration is limited to L <= 24")
    lo, hi = a0_bounds if a0_bounds is not None else a0_box(inst)
    opt = [c for c in cuts if c.kind is CutKind.OPTIMALITY]
    fea = [c for c in cuts if c.kind is CutKind.FEASIBILITY]
    best_val = np.inf
    best_pat = None
    for start in range(0, 1 << L, _MASTER_CHUNK):
        stop = min(start + _MASTER_CHUNK, 1 << L)
        pats = _patterns(L, start, stop)
        feasible = np.ones(len(pats), dtype=bool)
        for c in fea:
            feasible &= pats @ c.coeff >= c.constant
        if not feasible.any():
            continue
        if opt:
            vals = np.full(len(pats), lo)
            for c in opt:
                np.maximum(vals, pats @ c.coeff + c.constant, out=vals)
        else:
            vals = np.full(len(pats), lo)
        vals = np.where(feasible, vals, np.inf)
        idx = int(np.argmin(vals))
        if vals[idx] < best_val:
            best_val = float(vals[idx])
            best_pat = pats[idx].astype(np.int64)
    if best_pat is None:
        raise MasterInfeasible("feasibility cuts exclude every activation pattern")
    return best_pat, min(best_val, hi)


TRACE_COLUMNS = ("iteration", "LB", "UB", "kind", "a", "subproblem_value",
                 "cumulative_socp_solves", "millis")


@dataclass
class BendersResult:
    status: str                          # optimal | infeasible | iteration_limit
    solution: BeamformingSolution | None
    objective: float | None
    lower_bound: float
    upper_bound: float
    iterations: int
    cuts: list
    trace: list                          # rows matching TRACE_COLUMNS
    solve_count: int
    infeasible_witness: str | None = None


def trace_csv(result: BendersResult) -> str:
    """Render the iteration trace in CSV form (wall millis in the last column)."""
    out = io.StringIO()
    out.write(",".join(TRACE_COLUMNS) + "\n")
    for row in result.trace:
        out.write(",".join(str(v) for v in row) + "\n")
    return out.getvalue()


def run_benders(inst: NetworkInstance, epsilon: float = 1e-4,
                max_iters: int = 200, tol: float = DEFAULT_TOL,
                engine: ClarabelEngine | None = None, mask=None,
                solve_budget: int | None = None,
                subproblem=None) -> BendersResult:
    """Decomposition loop: subproblem pricing, cut, exact master, bounds.

    Starts from the all-ones pattern (most likely feasible, so an optimality
    cut arrives immediately).  Terminates when the subproblem value meets
    the lower bound within epsilon, when the master bound meets the
    incumbent within epsilon, when a priced pattern reappears (which implies
    the epsilon-optimality inequality), on MasterInfeasible (the problem is
    infeasible), or at max_iters / the conic-solve budget.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    sub = subproblem or NominalSubproblem(inst, tol=tol, engine=engine, mask=mask)
    engine = sub.engine
    start_count = engine.solve_count
    a_hat = np.ones(inst.L, dtype=np.int64)
    lb, ub = -np.inf, np.inf
    incumbent = None
    cuts: list[Cut] = []
    trace = []
    priced = set()
    infeasible_seen = set()
    t0 = time.perf_counter()

    def used() -> int:
        return engine.solve_count - start_count

    def row(it, kind, value):
        trace.append((it, lb, ub, kind, activation_bits(a_hat), value,
                      used(), round((time.perf_counter() - t0) * 1e3, 3)))

    def finish(status, witness=None):
        return BendersResult(
            status=status, solution=incumbent[0] if incumbent else None,
            objective=incumbent[1] if incumbent else None,
            lower_bound=lb, upper_bound=ub, iterations=len(trace),
            cuts=cuts, trace=trace, solve_count=used(),
            infeasible_witness=witness,
        )

    def master_step():
        """Next master minimizer, excluding known-infeasible patterns exactly."""
        while True:
            a_next, a0 = solve_master(cuts, inst)
            if activation_bits(a_next) not in infeasible_seen:
                return a_next, a0
            # the master slipped past a numerically weak certificate
            cuts.append(_exclusion_cut(a_next))

    for it in range(1, max_iters + 1):
        if solve_budget is not None and used() >= solve_budget:
            return finish("iteration_limit")
        if sinr_dimension_infeasible(inst, a_hat, mask):
            # too few usable antennas for the targets: no pricing needed
            cuts.append(monotonicity_cut(a_hat, source_iteration=it))
            infeasible_seen.add(activation_bits(a_hat))
            row(it, "prescreen", "")
        else:
            outcome = sub.solve(a_hat)
            if outcome.status is Status.SINR_INFEASIBLE:
                row(it, "sinr_infeasible", "")
                return finish("infeasible",
                              witness="SINR set empty at unlimited power")
            if outcome.status is Status.NUMERICAL_FAILURE:
                raise NumericalFailureError(
                    f"subproblem could not be certified at {activation_bits(a_hat)}"
                )
            if outcome.status is Status.INFEASIBLE:
                c2 = None
                if outcome.t_star is not None and outcome.lam is not None:
                    c2 = float(outcome.t_star + a_hat @ (outcome.lam * inst.P))
                cut = make_feasibility_cut(
                    inst, a_hat, outcome.lam, tol=tol, engine=engine, mask=mask,
                    weighted_min=sub.weighted_min, constant=c2,
                    source_iteration=it,
                )
                cuts.append(cut)
                cuts.append(monotonicity_cut(a_hat, source_iteration=it))
                if cut.admits(a_hat):
                    # certificate too weak to exclude its own pattern: guard
                    cuts.append(_exclusion_cut(a_hat, source_iteration=it))
                infeasible_seen.add(activation_bits(a_hat))
                row(it, "feasibility", "")
            else:
                full = float(outcome.value + a_hat @ inst.pi)
                if full < ub:
                    ub = full
                    incumbent = (outcome.solution, full)
                if full <= lb + epsilon:
                    row(it, "terminal", full)
                    return finish("optimal")
                cuts.append(make_optimality_cut(inst, a_hat, outcome,
                                                source_iteration=it))
                priced.add(activation_bits(a_hat))
                row(it, "optimality", full)

        try:
            a_next, a0 = master_step()
        except MasterInfeasible:
            return finish("infeasible",
                          witness="feasibility cuts exclude all of {0,1}^L")
        lb = a0
        trace[-1] = trace[-1][:1] + (lb,) + trace[-1][2:]
        if ub <= a0 + epsilon:
            return finish("optimal")
        if activation_bits(a_next) in priced:
            # a repeated master solution implies the termination inequality
            return finish("optimal")
        a_hat = np.asarray(a_next)

    return finish("iteration_limit")
