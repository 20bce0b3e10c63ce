"""Fixed-activation beamforming subproblems as second-order cone programs.

For an on/off pattern ``a`` the subproblem minimizes total transmit power
over beamformers meeting every user's SINR target, subject to per-BS power
caps ``a_l * P_l``.  The solver returns an eps-optimal primal/dual pair, or
an infeasibility certificate: a simplex-normalized weight vector ``lam``
over the BS power constraints whose weighted power requirement provably
exceeds the weighted caps.

Everything runs through one canonical real-valued cone-program form
(:class:`ConeProgram`) solved by an interior-point engine (Clarabel).
Complex quantities are lifted to interleaved (re, im) pairs; each SINR
constraint becomes a second-order cone after fixing the free phase of each
beamformer so that h_k^H w_k is real and nonnegative; per-BS transmit powers
enter through epigraph variables p_l >= ||w restricted to BS l||^2 (rotated
cones), so the caps are plain linear rows and their dual multipliers are the
power-constraint sensitivities the cutting-plane algebra needs.

Channels are normalized by each user's noise standard deviation when rows
are assembled (sigma -> 1), which is an exact reformulation and keeps the
problem data well-scaled for physical-unit instances.

Variables of inactive base stations are eliminated from the subproblem, so
it shrinks with the number of sleeping BSs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import clarabel

from .model import BeamformingSolution, NetworkInstance, as_activation

__all__ = [
    "Status",
    "ConicOutcome",
    "ConeProgram",
    "ProgramBuilder",
    "ClarabelEngine",
    "SinrInfeasibleError",
    "NumericalFailureError",
    "build_subproblem",
    "solve_subproblem",
    "sinr_dimension_infeasible",
    "infeasibility_probe",
    "weighted_power_min",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-7


class SinrInfeasibleError(Exception):
    """The SINR constraint set is empty even with unlimited transmit power."""


class NumericalFailureError(Exception):
    """The engine could not certify optimality or infeasibility at tolerance."""


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    SINR_INFEASIBLE = "sinr_infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


# ---------------------------------------------------------------------------
# Canonical cone program and engine
# ---------------------------------------------------------------------------

@dataclass
class ConeProgram:
    """minimize c'x  s.t.  A x + s = b,  s in K.

    K is a product of cones described by ``cones``: ("zero", m) equality
    rows, ("nonneg", m) linear inequality rows (a'x <= rhs), ("soc", d)
    second-order cones (s0 >= ||s1:||), and ("psd", n) semidefinite blocks
    in scaled-triangle (svec) packing of an n-by-n symmetric matrix.
    ``row_tags`` records row indices of named constraint groups so callers
    can locate dual multipliers.
    """

    num_vars: int
    objective: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list
    row_tags: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.A.shape != (len(self.b), self.num_vars):
            raise ValueError("constraint matrix shape mismatch")
        if self.objective.shape != (self.num_vars,):
            raise ValueError("objective length mismatch")
        if sum(dim for _, dim in self.cones) != len(self.b):
            raise ValueError("cone dimensions do not cover the rows")

    def dump(self, fileobj) -> None:
        """Sparse text dump, one constraint row per line.

        Format: ``<cone> <row> | <rhs> | j:coef j:coef ...`` after a header
        line ``vars <n>`` and ``min | j:coef ...``.
        """
        fileobj.write(f"vars {self.num_vars}\n")
        terms = " ".join(f"{j}:{v:.17g}" for j, v in enumerate(self.objective) if v)
        fileobj.write(f"min | {terms}\n")
        csr = self.A.tocsr()
        row = 0
        for kind, dim in self.cones:
            for i in range(dim):
                sl = slice(csr.indptr[row], csr.indptr[row + 1])
                terms = " ".join(
                    f"{j}:{v:.17g}" for j, v in zip(csr.indices[sl], csr.data[sl])
                )
                fileobj.write(f"{kind} {row} | {self.b[row]:.17g} | {terms}\n")
                row += 1


class ProgramBuilder:
    """Accumulates rows in triplet form and assembles a :class:`ConeProgram`.

    Linear expressions are (cols, vals, const) triples for vals'x + const.
    Rows are stored in Clarabel's ``A x + s = b`` orientation.
    """

    def __init__(self):
        self.num_vars = 0
        self._obj_cols, self._obj_vals = [], []
        self._rows_i, self._rows_j, self._rows_v = [], [], []
        self._b = []
        self._cones = []           # (kind, dim) in row order
        self.row_tags = {}

    def new_vars(self, n: int) -> int:
        start = self.num_vars
        self.num_vars += n
        return start

    def add_objective_term(self, col: int, val: float) -> None:
        self._obj_cols.append(col)
        self._obj_vals.append(val)

    def _push_row(self, cols, vals, rhs: float) -> int:
        i = len(self._b)
        self._rows_i.extend([i] * len(cols))
        self._rows_j.extend(cols)
        self._rows_v.extend(vals)
        self._b.append(rhs)
        return i

    def add_equality(self, cols, vals, rhs: float) -> int:
        """vals'x = rhs (zero-cone row)."""
        self._cones.append(("zero", 1))
        return self._push_row(cols, vals, rhs)

    def add_inequality(self, cols, vals, rhs: float) -> int:
        """vals'x <= rhs (nonnegative-cone row)."""
        self._cones.append(("nonneg", 1))
        return self._push_row(cols, vals, rhs)

    def add_soc(self, head, tail) -> int:
        """||tail(x)|| <= head(x); expressions as (cols, vals, const)."""
        cols, vals, const = head
        first = self._push_row(cols, [-v for v in vals], const)
        for cols, vals, const in tail:
            self._push_row(cols, [-v for v in vals], const)
        self._cones.append(("soc", 1 + len(tail)))
        return first

    def add_psd(self, side: int, const_entries, var_entries) -> int:
        """S(x) = F0 + sum_j x_j F_j >= 0 over upper-triangle entries.

        ``const_entries``: iterable of (i, j, val) with i <= j for F0;
        ``var_entries``: iterable of (var, i, j, val) for the F_j.
        Rows are emitted in svec order (upper triangle, column-major,
        off-diagonal scaled by sqrt(2)).
        """
        scale = np.sqrt(2.0)
        tri_index = {}
        r0 = len(self._b)
        pos = 0
        for col in range(side):
            for row in range(col + 1):
                tri_index[(row, col)] = r0 + pos
                self._b.append(0.0)
                pos += 1
        for i, j, val in const_entries:
            if i > j:
                i, j = j, i
            w = val if i == j else val * scale
            self._b[tri_index[(i, j)]] += w
        for var, i, j, val in var_entries:
            if i > j:
                i, j = j, i
            w = val if i == j else val * scale
            self._rows_i.append(tri_index[(i, j)])
            self._rows_j.append(var)
            self._rows_v.append(-w)
        self._cones.append(("psd", side))
        return r0

    def tag_rows(self, name: str, rows) -> None:
        self.row_tags[name] = rows

    def build(self) -> ConeProgram:
        n_rows = len(self._b)
        if self._rows_j and max(self._rows_j) >= self.num_vars:
            raise ValueError("constraint references out-of-range variable")
        A = sp.csc_matrix(
            (self._rows_v, (self._rows_i, self._rows_j)),
            shape=(n_rows, self.num_vars),
        )
        c = np.zeros(self.num_vars)
        np.add.at(c, self._obj_cols, self._obj_vals)
        # merge adjacent one-dimensional cones of the same kind
        cones = []
        for kind, dim in self._cones:
            if cones and cones[-1][0] == kind and kind in ("zero", "nonneg"):
                cones[-1] = (kind, cones[-1][1] + dim)
            else:
                cones.append((kind, dim))
        prog = ConeProgram(
            num_vars=self.num_vars, objective=c, A=A,
            b=np.asarray(self._b, dtype=np.float64),
            cones=cones, row_tags=dict(self.row_tags),
        )
        prog.validate()
        return prog


_CONE_CTORS = {
    "zero": clarabel.ZeroConeT,
    "nonneg": clarabel.NonnegativeConeT,
    "soc": clarabel.SecondOrderConeT,
    "psd": clarabel.PSDTriangleConeT,
}


@dataclass
class EngineResult:
    status: str                  # optimal | infeasible | unbounded | failed
    x: np.ndarray | None
    z: np.ndarray | None         # duals / dual ray, in row order
    value: float | None


class ClarabelEngine:
    """Interior-point solves of :class:`ConeProgram`, with a solve counter.

    ``tol`` is the contract accuracy; the underlying solver is run one order
    of magnitude tighter.  Solves are pure functions of the program, so the
    counter is the only mutable state.
    """

    def __init__(self, tol: float = DEFAULT_TOL, max_iter: int = 200):
        self.tol = tol
        self.max_iter = max_iter
        self.solve_count = 0

    def solve(self, prog: ConeProgram) -> EngineResult:
        self.solve_count += 1
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = self.max_iter
        inner = max(self.tol * 0.1, 1e-12)
        settings.tol_gap_abs = inner
        settings.tol_gap_rel = inner
        settings.tol_feas = inner
        P = sp.csc_matrix((prog.num_vars, prog.num_vars))
        cones = [_CONE_CTORS[kind](dim) for kind, dim in prog.cones]
        solver = clarabel.DefaultSolver(
            P, prog.objective, prog.A, prog.b, cones, settings
        )
        sol = solver.solve()
        name = str(sol.status)
        if name in ("Solved", "AlmostSolved"):
            x = np.asarray(sol.x)
            return EngineResult("optimal", x, np.asarray(sol.z),
                                float(prog.objective @ x))
        if name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return EngineResult("infeasible", None, np.asarray(sol.z), None)
        if name in ("DualInfeasible", "AlmostDualInfeasible"):
            return EngineResult("unbounded", None, None, None)
        return EngineResult("failed", None, None, None)


# ---------------------------------------------------------------------------
# Subproblem assembly
# ---------------------------------------------------------------------------

@dataclass
class _Layout:
    """Variable bookkeeping for one assembled subproblem.

    ``user_coords[k]`` lists the stacked-antenna indices user k may use
    (active BSs intersected with the serving mask); the beamformer reals of
    user k start at ``w_offset[k]`` as interleaved (re, im) pairs.
    """

    inst: NetworkInstance
    user_coords: list
    w_offset: list
    power_bs: list               # BSs with a power epigraph variable
    p_index: dict                # BS -> variable index of p_l
    cap_row: dict                # BS -> inequality row index (when caps present)
    t_index: int | None = None   # cap-relaxation variable (probe only)

    def extract_beams(self, x: np.ndarray) -> np.ndarray:
        W = np.zeros((self.inst.K, self.inst.n_antennas), dtype=np.complex128)
        for k in range(self.inst.K):
            off = self.w_offset[k]
            for t, j in enumerate(self.user_coords[k]):
                W[k, j] = x[off + 2 * t] + 1j * x[off + 2 * t + 1]
        return W


def _user_supports(inst: NetworkInstance, active, mask) -> list:
    """Kept stacked-antenna indices per user."""
    starts = inst.block_starts
    sup = []
    for k in range(inst.K):
        coords = []
        for l in active:
            if mask is None or mask[l, k]:
                coords.extend(range(int(starts[l]), int(starts[l + 1])))
        sup.append(np.asarray(coords, dtype=np.int64))
    return sup


def _channel_rows(h_norm: np.ndarray, coords, offset: int):
    """(re, im) linear expressions of h^H w over a user's kept coordinates."""
    cols_re, vals_re, cols_im, vals_im = [], [], [], []
    for t, j in enumerate(coords):
        hr, hi = h_norm[j].real, h_norm[j].imag
        cr, ci = offset + 2 * t, offset + 2 * t + 1
        cols_re += [cr, ci]
        vals_re += [hr, hi]
        cols_im += [cr, ci]
        vals_im += [-hi, hr]
    return (cols_re, vals_re), (cols_im, vals_im)


def _assemble(inst: NetworkInstance, active, mask, *,
              weights=None, caps=None, relax_caps: bool = False):
    """Shared builder for the subproblem and its variants.

    weights: objective coefficient per power epigraph (default all-ones);
    caps:    per-BS RHS of the cap rows, or None to omit caps entirely;
    relax_caps: add a scalar t, caps become p_l - t <= caps[l], objective t.
    """
    b = ProgramBuilder()
    sup = _user_supports(inst, active, mask)
    w_offset = []
    for k in range(inst.K):
        w_offset.append(b.new_vars(2 * len(sup[k])))
    if weights is None:
        weights = {l: 1.0 for l in active}
    power_bs = [l for l in active if weights.get(l, 0.0) > 0.0 or caps is not None]
    p_index = {l: b.new_vars(1) for l in power_bs}
    t_index = None
    if relax_caps:
        t_index = b.new_vars(1)
        b.add_objective_term(t_index, 1.0)
    else:
        for l in power_bs:
            wgt = weights.get(l, 0.0)
            if wgt:
                b.add_objective_term(p_index[l], wgt)

    hn = inst.H / np.sqrt(inst.sigma2)[:, None]   # noise-normalized channels

    # SINR rows: ||[h_k^H w_i (i != k); 1]|| <= Re(h_k^H w_k)/sqrt(gamma_k),
    # Im(h_k^H w_k) = 0 pins the free phase.
    for k in range(inst.K):
        (cr, vr), (ci, vi) = _channel_rows(hn[k], sup[k], w_offset[k])
        b.add_equality(ci, vi, 0.0)
        inv_sg = 1.0 / np.sqrt(inst.gamma[k])
        tail = []
        for i in range(inst.K):
            if i == k:
                continue
            (icr, ivr), (ici, ivi) = _channel_rows(hn[k], sup[i], w_offset[i])
            tail.append((icr, ivr, 0.0))
            tail.append((ici, ivi, 0.0))
        tail.append(([], [], 1.0))
        b.add_soc((cr, [v * inv_sg for v in vr], 0.0), tail)

    # cap rows first so their duals sit in one nonneg block
    cap_row = {}
    if caps is not None:
        for l in power_bs:
            if relax_caps:
                cap_row[l] = b.add_inequality(
                    [p_index[l], t_index], [1.0, -1.0], float(caps[l])
                )
            else:
                cap_row[l] = b.add_inequality([p_index[l]], [1.0], float(caps[l]))
        b.tag_rows("caps", dict(cap_row))

    # per-BS power epigraphs: ||[2 w_block; p - 1]|| <= p + 1  <=>  ||w||^2 <= p
    starts = inst.block_starts
    for l in power_bs:
        blk = set(range(int(starts[l]), int(starts[l + 1])))
        tail = []
        for k in range(inst.K):
            off = w_offset[k]
            for t, j in enumerate(sup[k]):
                if j in blk:
                    tail.append(([off + 2 * t], [2.0], 0.0))
                    tail.append(([off + 2 * t + 1], [2.0], 0.0))
        tail.append(([p_index[l]], [1.0], -1.0))
        b.add_soc(([p_index[l]], [1.0], 1.0), tail)

    layout = _Layout(inst=inst, user_coords=sup, w_offset=w_offset,
                     power_bs=power_bs, p_index=p_index, cap_row=cap_row,
                     t_index=t_index)
    return b.build(), layout


@dataclass
class ConicOutcome:
    """Result of one fixed-activation solve.

    Optimal: ``solution`` holds the beams, ``mu`` the cap-row dual
    multipliers (zero for inactive BSs, whose variables are eliminated) and
    ``value`` the minimum transmit power.  Infeasible: ``lam`` is a simplex
    certificate over the BS power constraints with
    ``min_W lam' (powers(W) - a*P) > 0`` and ``t_star`` the certified
    violation (the optimum of the cap-relaxation probe).
    """

    status: Status
    solution: BeamformingSolution | None = None
    mu: np.ndarray | None = None
    lam: np.ndarray | None = None
    value: float | None = None
    t_star: float | None = None


def build_subproblem(inst: NetworkInstance, a, mask=None) -> ConeProgram:
    """Cone program for the fixed-activation minimum-power subproblem."""
    a = as_activation(a, inst.L)
    active = [l for l in range(inst.L) if a[l]]
    caps = {l: a[l] * inst.P[l] for l in active}
    prog, _ = _assemble(inst, active, mask, caps=caps)
    return prog


def sinr_dimension_infeasible(inst: NetworkInstance, a, mask=None) -> bool:
    """Analytic infeasibility test: sum_k gamma_k/(1+gamma_k) >= active antennas.

    For any beamformers, SINR_k/(1+SINR_k) = |m_kk|^2 / (||m_k||^2 + sigma_k^2)
    with m_ki = h_k^H w_i, and the sum of those ratios over users is below
    the rank of the matrix m, hence below the number of usable antenna
    coordinates.  When the bound fails, no beamformer meets the targets at
    any power, so the pattern can be discarded without a conic solve.
    True means provably infeasible; False is inconclusive.
    """
    a = as_activation(a, inst.L)
    active = [l for l in range(inst.L) if a[l]]
    coords = set()
    for sup in _user_supports(inst, active, mask):
        coords.update(sup.tolist())
    demand = float(np.sum(inst.gamma / (1.0 + inst.gamma)))
    return demand >= len(coords) - 1e-9


def solve_subproblem(inst: NetworkInstance, a, tol: float = DEFAULT_TOL,
                     engine: ClarabelEngine | None = None, mask=None,
                     certify: bool = True) -> ConicOutcome:
    """Solve the subproblem; certify infeasibility via the cap-relaxation probe.

    With ``certify=False`` an infeasible pattern is reported without the
    probe solve (no certificate), which halves the cost of feasibility
    scans such as exhaustive enumeration.
    """
    engine = engine or ClarabelEngine(tol)
    a = as_activation(a, inst.L)
    active = [l for l in range(inst.L) if a[l]]

    if active and any(len(c) for c in _user_supports(inst, active, mask)):
        caps = {l: inst.P[l] for l in active}
        prog, layout = _assemble(inst, active, mask, caps=caps)
        res = engine.solve(prog)
        if res.status == "optimal":
            W = layout.extract_beams(res.x)
            sol = BeamformingSolution.from_beams(inst, a, W)
            mu = np.zeros(inst.L)
            for l, row in layout.cap_row.items():
                mu[l] = max(float(res.z[row]), 0.0)
            return ConicOutcome(Status.OPTIMAL, solution=sol, mu=mu,
                                value=float(res.value))
        if res.status == "failed":
            return ConicOutcome(Status.NUMERICAL_FAILURE)
        # fall through to the probe for a verified certificate
    if not certify:
        return ConicOutcome(Status.INFEASIBLE)

    try:
        t_star, lam = infeasibility_probe(inst, a, tol=tol, engine=engine, mask=mask)
    except SinrInfeasibleError:
        return ConicOutcome(Status.SINR_INFEASIBLE)
    if t_star < -tol * (1.0 + abs(t_star)):
        # the probe found a strictly feasible point: genuine disagreement
        return ConicOutcome(Status.NUMERICAL_FAILURE)
    return ConicOutcome(Status.INFEASIBLE, lam=lam, t_star=t_star)


def infeasibility_probe(inst: NetworkInstance, a, tol: float = DEFAULT_TOL,
                        engine: ClarabelEngine | None = None, mask=None):
    """Phase-1 check: minimize t with caps relaxed to a_l P_l + t on every BS.

    t* <= 0 means the subproblem is feasible.  t* > 0 certifies
    infeasibility; the cap-row duals, normalized onto the simplex, weight the
    power constraints so that the weighted minimum power over the SINR set
    exceeds the weighted caps.  Raises SinrInfeasibleError when even the
    relaxation is infeasible (empty SINR set).
    """
    engine = engine or ClarabelEngine(tol)
    a = as_activation(a, inst.L)
    all_bs = list(range(inst.L))
    caps = {l: a[l] * inst.P[l] for l in all_bs}
    prog, layout = _assemble(inst, all_bs, mask, caps=caps, relax_caps=True)
    res = engine.solve(prog)
    if res.status == "infeasible":
        raise SinrInfeasibleError("SINR targets unreachable at any power")
    if res.status != "optimal":
        raise NumericalFailureError(f"probe did not converge: {res.status}")
    lam_raw = np.zeros(inst.L)
    for l, row in layout.cap_row.items():
        lam_raw[l] = max(float(res.z[row]), 0.0)
    total = lam_raw.sum()
    lam = lam_raw / total if total > 0 else lam_raw
    return float(res.value), lam


def weighted_power_min(inst: NetworkInstance, weights, tol: float = DEFAULT_TOL,
                       engine: ClarabelEngine | None = None, mask=None,
                       return_beams: bool = False):
    """min over the SINR set of sum_l weight_l * (BS l transmit power).

    No activation pattern and no caps: the feasible set is the pure SINR
    region over all BSs.  With weights = 1 + mu this evaluates the
    Lagrangian constant paired with cap multipliers mu.  BSs with zero
    weight keep their beamformer variables but need no power epigraph.
    """
    engine = engine or ClarabelEngine(tol)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (inst.L,) or (weights < 0).any():
        raise ValueError("weights must be a nonnegative vector over the BSs")
    all_bs = list(range(inst.L))
    wmap = {l: float(weights[l]) for l in all_bs}
    prog, layout = _assemble(inst, all_bs, mask, weights=wmap, caps=None)
    res = engine.solve(prog)
    if res.status == "infeasible":
        raise SinrInfeasibleError("SINR targets unreachable at any power")
    if res.status != "optimal":
        raise NumericalFailureError(f"weighted solve failed: {res.status}")
    value = float(res.value)
    if not return_beams:
        return value
    return value, layout.extract_beams(res.x)
