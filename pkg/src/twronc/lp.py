"""Linear program for the delay-constrained throughput-optimal policy.

The optimization runs in occupancy variables x[i,j,k] = pi[i,j] * g[i,j,k],
the long-run fraction of slots spent in state (i, j) taking action k. The
objective maximizes the idle-slot fraction (sum of the idle variables), the
balance block encodes stationarity of the induced chain, one row normalizes
the occupancy to a distribution, and a single inequality caps the mean
queueing delay via Little's law. Structurally impossible state/action pairs
are excluded from the variable vector outright, which is exactly the
feasible-policy structure of the queue model.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .model import (
    A_ALONE,
    B_ALONE,
    BOTH,
    IDLE,
    Policy,
    StationaryDistribution,
    SystemParams,
    allowed_actions,
    analytic_metrics,
    arrival_probs,
    build_transition_matrix,
    state_space,
    stationary_distribution,
    validate_policy,
)

# Below this occupancy a state is treated as unreachable when mapping the
# solution back to action probabilities; the ratio x/sum(x) is solver noise.
UNREACHABLE_EPS = 1e-10

# tightest tolerances HiGHS accepts; the defaults (1e-7) leave negative
# variable dust outside the solution contract
_SOLVER_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}

_DEPARTURE = {A_ALONE: (1, 0), B_ALONE: (0, 1), BOTH: (1, 1), IDLE: (0, 0)}
# arrival event deltas, paired with f1..f4 in order
_ARRIVAL = ((1, 1), (1, 0), (0, 1), (0, 0))


@dataclass(frozen=True)
class VarIndex:
    """Bijection between included (state, action) pairs and LP columns."""

    space_shape: tuple[int, int]
    columns: tuple[tuple[int, int, int], ...]

    @classmethod
    def build(cls, params: SystemParams) -> "VarIndex":
        cols = []
        for i in range(params.n_a + 1):
            for j in range(params.n_b + 1):
                for k in allowed_actions(i, j, params.n_a, params.n_b):
                    cols.append((i, j, k))
        return cls((params.n_a + 1, params.n_b + 1), tuple(cols))

    def __len__(self) -> int:
        return len(self.columns)

    @property
    def col_of(self) -> dict[tuple[int, int, int], int]:
        return {c: idx for idx, c in enumerate(self.columns)}

    def to_grid(self, x: np.ndarray) -> np.ndarray:
        """Scatter a column vector into the dense (n_a+1, n_b+1, 4) table."""
        grid = np.zeros(self.space_shape + (4,))
        for idx, (i, j, k) in enumerate(self.columns):
            grid[i, j, k] = x[idx]
        return grid


@dataclass(frozen=True)
class LPProblem:
    """Assembled problem data: maximize c @ x subject to
    a_eq @ x = b_eq, a_ub @ x <= b_ub, x >= 0."""

    params: SystemParams
    var_index: VarIndex
    c: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    a_ub: sp.csr_matrix | None
    b_ub: np.ndarray | None

    @property
    def n_balance_rows(self) -> int:
        return self.a_eq.shape[0] - 1


def _event_masses(i: int, j: int, k: int, f: tuple[float, ...]):
    """Probability mass that action k moves state (i, j) to each neighbor."""
    di, dj = _DEPARTURE[k]
    base_i, base_j = i - di, j - dj
    for (ai, aj), fm in zip(_ARRIVAL, f):
        if fm != 0.0:
            yield (base_i + ai, base_j + aj), fm


def assemble_lp(params: SystemParams) -> LPProblem:
    """Build the occupancy-variable LP for one scenario.

    Each balance row states that the occupancy flowing into a state equals
    the occupancy of that state; the coefficients are affine in the arrival
    probabilities because the action choice is already explicit in the
    variable index. The delay row divides queue occupancy by the total
    arrival rate (omitted when both rates are zero, where mean delay is
    undefined and the constraint has no content).
    """
    space = state_space(params)
    vi = VarIndex.build(params)
    f = arrival_probs(params).as_tuple()
    ncols = len(vi)
    nstates = len(space)

    c = np.zeros(ncols)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for col, (i, j, k) in enumerate(vi.columns):
        if k == IDLE:
            c[col] = 1.0
        src = space.index(i, j)
        rows.append(src)
        cols.append(col)
        vals.append(-1.0)
        for (ni, nj), mass in _event_masses(i, j, k, f):
            rows.append(space.index(ni, nj))
            cols.append(col)
            vals.append(mass)
    balance = sp.coo_matrix((vals, (rows, cols)), shape=(nstates, ncols)).tocsr()
    norm = sp.csr_matrix(np.ones((1, ncols)))
    a_eq = sp.vstack([balance, norm], format="csr")
    b_eq = np.zeros(nstates + 1)
    b_eq[-1] = 1.0

    total = params.total_rate
    if total > 0:
        delay = np.array([[(i + j) / total for (i, j, _k) in vi.columns]])
        a_ub = sp.csr_matrix(delay)
        b_ub = np.array([float(params.d_max)])
    else:
        a_ub, b_ub = None, None
    return LPProblem(params, vi, c, a_eq, b_eq, a_ub, b_ub)


@dataclass(frozen=True)
class LPSolution:
    """Solver outcome; ``x`` and ``objective`` are set only when optimal."""

    status: str  # optimal | infeasible | unbounded | numerical-failure
    var_index: VarIndex
    x: np.ndarray | None
    objective: float | None
    message: str
    certificate: str | None = None


def _infeasibility_certificate(problem: LPProblem) -> str:
    """Name the binding aggregate constraint of an infeasible instance.

    The balance/normalization system is always satisfiable (any feasible
    policy yields a point), so infeasibility can only come from the delay
    budget; solving for the minimum achievable mean delay exhibits it.
    """
    if problem.a_ub is None:
        return "balance system infeasible (unexpected)"
    res = linprog(
        problem.a_ub.toarray().ravel(),
        A_eq=problem.a_eq,
        b_eq=problem.b_eq,
        bounds=(0, None),
        method="highs",
        options=_SOLVER_OPTIONS,
    )
    if res.status == 0:
        return (
            f"minimum achievable mean delay {res.fun!r} slots exceeds "
            f"the budget d_max = {problem.params.d_max!r}"
        )
    return f"no occupancy measure satisfies the balance system (solver: {res.message})"


def solve_lp(problem: LPProblem) -> LPSolution:
    """Maximize the idle-slot fraction; deterministic for identical input."""
    res = linprog(
        -problem.c,
        A_ub=problem.a_ub,
        b_ub=problem.b_ub,
        A_eq=problem.a_eq,
        b_eq=problem.b_eq,
        bounds=(0, None),
        method="highs",
        options=_SOLVER_OPTIONS,
    )
    if res.status == 2:
        return LPSolution("infeasible", problem.var_index, None, None, res.message,
                          certificate=_infeasibility_certificate(problem))
    if res.status == 3:
        # normalization bounds the objective by 1, so this is a solver bug
        return LPSolution(
            "numerical-failure", problem.var_index, None, None,
            f"solver claimed unbounded, impossible under normalization: {res.message}",
        )
    if res.status != 0:
        return LPSolution("numerical-failure", problem.var_index, None, None, res.message)
    x = np.asarray(res.x)
    eq_resid = float(np.abs(problem.a_eq @ x - problem.b_eq).max())
    ub_resid = 0.0
    if problem.a_ub is not None:
        ub_resid = float(np.clip(problem.a_ub @ x - problem.b_ub, 0.0, None).max())
    if x.min() < -1e-9 or eq_resid > 1e-8 or ub_resid > 1e-8:
        return LPSolution(
            "numerical-failure", problem.var_index, None, None,
            f"solution violates tolerances: min x {x.min():.3g}, "
            f"equality residual {eq_resid:.3g}, delay excess {ub_resid:.3g}",
        )
    objective = float(problem.c @ x)
    return LPSolution("optimal", problem.var_index, x, objective, res.message)


def _steering_default(params: SystemParams, support: np.ndarray) -> np.ndarray:
    """Actions for states the optimum never occupies.

    The occupied states form a closed class, but it need not contain the
    empty system: the optimum may hold a queue high so that combining
    partners are always available. Outside the class we steer each queue
    toward the class's lowest state (transmit above it, hold below it), so
    the chain started empty climbs into the class and realizes the LP
    value. When the class contains the empty state this reduces to plain
    draining.
    """
    cells = np.argwhere(support)
    i_star, j_star = min(cells.tolist(), key=lambda s: (s[0] + s[1], s))
    g = np.zeros((params.n_a + 1, params.n_b + 1, 4))
    for i in range(params.n_a + 1):
        for j in range(params.n_b + 1):
            acts = allowed_actions(i, j, params.n_a, params.n_b)
            if len(acts) == 1:
                g[i, j, acts[0]] = 1.0
            elif i > i_star and j > j_star:
                g[i, j, BOTH] = 1.0
            elif i > i_star:
                g[i, j, A_ALONE] = 1.0
            elif j > j_star:
                g[i, j, B_ALONE] = 1.0
            else:
                g[i, j, IDLE] = 1.0
    return g


def recover_policy(solution: LPSolution,
                   params: SystemParams) -> tuple[Policy, StationaryDistribution]:
    """Map occupancies back to action probabilities and state occupancy.

    States carrying no occupancy mass get zero stationary probability and a
    deterministic steering action toward the occupied class, so that a
    system started empty (or knocked into such a state) reaches the class
    the optimum lives on.
    """
    if solution.status != "optimal":
        raise ValueError(f"cannot recover a policy from a {solution.status} solution")
    x = solution.var_index.to_grid(np.clip(solution.x, 0.0, None))
    mass = x.sum(axis=2)
    reachable = mass > UNREACHABLE_EPS
    g = _steering_default(params, reachable)
    g[reachable] = x[reachable] / mass[reachable][:, None]
    pi = np.where(reachable, mass, 0.0)
    pi /= pi.sum()
    policy = Policy(g)
    report = validate_policy(policy, params)
    if not report.ok:
        raise RuntimeError(f"recovered policy infeasible: {report.summary()}")
    return policy, StationaryDistribution(pi, reachable)


@dataclass(frozen=True)
class SolutionVerification:
    """Self-consistency report closing the loop between the LP and the chain."""

    max_balance_residual: float
    normalization_residual: float
    delay_value: float
    delay_budget: float
    delay_slack: float
    mu1_residual: float
    pi_consistency_residual: float
    objective: float
    corner_mass_a_full: float  # occupancy of (n_a, 0), zero unless forced singles pay off
    corner_mass_b_full: float
    passed: bool

    def summary(self) -> str:
        lines = [
            f"max balance residual     : {self.max_balance_residual:.3e}",
            f"normalization residual   : {self.normalization_residual:.3e}",
            f"mean delay               : {self.delay_value!r} (budget {self.delay_budget!r}, "
            f"slack {self.delay_slack:.3e})",
            f"primary throughput error : {self.mu1_residual:.3e}",
            f"chain pi consistency     : {self.pi_consistency_residual:.3e}",
            f"idle-slot objective      : {self.objective!r}",
            f"corner occupancy (full A, empty B): {self.corner_mass_a_full:.3e}",
            f"corner occupancy (empty A, full B): {self.corner_mass_b_full:.3e}",
            f"verdict                  : {'pass' if self.passed else 'FAIL'}",
        ]
        return "\n".join(lines)


def verify_solution(solution: LPSolution, params: SystemParams,
                    tol: float = 1e-6) -> SolutionVerification:
    """Check an optimal solution against the problem and the queue model.

    Residuals: balance and normalization of the occupancy vector, delay
    against the budget, primary throughput against the total arrival rate
    (flow conservation of lossless buffers), and agreement between the LP
    occupancy and the stationary distribution of the chain rebuilt from the
    recovered policy.
    """
    if solution.status != "optimal":
        raise ValueError(f"cannot verify a {solution.status} solution")
    problem = assemble_lp(params)
    x = solution.x
    balance_resid = float(np.abs(problem.a_eq[:-1] @ x).max())
    norm_resid = float(abs(x.sum() - 1.0))
    if problem.a_ub is not None:
        delay_value = float((problem.a_ub @ x)[0])
    else:
        delay_value = float("nan")
    delay_budget = float(params.d_max)
    delay_slack = delay_budget - delay_value
    weights = {A_ALONE: 1.0, B_ALONE: 1.0, BOTH: 2.0, IDLE: 0.0}
    mu1 = float(sum(weights[k] * x[col] for col, (_i, _j, k) in enumerate(problem.var_index.columns)))
    mu1_resid = abs(mu1 - params.total_rate)

    policy, pi_lp = recover_policy(solution, params)
    chain = build_transition_matrix(params, policy)
    pi_model = stationary_distribution(chain)
    pi_resid = float(np.abs(pi_model.pi - pi_lp.pi).max())

    xg = solution.var_index.to_grid(x)
    mass = xg.sum(axis=2)
    passed = (
        balance_resid <= tol
        and norm_resid <= tol
        and mu1_resid <= tol
        and pi_resid <= tol
        and (np.isnan(delay_value) or delay_value <= delay_budget + 1e-8)
    )
    return SolutionVerification(
        max_balance_residual=balance_resid,
        normalization_residual=norm_resid,
        delay_value=delay_value,
        delay_budget=delay_budget,
        delay_slack=delay_slack,
        mu1_residual=mu1_resid,
        pi_consistency_residual=pi_resid,
        objective=float(solution.objective),
        corner_mass_a_full=float(mass[params.n_a, 0]),
        corner_mass_b_full=float(mass[0, params.n_b]),
        passed=bool(passed),
    )


def optimize(params: SystemParams):
    """Assemble, solve, recover, and verify in one call.

    Returns (solution, policy, pi, metrics, verification); the last four are
    None when the instance is infeasible or the solver fails.
    """
    problem = assemble_lp(params)
    solution = solve_lp(problem)
    if solution.status != "optimal":
        return solution, None, None, None, None
    policy, pi = recover_policy(solution, params)
    metrics = analytic_metrics(pi, policy, params)
    verification = verify_solution(solution, params)
    return solution, policy, pi, metrics, verification


# ---------------------------------------------------------------------------
# plain-text interchange dump, for debugging against external solvers


def _col_name(i: int, j: int, k: int) -> str:
    return f"x{k + 1}[{i},{j}]"


def _fmt_terms(coeffs: np.ndarray, vi: VarIndex) -> str:
    terms = []
    for col, v in enumerate(coeffs):
        if v != 0.0:
            i, j, k = vi.columns[col]
            terms.append(f"{float(v)!r}*{_col_name(i, j, k)}")
    return " + ".join(terms) if terms else "0"


def write_lp_text(problem: LPProblem) -> str:
    """Serialize the problem, one named constraint per line."""
    vi = problem.var_index
    space = state_space(problem.params)
    out = io.StringIO()
    out.write("# twronc lp dump v1\n")
    out.write("maximize\n")
    out.write(f"objective: {_fmt_terms(problem.c, vi)}\n")
    out.write("subject_to\n")
    if problem.a_ub is not None:
        row = np.asarray(problem.a_ub.todense()).ravel()
        out.write(f"delay: {_fmt_terms(row, vi)} <= {float(problem.b_ub[0])!r}\n")
    dense_eq = np.asarray(problem.a_eq.todense())
    for r in range(problem.n_balance_rows):
        i, j = space.state(r)
        out.write(f"balance[{i},{j}]: {_fmt_terms(dense_eq[r], vi)} = {float(problem.b_eq[r])!r}\n")
    out.write(f"normalization: {_fmt_terms(dense_eq[-1], vi)} = {float(problem.b_eq[-1])!r}\n")
    out.write("bounds\n")
    out.write("x >= 0\n")
    out.write("end\n")
    return out.getvalue()


_TERM_RE = re.compile(r"^(?P<coef>[^*]+)\*x(?P<k>[1-4])\[(?P<i>\d+),(?P<j>\d+)\]$")


def _parse_terms(expr: str, col_of: dict, ncols: int) -> np.ndarray:
    row = np.zeros(ncols)
    expr = expr.strip()
    if expr == "0":
        return row
    for term in expr.split(" + "):
        m = _TERM_RE.match(term.strip())
        if not m:
            raise ValueError(f"malformed term {term!r}")
        key = (int(m["i"]), int(m["j"]), int(m["k"]) - 1)
        row[col_of[key]] += float(m["coef"])
    return row


def parse_lp_text(text: str, params: SystemParams) -> LPProblem:
    """Rebuild an LPProblem from its dump; inverse of write_lp_text."""
    vi = VarIndex.build(params)
    col_of = vi.col_of
    ncols = len(vi)
    c = None
    eq_rows: list[np.ndarray] = []
    b_eq: list[float] = []
    a_ub = None
    b_ub = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line in ("maximize", "subject_to", "bounds", "end", "x >= 0"):
            continue
        name, rest = line.split(":", 1)
        if name == "objective":
            c = _parse_terms(rest, col_of, ncols)
        elif name == "delay":
            expr, rhs = rest.rsplit("<=", 1)
            a_ub = sp.csr_matrix(_parse_terms(expr, col_of, ncols))
            b_ub = np.array([float(rhs)])
        else:
            expr, rhs = rest.rsplit("=", 1)
            eq_rows.append(_parse_terms(expr, col_of, ncols))
            b_eq.append(float(rhs))
    if c is None or not eq_rows:
        raise ValueError("dump is missing the objective or the equality block")
    return LPProblem(params, vi, c, sp.csr_matrix(np.vstack(eq_rows)),
                     np.array(b_eq), a_ub, b_ub)
