"""Queue-state Markov model of a buffered two-way relay uplink.

Two source nodes with finite packet buffers share a slotted multiple-access
channel toward a common relay. In each slot exactly one of four things
happens: A transmits alone, B transmits alone, both transmit simultaneously
(lattice coded), or the channel stays idle. A randomized per-state
transmission policy induces a Markov chain on the joint buffer occupancy
(i, j); this module builds that chain, solves for its stationary
distribution, and evaluates long-run throughput and delay.

Slot order is fixed throughout the package: the action is chosen from the
start-of-slot state, departures are applied, then Bernoulli arrivals are
appended. A node is half duplex, so a packet arriving in slot t can leave
no earlier than slot t+1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

# Action slots of a policy row, in file/table order g1..g4.
A_ALONE, B_ALONE, BOTH, IDLE = 0, 1, 2, 3

POLICY_SUM_TOL = 1e-9
STATIONARY_RESIDUAL_TOL = 1e-10
DENSE_SOLVE_CUTOFF = 10_000


class PolicyError(ValueError):
    """Raised when a policy violates the feasibility constraints."""


class ChainError(RuntimeError):
    """Raised when the stationary distribution cannot be computed."""


@dataclass(frozen=True)
class SystemParams:
    """Scenario constants for one relay-network instance.

    Arrival rates are Bernoulli probabilities per slot, buffer sizes are in
    packets, the delay budget is a mean sojourn in slots, and the fading
    scales parameterize the Rayleigh gain of each uplink.
    """

    lambda_a: float = 0.5
    lambda_b: float = 0.5
    n_a: int = 15
    n_b: int = 15
    d_max: float = 3.0
    rate_r: float = 1.0
    scale_a: float = 1.0
    scale_b: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_a <= 1.0:
            raise ValueError(f"lambda_a must be in [0, 1], got {self.lambda_a}")
        if not 0.0 <= self.lambda_b <= 1.0:
            raise ValueError(f"lambda_b must be in [0, 1], got {self.lambda_b}")
        if self.n_a < 1 or self.n_b < 1:
            raise ValueError(f"buffer sizes must be >= 1, got ({self.n_a}, {self.n_b})")
        if int(self.n_a) != self.n_a or int(self.n_b) != self.n_b:
            raise ValueError("buffer sizes must be integers")
        if self.d_max <= 0:
            raise ValueError(f"d_max must be positive, got {self.d_max}")
        if self.rate_r < 0:
            raise ValueError(f"rate_r must be >= 0, got {self.rate_r}")
        if self.scale_a <= 0 or self.scale_b <= 0:
            raise ValueError("fading scales must be positive")

    @property
    def total_rate(self) -> float:
        return self.lambda_a + self.lambda_b


@dataclass(frozen=True)
class ArrivalProbs:
    """Per-slot probabilities of the four joint arrival events.

    f1: arrivals at both sources, f2: only at A, f3: only at B, f4: none.
    The four always sum to one.
    """

    f1: float
    f2: float
    f3: float
    f4: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.f1, self.f2, self.f3, self.f4)


def arrival_probs(params: SystemParams) -> ArrivalProbs:
    """Joint arrival-event probabilities of two independent Bernoulli feeds."""
    la, lb = params.lambda_a, params.lambda_b
    return ArrivalProbs(
        f1=la * lb,
        f2=la * (1.0 - lb),
        f3=(1.0 - la) * lb,
        f4=(1.0 - la) * (1.0 - lb),
    )


class QueueState(NamedTuple):
    i: int
    j: int


@dataclass(frozen=True)
class StateSpace:
    """Row-major enumeration of the (n_a+1) x (n_b+1) buffer-occupancy grid."""

    n_a: int
    n_b: int

    def __len__(self) -> int:
        return (self.n_a + 1) * (self.n_b + 1)

    @property
    def states(self) -> list[QueueState]:
        return [QueueState(i, j) for i in range(self.n_a + 1) for j in range(self.n_b + 1)]

    def index(self, i: int, j: int) -> int:
        if not (0 <= i <= self.n_a and 0 <= j <= self.n_b):
            raise IndexError(f"state ({i}, {j}) outside grid")
        return i * (self.n_b + 1) + j

    def state(self, idx: int) -> QueueState:
        i, j = divmod(idx, self.n_b + 1)
        if not 0 <= i <= self.n_a:
            raise IndexError(f"index {idx} outside grid")
        return QueueState(i, j)


def state_space(params: SystemParams) -> StateSpace:
    return StateSpace(params.n_a, params.n_b)


def allowed_actions(i: int, j: int, n_a: int, n_b: int) -> tuple[int, ...]:
    """Actions a feasible policy may give positive probability at (i, j).

    Empty buffers cannot transmit; a full buffer must transmit every slot so
    that the post-departure arrival never overflows. A full buffer facing a
    nonempty peer is forced into the simultaneous transmission; facing an
    empty peer it transmits alone.
    """
    full_a, full_b = i == n_a, j == n_b
    if full_a and j == 0:
        return (A_ALONE,)
    if full_b and i == 0:
        return (B_ALONE,)
    if full_a or full_b:
        return (BOTH,)
    acts = []
    if i > 0:
        acts.append(A_ALONE)
    if j > 0:
        acts.append(B_ALONE)
    if i > 0 and j > 0:
        acts.append(BOTH)
    acts.append(IDLE)
    return tuple(acts)


@dataclass(frozen=True)
class Policy:
    """Per-state action probabilities, shape (n_a+1, n_b+1, 4).

    The last axis is (A alone, B alone, both, idle) and sums to one in every
    state; structurally impossible actions carry exactly zero.
    """

    g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if g.ndim != 3 or g.shape[2] != 4:
            raise ValueError(f"policy table must have shape (n_a+1, n_b+1, 4), got {g.shape}")
        g.flags.writeable = False
        object.__setattr__(self, "g", g)

    @property
    def n_a(self) -> int:
        return self.g.shape[0] - 1

    @property
    def n_b(self) -> int:
        return self.g.shape[1] - 1


def drain_policy(params: SystemParams) -> Policy:
    """Transmit everything possible every slot.

    Combines whenever both queues are backlogged and sends singles on the
    axes, which empties any reachable backlog at the maximum rate. Used as
    the safe default for states an optimized policy never visits.
    """
    g = np.zeros((params.n_a + 1, params.n_b + 1, 4))
    for i in range(params.n_a + 1):
        for j in range(params.n_b + 1):
            if i > 0 and j > 0:
                g[i, j, BOTH] = 1.0
            elif i > 0:
                g[i, j, A_ALONE] = 1.0
            elif j > 0:
                g[i, j, B_ALONE] = 1.0
            else:
                g[i, j, IDLE] = 1.0
    return Policy(g)


def combined_ma_policy(params: SystemParams) -> Policy:
    """Greedy source-side combining: transmit only pairs, singles only under
    full-buffer compulsion, otherwise hold for a combining partner."""
    g = np.zeros((params.n_a + 1, params.n_b + 1, 4))
    for i in range(params.n_a + 1):
        for j in range(params.n_b + 1):
            if i > 0 and j > 0:
                g[i, j, BOTH] = 1.0
            elif i == params.n_a and j == 0:
                g[i, j, A_ALONE] = 1.0
            elif j == params.n_b and i == 0:
                g[i, j, B_ALONE] = 1.0
            else:
                g[i, j, IDLE] = 1.0
    return Policy(g)


@dataclass(frozen=True)
class PolicyViolation:
    i: int
    j: int
    kind: str
    magnitude: float
    message: str


@dataclass(frozen=True)
class PolicyValidation:
    violations: tuple[PolicyViolation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return "policy feasible"
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  ({v.i},{v.j}) {v.message}" for v in self.violations]
        return "\n".join(lines)


def validate_policy(policy: Policy, params: SystemParams) -> PolicyValidation:
    """Check normalization, bounds, and the structural action constraints.

    A table whose dimensions do not match ``params`` is a usage error and
    raises ValueError; constraint violations are returned in the report.
    """
    if policy.n_a != params.n_a or policy.n_b != params.n_b:
        raise ValueError(
            f"policy shape {policy.g.shape[:2]} does not match buffers "
            f"({params.n_a + 1}, {params.n_b + 1})"
        )
    names = ("g1", "g2", "g3", "g4")
    violations: list[PolicyViolation] = []
    for i in range(params.n_a + 1):
        for j in range(params.n_b + 1):
            row = policy.g[i, j]
            total = float(row.sum())
            if abs(total - 1.0) > POLICY_SUM_TOL:
                violations.append(PolicyViolation(
                    i, j, "normalization", abs(total - 1.0),
                    f"action probabilities sum to {total!r}, off by {abs(total - 1.0):.3g}",
                ))
            allowed = allowed_actions(i, j, params.n_a, params.n_b)
            for k in range(4):
                v = float(row[k])
                if not 0.0 <= v <= 1.0:
                    violations.append(PolicyViolation(
                        i, j, "bounds", v,
                        f"{names[k]} = {v!r} outside [0, 1]",
                    ))
                elif k not in allowed and v != 0.0:
                    violations.append(PolicyViolation(
                        i, j, "structure", v,
                        f"{names[k]} must be 0 at ({i},{j}) but is {v!r}",
                    ))
    return PolicyValidation(tuple(violations))


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic one-slot transition matrix over the state grid."""

    space: StateSpace
    matrix: sp.csr_matrix


def build_transition_matrix(params: SystemParams, policy: Policy) -> TransitionMatrix:
    """One-slot transition probabilities induced by a feasible policy.

    Transitions are accumulated region by region: the origin sees only
    arrivals; an axis state mixes its single transmission with idling; an
    interior state mixes all four actions. Terms whose action probability is
    structurally zero vanish, which is what keeps every full-buffer row
    inside the grid.
    """
    report = validate_policy(policy, params)
    if not report.ok:
        raise PolicyError(report.summary())
    f = arrival_probs(params)
    f1, f2, f3, f4 = f.as_tuple()
    space = state_space(params)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []

    def put(src: int, di: int, dj: int, p: float):
        # zero terms are dropped before indexing, so targets that only a
        # structurally-zero action could reach never leave the grid
        if p != 0.0:
            rows.append(src)
            cols.append(space.index(di, dj))
            vals.append(p)

    for i in range(params.n_a + 1):
        for j in range(params.n_b + 1):
            s = space.index(i, j)
            g1, g2, g3, g4 = (float(v) for v in policy.g[i, j])
            if i == 0 and j == 0:
                put(s, 0, 0, f4)
                put(s, 0, 1, f3)
                put(s, 1, 0, f2)
                put(s, 1, 1, f1)
            elif j == 0:
                put(s, i, 0, f2 * g1 + f4 * g4)
                put(s, i + 1, 0, f2 * g4)
                put(s, i - 1, 0, f4 * g1)
                put(s, i, 1, f1 * g1 + f3 * g4)
                put(s, i + 1, 1, f1 * g4)
                put(s, i - 1, 1, f3 * g1)
            elif i == 0:
                put(s, 0, j, f3 * g2 + f4 * g4)
                put(s, 0, j + 1, f3 * g4)
                put(s, 0, j - 1, f4 * g2)
                put(s, 1, j, f1 * g2 + f2 * g4)
                put(s, 1, j + 1, f1 * g4)
                put(s, 1, j - 1, f2 * g2)
            else:
                put(s, i, j, f4 * g4 + f1 * g3 + f3 * g2 + f2 * g1)
                put(s, i - 1, j - 1, f4 * g3)
                put(s, i + 1, j + 1, f1 * g4)
                put(s, i, j - 1, f2 * g3 + f4 * g2)
                put(s, i, j + 1, f1 * g1 + f3 * g4)
                put(s, i + 1, j, f1 * g2 + f2 * g4)
                put(s, i - 1, j, f3 * g3 + f4 * g1)
                put(s, i - 1, j + 1, f3 * g1)
                put(s, i + 1, j - 1, f2 * g2)
    n = len(space)
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return TransitionMatrix(space, matrix)


@dataclass(frozen=True)
class StationaryDistribution:
    """Long-run state occupancy over the buffer grid.

    ``recurrent`` marks the single recurrent class reachable from the empty
    system; states outside it carry probability zero.
    """

    pi: np.ndarray
    recurrent: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        rec = np.asarray(self.recurrent, dtype=bool)
        pi.flags.writeable = False
        rec.flags.writeable = False
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "recurrent", rec)


def _check_row_stochastic(p: sp.csr_matrix):
    row_sums = np.asarray(p.sum(axis=1)).ravel()
    if p.nnz and p.data.min() < -1e-15:
        raise ChainError(f"negative transition probability {p.data.min()!r}")
    worst = float(np.abs(row_sums - 1.0).max())
    if worst > 1e-9:
        raise ChainError(f"matrix is not row stochastic, worst row-sum error {worst:.3g}")


def _stationary_direct(pc: sp.csr_matrix) -> np.ndarray:
    m = pc.shape[0]
    if m == 1:
        return np.ones(1)
    a = (pc.T - sp.identity(m, format="csr")).tolil()
    a[m - 1, :] = 1.0  # replace one balance row with the normalization
    b = np.zeros(m)
    b[m - 1] = 1.0
    try:
        x = spsolve(a.tocsc(), b)
    except Exception:
        x = None
    if x is None or not np.all(np.isfinite(x)):
        # stacked least squares: all balance rows plus normalization
        dense = np.vstack([(pc.T - sp.identity(m)).toarray(), np.ones((1, m))])
        rhs = np.zeros(m + 1)
        rhs[-1] = 1.0
        x = np.linalg.lstsq(dense, rhs, rcond=None)[0]
    return x


def _stationary_power(pc: sp.csr_matrix, tol: float, max_iter: int = 500_000) -> np.ndarray:
    m = pc.shape[0]
    x = np.full(m, 1.0 / m)
    # lazy chain (P + I)/2 shares the stationary vector and is aperiodic
    for it in range(max_iter):
        nxt = 0.5 * (x + x @ pc)
        nxt /= nxt.sum()
        if it % 32 == 0:
            residual = float(np.abs(nxt @ pc - nxt).max())
            if residual <= tol:
                return nxt
        x = nxt
    residual = float(np.abs(x @ pc - x).max())
    raise ChainError(f"power iteration did not converge, residual {residual:.3g}")


def stationary_of_matrix(matrix, start: int = 0,
                         tol: float = STATIONARY_RESIDUAL_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Stationary vector of the recurrent class reachable from ``start``.

    Returns (pi, class_indices) with pi supported on the class and zero
    elsewhere. Raises ChainError when more than one recurrent class is
    reachable (the long-run distribution is then not unique) or when the
    solve fails to meet the residual tolerance.
    """
    p = sp.csr_matrix(matrix, dtype=float)
    n = p.shape[0]
    _check_row_stochastic(p)
    reach = csgraph.breadth_first_order(p, start, directed=True, return_predecessors=False)
    sub = p[reach][:, reach].tocsr()
    ncomp, labels = csgraph.connected_components(sub, directed=True, connection="strong")
    leaving = np.zeros(ncomp, dtype=bool)
    coo = sub.tocoo()
    crossing = labels[coo.row] != labels[coo.col]
    leaving[labels[coo.row[crossing]]] = True
    terminal = np.flatnonzero(~leaving)
    if len(terminal) != 1:
        raise ChainError(
            f"{len(terminal)} recurrent classes reachable from state {start}; "
            "stationary distribution is not unique"
        )
    klass = reach[labels == terminal[0]]
    klass.sort()
    pc = p[klass][:, klass].tocsr()
    if pc.shape[0] <= DENSE_SOLVE_CUTOFF:
        x = _stationary_direct(pc)
    else:
        x = _stationary_power(pc, tol)
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    residual = float(np.abs(x @ pc - x).max())
    if residual > 1e-9:
        x = _stationary_power(pc, tol)
        residual = float(np.abs(x @ pc - x).max())
        if residual > 1e-9:
            raise ChainError(f"stationary solve residual {residual:.3g} exceeds 1e-9")
    out = np.zeros(n)
    out[klass] = x
    return out, klass


def stationary_distribution(tm: TransitionMatrix) -> StationaryDistribution:
    """Long-run occupancy of the chain started from the empty system."""
    space = tm.space
    start = space.index(0, 0)
    flat, klass = stationary_of_matrix(tm.matrix, start=start)
    shape = (space.n_a + 1, space.n_b + 1)
    rec = np.zeros(len(space), dtype=bool)
    rec[klass] = True
    return StationaryDistribution(flat.reshape(shape), rec.reshape(shape))


@dataclass(frozen=True)
class AnalyticMetrics:
    """Long-run rates of the primary pair and of the idle-slot users.

    mu1 counts packets the sources push through the shared uplink per slot,
    mu2 the fraction of slots left idle (the secondary pair's throughput).
    mean_delay is mean_queue over the total arrival rate and is NaN when
    both arrival rates are zero.
    """

    mu1: float
    mu2: float
    mu_tot: float
    mean_queue: float
    mean_delay: float


def analytic_metrics(pi: StationaryDistribution, policy: Policy,
                     params: SystemParams) -> AnalyticMetrics:
    g = policy.g
    p = pi.pi
    if p.shape != g.shape[:2]:
        raise ValueError(f"distribution shape {p.shape} does not match policy {g.shape[:2]}")
    mu1 = float(np.sum(p * (g[..., A_ALONE] + g[..., B_ALONE] + 2.0 * g[..., BOTH])))
    mu2 = float(np.sum(p * g[..., IDLE]))
    occupancy = np.add.outer(np.arange(params.n_a + 1), np.arange(params.n_b + 1))
    mean_queue = float(np.sum(p * occupancy))
    total = params.total_rate
    mean_delay = mean_queue / total if total > 0 else math.nan
    return AnalyticMetrics(mu1, mu2, mu1 + mu2, mean_queue, mean_delay)
