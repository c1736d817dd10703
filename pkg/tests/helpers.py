"""Shared generators and independent oracles for the test suite.

The oracles here deliberately re-derive results by routes different from
the package implementation: the transition oracle enumerates action and
arrival events one by one, the stationary oracle solves the full stacked
linear system by least squares, and the power oracle integrates the
Rayleigh tails numerically.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate

from twronc.model import Policy, SystemParams, allowed_actions

_DEPART = {0: (1, 0), 1: (0, 1), 2: (1, 1), 3: (0, 0)}


def random_params(rng, n_max: int = 4, lam_range=(0.05, 0.95), d_max: float = 50.0) -> SystemParams:
    return SystemParams(
        lambda_a=float(rng.uniform(*lam_range)),
        lambda_b=float(rng.uniform(*lam_range)),
        n_a=int(rng.integers(1, n_max + 1)),
        n_b=int(rng.integers(1, n_max + 1)),
        d_max=d_max,
    )


def random_feasible_policy(params: SystemParams, rng, vertex_prob: float = 0.0) -> Policy:
    """Sample a feasible policy; fully mixed rows keep the chain irreducible.

    With vertex_prob > 0 some rows put all mass on one action, which can
    make parts of the grid unreachable (still a feasible policy).
    """
    g = np.zeros((params.n_a + 1, params.n_b + 1, 4))
    for i in range(params.n_a + 1):
        for j in range(params.n_b + 1):
            acts = allowed_actions(i, j, params.n_a, params.n_b)
            if len(acts) == 1 or rng.random() < vertex_prob:
                g[i, j, acts[int(rng.integers(len(acts)))]] = 1.0
            else:
                weights = rng.dirichlet(np.ones(len(acts)))
                for a, w in zip(acts, weights):
                    g[i, j, a] = w
    return Policy(g)


def random_factorizable_policy(params: SystemParams, rng) -> Policy:
    """Feasible policy whose simultaneous action factorizes exactly.

    Built from per-node marginal transmit probabilities (zero on an empty
    queue, one on a full one), so independent per-node thresholding
    reproduces it without residual.
    """
    n_a, n_b = params.n_a, params.n_b
    p = np.zeros((n_a + 1, n_b + 1))
    q = np.zeros((n_a + 1, n_b + 1))
    for i in range(n_a + 1):
        for j in range(n_b + 1):
            full = i == n_a or (j == n_b and i >= 1)
            p[i, j] = 0.0 if i == 0 else 1.0 if full else rng.uniform(0.15, 0.95)
            full_b = j == n_b or (i == n_a and j >= 1)
            q[i, j] = 0.0 if j == 0 else 1.0 if full_b else rng.uniform(0.15, 0.95)
    g = np.stack([p * (1 - q), q * (1 - p), p * q, (1 - p) * (1 - q)], axis=-1)
    return Policy(g)


def transition_oracle(params: SystemParams, policy: Policy) -> np.ndarray:
    """Dense one-slot matrix by brute-force action x arrival enumeration."""
    la, lb = params.lambda_a, params.lambda_b
    events = [
        (1, 1, la * lb),
        (1, 0, la * (1.0 - lb)),
        (0, 1, (1.0 - la) * lb),
        (0, 0, (1.0 - la) * (1.0 - lb)),
    ]
    n_a, n_b = params.n_a, params.n_b
    n = (n_a + 1) * (n_b + 1)
    idx = lambda i, j: i * (n_b + 1) + j
    dense = np.zeros((n, n))
    for i in range(n_a + 1):
        for j in range(n_b + 1):
            for k in range(4):
                gk = float(policy.g[i, j, k])
                if gk == 0.0:
                    continue
                di, dj = _DEPART[k]
                ii, jj = i - di, j - dj
                assert ii >= 0 and jj >= 0, "action from an empty buffer"
                for da, db, fm in events:
                    ni, nj = ii + da, jj + db
                    assert ni <= n_a and nj <= n_b, "transition overflows a buffer"
                    dense[idx(i, j), idx(ni, nj)] += gk * fm
    return dense


def stationary_oracle(dense: np.ndarray) -> np.ndarray:
    """Stationary vector by least squares on the full stacked system."""
    n = dense.shape[0]
    system = np.vstack([dense.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return pi


def power_quadrature(th_a: float, th_b: float, alpha: float, beta: float) -> tuple[float, float]:
    """Expected powers by numeric integration over the joint Rayleigh law.

    Node A pays alpha/h_a when only its gain clears its threshold and
    beta/h_a when both do; the joint density factorizes, so each event is a
    product of one tail integral of exp(-h^2/2) (from the 1/h payment
    cancelling the density's h) and one plain Rayleigh tail probability.
    All pieces are integrated numerically, none taken from closed forms.
    """
    upper = 40.0  # exp(-800) is zero to double precision

    def tail_payment(t: float) -> float:
        if t >= upper:
            return 0.0
        val, _err = integrate.quad(lambda h: np.exp(-0.5 * h * h), t, upper, limit=200)
        return val

    def tail_prob(t: float) -> float:
        if t >= upper:
            return 0.0
        val, _err = integrate.quad(lambda h: h * np.exp(-0.5 * h * h), t, upper, limit=200)
        return val

    def below_prob(t: float) -> float:
        if t <= 0.0:
            return 0.0
        val, _err = integrate.quad(lambda h: h * np.exp(-0.5 * h * h), 0.0, min(t, upper), limit=200)
        return val

    power_a = alpha * tail_payment(th_a) * below_prob(th_b) + beta * tail_payment(th_a) * tail_prob(th_b)
    power_b = alpha * tail_payment(th_b) * below_prob(th_a) + beta * tail_payment(th_b) * tail_prob(th_a)
    return power_a, power_b
