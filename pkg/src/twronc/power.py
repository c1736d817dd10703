"""Fading thresholds and expected transmit power for a given policy.

A node sustains a fixed rate over a Rayleigh uplink by inverting the
channel: transmitting at gain h costs alpha/h (single transmission) or
beta/h (simultaneous lattice-coded transmission) with noise normalized to
one. Each node transmits only when its gain clears a per-state threshold,
chosen so that the threshold crossing probability reproduces the node's
marginal transmit probability under the policy. Averaging the inverted
gain over the Rayleigh tail gives closed-form per-state expected powers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc  # noqa: F401  (module surface, used below and by callers)

from .model import A_ALONE, B_ALONE, BOTH, Policy, StationaryDistribution, SystemParams

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


@dataclass(frozen=True)
class SnrTargets:
    """Linear SNR a transmission must hit to decode at rate ``rate_r``.

    beta exceeds alpha by the fixed lattice-coding penalty of one half.
    """

    alpha: float
    beta: float
    rate_r: float


def snr_targets(rate_r: float) -> SnrTargets:
    if rate_r < 0:
        raise ValueError(f"rate must be >= 0, got {rate_r}")
    base = 2.0 ** (2.0 * rate_r)
    return SnrTargets(alpha=base - 1.0, beta=base - 0.5, rate_r=rate_r)


def gaussian_tail_integral(t) -> np.ndarray | float:
    """Integral of exp(-h^2/2) from t to infinity, i.e. sqrt(pi/2)*erfc(t/sqrt 2).

    This is the expected reciprocal-gain factor of a unit-scale Rayleigh
    channel restricted to gains above t.
    """
    return SQRT_HALF_PI * erfc(np.asarray(t) / math.sqrt(2.0))


def threshold_from_marginal(p, scale: float = 1.0) -> np.ndarray | float:
    """Gain threshold whose Rayleigh tail probability equals p.

    p = 0 maps to +inf (never transmit) and p = 1 to 0 (always transmit).
    """
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        t = scale * np.sqrt(-2.0 * np.log(p))
    return np.abs(np.where(p == 0.0, np.inf, t))


@dataclass(frozen=True)
class ThresholdTable:
    """Per-state thresholds and the marginals they encode.

    p and q are the per-slot transmit probabilities of A and B (single plus
    simultaneous). The product map from two independent threshold crossings
    can only represent policies whose simultaneous probability factorizes as
    p*q; ``residual`` records |g3 - p*q| per state so the gap is visible
    rather than silently absorbed.
    """

    h_th_a: np.ndarray
    h_th_b: np.ndarray
    p: np.ndarray
    q: np.ndarray
    residual: np.ndarray
    pi: np.ndarray
    scale_a: float
    scale_b: float

    @property
    def max_residual(self) -> float:
        reachable = self.pi > 0
        if not reachable.any():
            return 0.0
        return float(self.residual[reachable].max())


def thresholds_from_policy(policy: Policy, pi: StationaryDistribution,
                           scale_a: float = 1.0, scale_b: float = 1.0) -> ThresholdTable:
    """Invert each node's marginal transmit probability into a gain threshold."""
    g = policy.g
    p = np.clip(g[..., A_ALONE] + g[..., BOTH], 0.0, 1.0)
    q = np.clip(g[..., B_ALONE] + g[..., BOTH], 0.0, 1.0)
    residual = np.abs(g[..., BOTH] - p * q)
    return ThresholdTable(
        h_th_a=threshold_from_marginal(p, scale_a),
        h_th_b=threshold_from_marginal(q, scale_b),
        p=p,
        q=q,
        residual=residual,
        pi=np.array(pi.pi),
        scale_a=scale_a,
        scale_b=scale_b,
    )


def policy_from_thresholds(table: ThresholdTable) -> Policy:
    """Action probabilities induced by two independent threshold crossings.

    Empty-queue guards in the simulator zero the impossible crossings, so
    this is exactly the chain a channel-driven system runs; it coincides
    with the original policy wherever the factorization residual vanishes.
    """
    p, q = table.p, table.q
    g = np.stack([p * (1.0 - q), q * (1.0 - p), p * q, (1.0 - p) * (1.0 - q)], axis=-1)
    return Policy(g)


def state_power(thresholds: ThresholdTable, targets: SnrTargets) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form expected transmit power per state and node.

    A node pays alpha/h when it alone clears its threshold and beta/h when
    both do; below threshold it is silent. The Rayleigh expectation of 1/h
    above a threshold t is the Gaussian tail integral at t (scaled), which
    is finite even at t = 0.
    """
    tail_a = gaussian_tail_integral(thresholds.h_th_a / thresholds.scale_a) / thresholds.scale_a
    tail_b = gaussian_tail_integral(thresholds.h_th_b / thresholds.scale_b) / thresholds.scale_b
    alpha, beta = targets.alpha, targets.beta
    power_a = tail_a * (alpha * (1.0 - thresholds.q) + beta * thresholds.q)
    power_b = tail_b * (alpha * (1.0 - thresholds.p) + beta * thresholds.p)
    return power_a, power_b


def average_power(pi: np.ndarray | StationaryDistribution, power_a: np.ndarray,
                  power_b: np.ndarray) -> tuple[float, float]:
    """Occupancy-weighted average of the per-state expected powers."""
    weights = pi.pi if isinstance(pi, StationaryDistribution) else np.asarray(pi)
    if weights.shape != power_a.shape:
        raise ValueError(f"weight shape {weights.shape} does not match powers {power_a.shape}")
    return float(np.sum(weights * power_a)), float(np.sum(weights * power_b))


@dataclass(frozen=True)
class PowerProfile:
    """Thresholds, per-state powers, and their occupancy-weighted averages."""

    thresholds: ThresholdTable
    power_a: np.ndarray
    power_b: np.ndarray
    avg_power_a: float
    avg_power_b: float


def power_profile(policy: Policy, pi: StationaryDistribution, params: SystemParams) -> PowerProfile:
    """Bundle thresholds and powers for a policy under its own occupancy."""
    targets = snr_targets(params.rate_r)
    table = thresholds_from_policy(policy, pi, params.scale_a, params.scale_b)
    power_a, power_b = state_power(table, targets)
    avg_a, avg_b = average_power(pi, power_a, power_b)
    return PowerProfile(table, power_a, power_b, avg_a, avg_b)


def threshold_driven_average(policy: Policy, pi: StationaryDistribution,
                             params: SystemParams) -> tuple[float, float, ThresholdTable]:
    """Average powers under the chain the thresholds actually drive.

    When the policy's simultaneous probability factorizes, the induced chain
    coincides with the policy's own and this equals the plain occupancy
    weighting; otherwise it is the average a channel-driven system realizes.
    """
    from .model import build_transition_matrix, stationary_distribution

    table = thresholds_from_policy(policy, pi, params.scale_a, params.scale_b)
    induced = policy_from_thresholds(table)
    chain = build_transition_matrix(params, induced)
    pi_induced = stationary_distribution(chain)
    power_a, power_b = state_power(table, snr_targets(params.rate_r))
    avg_a, avg_b = average_power(pi_induced, power_a, power_b)
    return avg_a, avg_b, table
