"""Slot-based Monte Carlo simulation of the relay uplink schemes.

Three schemes share one slot discipline (action from the start-of-slot
state, departures, then arrivals) and one delay convention (a packet
arriving in slot t and transmitted in slot t' has sojourn t' - t, so the
minimum is one slot under half duplex):

* ``optimal-policy`` runs a per-state randomized policy, either by sampling
  its action probabilities directly or by drawing channel gains and
  transmitting above per-state thresholds (channel-driven).
* ``random-ma`` transmits every arrival immediately; two finite relay-side
  queues hold packets waiting for a combining partner, and a queue under
  overflow pressure broadcasts its head-of-line packet uncombined.
* ``combined-ma`` buffers at the sources and transmits only combined pairs,
  falling back to a single transmission only under full-buffer compulsion.

Every transmission is priced by channel inversion at the slot's drawn gain,
capped at a configurable ceiling whose clipped mass is reported. Randomness
comes from counter-based Philox streams keyed by (seed, purpose), so
schemes sharing a seed see identical arrival and gain sample paths.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import (
    A_ALONE,
    B_ALONE,
    BOTH,
    IDLE,
    Policy,
    PolicyError,
    SystemParams,
    validate_policy,
)
from .power import ThresholdTable, snr_targets

SCHEMES = ("optimal-policy", "random-ma", "combined-ma")
MODES = ("probability-driven", "channel-driven")

_PURPOSES = {"arrivals-a": 0, "arrivals-b": 1, "action": 2, "channel-a": 3, "channel-b": 4}


class SimulationError(RuntimeError):
    """A run violated losslessness or conservation; indicates a bug."""


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent counter-based generator for one (run, purpose) pair."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_PURPOSES[purpose],))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SimConfig:
    params: SystemParams
    scheme: str = "optimal-policy"
    mode: str = "probability-driven"
    horizon: int = 1_000_000
    warmup: int = 10_000
    seed: int = 1
    power_cap: float = 1e4
    relay_buffer: int = 15

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "channel-driven" and self.scheme != "optimal-policy":
            raise ValueError("channel-driven mode requires the optimal-policy scheme")
        if not 0 <= self.warmup < self.horizon:
            raise ValueError(f"need horizon > warmup >= 0, got ({self.horizon}, {self.warmup})")
        if self.power_cap <= 0:
            raise ValueError(f"power_cap must be positive, got {self.power_cap}")
        if self.relay_buffer < 1:
            raise ValueError(f"relay_buffer must be >= 1, got {self.relay_buffer}")


@dataclass(frozen=True)
class SimReport:
    """Empirical counterparts of the analytic rates, delay, and powers.

    Rates and delays cover slots after warmup; the packet and final-queue
    counters cover the whole run so that conservation is exact. For
    random-ma the queues (and visit grid) are the two relay-side queues.
    """

    scheme: str
    mode: str
    seed: int
    horizon: int
    warmup: int
    mu1_hat: float
    mu1_se: float
    mu2_hat: float
    mu2_se: float
    mu_tot_hat: float
    mean_delay_hat: float
    mean_delay_se: float
    mean_queue_hat: float
    visit_freq: np.ndarray
    avg_power_a_hat: float
    avg_power_a_se: float
    avg_power_b_hat: float
    avg_power_b_se: float
    clipped_fraction: float
    packets_in_a: int
    packets_in_b: int
    packets_out_a: int
    packets_out_b: int
    final_queue_a: int
    final_queue_b: int


def _se(values: list[float]) -> float:
    if len(values) < 2:
        return math.nan
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


class _Stats:
    """Window statistics with batch-means standard errors."""

    def __init__(self, horizon: int, warmup: int, grid_shape: tuple[int, int]):
        self.warmup = warmup
        self.nmeas = horizon - warmup
        self.nb = min(100, self.nmeas)
        self.visits = np.zeros(grid_shape, dtype=np.int64)
        z = lambda: [0.0] * self.nb
        self.b_size = z()
        self.b_idle = z()
        self.b_served = z()
        self.b_delay_sum = z()
        self.b_delay_cnt = z()
        self.b_pow_a = z()
        self.b_pow_b = z()
        self.clipped = 0
        self.priced = 0

    def batch(self, t: int) -> int:
        return (t - self.warmup) * self.nb // self.nmeas

    def finalize(self, config: SimConfig, counters: dict) -> SimReport:
        nmeas = self.nmeas
        sizes = np.array(self.b_size)
        served_rates = np.array(self.b_served) / sizes
        idle_rates = np.array(self.b_idle) / sizes
        pow_a_rates = np.array(self.b_pow_a) / sizes
        pow_b_rates = np.array(self.b_pow_b) / sizes
        mu1 = float(sum(self.b_served) / nmeas)
        mu2 = float(sum(self.b_idle) / nmeas)
        delay_cnt = sum(self.b_delay_cnt)
        delay_means = [s / c for s, c in zip(self.b_delay_sum, self.b_delay_cnt) if c > 0]
        mean_delay = sum(self.b_delay_sum) / delay_cnt if delay_cnt else math.nan
        occupancy = np.add.outer(np.arange(self.visits.shape[0]), np.arange(self.visits.shape[1]))
        mean_queue = float((self.visits * occupancy).sum() / nmeas)
        return SimReport(
            scheme=config.scheme,
            mode=config.mode,
            seed=config.seed,
            horizon=config.horizon,
            warmup=config.warmup,
            mu1_hat=mu1,
            mu1_se=_se(list(served_rates)),
            mu2_hat=mu2,
            mu2_se=_se(list(idle_rates)),
            mu_tot_hat=mu1 + mu2,
            mean_delay_hat=float(mean_delay),
            mean_delay_se=_se(delay_means),
            mean_queue_hat=mean_queue,
            visit_freq=self.visits / nmeas,
            avg_power_a_hat=float(sum(self.b_pow_a) / nmeas),
            avg_power_a_se=_se(list(pow_a_rates)),
            avg_power_b_hat=float(sum(self.b_pow_b) / nmeas),
            avg_power_b_se=_se(list(pow_b_rates)),
            clipped_fraction=self.clipped / self.priced if self.priced else 0.0,
            **counters,
        )


def transmission_power(snr_target: float, gain: float, cap: float) -> tuple[float, bool]:
    """Channel-inversion power for one transmission, capped at ``cap``."""
    p = snr_target / gain
    if p > cap:
        return cap, True
    return p, False


def _draw_common(config: SimConfig):
    """Arrival and gain sample paths shared by all schemes under one seed."""
    p = config.params
    n = config.horizon
    arr_a = (stream(config.seed, "arrivals-a").random(n) < p.lambda_a).tolist()
    arr_b = (stream(config.seed, "arrivals-b").random(n) < p.lambda_b).tolist()
    gain_a = stream(config.seed, "channel-a").rayleigh(p.scale_a, n).tolist()
    gain_b = stream(config.seed, "channel-b").rayleigh(p.scale_b, n).tolist()
    return arr_a, arr_b, gain_a, gain_b


def simulate(config: SimConfig, policy: Policy | None = None,
             thresholds: ThresholdTable | None = None) -> SimReport:
    """Run one seed of the configured scheme and return its report."""
    if config.scheme == "random-ma":
        return simulate_random_ma(config)
    if config.scheme == "combined-ma":
        return simulate_combined_ma(config)
    return _simulate_policy(config, policy, thresholds)


def _simulate_policy(config: SimConfig, policy: Policy | None,
                     thresholds: ThresholdTable | None) -> SimReport:
    params = config.params
    n_a, n_b = params.n_a, params.n_b
    channel = config.mode == "channel-driven"
    if channel:
        if thresholds is None:
            raise ValueError("channel-driven mode requires a threshold table")
        th_a = np.array(thresholds.h_th_a)
        th_b = np.array(thresholds.h_th_b)
        th_a[n_a, :] = 0.0  # a full buffer transmits regardless of the gain
        th_b[:, n_b] = 0.0
        th_a_l = th_a.tolist()
        th_b_l = th_b.tolist()
    else:
        if policy is None:
            raise ValueError("probability-driven mode requires a policy")
        report = validate_policy(policy, params)
        if not report.ok:
            raise PolicyError(report.summary())
        cum = np.cumsum(policy.g, axis=2)[..., :3].tolist()

    targets = snr_targets(params.rate_r)
    alpha, beta = targets.alpha, targets.beta
    cap = config.power_cap
    arr_a, arr_b, gain_a, gain_b = _draw_common(config)
    if not channel:
        u_action = stream(config.seed, "action").random(config.horizon).tolist()

    stats = _Stats(config.horizon, config.warmup, (n_a + 1, n_b + 1))
    warmup = config.warmup
    queue_a: deque[int] = deque()
    queue_b: deque[int] = deque()
    in_a = in_b = out_a = out_b = 0

    for t in range(config.horizon):
        i, j = len(queue_a), len(queue_b)
        measuring = t >= warmup
        if measuring:
            stats.visits[i, j] += 1
            b = stats.batch(t)
            stats.b_size[b] += 1
        ga, gb = gain_a[t], gain_b[t]
        if channel:
            tx_a = i > 0 and ga >= th_a_l[i][j]
            tx_b = j > 0 and gb >= th_b_l[i][j]
            k = (BOTH if tx_b else A_ALONE) if tx_a else (B_ALONE if tx_b else IDLE)
        else:
            r = u_action[t]
            c = cum[i][j]
            k = A_ALONE if r < c[0] else B_ALONE if r < c[1] else BOTH if r < c[2] else IDLE

        if k == IDLE:
            if measuring:
                stats.b_idle[b] += 1
        else:
            snr = beta if k == BOTH else alpha
            if k != B_ALONE:
                t0 = queue_a.popleft()
                out_a += 1
                pw, clip = transmission_power(snr, ga, cap)
                if measuring:
                    stats.b_served[b] += 1
                    stats.b_delay_sum[b] += t - t0
                    stats.b_delay_cnt[b] += 1
                    stats.b_pow_a[b] += pw
                    stats.priced += 1
                    stats.clipped += clip
            if k != A_ALONE:
                t0 = queue_b.popleft()
                out_b += 1
                pw, clip = transmission_power(snr, gb, cap)
                if measuring:
                    stats.b_served[b] += 1
                    stats.b_delay_sum[b] += t - t0
                    stats.b_delay_cnt[b] += 1
                    stats.b_pow_b[b] += pw
                    stats.priced += 1
                    stats.clipped += clip

        if arr_a[t]:
            queue_a.append(t)
            in_a += 1
            if len(queue_a) > n_a:
                raise SimulationError(f"buffer A overflow at slot {t}; losslessness violated")
        if arr_b[t]:
            queue_b.append(t)
            in_b += 1
            if len(queue_b) > n_b:
                raise SimulationError(f"buffer B overflow at slot {t}; losslessness violated")

    if in_a - out_a != len(queue_a) or in_b - out_b != len(queue_b):
        raise SimulationError("packet conservation violated")
    return stats.finalize(config, dict(
        packets_in_a=in_a, packets_in_b=in_b, packets_out_a=out_a, packets_out_b=out_b,
        final_queue_a=len(queue_a), final_queue_b=len(queue_b),
    ))


def simulate_random_ma(config: SimConfig) -> SimReport:
    """Transmit-on-arrival network coding with two relay-side queues.

    A slot's uplink is busy iff at least one source has an arrival; both
    arrivals share the slot via simultaneous lattice-coded access. The relay
    broadcasts a combined pair whenever both its queues are backlogged, and
    a queue about to overflow pushes its head-of-line packet out uncombined
    in the same slot, keeping the scheme lossless.
    """
    params = config.params
    cap = config.power_cap
    targets = snr_targets(params.rate_r)
    alpha, beta = targets.alpha, targets.beta
    r_cap = config.relay_buffer
    arr_a, arr_b, gain_a, gain_b = _draw_common(config)

    stats = _Stats(config.horizon, config.warmup, (r_cap + 1, r_cap + 1))
    warmup = config.warmup
    relay_ab: deque[int] = deque()
    relay_ba: deque[int] = deque()
    in_a = in_b = out_a = out_b = 0

    for t in range(config.horizon):
        u, v = len(relay_ab), len(relay_ba)
        measuring = t >= warmup
        if measuring:
            stats.visits[u, v] += 1
            b = stats.batch(t)
            stats.b_size[b] += 1
        if u and v:  # combined broadcast
            t0 = relay_ab.popleft()
            t1 = relay_ba.popleft()
            out_a += 1
            out_b += 1
            if measuring:
                stats.b_delay_sum[b] += (t - t0) + (t - t1)
                stats.b_delay_cnt[b] += 2
        a, bb = arr_a[t], arr_b[t]
        if not (a or bb):
            if measuring:
                stats.b_idle[b] += 1
        snr = beta if (a and bb) else alpha
        if a:
            in_a += 1
            pw, clip = transmission_power(snr, gain_a[t], cap)
            if measuring:
                stats.b_served[b] += 1
                stats.b_pow_a[b] += pw
                stats.priced += 1
                stats.clipped += clip
            if len(relay_ab) == r_cap:  # overflow pressure: force the oldest out
                t0 = relay_ab.popleft()
                out_a += 1
                if measuring:
                    stats.b_delay_sum[b] += t - t0
                    stats.b_delay_cnt[b] += 1
            relay_ab.append(t)
        if bb:
            in_b += 1
            pw, clip = transmission_power(snr, gain_b[t], cap)
            if measuring:
                stats.b_served[b] += 1
                stats.b_pow_b[b] += pw
                stats.priced += 1
                stats.clipped += clip
            if len(relay_ba) == r_cap:
                t1 = relay_ba.popleft()
                out_b += 1
                if measuring:
                    stats.b_delay_sum[b] += t - t1
                    stats.b_delay_cnt[b] += 1
            relay_ba.append(t)

    if in_a - out_a != len(relay_ab) or in_b - out_b != len(relay_ba):
        raise SimulationError("packet conservation violated")
    return stats.finalize(config, dict(
        packets_in_a=in_a, packets_in_b=in_b, packets_out_a=out_a, packets_out_b=out_b,
        final_queue_a=len(relay_ab), final_queue_b=len(relay_ba),
    ))


def simulate_combined_ma(config: SimConfig) -> SimReport:
    """Source-buffered conventional coding: wait for a combining partner,
    transmit a single only when a full buffer forces it."""
    params = config.params
    n_a, n_b = params.n_a, params.n_b
    cap = config.power_cap
    targets = snr_targets(params.rate_r)
    alpha, beta = targets.alpha, targets.beta
    arr_a, arr_b, gain_a, gain_b = _draw_common(config)

    stats = _Stats(config.horizon, config.warmup, (n_a + 1, n_b + 1))
    warmup = config.warmup
    queue_a: deque[int] = deque()
    queue_b: deque[int] = deque()
    in_a = in_b = out_a = out_b = 0

    for t in range(config.horizon):
        i, j = len(queue_a), len(queue_b)
        measuring = t >= warmup
        if measuring:
            stats.visits[i, j] += 1
            b = stats.batch(t)
            stats.b_size[b] += 1
        if i and j:
            k = BOTH
        elif i:
            k = A_ALONE if i == n_a else IDLE
        elif j:
            k = B_ALONE if j == n_b else IDLE
        else:
            k = IDLE

        if k == IDLE:
            if measuring:
                stats.b_idle[b] += 1
        else:
            snr = beta if k == BOTH else alpha
            if k != B_ALONE:
                t0 = queue_a.popleft()
                out_a += 1
                pw, clip = transmission_power(snr, gain_a[t], cap)
                if measuring:
                    stats.b_served[b] += 1
                    stats.b_delay_sum[b] += t - t0
                    stats.b_delay_cnt[b] += 1
                    stats.b_pow_a[b] += pw
                    stats.priced += 1
                    stats.clipped += clip
            if k != A_ALONE:
                t0 = queue_b.popleft()
                out_b += 1
                pw, clip = transmission_power(snr, gain_b[t], cap)
                if measuring:
                    stats.b_served[b] += 1
                    stats.b_delay_sum[b] += t - t0
                    stats.b_delay_cnt[b] += 1
                    stats.b_pow_b[b] += pw
                    stats.priced += 1
                    stats.clipped += clip

        if arr_a[t]:
            queue_a.append(t)
            in_a += 1
            if len(queue_a) > n_a:
                raise SimulationError(f"buffer A overflow at slot {t}; losslessness violated")
        if arr_b[t]:
            queue_b.append(t)
            in_b += 1
            if len(queue_b) > n_b:
                raise SimulationError(f"buffer B overflow at slot {t}; losslessness violated")

    if in_a - out_a != len(queue_a) or in_b - out_b != len(queue_b):
        raise SimulationError("packet conservation violated")
    return stats.finalize(config, dict(
        packets_in_a=in_a, packets_in_b=in_b, packets_out_a=out_a, packets_out_b=out_b,
        final_queue_a=len(queue_a), final_queue_b=len(queue_b),
    ))
