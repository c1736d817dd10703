"""Fading thresholds, the erfc surface, and the expected-power closed forms."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twronc.model import (
    Policy,
    StationaryDistribution,
    SystemParams,
    build_transition_matrix,
    drain_policy,
    stationary_distribution,
)
from twronc.power import (
    average_power,
    erfc,
    policy_from_thresholds,
    power_profile,
    snr_targets,
    state_power,
    threshold_driven_average,
    threshold_from_marginal,
    thresholds_from_policy,
)

from helpers import power_quadrature, random_params

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


def uniform_pi(n_a, n_b):
    n = (n_a + 1) * (n_b + 1)
    return StationaryDistribution(np.full((n_a + 1, n_b + 1), 1.0 / n),
                                  np.ones((n_a + 1, n_b + 1), dtype=bool))


class TestSnrTargets:
    @pytest.mark.parametrize("r,alpha,beta", [(1.0, 3.0, 3.5), (0.0, 0.0, 0.5), (2.0, 15.0, 15.5)])
    def test_reference_rates(self, r, alpha, beta):
        t = snr_targets(r)
        assert t.alpha == alpha
        assert t.beta == beta

    @given(r=st.floats(min_value=0.0, max_value=6.0, allow_nan=False))
    def test_simultaneous_penalty_is_half(self, r):
        t = snr_targets(r)
        assert t.beta - t.alpha == pytest.approx(0.5, abs=1e-12)
        assert t.beta > t.alpha >= 0.0

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            snr_targets(-0.5)


class TestErfc:
    def test_at_zero(self):
        assert erfc(0.0) == 1.0

    def test_against_high_precision_oracle(self):
        mpmath.mp.dps = 40
        for x in np.linspace(0.0, 8.0, 161):
            assert abs(erfc(x) - float(mpmath.erfc(x))) <= 1e-12

    @given(x=st.floats(min_value=-6.0, max_value=6.0, allow_nan=False))
    def test_complement_identity(self, x):
        from scipy.special import erf
        assert erfc(x) + erf(x) == pytest.approx(1.0, abs=1e-14)

    def test_reflection_and_monotonicity(self):
        xs = np.linspace(-4.0, 4.0, 81)
        vals = erfc(xs)
        assert np.all(np.diff(vals) < 0)
        assert np.allclose(erfc(-xs), 2.0 - vals, atol=1e-14)


class TestThresholds:
    def test_uniform_policy_row(self):
        params = SystemParams(0.5, 0.5, n_a=2, n_b=2)
        g = drain_policy(params).g.copy()
        g[1, 1] = [0.25, 0.25, 0.25, 0.25]
        table = thresholds_from_policy(Policy(g), uniform_pi(2, 2))
        assert table.p[1, 1] == pytest.approx(0.5, abs=1e-15)
        assert table.q[1, 1] == pytest.approx(0.5, abs=1e-15)
        assert table.h_th_a[1, 1] == pytest.approx(math.sqrt(2.0 * math.log(2.0)), abs=1e-12)
        assert table.residual[1, 1] == 0.0

    def test_forced_transmission_row(self):
        params = SystemParams(0.5, 0.5, n_a=2, n_b=2)
        table = thresholds_from_policy(drain_policy(params), uniform_pi(2, 2))
        assert table.p[2, 1] == 1.0 and table.q[2, 1] == 1.0
        assert table.h_th_a[2, 1] == 0.0 and table.h_th_b[2, 1] == 0.0
        assert table.residual[2, 1] == 0.0

    def test_non_factorizable_row_reports_residual(self):
        params = SystemParams(0.5, 0.5, n_a=2, n_b=2)
        g = drain_policy(params).g.copy()
        g[1, 1] = [0.5, 0.5, 0.0, 0.0]
        table = thresholds_from_policy(Policy(g), uniform_pi(2, 2))
        assert table.residual[1, 1] == pytest.approx(0.25, abs=1e-15)
        assert table.max_residual == pytest.approx(0.25, abs=1e-15)

    @given(p=st.floats(min_value=1e-12, max_value=1.0, allow_nan=False))
    def test_marginal_round_trip(self, p):
        t = threshold_from_marginal(p)
        assert math.exp(-0.5 * float(t) ** 2) == pytest.approx(p, abs=1e-12)

    def test_zero_marginal_maps_to_infinity(self):
        assert threshold_from_marginal(0.0) == math.inf
        assert threshold_from_marginal(1.0) == 0.0

    def test_scale_rescales_threshold(self):
        assert threshold_from_marginal(0.5, scale=2.0) == pytest.approx(
            2.0 * threshold_from_marginal(0.5), abs=1e-14)

    def test_factorizable_policies_round_trip(self):
        rng = np.random.default_rng(3)
        params = SystemParams(0.5, 0.5, n_a=3, n_b=3)
        p = np.zeros((4, 4))
        q = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                p[i, j] = 0.0 if i == 0 else 1.0 if i == 3 else rng.uniform(0.1, 0.9)
                q[i, j] = 0.0 if j == 0 else 1.0 if j == 3 else rng.uniform(0.1, 0.9)
        base = thresholds_from_policy(drain_policy(params), uniform_pi(3, 3))
        table = type(base)(
            h_th_a=threshold_from_marginal(p), h_th_b=threshold_from_marginal(q),
            p=p, q=q, residual=np.zeros((4, 4)), pi=uniform_pi(3, 3).pi,
            scale_a=1.0, scale_b=1.0)
        policy = policy_from_thresholds(table)
        recovered = thresholds_from_policy(policy, uniform_pi(3, 3))
        finite = np.isfinite(table.h_th_a)
        assert np.abs(recovered.h_th_a[finite] - table.h_th_a[finite]).max() <= 1e-10
        assert recovered.max_residual <= 1e-12


class TestStatePower:
    def test_never_transmit_costs_nothing(self):
        params = SystemParams(0.5, 0.5, n_a=1, n_b=1)
        g = np.zeros((2, 2, 4))
        g[..., 3] = 1.0
        g[1, 0] = [1, 0, 0, 0]
        g[0, 1] = [0, 1, 0, 0]
        g[1, 1] = [0, 0, 1, 0]
        table = thresholds_from_policy(Policy(g), uniform_pi(1, 1))
        power_a, power_b = state_power(table, snr_targets(1.0))
        assert power_a[0, 0] == 0.0 and power_b[0, 0] == 0.0

    def test_single_always_on_node(self):
        # A transmits every slot alone, B never: expected power is
        # alpha * integral of exp(-h^2/2) over all gains
        base = thresholds_from_policy(
            drain_policy(SystemParams(0.5, 0.5, n_a=1, n_b=1)), uniform_pi(1, 1))
        table = type(base)(
            h_th_a=np.array([[0.0]]), h_th_b=np.array([[math.inf]]),
            p=np.array([[1.0]]), q=np.array([[0.0]]),
            residual=np.zeros((1, 1)), pi=np.array([[1.0]]), scale_a=1.0, scale_b=1.0)
        power_a, power_b = state_power(table, snr_targets(1.0))
        oracle_a, oracle_b = power_quadrature(0.0, math.inf, 3.0, 3.5)
        assert power_a[0, 0] == pytest.approx(3.0 * SQRT_HALF_PI, abs=1e-12)
        assert power_a[0, 0] == pytest.approx(oracle_a, rel=1e-9)
        assert power_b[0, 0] == 0.0 and oracle_b == 0.0

    def test_matches_quadrature_on_random_thresholds(self):
        rng = np.random.default_rng(29)
        targets = snr_targets(1.0)
        base = thresholds_from_policy(
            drain_policy(SystemParams(0.5, 0.5, n_a=1, n_b=1)), uniform_pi(1, 1))
        for _ in range(100):
            th_a = float(rng.uniform(0.0, 3.0))
            th_b = float(rng.uniform(0.0, 3.0))
            table = type(base)(
                h_th_a=np.array([[th_a]]), h_th_b=np.array([[th_b]]),
                p=np.array([[math.exp(-0.5 * th_a ** 2)]]),
                q=np.array([[math.exp(-0.5 * th_b ** 2)]]),
                residual=np.zeros((1, 1)), pi=np.array([[1.0]]), scale_a=1.0, scale_b=1.0)
            power_a, power_b = state_power(table, targets)
            oracle_a, oracle_b = power_quadrature(th_a, th_b, targets.alpha, targets.beta)
            assert power_a[0, 0] == pytest.approx(oracle_a, rel=1e-6)
            assert power_b[0, 0] == pytest.approx(oracle_b, rel=1e-6)

    def test_monotone_in_own_threshold(self):
        targets = snr_targets(1.0)
        base = thresholds_from_policy(
            drain_policy(SystemParams(0.5, 0.5, n_a=1, n_b=1)), uniform_pi(1, 1))
        th_b = 1.0
        previous = math.inf
        for th_a in np.linspace(0.0, 5.0, 26):
            table = type(base)(
                h_th_a=np.array([[float(th_a)]]), h_th_b=np.array([[th_b]]),
                p=np.array([[math.exp(-0.5 * th_a ** 2)]]),
                q=np.array([[math.exp(-0.5 * th_b ** 2)]]),
                residual=np.zeros((1, 1)), pi=np.array([[1.0]]), scale_a=1.0, scale_b=1.0)
            value = state_power(table, targets)[0][0, 0]
            assert value <= previous + 1e-12
            previous = value


class TestAveragePower:
    def test_degenerate_distribution(self):
        power_a = np.array([[1.0, 5.0], [2.0, 7.0]])
        pi = np.zeros((2, 2))
        pi[1, 1] = 1.0
        avg_a, avg_b = average_power(pi, power_a, power_a)
        assert avg_a == 7.0 and avg_b == 7.0

    def test_idle_system_consumes_nothing(self):
        params = SystemParams(0.0, 0.0, n_a=2, n_b=2)
        policy = drain_policy(params)
        pi = stationary_distribution(build_transition_matrix(params, policy))
        profile = power_profile(policy, pi, params)
        assert profile.avg_power_a == 0.0
        assert profile.avg_power_b == 0.0

    def test_threshold_driven_average_matches_plain_when_factorizable(self):
        rng = np.random.default_rng(41)
        params = random_params(rng, n_max=3)
        policy = drain_policy(params)  # deterministic, so exactly factorizable
        pi = stationary_distribution(build_transition_matrix(params, policy))
        profile = power_profile(policy, pi, params)
        avg_a, avg_b, table = threshold_driven_average(policy, pi, params)
        assert table.max_residual == 0.0
        assert avg_a == pytest.approx(profile.avg_power_a, abs=1e-12)
        assert avg_b == pytest.approx(profile.avg_power_b, abs=1e-12)
