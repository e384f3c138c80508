import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecrep.analytics import (
    REPLICA_GRID_CELLS,
    NetworkConditions,
    NoStableReplicaCount,
    arrival_rate_upper_bound,
    execution_delay_curve,
    expected_execution_delay,
    failure_probability,
    mean_arrival_rate,
    mean_inverse_candidates,
    min_replicas_for_reliability,
    near_optimal_replicas,
    optimal_replicas,
    poisson_support,
    round_half_up,
    table_conditions,
    theoretical_optimum_search,
)

# Frozen from a 40-digit mpmath evaluation of the same series (400 terms).
ORACLE_C_HAT_8 = 0.14683978916544506
ORACLE_C_HAT_5 = 0.25603269958160906
ORACLE_BOUND_K1 = 0.88103873499267039
ORACLE_PF_K2 = 4.5246635500395285e-4
ORACLE_RATE_EXACT_K3 = 3.2185552303867869
ORACLE_DELAY_EXACT_K3 = 0.051449324320235629
ORACLE_DELAY_BOUND_K3 = 0.052317377094959932
ORACLE_CURVE_2_QUARTER = [
    0.107432329, 0.06305552625, 0.04678387894, 0.03972922545,
    0.03650824311, 0.03527461082, 0.03513623117, 0.03553694717,
]


def _pmf(k: int, m: float) -> float:
    return math.exp(k * math.log(m) - m - math.lgamma(k + 1))


def _series(f, m: float, terms: int = 300) -> float:
    """Plain-Python Poisson expectation over k >= 1, independent of scipy."""
    return math.fsum(_pmf(k, m) * f(k) for k in range(1, terms))


def cond_for(gbt: float, gbs: float, **kw) -> NetworkConditions:
    return NetworkConditions(
        lambda0=kw.pop("lambda0", 2.0),
        mu_c=kw.pop("mu_c", 10.0),
        p_e=kw.pop("p_e", 0.02),
        gamma_t=gbt / 0.4,
        gamma_s=gbs / 0.4,
        R=0.2,
        **kw,
    )


class TestNetworkConditions:
    def test_window_means(self):
        c = NetworkConditions.from_density(2.0, 1 / 4)
        assert c.gamma_bar_t == pytest.approx(2.0)
        assert c.gamma_bar_s == pytest.approx(8.0)

    def test_ratio_zero_means_no_tavs(self):
        c = NetworkConditions.from_density(2.0, 0.0)
        assert c.gamma_t == 0 and c.gamma_s == pytest.approx(25.0)

    @pytest.mark.parametrize(
        "field, value",
        [("lambda0", 0.0), ("mu_c", -1.0), ("p_e", 1.0), ("p_e", -0.1), ("gamma_s", 0.0), ("R", 0.0), ("theta_f", 0.0)],
    )
    def test_rejects_out_of_range(self, field, value):
        kw = dict(lambda0=2.0, mu_c=10.0, p_e=0.02, gamma_t=5.0, gamma_s=20.0, R=0.2)
        kw[field] = value
        with pytest.raises(ValueError, match=field):
            NetworkConditions(**kw)

    def test_accepts_degenerate_edges(self):
        NetworkConditions(2.0, 10.0, 0.0, 5.0, 20.0, 0.2, theta_f=1.0)


class TestSeries:
    @pytest.mark.parametrize("g, expected", [(8.0, ORACLE_C_HAT_8), (5.0, ORACLE_C_HAT_5)])
    def test_exact_mean_inverse(self, g, expected):
        assert mean_inverse_candidates(g) == pytest.approx(expected, rel=1e-10)

    def test_approx_closed_form(self):
        assert mean_inverse_candidates(8.0, "approx") == pytest.approx(0.140625, abs=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            mean_inverse_candidates(0.0)
        with pytest.raises(ValueError):
            mean_inverse_candidates(3.0, "nope")

    @pytest.mark.parametrize("g", [0.5, 4.0, 8.0, 30.0])
    def test_support_mass(self, g):
        n = poisson_support(g)
        assert n[0] == 0
        assert 1 - sum(_pmf(int(k), g) for k in n[1:]) - math.exp(-g) < 1e-11

    def test_bound_at_k1(self):
        c = cond_for(2.0, 8.0)
        assert arrival_rate_upper_bound(c, 1) == pytest.approx(ORACLE_BOUND_K1, rel=1e-9)
        assert mean_arrival_rate(c, 1) == pytest.approx(ORACLE_BOUND_K1, rel=1e-9)

    def test_bound_approx_cross_check(self):
        c = cond_for(2.5, 7.5, lambda0=2.0)
        approx = (c.gamma_bar_t + 1) * c.lambda0 * 4 * mean_inverse_candidates(c.gamma_bar_s, "approx")
        assert approx == pytest.approx(4.231111, rel=1e-6)

    def test_exact_rate_against_oracle(self):
        c = NetworkConditions.from_density(2.0, 1 / 3)
        assert mean_arrival_rate(c, 3) == pytest.approx(ORACLE_RATE_EXACT_K3, rel=1e-9)

    @pytest.mark.parametrize("K", [1, 2, 5])
    def test_bound_linear_in_lambda0_and_k(self, K):
        a = cond_for(2.0, 8.0, lambda0=1.0)
        b = cond_for(2.0, 8.0, lambda0=3.0)
        assert arrival_rate_upper_bound(b, K) == pytest.approx(3 * arrival_rate_upper_bound(a, K))
        assert arrival_rate_upper_bound(a, K) == pytest.approx(K * arrival_rate_upper_bound(a, 1))

    @pytest.mark.parametrize("K", [0, -1, 1.5])
    def test_rejects_bad_k(self, K):
        with pytest.raises(ValueError):
            arrival_rate_upper_bound(cond_for(2.0, 8.0), K)


class TestExecutionDelay:
    def test_exact_and_bound_at_k3(self):
        c = NetworkConditions.from_density(2.0, 1 / 3)
        assert expected_execution_delay(c, 3) == pytest.approx(ORACLE_DELAY_EXACT_K3, rel=1e-9)
        assert expected_execution_delay(c, 3, "bound") == pytest.approx(ORACLE_DELAY_BOUND_K3, rel=1e-9)

    def test_curve_matches_oracle(self):
        curve = execution_delay_curve(NetworkConditions.from_density(2.0, 1 / 4), 8)
        np.testing.assert_allclose(curve, ORACLE_CURVE_2_QUARTER, rtol=1e-8)

    def test_unstable_is_infinite(self):
        c = NetworkConditions.from_density(4.0, 1.0)
        assert math.isinf(expected_execution_delay(c, 2))

    def test_k1_no_erasure_is_mm1_mean(self):
        c = cond_for(2.0, 8.0, p_e=0.0)
        mass = 1 - math.exp(-8.0)
        assert expected_execution_delay(c, 1) == pytest.approx(mass / (10.0 - ORACLE_BOUND_K1), rel=1e-9)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            expected_execution_delay(cond_for(2.0, 8.0), 1, "other")


class TestReplicaCounts:
    @pytest.mark.parametrize("lam, ratio, expected", [(2.0, 1 / 4, 5.925926), (4.0, 1.0, 0.868056), (2.0, 1 / 3, 4.726891)])
    def test_near_optimal(self, lam, ratio, expected):
        assert near_optimal_replicas(NetworkConditions.from_density(lam, ratio)) == pytest.approx(expected, abs=1e-6)

    def test_near_optimal_other_density(self):
        c = cond_for(4.0, 5.0, lambda0=2.0)
        assert near_optimal_replicas(c) == pytest.approx(10 / (2 * 2 * 5 * (1 / 5 + 1 / 25)), rel=1e-12)

    def test_failure_probability(self):
        assert failure_probability(cond_for(2.0, 8.0), 2) == pytest.approx(ORACLE_PF_K2, rel=1e-9)

    @pytest.mark.parametrize("theta, pe, expected", [(1e-3, 0.02, 2), (1e-4, 0.02, 3), (1.0, 0.02, 1), (0.02, 0.02, 1), (4e-4, 0.02, 2)])
    def test_min_replicas(self, theta, pe, expected):
        assert min_replicas_for_reliability(theta, pe) == expected

    @pytest.mark.parametrize("theta, pe", [(0.0, 0.1), (1.5, 0.1), (0.1, 0.0), (0.1, 1.0)])
    def test_min_replicas_rejects(self, theta, pe):
        with pytest.raises(ValueError):
            min_replicas_for_reliability(theta, pe)

    @pytest.mark.parametrize("x, n", [(0.5, 1), (1.5, 2), (2.5, 3), (2.49, 2), (0.0, 0), (-1.5, -2)])
    def test_round_half_up(self, x, n):
        assert round_half_up(x) == n

    def test_plan_rate_bound_drives_k(self):
        plan = optimal_replicas(NetworkConditions.from_density(2.0, 1 / 3))
        assert (plan.k_tilde_round, plan.k_min, plan.k_star) == (5, 1, 5)
        assert plan.stable

    def test_plan_reliability_floor(self):
        c = NetworkConditions.from_density(5.0, 1.0, theta_f=1e-4)
        plan = optimal_replicas(c)
        assert plan.k_tilde == pytest.approx(10 / 14.4, rel=1e-12)
        assert plan.k_star == 3
        assert not plan.stable

    def test_small_k_tilde_lifted_to_one(self):
        plan = optimal_replicas(NetworkConditions.from_density(20.0, 1.0))
        assert plan.k_tilde < 0.5 and plan.k_star == 1

    @pytest.mark.parametrize("lam, ratio, expected", [(2.0, 1 / 4, 7), (4.0, 1.0, 1), (2.0, 1 / 3, 5), (3.0, 1 / 7, 6)])
    def test_argmin(self, lam, ratio, expected):
        assert theoretical_optimum_search(table_conditions(lam, ratio), 8) == expected

    def test_no_stable_k(self):
        with pytest.raises(NoStableReplicaCount):
            theoretical_optimum_search(NetworkConditions.from_density(12.0, 1.0), 8)

    def test_table_grid_layout(self):
        assert len(REPLICA_GRID_CELLS) == 42
        assert len(set(REPLICA_GRID_CELLS)) == 33


densities = st.floats(min_value=0.5, max_value=30.0)


class TestInvariants:
    @settings(max_examples=1000, deadline=None)
    @given(g=st.floats(min_value=4.0, max_value=20.0))
    def test_approximation_within_ten_percent(self, g):
        exact = mean_inverse_candidates(g)
        assert abs(mean_inverse_candidates(g, "approx") - exact) <= 0.10 * exact

    @settings(max_examples=1000, deadline=None)
    @given(g=st.floats(min_value=0.05, max_value=60.0))
    def test_mean_inverse_against_plain_series(self, g):
        assert mean_inverse_candidates(g) == pytest.approx(_series(lambda k: 1 / k, g, 400), rel=1e-9, abs=1e-14)

    @settings(max_examples=1000, deadline=None)
    @given(gbs=densities, pe=st.floats(min_value=1e-4, max_value=0.5), K=st.integers(1, 10))
    def test_failure_lower_bound(self, gbs, pe, K):
        c = cond_for(2.0, gbs, p_e=pe)
        pf = failure_probability(c, K)
        assert pf >= (1 - math.exp(-gbs)) * pe**K * (1 - 1e-9)
        assert pf <= 1 - math.exp(-gbs) + 1e-12

    @settings(max_examples=1000, deadline=None)
    @given(gbt=st.floats(0.0, 10.0), gbs=densities, K=st.integers(1, 12))
    def test_exact_rate_below_bound(self, gbt, gbs, K):
        c = cond_for(gbt, gbs)
        exact = mean_arrival_rate(c, K)
        assert exact <= arrival_rate_upper_bound(c, K) * (1 + 1e-12)
        assert exact == pytest.approx(
            (gbt + 1) * 2.0 * _series(lambda k: min(K, k) / k, gbs, 400), rel=1e-8, abs=1e-13
        )

    @settings(max_examples=1000, deadline=None)
    @given(gbt=st.floats(0.0, 10.0), gbs=densities, K=st.integers(1, 10))
    def test_bound_delay_dominates_exact(self, gbt, gbs, K):
        c = cond_for(gbt, gbs)
        assert expected_execution_delay(c, K, "bound") >= expected_execution_delay(c, K) * (1 - 1e-12)

    @pytest.mark.parametrize("cell", sorted(set(REPLICA_GRID_CELLS)))
    def test_delay_curve_unimodal(self, cell):
        curve = execution_delay_curve(table_conditions(*cell), 16)
        finite = curve[np.isfinite(curve)]
        d = np.diff(finite)
        sign_changes = np.count_nonzero(np.diff(np.sign(d)) != 0)
        assert sign_changes <= 1
        if sign_changes:
            assert d[0] < 0 < d[-1]

    @settings(max_examples=1000, deadline=None)
    @given(lam=st.floats(0.5, 6.0), ratio=st.floats(0.05, 2.0), mu=st.floats(5.0, 20.0))
    def test_k_tilde_scaling(self, lam, ratio, mu):
        base = NetworkConditions.from_density(lam, ratio, mu_c=mu)
        doubled_mu = NetworkConditions.from_density(lam, ratio, mu_c=2 * mu)
        doubled_lam = NetworkConditions.from_density(2 * lam, ratio, mu_c=mu)
        k = near_optimal_replicas(base)
        assert near_optimal_replicas(doubled_mu) == pytest.approx(2 * k)
        assert near_optimal_replicas(doubled_lam) == pytest.approx(k / 2)
