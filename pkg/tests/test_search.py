import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import firm_profit_oracle, search_payoff_mc
from supplyshock.model import DomainError, Firm, ModelParams, solve_firm
from supplyshock.search import (
    SearchConfig,
    converge_supplier_set,
    expected_payoff_from_index,
    expected_search_payoff,
    firm_stream,
    search_decision,
    search_fixed_cost,
    should_search,
    variety_index,
)

PARAMS = ModelParams()
Z_MEDIAN = float(np.exp(PARAMS.mu_z))
P_MID = (PARAMS.p_lo + PARAMS.p_hi) / 2

# frozen from search_payoff_mc with 10^6 draws (standard error 1.83e-5)
GOLDEN_MC_MEDIAN_MID = 0.01200524131206505


class TestFixedCost:
    def test_first_search_free(self):
        assert search_fixed_cost(1, 0.0046, 0.6079) == 0.0

    def test_second(self):
        assert search_fixed_cost(2, 0.0046, 0.6079) == pytest.approx(0.0046, rel=1e-15)

    def test_third(self):
        expected = float(np.exp(np.log(0.0046) + 0.6079 * np.log(2.0)))
        assert search_fixed_cost(3, 0.0046, 0.6079) == pytest.approx(expected, rel=1e-14)
        assert search_fixed_cost(3, 0.0046, 0.6079) == pytest.approx(0.0070106, abs=5e-8)

    def test_vectorized(self):
        out = search_fixed_cost(np.array([1, 2, 5]), 2.0, 1.0)
        np.testing.assert_allclose(out, [0.0, 2.0, 8.0])

    @pytest.mark.parametrize("K", [0, -3])
    def test_domain(self, K):
        with pytest.raises(DomainError):
            search_fixed_cost(K, 1.0, 1.0)


class TestExpectedPayoff:
    def test_monte_carlo_golden(self):
        firm = Firm(0, Z_MEDIAN, [P_MID])
        value = expected_search_payoff(firm, PARAMS)
        assert value == pytest.approx(GOLDEN_MC_MEDIAN_MID, rel=5e-3)

    @pytest.mark.slow
    def test_monte_carlo_with_exporter(self):
        # a productive firm sits near the export kink so both quadrature pieces matter
        params = ModelParams(sigma_z=0.5, F_e=0.05)
        z, prices = 2.2, [1.3, 3.1]
        mean, se = search_payoff_mc(z, prices, params)
        value = expected_search_payoff(Firm(0, z, prices), params)
        assert abs(value - mean) < max(5e-3 * abs(mean), 4 * se)

    def test_point_mass_support(self):
        params = ModelParams(p_hi=0.5)
        firm = Firm(0, 1.3, [0.5, 0.5])
        expected = firm_profit_oracle(1.3, [0.5, 0.5, 0.5], params) - firm_profit_oracle(1.3, [0.5, 0.5], params)
        assert expected_search_payoff(firm, params) == pytest.approx(expected, rel=1e-10)

    def test_quadrature_convergence(self):
        firm = Firm(0, Z_MEDIAN, [P_MID])
        a = expected_search_payoff(firm, PARAMS, SearchConfig(quadrature_nodes=64))
        b = expected_search_payoff(firm, PARAMS, SearchConfig(quadrature_nodes=128))
        assert abs(a - b) < 1e-6 * abs(b)

    def test_quadrature_convergence_across_kink(self):
        params = ModelParams(sigma_z=0.5, F_e=0.05)
        firm = Firm(0, 2.2, [1.3, 3.1])
        a = expected_search_payoff(firm, params, SearchConfig(quadrature_nodes=64))
        b = expected_search_payoff(firm, params, SearchConfig(quadrature_nodes=128))
        assert abs(a - b) < 1e-6 * abs(b)

    def test_decreasing_in_K_along_draw_path(self):
        rng = np.random.default_rng(7)
        path = list(PARAMS.p_lo + (PARAMS.p_hi - PARAMS.p_lo) * rng.random(10))
        values = [expected_search_payoff(Firm(0, Z_MEDIAN, path[:k]), PARAMS) for k in range(1, 11)]
        assert np.all(np.diff(values) < 0)

    def test_vectorized_matches_scalar(self):
        z = np.array([0.8, 1.6, 3.0])
        prices = [[1.0], [0.7, 2.0], [4.0, 4.0, 0.6]]
        S = [variety_index(p, PARAMS) for p in prices]
        vec = expected_payoff_from_index(z, S, PARAMS)
        scalar = [expected_search_payoff(Firm(0, zi, p), PARAMS) for zi, p in zip(z, prices)]
        np.testing.assert_allclose(vec, scalar, rtol=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(z=st.floats(0.3, 4.0), prices=st.lists(st.floats(0.5, 4.4974), min_size=1, max_size=8))
    def test_positive(self, z, prices):
        assert expected_search_payoff(Firm(0, z, prices), PARAMS) > 0


class TestShouldSearch:
    def test_free_search(self):
        params = ModelParams(f_s=0.0)
        assert should_search(Firm(0, 1.0, [4.0] * 30), params)

    def test_no_future_weight(self):
        params = ModelParams(beta=0.0)
        assert not should_search(Firm(0, 1.0, [1.0, 2.0]), params)

    def test_median_firm_first_paid_search(self):
        assert should_search(Firm(0, Z_MEDIAN, [P_MID]), PARAMS)

    def test_matches_rule(self):
        firm = Firm(0, 1.2, [0.9, 2.5, 3.0])
        payoff = expected_search_payoff(firm, PARAMS)
        cost = search_fixed_cost(3, PARAMS.f_s, PARAMS.mu)
        assert should_search(firm, PARAMS) == (PARAMS.beta / (1 - PARAMS.beta) * payoff >= cost)

    @settings(max_examples=100, deadline=None)
    @given(payoff=st.floats(1e-8, 10.0), cost=st.floats(0.0, 10.0),
           c=st.floats(1e-3, 1e3), beta=st.floats(0.0, 0.99))
    def test_common_scaling(self, payoff, cost, c, beta):
        base = search_decision(payoff, cost, beta)
        scaled = search_decision(c * payoff, c * cost, beta)
        lhs = beta / (1 - beta) * payoff
        # skip exact ties, where rounding of the product decides
        if abs(lhs - cost) > 1e-9 * max(lhs, cost, 1e-300):
            assert base == scaled

    @settings(max_examples=30, deadline=None)
    @given(z=st.floats(0.5, 3.0), prices=st.lists(st.floats(0.5, 4.4974), min_size=1, max_size=6))
    def test_pure(self, z, prices):
        firm = Firm(0, z, prices)
        assert should_search(firm, PARAMS) == should_search(firm, PARAMS)


class TestConverge:
    def _run(self, z, params, seed=0, firm_id=3, config=SearchConfig()):
        rng = firm_stream(seed, firm_id)
        first = params.p_lo + (params.p_hi - params.p_lo) * rng.random()
        return converge_supplier_set(Firm(firm_id, z, [first]), params, config, rng)

    def test_prohibitive_cost(self):
        trace = self._run(1.0, ModelParams(f_s=1e6))
        # the first paid search faces F_S(2); K=1 -> 2 is free
        assert trace.K == 2
        assert trace.rounds[-1].searched is False

    def test_trace_consistency(self):
        trace = self._run(Z_MEDIAN, PARAMS)
        disc = PARAMS.beta / (1 - PARAMS.beta)
        for r in trace.rounds:
            assert r.searched == (disc * r.payoff >= r.fixed_cost)
            assert (r.drawn_price is not None) == r.searched
        assert not trace.rounds[-1].searched
        assert trace.K == len(trace.rounds)

    def test_max_rounds_flag(self):
        trace = self._run(1.0, ModelParams(f_s=0.0), config=SearchConfig(max_rounds=5))
        assert trace.hit_max_rounds
        assert trace.K == 6
        assert all(r.searched for r in trace.rounds)

    def test_deterministic(self):
        a = self._run(Z_MEDIAN, PARAMS, seed=11, firm_id=42)
        b = self._run(Z_MEDIAN, PARAMS, seed=11, firm_id=42)
        assert a.to_jsonl() == b.to_jsonl()

    def test_streams_differ_by_firm(self):
        a = firm_stream(0, 1).random(4)
        b = firm_stream(0, 2).random(4)
        assert not np.array_equal(a, b)

    def test_jsonl(self):
        lines = self._run(Z_MEDIAN, PARAMS).to_jsonl().splitlines()
        head = json.loads(lines[0])
        assert head["K"] == len(lines) - 1

    def test_K_weakly_increasing_in_z(self):
        params = ModelParams(f_s=0.002, mu=0.5)
        Ks = [self._run(z, params, seed=5, firm_id=9).K for z in np.linspace(0.5, 3.0, 12)]
        assert np.all(np.diff(Ks) >= 0)

    def test_profit_rises_along_path(self):
        trace = self._run(2.0, ModelParams(f_s=0.001))
        profits = [solve_firm(Firm(0, 2.0, trace.supplier_prices[:k]), PARAMS).total_profit for k in range(1, trace.K + 1)]
        assert np.all(np.diff(profits) > 0)
