import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ostracism.checks import (benchmark_ordering, check_binding_onpath, check_offpath, check_prop1_bilateral,
                              check_prop1_one_side, random_draws)
from ostracism.diffusion import compute_value_table
from ostracism.equilibrium import (DEGENERATE_FLAG, EXTRAPOLATED_FLAG, ICEntry, TradeTerms, _naive_target,
                                   bilateral_quality, check_offpath_ic, check_onpath_ic, deviation_gain,
                                   equilibrium_terms, naive_benchmark_buyer_first, naive_benchmark_seller_first,
                                   prop1_deviation_audit, solve)
from ostracism.model import MarketParams, PowerCost, Protocol


def test_bilateral_examples(market21, quad_cost):
    sim = bilateral_quality(market21, quad_cost)
    assert sim.q == pytest.approx(0.5, abs=1e-12) and sim.p == pytest.approx(0.25, abs=1e-12)
    sf = bilateral_quality(market21, quad_cost, "seller-first")
    assert sf.q == pytest.approx(1.0, abs=1e-12) and sf.p == pytest.approx(0.5, abs=1e-12)
    bf = bilateral_quality(market21, quad_cost, Protocol.BUYER_FIRST)
    assert bf.q == pytest.approx(1.0, abs=1e-12) and bf.p == bf.q


def test_bilateral_vanishes_with_impatience(quad_cost):
    for r in (1e3, 1e6):
        assert bilateral_quality(MarketParams(2, 1, r=r), quad_cost).q < 2.0 / r**2 + 1e-15


def test_naive_buyer_first_examples(market21, market22, quad_cost):
    b21 = naive_benchmark_buyer_first(market21, quad_cost)
    assert b21.target == pytest.approx(5 / 9, abs=1e-12)
    assert b21.q == pytest.approx(10 / 9, abs=1e-12)
    assert b21.v_bs == pytest.approx(1 / 3, abs=1e-12)
    b22 = naive_benchmark_buyer_first(market22, quad_cost)
    assert b22.q == pytest.approx(9 / 8, abs=1e-12)
    assert _naive_target(2, 1.0, 1.0, 1.0) == pytest.approx(1 / 3)


def test_naive_buyer_first_degenerate(quad_cost):
    b = naive_benchmark_buyer_first(MarketParams(1, 3), quad_cost)
    assert DEGENERATE_FLAG in b.flags and b.v_bs is None
    assert b.q == pytest.approx(bilateral_quality(MarketParams(1, 3), quad_cost, "bf").q)


def test_naive_seller_first(market21, market22, quad_cost):
    sym = naive_benchmark_seller_first(market22, quad_cost)
    assert sym.q == pytest.approx(naive_benchmark_buyer_first(market22, quad_cost).q, rel=1e-14)
    assert EXTRAPOLATED_FLAG in sym.flags
    lone = naive_benchmark_seller_first(market21, quad_cost)
    assert DEGENERATE_FLAG in lone.flags and lone.q == pytest.approx(1.0)


def test_onpath_buyer_first_binding(market21, quad_cost):
    terms = equilibrium_terms("bf", market21, quad_cost)
    report = check_onpath_ic("bf", terms, market21, quad_cost)
    assert report["SellerBF"].lhs == pytest.approx(40 / 27, abs=1e-12)
    assert abs(report["SellerBF"].slack) <= 1e-12
    assert report["BuyerBF"].lhs == 0 and abs(report["BuyerBF"].slack) <= 1e-15
    assert report.all_satisfied


def test_onpath_simultaneous_both_bind(market21, quad_cost):
    report = check_onpath_ic("sim", equilibrium_terms("sim", market21, quad_cost), market21, quad_cost)
    assert [round(e.slack, 12) for e in report] == [0.0, 0.0]


def test_onpath_above_benchmark_fails(market21, quad_cost):
    q = 1.5 * naive_benchmark_buyer_first(market21, quad_cost).q
    report = check_onpath_ic("bf", TradeTerms(q, q), market21, quad_cost)
    assert [e.name for e in report.failures()] == ["SellerBF"]


def test_onpath_seller_first(market22, quad_cost):
    terms = equilibrium_terms("sf", market22, quad_cost)
    report = check_onpath_ic("sf", terms, market22, quad_cost)
    assert abs(report["BuyerSF"].slack) <= 1e-12 and report["SellerSF"].slack == pytest.approx(0, abs=1e-12)
    with pytest.raises(ValueError):
        check_onpath_ic("sf", terms, market22.replace(S=3), quad_cost, compute_value_table(market22))


def test_offpath_examples(market21, market22, quad_cost):
    t21 = compute_value_table(market21)
    rep = check_offpath_ic(10 / 9, t21, quad_cost, binding=True)
    assert rep["OffPathBF(1,1)"].lhs == pytest.approx(1 / 3) and rep["OffPathBF(1,1)"].rhs == pytest.approx(5 / 9)
    assert rep.all_satisfied and rep["BindingBF"].equality
    rep22 = check_offpath_ic(9 / 8, compute_value_table(market22), quad_cost)
    assert [e.name for e in rep22] == ["OffPathBF(1,1)", "OffPathBF(1,2)"]
    assert rep22["OffPathBF(1,2)"].lhs == pytest.approx(1 / 4)
    assert rep22.all_satisfied
    # far below the benchmark quality the guilty seller would rather delay
    assert not check_offpath_ic(0.01, t21, quad_cost).all_satisfied
    with pytest.raises(ValueError):
        check_offpath_ic(0.0, t21, quad_cost)


def test_csv_report(market21, quad_cost):
    text = check_offpath_ic(10 / 9, compute_value_table(market21), quad_cost).to_csv()
    assert text.splitlines()[0] == "name,lhs,rhs,slack,satisfied"
    (row,) = list(csv.DictReader(io.StringIO(text)))
    assert row["name"] == "OffPathBF(1,1)"
    assert (row["lhs"], row["rhs"], row["satisfied"]) == ("0.333333333333333", "0.555555555555556", "true")


def test_ic_entry_tolerances():
    assert ICEntry("x", 1.0, 1.0 - 1e-13).satisfied
    assert not ICEntry("x", 1.0, 1.0 - 1e-11).satisfied
    assert not ICEntry("x", 1.0, 1.0 + 1e-10).strict
    assert ICEntry("x", 2.0, 2.0 + 1e-11, equality=True).satisfied


def test_prop1_examples(market21, quad_cost):
    gain = deviation_gain(prop1_deviation_audit(TradeTerms(0.3, 0.6), market21, quad_cost))
    assert gain == pytest.approx(0.15, abs=1e-12)
    assert abs(deviation_gain(prop1_deviation_audit(TradeTerms(0.25, 0.5), market21, quad_cost))) <= 1e-12
    assert deviation_gain(prop1_deviation_audit(TradeTerms(0.0, 0.0), market21, quad_cost)) < 0


def test_prop1_summed_gain_can_be_negative_while_buyer_profits(market21, quad_cost):
    # Just above bilateral quality with a price near cost, the summed comparison
    # understates the incentive: the buyer's own deviation is still profitable.
    rep = prop1_deviation_audit(TradeTerms(0.13, 0.51), market21, quad_cost)
    assert deviation_gain(rep) == pytest.approx(-0.11, abs=1e-12)
    assert deviation_gain(rep, "Prop1Buyer") == pytest.approx(0.01, abs=1e-12)


@pytest.mark.parametrize("params", random_draws(100), ids=lambda p: f"B{p.B}S{p.S}")
def test_draw_invariants(params, quad_cost):
    table = compute_value_table(params)
    assert benchmark_ordering(params, quad_cost, table)
    for check in (check_offpath, check_binding_onpath):
        res = check(params, quad_cost, table)
        assert res.passed, res


@pytest.mark.parametrize("params", random_draws(10, seed=5), ids=lambda p: f"B{p.B}S{p.S}")
def test_prop1_one_side_and_bilateral(params, quad_cost):
    assert check_prop1_one_side(params, quad_cost).passed
    assert check_prop1_bilateral(params, quad_cost).passed


def test_comparative_statics(quad_cost):
    base = MarketParams(B=3, S=2, lambda_bs=1.0, lambda_bb=0.7, lambda_ss=0.5, r=0.8)
    q = lambda p: naive_benchmark_buyer_first(p, quad_cost).q
    assert np.all(np.diff([q(base.replace(B=B)) for B in range(2, 9)]) > 0)
    for key in ("lambda_bs", "lambda_bb", "lambda_ss"):
        vals = [q(base.replace(**{key: x})) for x in (0.2, 0.5, 1.0, 2.0, 5.0)]
        assert np.all(np.diff(vals) >= -1e-12), key
    assert np.all(np.diff([q(base.replace(r=r)) for r in (0.2, 0.5, 1, 2, 5)]) < 0)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.1, 5), gamma=st.floats(1.2, 4), r=st.floats(0.05, 20), lam=st.floats(0.05, 20),
       B=st.integers(2, 6), S=st.integers(1, 6))
def test_ordering_property(a, gamma, r, lam, B, S):
    params = MarketParams(B, S, lambda_bs=lam, r=r)
    assert benchmark_ordering(params, PowerCost(a, gamma))


def test_solution_json_schema(market21, quad_cost):
    sol = solve(market21, quad_cost)
    doc = json.loads(sol.to_json(extra_field=1))
    assert list(doc)[:7] == ["q_bilateral_sim", "p_bilateral_sim", "q_bilateral_sf", "q_star_bf",
                             "target_ratio", "v_bs", "flags"]
    assert doc["q_star_bf"] == pytest.approx(10 / 9, abs=1e-14) and doc["extra_field"] == 1
    assert json.loads(solve(MarketParams(1, 2), quad_cost).to_json())["v_bs"] is None
