import math
from collections import Counter

import numpy as np
import pytest

from ostracism.diffusion import (GuiltState, LinkSequence, compute_value_table, default_horizon,
                                 discounted_exploitation)
from ostracism.equilibrium import TradeTerms, equilibrium_terms
from ostracism.model import MarketParams, PowerCost
from ostracism.simulator import (OFF_EQUILIBRIUM_FLAG, SCENARIOS, inject_deviation, iter_link_events, make_rng,
                                 mc_estimate_value, mc_exploitation_samples, resolve_scenario, run_replication, run_replications,
                                 sample_event_stream)

COST = PowerCost()


def test_event_gaps_and_class_frequencies():
    params = MarketParams(B=3, S=2)  # 6 trading links, 3 buyer pairs, 1 seller pair
    events = list(iter_link_events(params, make_rng(1), horizon=1e5 / 10))
    times = np.array([t for t, _ in events])
    assert np.mean(np.diff(times)) == pytest.approx(1 / 10, rel=0.01)
    counts = Counter("bs" if len({x[0] for x in link}) == 2 else ("bb" if min(link)[0] == "B" else "ss")
                     for _, link in events)
    n = len(events)
    for key, share in (("bs", 0.6), ("bb", 0.3), ("ss", 0.1)):
        assert abs(counts[key] / n - share) <= 3 * math.sqrt(share * (1 - share) / n)


def test_class_frequencies_four_one_one():
    params = MarketParams(B=2, S=2)
    events = list(iter_link_events(params, make_rng(9), horizon=2e4))
    counts = Counter("bs" if len({x[0] for x in link}) == 2 else min(link)[0] for _, link in events)
    n = len(events)
    for key, share in (("bs", 4 / 6), ("B", 1 / 6), ("S", 1 / 6)):
        assert abs(counts[key] / n - share) <= 3 * math.sqrt(share * (1 - share) / n)


def test_event_stream_edge_cases():
    assert len(sample_event_stream(MarketParams(2, 2), 0.0, seed=1)) == 0
    a = sample_event_stream(MarketParams(2, 2), 5.0, seed=1)
    assert a == sample_event_stream(MarketParams(2, 2), 5.0, seed=1)
    assert all(t <= 5.0 for t, _ in a)


def test_onpath_is_quiet(market22):
    terms = equilibrium_terms("bf", market22, COST)
    trace = run_replication(market22, "bf", terms, "on-path", seed=4)
    assert all(not state for state in trace.final_states.values())
    assert trace.flags == ()
    assert all(abs(trace.payoffs[b]) < 1e-15 for b in ("B1", "B2"))
    trades = [rec for rec in trace.records if rec.kind == "trade"]
    assert trades and all((rec.p, rec.q) == (terms.p, terms.q) for rec in trades)


def test_onpath_seller_payoff_closed_form(market21):
    terms = equilibrium_terms("bf", market21, COST)
    T = 4.0
    traces = run_replications(market21, "bf", terms, "on-path", seed=7, replications=10_000, horizon=T)
    x = np.array([tr.payoffs["S1"] for tr in traces])
    expected = (terms.p - COST(terms.q)) * market21.B * market21.lambda_bs * (1 - math.exp(-market21.r * T))
    expected /= market21.r
    assert abs(x.mean() - expected) <= 3 * x.std(ddof=1) / math.sqrt(len(x))


def test_off_equilibrium_flag(market21):
    trace = run_replication(market21, "bf", TradeTerms(3.0, 3.0), "on-path", seed=1, record=False)
    assert OFF_EQUILIBRIUM_FLAG in trace.flags


def _check_trace_rules(trace, terms):
    dev = SCENARIOS[trace.scenario].deviator
    for rec in trace.records:
        for start, talked, after in rec.states:
            assert start <= talked <= after
        if rec.kind != "trade":
            assert rec.p is None and rec.q is None
            continue
        b, s = rec.link
        union = rec.m_i | rec.m_j
        self_guilty = b in rec.states[0][0] or s in rec.states[1][0]
        if self_guilty or rec.t == trace.deviation_time or dev in (b, s):
            continue
        tainted = b in union or s in union
        assert rec.p == (0.0 if tainted else terms.p)
        assert rec.q == (0.0 if tainted else terms.q)


@pytest.mark.parametrize("protocol,scenario", [
    ("bf", "seller-deviates-at-first-meeting"),
    ("sf", "buyer-deviates-at-first-meeting"),
    ("sim", "seller-deviates-at-first-meeting"),
    ("sim", "buyer-deviates-at-first-meeting"),
    ("bf", "seller-one-shot-delay"),
])
def test_deviation_rules(protocol, scenario):
    params = MarketParams(B=3, S=3)
    terms = equilibrium_terms(protocol, params, COST)
    for seed in range(5):
        trace = run_replication(params, protocol, terms, scenario, seed=seed, horizon=30.0)
        _check_trace_rules(trace, terms)
        dev = SCENARIOS[scenario].deviator
        assert trace.deviation_time is not None
        assert dev in trace.final_states[dev]
        if protocol == "bf":
            assert not any(x.startswith("B") for st in trace.final_states.values() for x in st)
        if protocol == "sf":
            assert not any(x.startswith("S") for st in trace.final_states.values() for x in st)


def test_absorption(market22):
    terms = equilibrium_terms("bf", market22, COST)
    horizon = 50 / min(market22.lambda_bs, market22.lambda_bb, market22.lambda_ss)
    traces = run_replications(market22, "bf", terms, "seller-deviates-at-first-meeting", seed=3,
                              replications=300, horizon=horizon)
    assert np.mean([tr.absorption_time is not None for tr in traces]) > 0.99


def test_delay_scenario(market21):
    terms = equilibrium_terms("bf", market21, COST)
    traces = run_replications(market21, "bf", terms, "seller-one-shot-delay", seed=5, replications=500)
    assert all(tr.deviation_time is not None for tr in traces)
    # a delayed seller still exploits at most B - 1 other meetings in expectation
    assert 0 <= np.mean([tr.exploitation for tr in traces]) <= market21.B - 1


def test_determinism_and_n_jobs(market22):
    terms = equilibrium_terms("bf", market22, COST)
    a = run_replications(market22, "bf", terms, "seller-deviates-at-first-meeting", seed=11, replications=20)
    b = run_replications(market22, "bf", terms, "seller-deviates-at-first-meeting", seed=11, replications=20,
                         n_jobs=2)
    assert [tr.payoffs for tr in a] == [tr.payoffs for tr in b]
    assert [tr.exploitation for tr in a] == [tr.exploitation for tr in b]
    one = run_replication(market22, "bf", terms, "seller-deviates-at-first-meeting", seed=11, index=3)
    assert one.to_jsonl() == run_replication(market22, "bf", terms, "seller-deviates-at-first-meeting",
                                             seed=11, index=3).to_jsonl()


def test_scenario_errors():
    with pytest.raises(ValueError):
        inject_deviation("B1", "bf")
    with pytest.raises(ValueError):
        inject_deviation("S1", "sf")
    with pytest.raises(ValueError):
        inject_deviation("S1", "bf", action="vanish")
    with pytest.raises(ValueError):
        resolve_scenario("nobody-knows", "bf")
    with pytest.raises(ValueError):
        resolve_scenario("buyer-deviates-at-first-meeting", "bf")
    assert inject_deviation("B2", "sim", after=1.5).after == 1.5


def test_mc_examples(market21):
    est = mc_estimate_value(market21, 1, 1, 20_000, seed=0)
    assert abs(est.mean - 1 / 3) <= 3 * est.se
    full = mc_estimate_value(market21, 2, 1, 10, seed=0)
    assert (full.mean, full.se) == (0.0, 0.0)
    with pytest.raises(ValueError):
        mc_estimate_value(market21, 0, 1, 10, seed=0)
    with pytest.raises(ValueError):
        mc_estimate_value(market21, 1, 2, 10, seed=0)
    assert mc_estimate_value(market21, 1, 1, 2000, seed=4, n_jobs=2) == mc_estimate_value(market21, 1, 1, 2000,
                                                                                           seed=4)


def test_mc_sample_matches_explicit_replay(market22):
    horizon = default_horizon(market22)
    samples = mc_exploitation_samples(market22, 1, 2, 3, seed=8)
    for k in range(3):
        xi = sample_replay(market22, horizon, seed=8, index=k)
        assert samples[k] == discounted_exploitation(GuiltState.counts(1, 2), xi, market22, horizon)


def sample_replay(params, horizon, seed, index):
    return LinkSequence(tuple(iter_link_events(params, make_rng(seed, index), horizon)))


def test_simulator_exploitation_matches_value(market21):
    terms = equilibrium_terms("bf", market21, COST)
    traces = run_replications(market21, "bf", terms, "seller-deviates-at-first-meeting", seed=21,
                              replications=8000)
    x = np.array([tr.exploitation for tr in traces])
    target = compute_value_table(market21)[1, 1]
    assert abs(x.mean() - target) <= 3 * x.std(ddof=1) / math.sqrt(len(x))
