"""Numerical invariant checks shared by the test suite and ``ostracism verify``."""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .diffusion import (GuiltState, LinkSequence, ValueTable, buyer_ids, compute_value_table, coupling_check,
                        extend_onpath_value, recursion_residuals, seller_ids, viscosity)
from .equilibrium import (TradeTerms, bilateral_quality, check_offpath_ic, check_onpath_ic, deviation_gain,
                          naive_benchmark_buyer_first, prop1_deviation_audit)
from .model import MarketParams, PowerCost, Protocol
from .simulator import iter_link_events, make_rng, mc_estimate_value

RESIDUAL_TOL = 1e-12
IDENTITY_RTOL = 1e-12
MONOTONE_TOL = 1e-12


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str = ""


def random_params(rng: np.random.Generator, B_range=(2, 6), S_range=(2, 6),
                  lo: float = 0.1, hi: float = 10.0) -> MarketParams:
    """Random market: B, S uniform integers, rates and r log-uniform on [lo, hi]."""
    logs = rng.uniform(math.log(lo), math.log(hi), 4)
    lam_bs, lam_bb, lam_ss, r = np.exp(logs).tolist()
    return MarketParams(B=int(rng.integers(B_range[0], B_range[1] + 1)),
                        S=int(rng.integers(S_range[0], S_range[1] + 1)),
                        lambda_bs=lam_bs, lambda_bb=lam_bb, lambda_ss=lam_ss, r=r)


def random_draws(n: int, seed: int = 2024, **kwargs) -> list[MarketParams]:
    rng = np.random.default_rng(seed)
    return [random_params(rng, **kwargs) for _ in range(n)]


def check_recursion(table: ValueTable) -> CheckResult:
    worst = float(np.max(np.abs(recursion_residuals(table)))) if table.params.B > 0 else 0.0
    return CheckResult("recursion_residual", worst <= RESIDUAL_TOL, f"max |residual| = {worst:.3g}")


def binding_identity_sides(table: ValueTable) -> tuple[float, float]:
    """(target ratio of the naive benchmark, V(0,1) - V(1,1)); equal by algebra."""
    p = table.params
    v = viscosity(table) or 0.0
    lhs = (p.B * p.lambda_bs - (p.B - 1) * p.r * v) / (p.r + p.B * p.lambda_bs)
    return lhs, extend_onpath_value(table) - table[1, 1]


def check_identity(table: ValueTable) -> CheckResult:
    lhs, rhs = binding_identity_sides(table)
    rel = abs(lhs - rhs) / max(abs(rhs), 1e-300)
    return CheckResult("binding_identity", rel <= IDENTITY_RTOL, f"relative gap = {rel:.3g}")


def check_informedness_monotone(table: ValueTable) -> CheckResult:
    """V falls (weakly) when one more buyer or seller is informed."""
    v = table.values
    B, S = table.params.B, table.params.S
    bad = []
    for k_b in range(0, B):
        for k_s in range(1, S + 1):
            if v[k_b + 1, k_s] > v[k_b, k_s] + MONOTONE_TOL:
                bad.append(("k_b", k_b, k_s))
            if k_s < S and v[k_b, k_s + 1] > v[k_b, k_s] + MONOTONE_TOL:
                bad.append(("k_s", k_b, k_s))
    return CheckResult("monotone_informedness", not bad, f"violations: {bad[:3]}" if bad else "")


def check_contagion_claim(table: ValueTable) -> CheckResult:
    """V(k_b, k_s) - V(k_b+1, k_s) <= V(0,1) - V(1,1) for k_b = 0..B-1, k_s = 1..S."""
    v = table.values
    B, S = table.params.B, table.params.S
    bound = v[0, 1] - v[1, 1]
    worst = max(v[k_b, k_s] - v[k_b + 1, k_s] - bound for k_b in range(B) for k_s in range(1, S + 1))
    return CheckResult("contagion_claim", worst <= MONOTONE_TOL, f"max excess = {worst:.3g}")


def check_offpath(params: MarketParams, cost: PowerCost, table: ValueTable) -> CheckResult:
    q = naive_benchmark_buyer_first(params, cost, table).q
    report = check_offpath_ic(q, table, cost, binding=True)
    fails = [e.name for e in report.failures()]
    return CheckResult("offpath_ic", not fails, f"failed: {fails}" if fails else f"{len(report)} entries")


def check_binding_onpath(params: MarketParams, cost: PowerCost, table: ValueTable,
                         tol: float = 1e-10) -> CheckResult:
    q = naive_benchmark_buyer_first(params, cost, table).q
    entry = check_onpath_ic(Protocol.BUYER_FIRST, TradeTerms(q, q), params, cost, table)["SellerBF"]
    scale = max(1.0, abs(entry.rhs))
    return CheckResult("seller_bf_binding", abs(entry.slack) <= tol * scale, f"slack = {entry.slack:.3g}")


def benchmark_ordering(params: MarketParams, cost: PowerCost, table: ValueTable | None = None) -> bool:
    q_bf = naive_benchmark_buyer_first(params, cost, table).q
    q_sf = bilateral_quality(params, cost, Protocol.SELLER_FIRST).q
    q_sim = bilateral_quality(params, cost, Protocol.SIMULTANEOUS).q
    tol = 1e-12 * max(1.0, q_bf)
    return q_bf >= q_sf - tol and q_sf >= q_sim - tol


def check_ordering(params: MarketParams, cost: PowerCost, table: ValueTable | None = None) -> CheckResult:
    return CheckResult("benchmark_ordering", benchmark_ordering(params, cost, table))


def random_coupling_instance(params: MarketParams, rng: np.random.Generator, horizon: float = 3.0):
    """Random (base state, extra buyer, link sequence) for the coupling check."""
    buyers, sellers = buyer_ids(params.B), seller_ids(params.S)
    s = sellers[int(rng.integers(len(sellers)))]
    j = buyers[int(rng.integers(len(buyers)))]
    others_b = [b for b in buyers if b != j]
    others_s = [x for x in sellers if x != s]
    K_b = {b for b in others_b if rng.random() < 0.4}
    K_s = {s} | {x for x in others_s if rng.random() < 0.4}
    xi = LinkSequence(tuple(iter_link_events(params, rng, horizon)))
    return GuiltState(K_b, K_s, s), j, xi


def check_coupling(params: MarketParams, instances: int = 1000, seed: int = 0) -> CheckResult:
    rng = make_rng(seed)
    for n in range(instances):
        base, j, xi = random_coupling_instance(params, rng)
        result = coupling_check(base, j, xi)
        if not result.holds:
            return CheckResult("coupling", False, f"instance {n}: witness {result.witness}")
    return CheckResult("coupling", True, f"{instances} instances")


def prop1_grid(params: MarketParams, cost: PowerCost, n_q: int = 50, n_p: int = 10):
    """Yield (terms, report) for q on (q_, 2 q_] and p on [c(q), q]."""
    q_ = bilateral_quality(params, cost, Protocol.SIMULTANEOUS).q
    for q in np.linspace(q_, 2 * q_, n_q + 1)[1:]:
        for p in np.linspace(cost(q), q, n_p):
            terms = TradeTerms(float(p), float(q))
            yield terms, prop1_deviation_audit(terms, params, cost)


def check_prop1_one_side(params: MarketParams, cost: PowerCost) -> CheckResult:
    """Above bilateral quality some concealment deviation strictly pays off."""
    bad = [t for t, rep in prop1_grid(params, cost)
           if not (deviation_gain(rep, "Prop1Seller") > 1e-9 or deviation_gain(rep, "Prop1Buyer") > 1e-9)]
    return CheckResult("prop1_deviation", not bad, f"{len(bad)} grid points without a profitable side")


def check_prop1_summed(params: MarketParams, cost: PowerCost) -> CheckResult:
    """Summed concealment gain is strictly positive at every grid point above bilateral quality."""
    bad = [t for t, rep in prop1_grid(params, cost) if not deviation_gain(rep) > 1e-9]
    return CheckResult("prop1_summed_gain", not bad,
                       f"{len(bad)} grid points with summed gain <= 0" + (f", e.g. {bad[0]}" if bad else ""))


def check_prop1_bilateral(params: MarketParams, cost: PowerCost, n_q: int = 50) -> CheckResult:
    """At or below bilateral quality, with binding prices, no summed gain."""
    q_ = bilateral_quality(params, cost, Protocol.SIMULTANEOUS).q
    share = params.lambda_bs / (params.r + params.lambda_bs)
    worst = max(deviation_gain(prop1_deviation_audit(TradeTerms(q * share, q), params, cost))
                for q in np.linspace(0.0, q_, n_q + 1))
    return CheckResult("prop1_bilateral", worst <= 1e-12, f"max gain = {worst:.3g}")


def check_mc_agreement(params: MarketParams, table: ValueTable, replications: int, seed: int = 0,
                       states: list[tuple[int, int]] | None = None, n_jobs: int = 1) -> CheckResult:
    """Monte Carlo means within 3 standard errors of the table at each state."""
    if states is None:
        states = [(k_b, k_s) for k_b in range(1, params.B) for k_s in range(1, params.S + 1)]
    bad = []
    for n, (k_b, k_s) in enumerate(states):
        est = mc_estimate_value(params, k_b, k_s, replications, seed + n, n_jobs=n_jobs)
        if abs(est.mean - table[k_b, k_s]) > 3 * est.se:
            bad.append((k_b, k_s, est.mean, table[k_b, k_s], est.se))
    return CheckResult("mc_agreement", not bad, f"outside 3 SE: {bad}" if bad else f"{len(states)} states")


def table_suite(params: MarketParams, cost: PowerCost, table: ValueTable | None = None) -> list[CheckResult]:
    """Deterministic checks that need only the value table."""
    if table is None:
        table = compute_value_table(params)
    out = [check_recursion(table), check_ordering(params, cost, table)]
    if params.B >= 2:
        out += [check_identity(table), check_informedness_monotone(table), check_contagion_claim(table),
                check_offpath(params, cost, table), check_binding_onpath(params, cost, table)]
    return out
