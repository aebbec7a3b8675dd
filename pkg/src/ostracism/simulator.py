"""Continuous-time event simulation of the permanent-ostracism strategy profile.

Every link recognition starts with a communication stage in which each side
reports everyone it deems guilty except itself; on buyer-seller links a
trading stage follows. Prescribed actions are functions of the message union
``M = m_i | m_j``: trade at the agreed terms when neither partner is in ``M``,
and pay or deliver zero otherwise. A player who knows itself to be guilty
shirks on every partner.

Randomness: each replication owns a numpy Generator derived from
``(seed, replication index)``, so results never depend on scheduling order.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from joblib import Parallel, delayed

from .diffusion import (GuiltState, LinkSequence, buyer_ids, default_horizon, discounted_exploitation,
                        is_buyer, seller_ids)
from .equilibrium import TradeTerms, check_onpath_ic
from .model import MarketParams, PowerCost, Protocol, require_valid

OFF_EQUILIBRIUM_FLAG = "off-equilibrium terms"


def make_rng(seed: int, index: int | None = None) -> np.random.Generator:
    """Generator for a whole run (index None) or for replication ``index``."""
    if index is None:
        return np.random.default_rng(np.random.SeedSequence(seed))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@functools.lru_cache(maxsize=64)
def _link_catalog(B: int, S: int) -> tuple[tuple, tuple, tuple]:
    buyers, sellers = buyer_ids(B), seller_ids(S)
    trading = tuple(frozenset((b, s)) for b in buyers for s in sellers)
    bb = tuple(frozenset((buyers[i], buyers[j])) for i in range(B) for j in range(i + 1, B))
    ss = tuple(frozenset((sellers[i], sellers[j])) for i in range(S) for j in range(i + 1, S))
    return trading, bb, ss


def iter_link_events(params: MarketParams, rng: np.random.Generator,
                     horizon: float = math.inf, with_coins: bool = False) -> Iterator[tuple]:
    """Lazily sample ``(t, link)`` from the superposed Poisson link processes.

    Inter-arrival times are exponential at the total rate; each event's link
    is drawn in proportion to its class rate and uniformly within the class.
    With ``with_coins`` each item also carries a fair coin for speaker order.
    """
    trading, bb, ss = _link_catalog(params.B, params.S)
    w_bs = len(trading) * params.lambda_bs
    w_bb = len(bb) * params.lambda_bb
    w_ss = len(ss) * params.lambda_ss
    total = w_bs + w_bb + w_ss
    t = 0.0
    chunk = 8
    while True:
        gaps = rng.exponential(1.0 / total, chunk).tolist()
        picks = (rng.random(chunk) * total).tolist()
        coins = (rng.random(chunk) < 0.5).tolist() if with_coins else None
        for n in range(chunk):
            t += gaps[n]
            if t > horizon:
                return
            x = picks[n]
            if x < w_bs:
                link = trading[min(int(x / params.lambda_bs), len(trading) - 1)]
            elif x < w_bs + w_bb:
                link = bb[min(int((x - w_bs) / params.lambda_bb), len(bb) - 1)]
            else:
                link = ss[min(int((x - w_bs - w_bb) / params.lambda_ss), len(ss) - 1)]
            if with_coins:
                yield t, link, coins[n]
            else:
                yield t, link
        chunk = min(chunk * 2, 1024)


def sample_event_stream(params: MarketParams, horizon: float, seed: int) -> LinkSequence:
    """All link recognitions in [0, horizon], deterministic in ``seed``."""
    if horizon <= 0:
        return LinkSequence(())
    return LinkSequence(tuple(iter_link_events(params, make_rng(seed), horizon)))


# -- scenarios ---------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Which player (if any) deviates, from when, and how.

    ``action`` is ``"shirk"`` (zero quality or zero payment at the first
    trading opportunity at or after ``after``, then the guilty continuation) or
    ``"delay"`` (as ``"shirk"``, but at the next meeting with an unaware partner
    the deviator cooperates once to slow the news down).
    """

    name: str
    deviator: str | None = None
    after: float = 0.0
    action: str = "shirk"


SCENARIOS = {
    "on-path": Scenario("on-path"),
    "seller-deviates-at-first-meeting": Scenario("seller-deviates-at-first-meeting", "S1"),
    "buyer-deviates-at-first-meeting": Scenario("buyer-deviates-at-first-meeting", "B1"),
    "seller-one-shot-delay": Scenario("seller-one-shot-delay", "S1", action="delay"),
}


def _immune(protocol: Protocol, player: str) -> bool:
    side = protocol.immune_side
    return (side == "buyers" and is_buyer(player)) or (side == "sellers" and not is_buyer(player))


def inject_deviation(deviator: str, protocol: Protocol | str, after: float = 0.0,
                     action: str = "shirk", name: str | None = None) -> Scenario:
    protocol = Protocol.parse(protocol)
    if _immune(protocol, deviator):
        raise ValueError(f"{deviator} is on the immune side under {protocol.value} trade")
    if action not in ("shirk", "delay"):
        raise ValueError(f"unknown deviation action {action!r}")
    return Scenario(name or f"{deviator}-{action}", deviator, float(after), action)


def resolve_scenario(scenario: str | Scenario, protocol: Protocol | str) -> Scenario:
    if isinstance(scenario, str):
        try:
            scenario = SCENARIOS[scenario]
        except KeyError:
            raise ValueError(f"unknown scenario {scenario!r}; known: {sorted(SCENARIOS)}") from None
    if scenario.deviator is not None:
        inject_deviation(scenario.deviator, protocol, scenario.after, scenario.action)
    return scenario


# -- traces ------------------------------------------------------------------

class InteractionRecord(NamedTuple):
    t: float
    link: tuple[str, str]
    kind: str
    first_speaker: str
    m_i: frozenset
    m_j: frozenset
    p: float | None
    q: float | None
    # (start, after communication, after trading) for link[0] and link[1]
    states: tuple[tuple[frozenset, frozenset, frozenset], tuple[frozenset, frozenset, frozenset]]

    def to_json(self) -> dict:
        return {"t": self.t, "link": list(self.link), "kind": self.kind, "first_speaker": self.first_speaker,
                "m_i": sorted(self.m_i), "m_j": sorted(self.m_j), "p": self.p, "q": self.q}


@dataclass
class Trace:
    params: MarketParams
    protocol: Protocol
    seed: int
    horizon: float
    scenario: str
    replication: int | None = None
    records: list[InteractionRecord] = field(default_factory=list)
    payoffs: dict[str, float] = field(default_factory=dict)
    deviation_time: float | None = None
    absorption_time: float | None = None
    exploitation: float = 0.0
    final_states: dict[str, frozenset] = field(default_factory=dict)
    n_events: int = 0
    flags: tuple[str, ...] = ()
    tail_bound: float = 0.0

    def to_jsonl(self, path: str | Path | None = None) -> str:
        text = "".join(json.dumps(rec.to_json()) + "\n" for rec in self.records)
        if path is not None:
            Path(path).write_text(text)
        return text


def payoff_tail_bound(params: MarketParams, terms: TradeTerms, horizon: float) -> float:
    """Bound on any one player's discounted payoff accrued after ``horizon``."""
    per_meeting = max(terms.p, terms.q)
    rate = max(params.B, params.S) * params.lambda_bs
    return math.exp(-params.r * horizon) * per_meeting * rate / params.r


def _prescribed(players: tuple[str, str], state: set, union: frozenset, value: float) -> float:
    """Agreed payment or delivery, or zero when either partner is named in ``union`` or ``state``."""
    if players[0] in union or players[1] in union:
        return 0.0
    if state & set(players):
        return 0.0
    return value


def run_replication(params: MarketParams, protocol: Protocol | str, terms: TradeTerms,
                    scenario: str | Scenario = "on-path", seed: int = 0, horizon: float | None = None,
                    cost: PowerCost | None = None, index: int | None = None, record: bool = True) -> Trace:
    """Simulate one replication of the market up to ``horizon``."""
    protocol = Protocol.parse(protocol)
    cost = cost if cost is not None else PowerCost()
    require_valid(params, cost)
    scenario = resolve_scenario(scenario, protocol)
    if horizon is None:
        horizon = math.log(1e4) / params.r
    flags = () if check_onpath_ic(protocol, terms, params, cost).all_satisfied else (OFF_EQUILIBRIUM_FLAG,)

    buyers, sellers = buyer_ids(params.B), seller_ids(params.S)
    players = buyers + sellers
    immune = frozenset(buyers if protocol is Protocol.BUYER_FIRST else
                       sellers if protocol is Protocol.SELLER_FIRST else ())
    omega: dict[str, set] = {i: set() for i in players}
    payoff = dict.fromkeys(players, 0.0)
    trace = Trace(params, protocol, seed, horizon, scenario.name, index, flags=flags,
                  tail_bound=payoff_tail_bound(params, terms, horizon))

    deviator = scenario.deviator
    counterpart = (sellers if deviator and is_buyer(deviator) else buyers) if deviator else []
    deviated = False
    delay_pending = scenario.action == "delay"
    r = params.r

    rng = make_rng(seed, index)
    for t, link, coin in iter_link_events(params, rng, horizon, with_coins=True):
        trace.n_events += 1
        if len(link) == 2 and is_buyer(min(link)) and not is_buyer(max(link)):
            i, j = min(link), max(link)
            kind = "trade"
        else:
            i, j = sorted(link, key=lambda x: (x[0], int(x[1:])))
            kind = "comm"
        start = (frozenset(omega[i]), frozenset(omega[j]))

        # communication stage; speaker order does not change what is said
        first = i if coin else j
        m_i, m_j = frozenset(omega[i] - {i}), frozenset(omega[j] - {j})
        omega[i] = (omega[i] | m_i | m_j) - immune
        omega[j] = (omega[j] | m_i | m_j) - immune
        talked = (frozenset(omega[i]), frozenset(omega[j]))

        paid = delivered = None
        if kind == "trade":
            b, s = i, j
            union = m_i | m_j
            pair = (b, s)
            expect_p = 0.0 if (b in union or s in union) else terms.p
            expect_q = 0.0 if (b in union or s in union) else terms.q
            if protocol is Protocol.BUYER_FIRST:
                paid = 0.0 if s in omega[b] else expect_p
                delivered = expect_q if (s not in omega[s] and paid == expect_p) else 0.0
            elif protocol is Protocol.SELLER_FIRST:
                delivered = 0.0 if b in omega[s] else expect_q
                paid = expect_p if (b not in omega[b] and delivered == expect_q) else 0.0
            else:
                paid = _prescribed(pair, omega[b], union, terms.p)
                delivered = _prescribed(pair, omega[s], union, terms.q)

            # scenario overrides for the designated player
            if deviator in pair:
                if not deviated and t >= scenario.after:
                    if deviator == s and delivered > 0:
                        delivered, deviated = 0.0, True
                    elif deviator == b and paid > 0:
                        paid, deviated = 0.0, True
                    if deviated:
                        trace.deviation_time = t
                elif deviated and delay_pending and deviator not in union:
                    if deviator == s and paid == expect_p and expect_q > 0:
                        delivered, delay_pending = expect_q, False
                    elif deviator == b and delivered == expect_q and expect_p > 0:
                        paid, delay_pending = expect_p, False
                elif deviated and trace.deviation_time is not None and t > trace.deviation_time:
                    if deviator == s and delivered == 0 and paid > 0:
                        trace.exploitation += math.exp(-r * (t - trace.deviation_time))
                    elif deviator == b and paid == 0 and delivered > 0:
                        trace.exploitation += math.exp(-r * (t - trace.deviation_time))

            # trading-stage updates, each observer judged against the prescribed actions
            for observer in pair:
                if protocol is Protocol.SIMULTANEOUS:
                    if paid != expect_p:
                        omega[observer].add(b)
                    if delivered != expect_q:
                        omega[observer].add(s)
                elif protocol is Protocol.BUYER_FIRST:
                    if (paid == expect_p and delivered != expect_q) or (paid != expect_p and delivered != 0):
                        omega[observer].add(s)
                else:
                    if (delivered == expect_q and paid != expect_p) or (delivered != expect_q and paid != 0):
                        omega[observer].add(b)
                omega[observer] -= immune

            disc = math.exp(-r * t)
            payoff[b] += disc * (delivered - paid)
            payoff[s] += disc * (paid - cost(delivered))

        if deviated and trace.absorption_time is None and all(deviator in omega[x] for x in counterpart):
            trace.absorption_time = t
        if record:
            trace.records.append(InteractionRecord(
                t, (i, j), kind, first, m_i, m_j, paid, delivered,
                ((start[0], talked[0], frozenset(omega[i])), (start[1], talked[1], frozenset(omega[j])))))

    trace.payoffs = payoff
    trace.final_states = {k: frozenset(v) for k, v in omega.items()}
    return trace


def _run_block(params, protocol, terms, scenario, seed, horizon, cost, indices, record):
    return [run_replication(params, protocol, terms, scenario, seed, horizon, cost, index=k, record=record)
            for k in indices]


def _blocks(n: int, n_jobs: int) -> list[range]:
    size = max(1, math.ceil(n / max(1, 4 * n_jobs)))
    return [range(k, min(n, k + size)) for k in range(0, n, size)]


def run_replications(params: MarketParams, protocol: Protocol | str, terms: TradeTerms,
                     scenario: str | Scenario, seed: int, replications: int, horizon: float | None = None,
                     cost: PowerCost | None = None, n_jobs: int = 1, record: bool = False) -> list[Trace]:
    """Independent replications, returned in index order whatever ``n_jobs`` is."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if n_jobs == 1:
        return _run_block(params, protocol, terms, scenario, seed, horizon, cost, range(replications), record)
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_run_block)(params, protocol, terms, scenario, seed, horizon, cost, blk, record)
        for blk in _blocks(replications, n_jobs))
    return [trace for part in parts for trace in part]


# -- Monte Carlo value estimate ------------------------------------------------

class MCEstimate(NamedTuple):
    mean: float
    se: float
    n: int


def _exploitation_block(params, k_b0, k_s0, seed, horizon, indices) -> np.ndarray:
    start = GuiltState.counts(k_b0, k_s0)
    out = np.empty(len(indices))
    for n, k in enumerate(indices):
        events = iter_link_events(params, make_rng(seed, k), horizon)
        out[n] = discounted_exploitation(start, events, params, horizon)
    return out


def mc_exploitation_samples(params: MarketParams, k_b0: int, k_s0: int, replications: int,
                            seed: int, horizon: float | None = None, n_jobs: int = 1) -> np.ndarray:
    """Per-replication discounted exploitation counts starting from (k_b0, k_s0)."""
    require_valid(params)
    if not (1 <= k_b0 <= params.B and 1 <= k_s0 <= params.S):
        raise ValueError(f"need 1 <= k_b0 <= {params.B} and 1 <= k_s0 <= {params.S}")
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if k_b0 == params.B:
        return np.zeros(replications)
    if horizon is None:
        horizon = default_horizon(params)
    if n_jobs == 1:
        return _exploitation_block(params, k_b0, k_s0, seed, horizon, range(replications))
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_exploitation_block)(params, k_b0, k_s0, seed, horizon, blk)
        for blk in _blocks(replications, n_jobs))
    return np.concatenate(parts)


def mc_estimate_value(params: MarketParams, k_b0: int, k_s0: int, replications: int, seed: int,
                      horizon: float | None = None, n_jobs: int = 1) -> MCEstimate:
    """Monte Carlo estimate of V(k_b0, k_s0) with its standard error."""
    x = mc_exploitation_samples(params, k_b0, k_s0, replications, seed, horizon, n_jobs)
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return MCEstimate(float(x.mean()), se, len(x))
