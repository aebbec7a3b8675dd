"""Benchmark trade levels and incentive-constraint audits.

Continuation integrals of the form ``int_0^inf e^{-rt} lam * x dt`` are
evaluated in closed form as ``(lam / r) * x`` throughout.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

from .diffusion import ValueTable, compute_value_table, extend_onpath_value, viscosity
from .model import MarketParams, PowerCost, Protocol, avg_cost_ratio_inverse, require_valid

WEAK_TOL = 1e-12
STRICT_TOL = 1e-9
EQUALITY_TOL = 1e-10

DEGENERATE_FLAG = "degenerate: bilateral fallback"
EXTRAPOLATED_FLAG = "extrapolated: role-swapped buyer-first construction"


@dataclass(frozen=True)
class TradeTerms:
    p: float
    q: float

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError("price and quality must be non-negative")


@dataclass(frozen=True)
class ICEntry:
    """One evaluated constraint ``lhs <= rhs`` (or ``lhs == rhs`` when ``equality``)."""

    name: str
    lhs: float
    rhs: float
    equality: bool = False

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def satisfied(self) -> bool:
        if self.equality:
            return abs(self.slack) <= EQUALITY_TOL * max(1.0, abs(self.rhs))
        return self.slack >= -WEAK_TOL

    @property
    def strict(self) -> bool:
        return self.slack > STRICT_TOL


@dataclass
class ICReport:
    entries: list[ICEntry] = field(default_factory=list)

    def __iter__(self) -> Iterator[ICEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, name: str) -> ICEntry:
        for entry in self.entries:
            if entry.name == name:
                return entry
        raise KeyError(name)

    @property
    def all_satisfied(self) -> bool:
        return all(e.satisfied for e in self.entries)

    def failures(self) -> list[ICEntry]:
        return [e for e in self.entries if not e.satisfied]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "lhs", "rhs", "slack", "satisfied"])
        for e in self.entries:
            writer.writerow([e.name, f"{e.lhs:.15g}", f"{e.rhs:.15g}", f"{e.slack:.15g}",
                             str(e.satisfied).lower()])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


class Bilateral(NamedTuple):
    q: float
    p: float


@dataclass(frozen=True)
class NaiveBenchmark:
    q: float
    target: float
    v_bs: float | None
    flags: tuple[str, ...] = ()


def bilateral_quality(params: MarketParams, cost: PowerCost,
                      protocol: Protocol | str = Protocol.SIMULTANEOUS) -> Bilateral:
    """Highest quality a single pair can sustain under grim trigger.

    Simultaneous trade needs both sides' constraints, so the average cost
    target is ``(lam / (r + lam))**2``; one-sided protocols need only the
    second mover's constraint, target ``lam / (r + lam)``. The returned price
    binds the first mover's or the buyer's constraint.
    """
    protocol = Protocol.parse(protocol)
    require_valid(params, cost)
    share = params.lambda_bs / (params.r + params.lambda_bs)
    if protocol is Protocol.SIMULTANEOUS:
        q = avg_cost_ratio_inverse(cost, share ** 2)
        return Bilateral(q, q * share)
    q = avg_cost_ratio_inverse(cost, share)
    if protocol is Protocol.BUYER_FIRST:
        return Bilateral(q, q)
    return Bilateral(q, cost(q))


def _naive_target(n_side: int, lam: float, r: float, v: float | None) -> float:
    exploit = (n_side - 1) * r * v if v is not None else 0.0
    return (n_side * lam - exploit) / (r + n_side * lam)


def _quality_flags(cost: PowerCost, params: MarketParams, q: float, label: str) -> list[str]:
    flags = []
    if q >= params.q_max:
        flags.append(f"quality bound binds at {label}")
    if q > 0 and not cost.surplus_increasing_at(q):
        flags.append(f"q - c(q) not increasing at {label}")
    return flags


def naive_benchmark_buyer_first(params: MarketParams, cost: PowerCost,
                                table: ValueTable | None = None) -> NaiveBenchmark:
    """Naive-communication quality under buyer-first trade.

    Solves c(q)/q = (B lam - (B-1) r v_bs) / (r + B lam).
    """
    require_valid(params, cost)
    if table is None:
        table = compute_value_table(params)
    v = viscosity(table)
    target = _naive_target(params.B, params.lambda_bs, params.r, v)
    q = avg_cost_ratio_inverse(cost, target)
    flags = [DEGENERATE_FLAG] if params.B < 2 else []
    flags += _quality_flags(cost, params, q, "q_star_bf")
    return NaiveBenchmark(q, target, v, tuple(flags))


def naive_benchmark_seller_first(params: MarketParams, cost: PowerCost) -> NaiveBenchmark:
    """Seller-first analogue built by exchanging the roles of buyers and sellers.

    The guilty party is a buyer; the diffusion table is rebuilt for the swapped
    market and the buyer-first template is applied with S in place of B.
    """
    require_valid(params, cost)
    swapped = params.swapped()
    v = viscosity(compute_value_table(swapped))
    target = _naive_target(params.S, params.lambda_bs, params.r, v)
    q = avg_cost_ratio_inverse(cost, target)
    flags = [EXTRAPOLATED_FLAG]
    if params.S < 2:
        flags.append(DEGENERATE_FLAG)
    flags += _quality_flags(cost, params, q, "q_star_sf")
    return NaiveBenchmark(q, target, v, tuple(flags))


def check_onpath_ic(protocol: Protocol | str, terms: TradeTerms, params: MarketParams,
                    cost: PowerCost, table: ValueTable | None = None) -> ICReport:
    """Evaluate both traders' equilibrium-path constraints at ``terms``.

    For seller-first trade ``table`` must be built from ``params.swapped()``
    (it is computed when omitted).
    """
    protocol = Protocol.parse(protocol)
    p, q = terms.p, terms.q
    c = cost(q)
    k = params.lambda_bs / params.r
    B, S = params.B, params.S
    if protocol is Protocol.SIMULTANEOUS:
        return ICReport([
            ICEntry("BuyerBilateral", q, q - p + k * (q - p)),
            ICEntry("SellerBilateral", p, p - c + k * (p - c)),
        ])
    if protocol is Protocol.BUYER_FIRST:
        if table is None:
            table = compute_value_table(params)
        v = viscosity(table) or 0.0
        return ICReport([
            ICEntry("BuyerBF", 0.0, q - p + S * k * (q - p)),
            ICEntry("SellerBF", p + (B - 1) * p * v, p - c + B * k * (p - c)),
        ])
    if table is None:
        table = compute_value_table(params.swapped())
    elif table.params != params.swapped():
        raise ValueError("seller-first constraints need the role-swapped value table")
    v = viscosity(table) or 0.0
    return ICReport([
        ICEntry("BuyerSF", q + (S - 1) * q * v, q - p + S * k * (q - p)),
        ICEntry("SellerSF", 0.0, p - c + B * k * (p - c)),
    ])


def check_offpath_ic(q: float, table: ValueTable, cost: PowerCost, binding: bool = False) -> ICReport:
    """Guilty seller prefers zero quality to a one-shot delay at every (k_b, k_s).

    Each entry holds V(k_b, k_s) - V(k_b + 1, k_s) <= c(q)/q for k_b >= 1.
    With ``binding=True`` an equality entry c(q)/q = V(0, 1) - V(1, 1) is added,
    which holds exactly when q is the buyer-first naive benchmark.
    """
    if q <= 0:
        raise ValueError("off-path check needs q > 0")
    avg = cost.average(q)
    B, S = table.params.B, table.params.S
    report = ICReport()
    for k_b in range(1, B):
        for k_s in range(1, S + 1):
            report.entries.append(ICEntry(f"OffPathBF({k_b},{k_s})", table[k_b, k_s] - table[k_b + 1, k_s], avg))
    if binding:
        report.entries.append(ICEntry("BindingBF", extend_onpath_value(table) - table[1, 1], avg, equality=True))
    return report


def prop1_deviation_audit(terms: TradeTerms, params: MarketParams, cost: PowerCost) -> ICReport:
    """Concealment deviations against simultaneous-trade terms above bilateral level.

    Each entry compares a deviation value (lhs) with the bilateral continuation
    available after the other traders are ostracized (rhs), so a violated entry
    is a strictly profitable deviation:

    * Prop1Seller: conceal and shirk, ``p`` against ``p_ - c(q_) + (lam/r)(p_ - c(q_))``
    * Prop1Buyer: conceal and renege, ``q`` against ``q_ - p_ + (lam/r)(q_ - p_)``
    * Prop1Sum: ``p + q`` against ``(q_ - c(q_)) (1 + lam/r)``

    where ``q_, p_`` are the simultaneous bilateral quality and price.
    """
    q_, p_ = bilateral_quality(params, cost, Protocol.SIMULTANEOUS)
    k = params.lambda_bs / params.r
    cq_ = cost(q_)
    return ICReport([
        ICEntry("Prop1Seller", terms.p, p_ - cq_ + k * (p_ - cq_)),
        ICEntry("Prop1Buyer", terms.q, q_ - p_ + k * (q_ - p_)),
        ICEntry("Prop1Sum", terms.p + terms.q, q_ - cq_ + k * (q_ - cq_)),
    ])


def deviation_gain(report: ICReport, name: str = "Prop1Sum") -> float:
    """Gain from the named deviation, i.e. minus its slack."""
    return -report[name].slack


@dataclass(frozen=True)
class Solution:
    q_bilateral_sim: float
    p_bilateral_sim: float
    q_bilateral_sf: float
    q_star_bf: float
    target_ratio: float
    v_bs: float | None
    flags: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"q_bilateral_sim": self.q_bilateral_sim, "p_bilateral_sim": self.p_bilateral_sim,
                "q_bilateral_sf": self.q_bilateral_sf, "q_star_bf": self.q_star_bf,
                "target_ratio": self.target_ratio, "v_bs": self.v_bs, "flags": list(self.flags)}

    def to_json(self, **extra) -> str:
        doc = self.to_dict()
        doc.update(extra)
        return json.dumps(_round15(doc), indent=2)


def _round15(obj):
    if isinstance(obj, float):
        return float(f"{obj:.15g}")
    if isinstance(obj, dict):
        return {k: _round15(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round15(v) for v in obj]
    return obj


def solve(params: MarketParams, cost: PowerCost, table: ValueTable | None = None) -> Solution:
    """All benchmark trade levels for one market."""
    if table is None:
        table = compute_value_table(params)
    sim = bilateral_quality(params, cost, Protocol.SIMULTANEOUS)
    sf = bilateral_quality(params, cost, Protocol.SELLER_FIRST)
    naive = naive_benchmark_buyer_first(params, cost, table)
    flags = list(naive.flags)
    flags += _quality_flags(cost, params, sim.q, "q_bilateral_sim")
    flags += _quality_flags(cost, params, sf.q, "q_bilateral_sf")
    return Solution(sim.q, sim.p, sf.q, naive.q, naive.target, naive.v_bs, tuple(flags))


def equilibrium_terms(protocol: Protocol | str, params: MarketParams, cost: PowerCost) -> TradeTerms:
    """Equilibrium-path price and quality used for each protocol."""
    protocol = Protocol.parse(protocol)
    if protocol is Protocol.SIMULTANEOUS:
        q, p = bilateral_quality(params, cost, protocol)
        return TradeTerms(p=p, q=q)
    if protocol is Protocol.BUYER_FIRST:
        q = naive_benchmark_buyer_first(params, cost).q
        return TradeTerms(p=q, q=q)
    q = naive_benchmark_seller_first(params, cost).q
    return TradeTerms(p=cost(q), q=q)
