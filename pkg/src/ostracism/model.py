"""Market primitives: population sizes, meeting rates, trading protocols and costs."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from scipy import optimize

PARAM_KEYS = frozenset({"B", "S", "lambda_bs", "lambda_bb", "lambda_ss", "r", "q_max", "cost"})
COST_KEYS = frozenset({"a", "gamma"})


class Protocol(str, enum.Enum):
    """Move order inside a buyer-seller trading stage."""

    SIMULTANEOUS = "simultaneous"
    BUYER_FIRST = "buyer-first"
    SELLER_FIRST = "seller-first"

    @property
    def immune_side(self) -> str | None:
        """Side of the market that can never be labelled guilty, or None."""
        if self is Protocol.BUYER_FIRST:
            return "buyers"
        if self is Protocol.SELLER_FIRST:
            return "sellers"
        return None

    @classmethod
    def parse(cls, value: str | Protocol) -> Protocol:
        if isinstance(value, Protocol):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"simultaneous": cls.SIMULTANEOUS, "sim": cls.SIMULTANEOUS,
                   "buyer-first": cls.BUYER_FIRST, "buyerfirst": cls.BUYER_FIRST, "bf": cls.BUYER_FIRST,
                   "seller-first": cls.SELLER_FIRST, "sellerfirst": cls.SELLER_FIRST, "sf": cls.SELLER_FIRST}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown protocol {value!r}") from None


@dataclass(frozen=True)
class MarketParams:
    """Population sizes and Poisson meeting rates of the buyer-seller market.

    Rates are per pair: every buyer-seller pair meets at ``lambda_bs``, every
    buyer pair at ``lambda_bb`` and every seller pair at ``lambda_ss``.
    """

    B: int
    S: int
    lambda_bs: float = 1.0
    lambda_bb: float = 1.0
    lambda_ss: float = 1.0
    r: float = 1.0
    q_max: float = 1e6

    @property
    def n_trading_links(self) -> int:
        return self.B * self.S

    @property
    def total_rate(self) -> float:
        """Superposed rate of all link recognitions in the market."""
        return (self.B * self.S * self.lambda_bs
                + math.comb(self.B, 2) * self.lambda_bb
                + math.comb(self.S, 2) * self.lambda_ss)

    @property
    def min_rate(self) -> float:
        return min(self.lambda_bs, self.lambda_bb, self.lambda_ss)

    def swapped(self) -> MarketParams:
        """The same market with the roles of buyers and sellers exchanged."""
        return MarketParams(B=self.S, S=self.B, lambda_bs=self.lambda_bs,
                            lambda_bb=self.lambda_ss, lambda_ss=self.lambda_bb,
                            r=self.r, q_max=self.q_max)

    def replace(self, **changes: Any) -> MarketParams:
        fields = {k: getattr(self, k) for k in ("B", "S", "lambda_bs", "lambda_bb", "lambda_ss", "r", "q_max")}
        fields.update(changes)
        return MarketParams(**fields)


@dataclass(frozen=True)
class PowerCost:
    """Production cost ``c(q) = a * q**gamma``."""

    a: float = 0.5
    gamma: float = 2.0

    def __call__(self, q: float) -> float:
        return self.a * q ** self.gamma if q > 0 else 0.0

    def average(self, q: float) -> float:
        """c(q)/q, extended continuously by 0 at q = 0."""
        return self.a * q ** (self.gamma - 1.0) if q > 0 else 0.0

    def marginal(self, q: float) -> float:
        return self.a * self.gamma * q ** (self.gamma - 1.0) if q > 0 else 0.0

    def surplus_increasing_at(self, q: float) -> bool:
        """Whether q - c(q) is strictly increasing at q."""
        return 1.0 - self.marginal(q) > 0.0

    def inverse_average(self, target: float) -> float:
        """Closed-form solution of c(q)/q = target."""
        return (target / self.a) ** (1.0 / (self.gamma - 1.0)) if target > 0 else 0.0


# The cost interface is the power family only for now.
CostSpec = PowerCost


def validate_params(params: MarketParams, cost: PowerCost) -> list[str]:
    """Return the list of violated model constraints; an empty list means OK."""
    problems = []
    if not isinstance(params.B, int) or isinstance(params.B, bool) or params.B < 1:
        problems.append("B must be an integer >= 1")
    if not isinstance(params.S, int) or isinstance(params.S, bool) or params.S < 1:
        problems.append("S must be an integer >= 1")
    for name in ("lambda_bs", "lambda_bb", "lambda_ss", "r", "q_max"):
        value = getattr(params, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            problems.append(f"{name} must be > 0")
    if not (math.isfinite(cost.a) and cost.a > 0):
        problems.append("cost coefficient a must be > 0")
    if not (math.isfinite(cost.gamma) and cost.gamma > 1):
        problems.append("cost must be strictly convex (gamma > 1)")
    return problems


def require_valid(params: MarketParams, cost: PowerCost | None = None) -> None:
    problems = validate_params(params, cost if cost is not None else PowerCost())
    if problems:
        raise ValueError("invalid market parameters: " + "; ".join(problems))


def avg_cost_ratio_inverse(cost: PowerCost, target: float, method: str = "closed") -> float:
    """Quality q >= 0 at which the average cost c(q)/q equals ``target``.

    ``method="closed"`` uses the power-family inverse; ``method="bisect"``
    brackets and bisects c(q)/q - target using only cost evaluations.
    """
    if not target >= 0:
        raise ValueError(f"target ratio must be >= 0, got {target}")
    if method == "closed":
        return cost.inverse_average(target)
    if method != "bisect":
        raise ValueError(f"unknown method {method!r}")
    if target == 0:
        return 0.0

    def gap(q: float) -> float:
        return cost(q) / q - target

    hi = 1.0
    while gap(hi) < 0:
        hi *= 2.0
    lo = hi / 2.0
    while lo > 0 and gap(lo) > 0:
        lo /= 2.0
    if gap(lo) == 0:
        return lo
    return optimize.bisect(gap, lo, hi, xtol=1e-300, rtol=4 * 2.0 ** -52, maxiter=2000)


def params_from_dict(doc: Mapping[str, Any]) -> tuple[MarketParams, PowerCost]:
    """Parse the parameter document; unknown or missing keys raise ValueError."""
    if not isinstance(doc, Mapping):
        raise ValueError("parameter document must be a JSON object")
    unknown = set(doc) - PARAM_KEYS
    if unknown:
        raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
    missing = PARAM_KEYS - set(doc) - {"q_max", "cost"}
    if missing:
        raise ValueError(f"missing parameter keys: {sorted(missing)}")
    cost_doc = doc.get("cost", {})
    if not isinstance(cost_doc, Mapping):
        raise ValueError("cost must be an object with keys a, gamma")
    unknown = set(cost_doc) - COST_KEYS
    if unknown:
        raise ValueError(f"unknown cost keys: {sorted(unknown)}")
    for key in ("B", "S"):
        if not isinstance(doc[key], int) or isinstance(doc[key], bool):
            raise ValueError(f"{key} must be an integer")
    params = MarketParams(B=doc["B"], S=doc["S"], lambda_bs=float(doc["lambda_bs"]),
                          lambda_bb=float(doc["lambda_bb"]), lambda_ss=float(doc["lambda_ss"]),
                          r=float(doc["r"]), q_max=float(doc.get("q_max", 1e6)))
    cost = PowerCost(a=float(cost_doc.get("a", 0.5)), gamma=float(cost_doc.get("gamma", 2.0)))
    return params, cost


def params_to_dict(params: MarketParams, cost: PowerCost) -> dict[str, Any]:
    return {"B": params.B, "S": params.S, "lambda_bs": params.lambda_bs,
            "lambda_bb": params.lambda_bb, "lambda_ss": params.lambda_ss,
            "r": params.r, "q_max": params.q_max, "cost": {"a": cost.a, "gamma": cost.gamma}}


def load_params(path: str | Path) -> tuple[MarketParams, PowerCost]:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
