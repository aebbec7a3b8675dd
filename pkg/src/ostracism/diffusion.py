"""How knowledge of one seller's guilt spreads through the market.

Two views of the same process live here. ``compute_value_table`` solves the
count-based recursion for the guilty seller's discounted exploitation value
V(k_b, k_s). ``evolve_guilt_state`` and ``discounted_exploitation`` replay an
explicit sequence of link recognitions with player identities, which is what
the coupling argument and the Monte Carlo estimator work with.

Player identities are strings: buyers ``"B1".."B{B}"``, sellers ``"S1".."S{S}"``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .model import MarketParams, require_valid

Link = frozenset


def buyer_ids(n: int) -> list[str]:
    return [f"B{i}" for i in range(1, n + 1)]


def seller_ids(n: int) -> list[str]:
    return [f"S{i}" for i in range(1, n + 1)]


def is_buyer(player: str) -> bool:
    return player[0] == "B"


@dataclass(frozen=True)
class ValueTable:
    """V(k_b, k_s) for k_b in 0..B and k_s in 1..S.

    ``values`` is indexed ``[k_b, k_s]``; column 0 is unused (NaN). Rows with
    k_b = 0 are computed for every k_s but only V(0, 1) belongs to the public
    domain, see ``__getitem__``.
    """

    params: MarketParams
    values: np.ndarray

    def __getitem__(self, key: tuple[int, int]) -> float:
        k_b, k_s = key
        if not (0 <= k_b <= self.params.B and 1 <= k_s <= self.params.S) or (k_b == 0 and k_s != 1):
            raise KeyError(key)
        return float(self.values[k_b, k_s])

    def keys(self) -> Iterator[tuple[int, int]]:
        """Public domain in row-major order: (0, 1) then k_b = 1..B, k_s = 1..S."""
        yield (0, 1)
        for k_b in range(1, self.params.B + 1):
            for k_s in range(1, self.params.S + 1):
                yield (k_b, k_s)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k_b", "k_s", "V"])
        for k_b, k_s in self.keys():
            writer.writerow([k_b, k_s, f"{self[k_b, k_s]:.15g}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _outflow_and_inflow(params: MarketParams, values: np.ndarray, k_b: int, k_s: int) -> tuple[float, float]:
    """Total leaving rate and the rate-weighted successor sum at (k_b, k_s)."""
    B, S = params.B, params.S
    up_b = params.lambda_bb * k_b * (B - k_b) + params.lambda_bs * k_s * (B - k_b)
    up_s = params.lambda_ss * (k_s - 1) * (S - k_s) + params.lambda_bs * k_b * (S - k_s)
    inflow = params.lambda_bs * (B - k_b)
    if up_b:
        inflow += up_b * values[k_b + 1, k_s]
    if up_s:
        inflow += up_s * values[k_b, k_s + 1]
    return up_b + up_s, inflow


def compute_value_table(params: MarketParams) -> ValueTable:
    """Solve the value recursion by backward induction over (k_b, k_s).

    Each entry is (successor-weighted sum + lambda_bs * (B - k_b)) / (r + outflow),
    which is the exponential-waiting integral evaluated in closed form.
    V(B, k_s) = 0 is the boundary.
    """
    require_valid(params)
    B, S = params.B, params.S
    values = np.full((B + 1, S + 1), np.nan)
    values[B, 1:] = 0.0
    for k_b in range(B - 1, -1, -1):
        for k_s in range(S, 0, -1):
            outflow, inflow = _outflow_and_inflow(params, values, k_b, k_s)
            values[k_b, k_s] = inflow / (params.r + outflow)
    values.setflags(write=False)
    return ValueTable(params, values)


def recursion_residuals(table: ValueTable) -> np.ndarray:
    """(r + outflow) * V - inflow at every state with k_b < B (B x S array)."""
    p = table.params
    out = np.zeros((p.B, p.S))
    for k_b in range(p.B):
        for k_s in range(1, p.S + 1):
            outflow, inflow = _outflow_and_inflow(p, table.values, k_b, k_s)
            out[k_b, k_s - 1] = (p.r + outflow) * table.values[k_b, k_s] - inflow
    return out


def viscosity(table: ValueTable) -> float | None:
    """Discounted chance that a given buyer is still uninformed at the next meeting.

    Returns None when B = 1, where there is no other buyer to exploit.
    """
    if table.params.B < 2:
        return None
    return table[1, 1] / (table.params.B - 1)


def extend_onpath_value(table: ValueTable) -> float:
    """V(0, 1): value of an innocent seller who shirks on the next buyer she meets."""
    return table[0, 1]


@dataclass(frozen=True)
class GuiltState:
    """Buyers and sellers who deem seller ``s`` guilty."""

    K_b: frozenset
    K_s: frozenset
    s: str

    def __post_init__(self):
        object.__setattr__(self, "K_b", frozenset(self.K_b))
        object.__setattr__(self, "K_s", frozenset(self.K_s))
        if any(not is_buyer(b) for b in self.K_b):
            raise ValueError("K_b may only contain buyers")
        if any(is_buyer(x) for x in self.K_s) or is_buyer(self.s):
            raise ValueError("K_s and s must be sellers")

    @classmethod
    def counts(cls, k_b: int, k_s: int, s: str = "S1") -> GuiltState:
        """State with buyers B1..B{k_b} and sellers s plus the first k_s - 1 others informed."""
        others = [x for x in seller_ids(k_s + 1) if x != s][: k_s - 1]
        return cls(frozenset(buyer_ids(k_b)), frozenset([s, *others]), s)


@dataclass(frozen=True)
class LinkSequence:
    """Time-ordered link recognitions ``(time, {i, j})`` with strictly increasing times."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((float(t), frozenset(link)) for t, link in self.entries)
        prev = -math.inf
        for t, link in entries:
            if not (math.isfinite(t) and t >= 0):
                raise ValueError(f"link time must be finite and >= 0, got {t}")
            if t <= prev:
                raise ValueError("link times must be strictly increasing")
            if len(link) != 2:
                raise ValueError(f"a link joins two distinct players, got {sorted(link)}")
            prev = t
        object.__setattr__(self, "entries", entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]


def _spread(K_b: set, K_s: set, s: str, link: Iterable[str]) -> str | None:
    """Apply one link recognition in place; return the newly informed player, if any.

    A buyer learns from any informed partner. A seller learns from any informed
    partner other than s herself, who never reports on her own guilt.
    """
    i, j = link
    for u, v in ((i, j), (j, i)):
        v_informed = v in K_b or v in K_s
        if not v_informed:
            continue
        if is_buyer(u):
            if u not in K_b:
                K_b.add(u)
                return u
        elif u not in K_s and v != s:
            K_s.add(u)
            return u
    return None


def evolve_guilt_state(initial: GuiltState, xi: LinkSequence) -> list[GuiltState]:
    """Trajectory of the guilt state: element z is the state right after link z (0 = initial)."""
    if initial.s not in initial.K_s:
        raise ValueError("the guilty seller must belong to K_s")
    if not isinstance(xi, LinkSequence):
        xi = LinkSequence(tuple(xi))
    K_b, K_s = set(initial.K_b), set(initial.K_s)
    out = [initial]
    for _, link in xi:
        if _spread(K_b, K_s, initial.s, link) is None:
            out.append(out[-1])
        else:
            out.append(GuiltState(frozenset(K_b), frozenset(K_s), initial.s))
    return out


class CouplingResult(NamedTuple):
    holds: bool
    witness: tuple[int, str] | None


def coupling_check(base: GuiltState, extra_buyer: str, xi: LinkSequence) -> CouplingResult:
    """Check that buyers reached only through ``extra_buyer`` shrink as ``base`` grows.

    At every step z, the buyers informed from base + {j} but not from base must be
    among those informed from ({j}, {s}) but not from (empty, {s}).
    """
    if extra_buyer in base.K_b:
        raise ValueError(f"{extra_buyer} is already informed in the base state")
    s = base.s
    with_j = evolve_guilt_state(GuiltState(base.K_b | {extra_buyer}, base.K_s, s), xi)
    without = evolve_guilt_state(base, xi)
    only_j = evolve_guilt_state(GuiltState({extra_buyer}, {s}, s), xi)
    nobody = evolve_guilt_state(GuiltState(set(), {s}, s), xi)
    for z, (a, b, c, d) in enumerate(zip(with_j, without, only_j, nobody)):
        excess = (a.K_b - b.K_b) - (c.K_b - d.K_b)
        if excess:
            return CouplingResult(False, (z, min(excess)))
    return CouplingResult(True, None)


def discounted_exploitation(initial: GuiltState, xi: Iterable, params: MarketParams,
                            horizon: float | None = None) -> float:
    """Discounted count of meetings between s and a buyer who does not yet deem her guilty.

    ``xi`` may be a LinkSequence or any time-ordered iterable of ``(t, link)``;
    it is consumed only until every buyer is informed, after which no further
    exploitation is possible.
    """
    s, r, B = initial.s, params.r, params.B
    K_b, K_s = set(initial.K_b), set(initial.K_s)
    total = 0.0
    for t, link in xi:
        if len(K_b) >= B or (horizon is not None and t > horizon):
            break
        if s in link:
            (other,) = set(link) - {s}
            if is_buyer(other) and other not in K_b:
                total += math.exp(-r * t)
        _spread(K_b, K_s, s, link)
    return total


def tail_bound(params: MarketParams, horizon: float) -> float:
    """Upper bound on exploitation value lost by truncating a sequence at ``horizon``."""
    return max(params.B - 1, 1) * math.exp(-params.r * horizon)


def default_horizon(params: MarketParams, tol: float = 1e-9) -> float:
    """Smallest horizon whose truncation tail bound is ``tol``."""
    return math.log(max(params.B - 1, 1) / tol) / params.r
