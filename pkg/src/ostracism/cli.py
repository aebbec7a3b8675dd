"""Command-line front end: ``ostracism {solve,verify,sweep,simulate}``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import checks
from .diffusion import compute_value_table
from .equilibrium import (TradeTerms, bilateral_quality, check_offpath_ic, check_onpath_ic, deviation_gain,
                          EXTRAPOLATED_FLAG, equilibrium_terms, naive_benchmark_buyer_first,
                          naive_benchmark_seller_first, prop1_deviation_audit, solve, _round15)
from .model import MarketParams, PowerCost, Protocol, params_from_dict, params_to_dict, validate_params
from .simulator import resolve_scenario, run_replications

log = logging.getLogger("ostracism")

CONFIG_KEYS = {"params", "protocol", "seed", "terms", "verify", "sweep", "simulate"}
VERIFY_KEYS = {"q_scale", "terms", "prop1_terms", "coupling_instances", "mc_replications", "n_jobs"}
SWEEP_KEYS = {"grid"}
SIMULATE_KEYS = {"scenario", "replications", "horizon", "traces", "n_jobs"}
GRID_KEYS = ("B", "S", "lambda_bs", "lambda_bb", "lambda_ss", "r", "q_max", "a", "gamma")
DEFAULT_PARAMS = {"B": 2, "S": 1, "lambda_bs": 1.0, "lambda_bb": 1.0, "lambda_ss": 1.0, "r": 1.0,
                  "q_max": 1e6, "cost": {"a": 0.5, "gamma": 2.0}}
BENCHMARK_COLUMNS = ("q_bilateral_sim", "p_bilateral_sim", "q_bilateral_sf", "q_star_bf", "target_ratio", "v_bs")


class ConfigError(ValueError):
    pass


class Config:
    """Parsed experiment configuration: market, cost, protocol and command blocks."""

    def __init__(self, doc: dict[str, Any]):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            self.params, self.cost = params_from_dict(doc.get("params", DEFAULT_PARAMS))
            self.protocol = Protocol.parse(doc.get("protocol", "buyer-first"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        problems = validate_params(self.params, self.cost)
        if problems:
            raise ConfigError("; ".join(problems))
        self.seed = int(doc.get("seed", 0))
        self.terms = _terms(doc.get("terms"))
        self.verify = _block(doc, "verify", VERIFY_KEYS)
        self.sweep = _block(doc, "sweep", SWEEP_KEYS)
        self.simulate = _block(doc, "simulate", SIMULATE_KEYS)
        self.doc = doc

    @classmethod
    def load(cls, path: str | None) -> Config:
        if path is None:
            return cls({})
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls(doc)


def _block(doc: dict, name: str, keys: set) -> dict:
    block = doc.get(name, {})
    if not isinstance(block, dict):
        raise ConfigError(f"{name} must be an object")
    unknown = set(block) - keys
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    return block


def _terms(doc) -> TradeTerms | None:
    if doc is None:
        return None
    if not isinstance(doc, dict) or set(doc) != {"p", "q"}:
        raise ConfigError("terms must be an object with keys p, q")
    try:
        return TradeTerms(p=float(doc["p"]), q=float(doc["q"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return f"{x:.15g}"
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


# -- commands ------------------------------------------------------------------

def cmd_solve(cfg: Config, out: Path) -> int:
    table = compute_value_table(cfg.params)
    sol = solve(cfg.params, cfg.cost, table)
    terms = cfg.terms or equilibrium_terms(cfg.protocol, cfg.params, cfg.cost)
    report = check_onpath_ic(cfg.protocol, terms, cfg.params, cfg.cost,
                             compute_value_table(cfg.params.swapped()) if cfg.protocol is Protocol.SELLER_FIRST
                             else table)
    flags = list(sol.flags)
    if cfg.protocol is Protocol.SELLER_FIRST:
        flags += [f for f in naive_benchmark_seller_first(cfg.params, cfg.cost).flags if f not in flags]
    text = sol.to_json(flags=flags, ic_slacks={e.name: e.slack for e in report})
    out.mkdir(parents=True, exist_ok=True)
    (out / "solve.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_verify(cfg: Config, out: Path, replications: int | None, seed: int) -> int:
    p, cost = cfg.params, cfg.cost
    block = cfg.verify
    out.mkdir(parents=True, exist_ok=True)
    table = compute_value_table(p)
    table.to_csv(out / "value_table.csv")
    results = checks.table_suite(p, cost, table)

    terms = _terms(block.get("terms")) or cfg.terms or equilibrium_terms(cfg.protocol, p, cost)
    if "q_scale" in block:
        scale = float(block["q_scale"])
        base = equilibrium_terms(cfg.protocol, p, cost)
        terms = TradeTerms(p=base.p * scale, q=base.q * scale)
    onpath = check_onpath_ic(cfg.protocol, terms, p, cost,
                             compute_value_table(p.swapped()) if cfg.protocol is Protocol.SELLER_FIRST else table)
    onpath.to_csv(out / "ic_onpath.csv")
    fails = [f"{e.name} slack {e.slack:.6g}" for e in onpath.failures()]
    results.append(checks.CheckResult("onpath_ic", not fails, "; ".join(fails)))

    if p.B >= 2:
        q_bf = naive_benchmark_buyer_first(p, cost, table).q
        check_offpath_ic(q_bf, table, cost, binding=True).to_csv(out / "ic_offpath.csv")

    results.append(checks.check_prop1_one_side(p, cost))
    results.append(checks.check_prop1_bilateral(p, cost))
    prop1_terms = _terms(block.get("prop1_terms"))
    if prop1_terms is not None:
        rep = prop1_deviation_audit(prop1_terms, p, cost)
        rep.to_csv(out / "ic_prop1.csv")
        q_ = bilateral_quality(p, cost, Protocol.SIMULTANEOUS).q
        gain = deviation_gain(rep)
        if prop1_terms.q > q_:
            ok = deviation_gain(rep, "Prop1Seller") > 1e-9 or deviation_gain(rep, "Prop1Buyer") > 1e-9
            detail = f"Prop1Sum gain {gain:.6g}; a concealment deviation is {'strictly profitable' if ok else 'not profitable'}"
        else:
            ok = gain <= 1e-12
            detail = f"Prop1Sum gain {gain:.6g} at or below bilateral quality"
        results.append(checks.CheckResult("prop1_terms", ok, detail))

    if p.B >= 2:
        results.append(checks.check_coupling(p, int(block.get("coupling_instances", 1000)), seed))
        reps = replications or int(block.get("mc_replications", 20000))
        results.append(checks.check_mc_agreement(p, table, reps, seed, n_jobs=int(block.get("n_jobs", 1))))

    summary = {"passed": all(r.passed for r in results),
               "checks": [{"name": r.name, "passed": bool(r.passed), "detail": r.detail} for r in results]}
    (out / "verify.json").write_text(json.dumps(summary, indent=2) + "\n")
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  {r.detail}")
    return 0 if summary["passed"] else 1


def expand_grid(cfg: Config) -> list[dict[str, Any]]:
    grid = cfg.sweep.get("grid")
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("sweep needs a non-empty grid")
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    keys = [k for k in GRID_KEYS if k in grid]
    values = []
    for k in keys:
        v = grid[k]
        if not isinstance(v, list) or not v:
            raise ConfigError(f"grid values for {k} must be a non-empty list")
        values.append(v)
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _point_market(cfg: Config, point: dict) -> tuple[MarketParams, PowerCost]:
    doc = params_to_dict(cfg.params, cfg.cost)
    for k, v in point.items():
        if k in ("a", "gamma"):
            doc["cost"][k] = v
        else:
            doc[k] = v
    try:
        params, cost = params_from_dict(doc)
    except ValueError as exc:
        raise ConfigError(f"grid point {point}: {exc}") from None
    problems = validate_params(params, cost)
    if problems:
        raise ConfigError(f"grid point {point}: {'; '.join(problems)}")
    return params, cost


def sweep_rows(cfg: Config) -> tuple[list[str], list[list]]:
    points = expand_grid(cfg)
    keys = list(points[0])
    rows = []
    for point in points:
        params, cost = _point_market(cfg, point)
        table = compute_value_table(params)
        sol = solve(params, cost, table).to_dict()
        rows.append([point[k] for k in keys] + [sol[c] for c in BENCHMARK_COLUMNS]
                    + [checks.benchmark_ordering(params, cost, table), "|".join(sol["flags"])])
    return keys + list(BENCHMARK_COLUMNS) + ["ordering_ok", "flags"], rows


def cmd_sweep(cfg: Config, out: Path) -> int:
    header, rows = sweep_rows(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv", header, rows)
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return 0


def _protocol_flags(cfg: Config) -> set[str]:
    if cfg.protocol is Protocol.SELLER_FIRST and cfg.terms is None:
        return {EXTRAPOLATED_FLAG}
    return set()


def cmd_simulate(cfg: Config, out: Path, replications: int | None, seed: int, horizon: float | None) -> int:
    block = cfg.simulate
    reps = replications if replications is not None else int(block.get("replications", 1))
    if reps < 1:
        raise ConfigError("replications must be >= 1")
    try:
        scenario = resolve_scenario(block.get("scenario", "on-path"), cfg.protocol)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if horizon is None:
        horizon = float(block.get("horizon", math.log(1e4) / cfg.params.r))
    if not horizon > 0:
        raise ConfigError("horizon must be > 0")
    terms = cfg.terms or equilibrium_terms(cfg.protocol, cfg.params, cfg.cost)
    keep_traces = bool(block.get("traces", reps <= 10))
    traces = run_replications(cfg.params, cfg.protocol, terms, scenario, seed, reps, horizon, cfg.cost,
                              n_jobs=int(block.get("n_jobs", 1)), record=keep_traces)

    out.mkdir(parents=True, exist_ok=True)
    if keep_traces:
        with open(out / "traces.jsonl", "w") as fh:
            for tr in traces:
                for rec in tr.records:
                    fh.write(json.dumps({"replication": tr.replication, **rec.to_json()}) + "\n")
    players = list(traces[0].payoffs)
    header = ["replication", "n_events", "deviation_time", "absorption_time", "exploitation"] + \
             [f"payoff_{x}" for x in players]
    rows = [[tr.replication, tr.n_events, tr.deviation_time, tr.absorption_time, tr.exploitation]
            + [tr.payoffs[x] for x in players] for tr in traces]
    _write_csv(out / "summary.csv", header, rows)

    expl = np.array([tr.exploitation for tr in traces if tr.deviation_time is not None])
    stats = {"replications": reps, "scenario": scenario.name, "protocol": cfg.protocol.value,
             "horizon": horizon, "seed": seed, "payoff_tail_bound": traces[0].tail_bound,
             "flags": sorted({f for tr in traces for f in tr.flags} | _protocol_flags(cfg)),
             "mean_payoff": {x: float(np.mean([tr.payoffs[x] for tr in traces])) for x in players}}
    if len(expl):
        stats["deviations"] = int(len(expl))
        stats["exploitation_mean"] = float(expl.mean())
        stats["exploitation_se"] = float(expl.std(ddof=1) / math.sqrt(len(expl))) if len(expl) > 1 else 0.0
        stats["absorbed_fraction"] = float(np.mean([tr.absorption_time is not None for tr in traces
                                                    if tr.deviation_time is not None]))
    text = json.dumps(_round15(stats), indent=2)
    (out / "summary.json").write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (default: B=2, S=1, unit rates, c(q)=q^2/2)")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--replications", type=int, default=None)
    common.add_argument("--horizon", type=float, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ostracism", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="benchmark trade levels as JSON")
    sub.add_parser("verify", parents=[common], help="run the invariant suite at the config's market")
    sub.add_parser("sweep", parents=[common], help="benchmarks over a parameter grid as CSV")
    sub.add_parser("simulate", parents=[common], help="simulate replications and write traces")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out)
    try:
        cfg = Config.load(args.config)
        seed = args.seed if args.seed is not None else cfg.seed
        log.debug("market %s, cost %s, protocol %s, seed %d", cfg.params, cfg.cost, cfg.protocol.value, seed)
        if args.replications is not None and args.replications < 1:
            raise ConfigError("replications must be >= 1")
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.replications, seed)
        if args.command == "sweep":
            return cmd_sweep(cfg, out)
        return cmd_simulate(cfg, out, args.replications, seed, args.horizon)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
