"""Permanent-ostracism equilibria in a buyer-seller market with Poisson matching."""
from .diffusion import (GuiltState, LinkSequence, ValueTable, compute_value_table, coupling_check,
                        discounted_exploitation, evolve_guilt_state, extend_onpath_value, viscosity)
from .equilibrium import (ICReport, TradeTerms, bilateral_quality, check_offpath_ic, check_onpath_ic,
                          naive_benchmark_buyer_first, naive_benchmark_seller_first, prop1_deviation_audit, solve)
from .model import CostSpec, MarketParams, PowerCost, Protocol, avg_cost_ratio_inverse, validate_params
from .simulator import inject_deviation, mc_estimate_value, run_replication, sample_event_stream

__all__ = [
    "GuiltState", "LinkSequence", "ValueTable", "compute_value_table", "coupling_check", "discounted_exploitation",
    "evolve_guilt_state", "extend_onpath_value", "viscosity", "ICReport", "TradeTerms", "bilateral_quality",
    "check_offpath_ic", "check_onpath_ic", "naive_benchmark_buyer_first", "naive_benchmark_seller_first",
    "prop1_deviation_audit", "solve", "CostSpec", "MarketParams", "PowerCost", "Protocol", "avg_cost_ratio_inverse",
    "validate_params", "inject_deviation", "mc_estimate_value", "run_replication", "sample_event_stream",
]
__version__ = "0.1.0"
