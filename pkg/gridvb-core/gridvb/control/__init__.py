from __future__ import annotations

from gridvb.control.inter import PIGains, PIState, capacity_shares, dead_zone, output_bounds, pi_step
from gridvb.control.intra import IntraGains, design_intra_gains, h2_cost, intra_step
from gridvb.control.model import LinearFeederModel, linearize_feeder
from gridvb.control.tuning import FeederLoop, InterFeederModel, design_pi_gains

__all__ = [
    "FeederLoop",
    "InterFeederModel",
    "IntraGains",
    "LinearFeederModel",
    "PIGains",
    "PIState",
    "capacity_shares",
    "dead_zone",
    "design_intra_gains",
    "design_pi_gains",
    "h2_cost",
    "intra_step",
    "linearize_feeder",
    "output_bounds",
    "pi_step",
]
