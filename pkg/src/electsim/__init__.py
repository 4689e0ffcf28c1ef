"""Seeded simulator for randomized leader election in synchronous anonymous networks."""

from .engine import Kind, ModelConfig, Status, Token, Trace, check_congest, message_count, round_count, run
from .protocols import CompleteElection, NaiveElection, Params, WalkElection, explicit_broadcast
from .topology import (
    Topology,
    assign_random_ports,
    make_complete,
    make_cycle,
    make_hypercube,
    make_random_regular,
    mixing_time,
    stationary_distribution,
    verify_mixing,
)

__version__ = "0.1.0"
