"""Simulation and exact verification of a loss-tolerant remote CNOT between two atoms."""

from .devices import NoiseModel
from .protocol import ProtocolConfig, ProtocolResult, RetriesExhausted, run, share_epr_chain
from .qstate import RandomSource, StateVector
from .verify import enumerate_branches, ideal_cnot, process_check, sampled_vs_exact

__all__ = [
    "NoiseModel",
    "ProtocolConfig",
    "ProtocolResult",
    "RetriesExhausted",
    "RandomSource",
    "StateVector",
    "enumerate_branches",
    "ideal_cnot",
    "process_check",
    "run",
    "sampled_vs_exact",
    "share_epr_chain",
]
