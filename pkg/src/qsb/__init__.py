"""Quantum-secured blockchain simulator.

Modules: :mod:`~qsb.auth` (Toeplitz MAC), :mod:`~qsb.keypool`,
:mod:`~qsb.qkdsim`, :mod:`~qsb.channel`, :mod:`~qsb.ledger`,
:mod:`~qsb.consensus`, :mod:`~qsb.netsim` and the :mod:`~qsb.cli` runner.
"""

from .auth import Tag, ToeplitzParams, make_tag, verify_tag
from .keypool import KeyExhausted, KeyPool
from .ledger import Block, Chain, Transaction, verify_chain
from .netsim import SimulationReport, run
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"
