"""Pulse synthesis, open-system preparation and phonon-number readout."""

from .grape import GrapeConfig, GrapeResult, closed_fidelity, fidelity_and_gradient, grape_optimize, shortest_duration
from .hamiltonian import (
    HamiltonianBundle,
    Pulse,
    SystemParams,
    cqad_hamiltonian,
    mode_operators,
    phonon_reduced,
    propagate_pulse,
    qubit_reduced,
)
from .readout import (
    ChainResult,
    RpnBasis,
    RpnFit,
    default_readout_grid,
    device_phonon_noise,
    device_qubit_noise,
    rpn_basis,
    rpn_fit,
    rpn_signal,
    simulate_preparation_chain,
)

__all__ = [
    "ChainResult", "GrapeConfig", "GrapeResult", "HamiltonianBundle", "Pulse", "RpnBasis", "RpnFit",
    "SystemParams", "closed_fidelity", "cqad_hamiltonian", "default_readout_grid",
    "device_phonon_noise", "device_qubit_noise", "fidelity_and_gradient", "grape_optimize",
    "mode_operators", "phonon_reduced", "propagate_pulse", "qubit_reduced", "rpn_basis", "rpn_fit",
    "rpn_signal", "shortest_duration", "simulate_preparation_chain",
]
