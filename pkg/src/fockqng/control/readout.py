"""Open-system preparation chain and resonant phonon-number (RPN) readout."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, nnls

from ..channels import NoiseParams, lindblad_propagate
from ..hilbert import DensityMatrix, FockDistribution
from .hamiltonian import Pulse, SystemParams, cqad_hamiltonian, mode_operators, phonon_reduced, qubit_reduced

#: Device decoherence (seconds).
QUBIT_T1, QUBIT_T2_STAR = 17.2e-6, 24.5e-6
PHONON_T1, PHONON_T2_STAR = 89e-6, 152e-6
#: RPN interaction window and sampling used when none is given.
READOUT_WINDOW = 10e-6
READOUT_POINTS = 251
MAX_CONDITION = 1e8


def device_qubit_noise() -> NoiseParams:
    return NoiseParams.from_times(QUBIT_T1, QUBIT_T2_STAR)


def device_phonon_noise() -> NoiseParams:
    return NoiseParams.from_times(PHONON_T1, PHONON_T2_STAR)


def default_readout_grid(window: float = READOUT_WINDOW, points: int = READOUT_POINTS) -> np.ndarray:
    return np.linspace(0.0, window, points)


def _collapse_ops(q, a, qubit_noise, phonon_noise):
    ops = []
    for mode, noise in ((q, qubit_noise), (a, phonon_noise)):
        if noise is None:
            continue
        if noise.kappa > 0:
            ops.append(math.sqrt(noise.kappa) * mode)
        if noise.gamma_phi > 0:
            ops.append(math.sqrt(2.0 * noise.gamma_phi) * (mode.conj().T @ mode))
    return ops


# ---------------------------------------------------------------------------
# RPN forward model and inversion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RpnBasis:
    """Excited-state population of the qubit vs time, one row per phonon number."""

    t_grid: np.ndarray
    curves: np.ndarray

    @property
    def n_max(self) -> int:
        return self.curves.shape[0] - 1


def _rpn_params(params: SystemParams, phonon_dim: int) -> SystemParams:
    # readout runs with a two-level qubit on resonance with the phonon mode
    return dataclasses.replace(params, omega_q=params.omega_a, omega_d=params.omega_a,
                               qubit_levels=2, phonon_levels=phonon_dim + 1)


def rpn_signal(phonon_state: DensityMatrix, params: SystemParams, t_grid,
               qubit_noise: NoiseParams | None = None,
               phonon_noise: NoiseParams | None = None) -> np.ndarray:
    """P_e(t) after starting the qubit in |e> next to ``phonon_state``."""
    rho_a = phonon_state.elements
    p = _rpn_params(params, rho_a.shape[0])
    h = cqad_hamiltonian(p)
    q, a = mode_operators(2, p.phonon_levels)
    padded = np.zeros((p.phonon_levels, p.phonon_levels), complex)
    padded[:-1, :-1] = rho_a
    excited = np.diag([0.0, 1.0]).astype(complex)
    rho0 = DensityMatrix(np.kron(excited, padded), check=False)
    snaps = lindblad_propagate(h.drift, _collapse_ops(q, a, qubit_noise, phonon_noise),
                               rho0, t_grid, check=False)
    return np.array([np.clip(qubit_reduced(s.elements, 2, p.phonon_levels)[1, 1].real, 0.0, 1.0)
                     for s in snaps])


def rpn_basis(n_max: int, params: SystemParams, noise: NoiseParams | None, t_grid,
              phonon_noise: NoiseParams | None = None) -> RpnBasis:
    """Basis curves for |n>, n = 0..n_max; ``noise`` acts on the qubit."""
    t_grid = np.asarray(t_grid, dtype=float)
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    span = t_grid[-1] - t_grid[0]
    if span < 2.0 * math.pi / params.g:
        raise ValueError(
            f"time grid spans {span:.3e} s, less than two vacuum-Rabi periods ({2 * math.pi / params.g:.3e} s)"
        )
    curves = np.array([
        rpn_signal(DensityMatrix.fock(n, max(n_max + 1, 2)), params, t_grid, noise, phonon_noise)
        for n in range(n_max + 1)
    ])
    return RpnBasis(t_grid, curves)


@dataclass(frozen=True)
class RpnFit:
    distribution: FockDistribution
    uncertainty: np.ndarray
    residual_rms: float
    covariance: np.ndarray = field(repr=False)


def _sum_constrained(a, b, x0):
    """min |a x - b|^2 subject to x >= 0, sum x = 1."""
    cons = ({"type": "eq", "fun": lambda x: x.sum() - 1.0, "jac": lambda x: np.ones_like(x)},)
    res = minimize(lambda x: (np.sum((a @ x - b) ** 2), 2.0 * a.T @ (a @ x - b)), x0, jac=True,
                   method="SLSQP", bounds=[(0.0, 1.0)] * a.shape[1], constraints=cons,
                   options={"ftol": 1e-16, "maxiter": 1000})
    x = np.clip(res.x, 0.0, 1.0)
    return x / max(x.sum(), 1.0)


def rpn_fit(measured, basis: RpnBasis, sigma=None) -> RpnFit:
    """Non-negative least-squares weights of the basis curves with sum <= 1.

    ``sigma`` (scalar or per point) weights the fit and sets the error
    bars; without it the error bars use the residual variance.
    """
    b = np.asarray(measured, dtype=float)
    if b.shape != basis.t_grid.shape:
        raise ValueError(f"measured curve has {b.size} points, basis grid has {basis.t_grid.size}")
    a = basis.curves.T.copy()
    w = np.ones_like(b) if sigma is None else np.broadcast_to(np.asarray(sigma, float), b.shape)
    if np.any(w <= 0):
        raise ValueError("sigma must be positive")
    aw, bw = a / w[:, None], b / w
    cond = np.linalg.cond(aw)
    if cond > MAX_CONDITION:
        raise ValueError(
            f"RPN basis is ill-conditioned (condition number {cond:.2e}); use a longer time grid"
        )
    x, _ = nnls(aw, bw, maxiter=50 * aw.shape[1])
    if x.sum() > 1.0:
        x = _sum_constrained(aw, bw, x / x.sum())
    resid = bw - aw @ x
    cov = np.linalg.inv(aw.T @ aw)
    if sigma is None:
        dof = max(b.size - a.shape[1], 1)
        cov = cov * float(resid @ resid) / dof
    unc = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    rms = float(np.sqrt(np.mean((b - a @ x) ** 2)))
    return RpnFit(FockDistribution(np.clip(x, 0.0, 1.0)), unc, rms, cov)


# ---------------------------------------------------------------------------
# Preparation chain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainResult:
    fidelity_prepared: float
    fidelity_readout: float | None
    residual_excitation: float
    phonon_state: DensityMatrix = field(repr=False)
    readout_distribution: FockDistribution | None = field(default=None, repr=False)


def _runs(samples):
    """Group consecutive equal samples: [(value, count), ...]."""
    out = []
    for s in samples:
        if out and out[-1][0] == s:
            out[-1][1] += 1
        else:
            out.append([s, 1])
    return out


def prepare_open(pulse: Pulse, params: SystemParams, qubit_noise: NoiseParams | None,
                 phonon_noise: NoiseParams | None) -> np.ndarray:
    """Qubit-phonon density matrix at the end of ``pulse``, starting in |0, g>."""
    h = cqad_hamiltonian(params)
    q, a = mode_operators(params.qubit_levels, params.phonon_levels)
    cops = _collapse_ops(q, a, qubit_noise, phonon_noise)
    rho = np.zeros((h.dim, h.dim), complex)
    rho[h.index(0, 0), h.index(0, 0)] = 1.0
    for value, count in _runs(pulse.samples):
        snaps = lindblad_propagate(h.generator(complex(value)), cops, DensityMatrix(rho, check=False),
                                   [0.0, count * pulse.dt], check=False)
        rho = snaps[-1].elements
    return rho


def simulate_preparation_chain(pulse: Pulse, target_n: int, params: SystemParams,
                               qubit_noise: NoiseParams | None = None,
                               phonon_noise: NoiseParams | None = None,
                               include_readout: bool = True,
                               readout_grid=None) -> ChainResult:
    """Prepared and apparent (post-readout) population of |target_n>.

    Noise defaults to the device values; pass ``NoiseParams(0.0)`` for a
    noiseless mode.  After the pulse the qubit is traced out, which models
    an ideal reset.  With ``include_readout`` the phonon state then goes
    through the RPN interaction window under qubit and phonon decoherence,
    and the resulting signal is inverted with a basis that carries only the
    qubit decoherence; the fitted weight of |target_n> is the apparent
    fidelity.
    """
    qubit_noise = device_qubit_noise() if qubit_noise is None else qubit_noise
    phonon_noise = device_phonon_noise() if phonon_noise is None else phonon_noise
    rho = prepare_open(pulse, params, qubit_noise, phonon_noise)
    rho_a = phonon_reduced(rho, params.qubit_levels, params.phonon_levels)
    rho_a = 0.5 * (rho_a + rho_a.conj().T)
    rho_q = qubit_reduced(rho, params.qubit_levels, params.phonon_levels)
    prepared = float(rho_a[target_n, target_n].real)
    residual = float(1.0 - rho_q[0, 0].real)
    phonon_state = DensityMatrix(rho_a / np.trace(rho_a).real, check=False)
    if not include_readout:
        return ChainResult(prepared, None, residual, phonon_state)

    grid = default_readout_grid() if readout_grid is None else np.asarray(readout_grid, float)
    signal = rpn_signal(phonon_state, params, grid, qubit_noise, phonon_noise)
    basis = rpn_basis(phonon_state.dim - 1, params, qubit_noise, grid)
    fit = rpn_fit(signal, basis)
    return ChainResult(prepared, float(fit.distribution[target_n]), residual, phonon_state, fit.distribution)
