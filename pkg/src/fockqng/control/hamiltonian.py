"""Qubit-phonon Hamiltonian in the drive frame and piecewise-constant propagation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..hilbert import StateVector

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SystemParams:
    """Device frequencies in rad/s.

    The defaults describe resonant preparation: qubit, phonon and drive all
    sit at the phonon frequency, so only the anharmonicity and the coupling
    survive in the rotating frame.
    """

    omega_q: float = TWO_PI * 5.023e9
    anharm: float = TWO_PI * 185e6
    omega_a: float = TWO_PI * 5.023e9
    g: float = TWO_PI * 292e3
    omega_d: float = TWO_PI * 5.023e9
    qubit_levels: int = 3
    phonon_levels: int = 10

    def __post_init__(self):
        if self.g <= 0:
            raise ValueError("coupling g must be positive")
        if self.qubit_levels < 2:
            raise ValueError("qubit_levels must be >= 2")
        if self.phonon_levels < 2:
            raise ValueError("phonon_levels must be >= 2")

    @property
    def dim(self) -> int:
        return self.qubit_levels * self.phonon_levels

    def require_target(self, n: int):
        if self.phonon_levels < n + 4:
            raise ValueError(
                f"phonon_levels={self.phonon_levels} too small for target n={n} (need >= {n + 4})"
            )


@dataclass(frozen=True)
class HamiltonianBundle:
    """H(t) = drift + I(t) control_real + Q(t) control_imag on qubit x phonon.

    Basis index of |q, n> is ``q * phonon_levels + n``.
    """

    drift: np.ndarray
    control_real: np.ndarray
    control_imag: np.ndarray
    qubit_levels: int
    phonon_levels: int

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    def index(self, q: int, n: int) -> int:
        if not (0 <= q < self.qubit_levels and 0 <= n < self.phonon_levels):
            raise IndexError(f"|q={q}, n={n}> outside the truncated space")
        return q * self.phonon_levels + n

    def ket(self, q: int, n: int) -> StateVector:
        v = np.zeros(self.dim, complex)
        v[self.index(q, n)] = 1.0
        return StateVector(v)

    def generator(self, sample: complex) -> np.ndarray:
        return self.drift + sample.real * self.control_real + sample.imag * self.control_imag


def _lowering(levels):
    return np.diag(np.sqrt(np.arange(1, levels, dtype=float)), 1).astype(complex)


def mode_operators(qubit_levels: int, phonon_levels: int):
    """(q, a) embedded in the tensor-product space."""
    q = np.kron(_lowering(qubit_levels), np.eye(phonon_levels))
    a = np.kron(np.eye(qubit_levels), _lowering(phonon_levels))
    return q, a


def cqad_hamiltonian(params: SystemParams) -> HamiltonianBundle:
    q, a = mode_operators(params.qubit_levels, params.phonon_levels)
    qd, ad = q.conj().T, a.conj().T
    drift = (
        (params.omega_q - params.omega_d) * (qd @ q)
        + (params.omega_a - params.omega_d) * (ad @ a)
        - 0.5 * params.anharm * (qd @ qd @ q @ q)
        + params.g * (q @ ad + qd @ a)
    )
    return HamiltonianBundle(
        drift=drift,
        control_real=qd + q,
        control_imag=1j * (qd - q),
        qubit_levels=params.qubit_levels,
        phonon_levels=params.phonon_levels,
    )


@dataclass(frozen=True)
class Pulse:
    """Piecewise-constant complex drive Omega = I + iQ in rad/s."""

    samples: np.ndarray
    dt: float = 4e-9
    ceiling: float | None = None

    def __post_init__(self):
        s = np.array(self.samples, dtype=complex).ravel()
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.ceiling is not None and s.size and np.max(np.abs(s)) > self.ceiling * (1 + 1e-12):
            k = int(np.argmax(np.abs(s)))
            raise ValueError(
                f"sample {k} has |Omega| = {abs(s[k]):.6g} rad/s above the ceiling {self.ceiling:.6g}"
            )

    @property
    def duration(self) -> float:
        return self.samples.size * self.dt

    def refined(self, factor: int) -> "Pulse":
        """Same waveform on a grid ``factor`` times finer."""
        return Pulse(np.repeat(self.samples, factor), self.dt / factor, self.ceiling)


def _step(h, dt):
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


def propagate_pulse(pulse: Pulse, h: HamiltonianBundle, initial: StateVector) -> StateVector:
    """Apply exp(-i H_k dt) for every sample; step propagators are cached per value."""
    psi = np.asarray(initial.amplitudes, dtype=complex)
    if psi.shape != (h.dim,):
        raise ValueError(f"state dimension {psi.shape[0]} does not match Hamiltonian dimension {h.dim}")
    cache = {}
    for s in pulse.samples:
        key = complex(s)
        u = cache.get(key)
        if u is None:
            u = cache[key] = _step(h.generator(key), pulse.dt)
        psi = u @ psi
    return StateVector(psi)


def phonon_reduced(rho: np.ndarray, qubit_levels: int, phonon_levels: int) -> np.ndarray:
    """Partial trace over the qubit."""
    r = rho.reshape(qubit_levels, phonon_levels, qubit_levels, phonon_levels)
    return np.einsum("iaib->ab", r)


def qubit_reduced(rho: np.ndarray, qubit_levels: int, phonon_levels: int) -> np.ndarray:
    r = rho.reshape(qubit_levels, phonon_levels, qubit_levels, phonon_levels)
    return np.einsum("iaja->ij", r)
