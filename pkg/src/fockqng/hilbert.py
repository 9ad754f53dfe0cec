"""Truncated Fock-space states, operators and displaced-Fock overlaps."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

#: Population allowed in the top two basis states before a result is flagged.
EDGE_TOLERANCE = 1e-6


class TruncationWarning(UserWarning):
    """Emitted when a state leaks into the top of the truncated basis."""


@dataclass(frozen=True)
class FockBasis:
    """Fock states |0>..|dim-1>."""

    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ValueError(f"dim must be an integer >= 2, got {self.dim!r}")

    def annihilation(self) -> np.ndarray:
        return _annihilation(self.dim).copy()

    def number(self) -> np.ndarray:
        return np.diag(np.arange(self.dim, dtype=float)).astype(complex)


@lru_cache(maxsize=64)
def _annihilation(dim):
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)
    a.flags.writeable = False
    return a


def edge_population(vec: np.ndarray) -> float:
    """Population in the two highest basis states."""
    vec = np.asarray(vec)
    return float(np.sum(np.abs(vec[-2:]) ** 2))


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        return StateVector(self.amplitudes / self.norm(), self.truncated)

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    """Density operator in the truncated Fock basis.

    Construction checks Hermiticity, unit trace and positivity at the
    tolerances below; pass ``check=False`` for intermediate objects.
    """

    elements: np.ndarray
    check: bool = field(default=True, repr=False, compare=False)

    HERMITIAN_TOL = 1e-10
    TRACE_TOL = 1e-10
    EIGEN_TOL = -1e-9

    def __post_init__(self):
        rho = np.array(self.elements, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {rho.shape}")
        rho.flags.writeable = False
        object.__setattr__(self, "elements", rho)
        if self.check:
            self.validate()

    def validate(self):
        rho = self.elements
        herm = np.max(np.abs(rho - rho.conj().T))
        if herm > self.HERMITIAN_TOL:
            raise ValueError(f"density matrix not Hermitian (max deviation {herm:.3e})")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > self.TRACE_TOL:
            raise ValueError(f"density matrix trace is {tr!r}, expected 1")
        low = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
        if low < self.EIGEN_TOL:
            raise ValueError(f"density matrix has negative eigenvalue {low:.3e}")

    @property
    def dim(self) -> int:
        return self.elements.shape[0]

    @property
    def basis(self) -> FockBasis:
        return FockBasis(self.dim)

    def diagonal(self) -> "FockDistribution":
        return FockDistribution(np.clip(np.diag(self.elements).real, 0.0, 1.0))

    def trace_distance(self, other: "DensityMatrix") -> float:
        diff = self.elements - other.elements
        return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))

    @classmethod
    def fock(cls, n: int, dim: int) -> "DensityMatrix":
        return fock_state(n, FockBasis(dim)).density()


@dataclass(frozen=True)
class FockDistribution:
    """Phonon-number probabilities P_0, P_1, ...

    The vector may be sub-normalized when its tail was cut off.
    """

    probs: np.ndarray
    truncated: bool = False

    SUM_TOL = 1e-9

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).ravel()
        if p.size == 0:
            raise ValueError("empty distribution")
        if not np.all(np.isfinite(p)):
            raise ValueError("distribution contains non-finite entries")
        if np.any(p < -self.SUM_TOL) or np.any(p > 1 + self.SUM_TOL):
            raise ValueError("probabilities must lie in [0, 1]")
        if p.sum() > 1 + self.SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r} > 1")
        p = np.clip(p, 0.0, 1.0)
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def __getitem__(self, n):
        return float(self.probs[n]) if n < self.probs.size else 0.0

    @property
    def total(self) -> float:
        return float(self.probs.sum())

    def tail(self, n: int) -> float:
        """Probability of at least ``n`` phonons."""
        return float(self.probs[n:].sum())

    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def padded(self, length: int) -> np.ndarray:
        out = np.zeros(max(length, self.probs.size))
        out[: self.probs.size] = self.probs
        return out

    @classmethod
    def fock(cls, n: int, length: int | None = None) -> "FockDistribution":
        p = np.zeros(n + 1 if length is None else length)
        p[n] = 1.0
        return cls(p)


@dataclass(frozen=True)
class CoreStateParams:
    """Gaussian-transformed superposition D(alpha) S(r) sum_m c_m |m>."""

    alpha: complex
    r: complex
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).ravel()
        if c.size == 0:
            raise ValueError("coeffs must be non-empty")
        norm = np.sum(np.abs(c) ** 2)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"sum |c_m|^2 = {norm!r}, expected 1")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "alpha", complex(self.alpha))
        object.__setattr__(self, "r", complex(self.r))

    @property
    def rank(self) -> int:
        return self.coeffs.size


def fock_state(n: int, basis: FockBasis) -> StateVector:
    if n < 0 or n >= basis.dim:
        raise IndexError(f"Fock index {n} outside basis of dimension {basis.dim}")
    v = np.zeros(basis.dim, dtype=complex)
    v[n] = 1.0
    return StateVector(v)


# ---------------------------------------------------------------------------
# Gaussian unitaries
#
# Both generators are fixed anti-Hermitian matrices up to a real scale and a
# phase rotation e^{-i theta N}.  One Hermitian eigendecomposition per
# dimension therefore serves every alpha and r.
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _displacement_eig(dim):
    a = _annihilation(dim)
    # D(d) = exp(d (a^dag - a)) = exp(-i d H) with H = i (a^dag - a)
    w, v = np.linalg.eigh(1j * (a.conj().T - a))
    return w, v


@lru_cache(maxsize=32)
def _squeezing_eig(dim):
    a = _annihilation(dim)
    a2 = a @ a
    # S(s) = exp(s (a^2 - a^dag^2) / 2) = exp(-i s K) with K = i (a^2 - a^dag^2) / 2
    w, v = np.linalg.eigh(0.5j * (a2 - a2.conj().T))
    return w, v


def _rotation(dim, theta):
    return np.exp(-1j * theta * np.arange(dim))


def _rotated_exp(eig, scale, theta, dim):
    w, v = eig
    core = (v * np.exp(-1j * scale * w)) @ v.conj().T
    rot = _rotation(dim, theta)
    return rot[:, None] * core * rot.conj()[None, :]


def displacement_operator(alpha: complex, basis: FockBasis) -> np.ndarray:
    """exp(alpha a^dag - alpha^* a) on the truncated space."""
    alpha = complex(alpha)
    return _rotated_exp(_displacement_eig(basis.dim), abs(alpha), -np.angle(alpha), basis.dim)


def squeezing_operator(r: complex, basis: FockBasis) -> np.ndarray:
    """exp((r^* a^2 - r a^dag^2) / 2) on the truncated space.

    Emits :class:`TruncationWarning` when the squeezed vacuum leaks more
    than ``EDGE_TOLERANCE`` into the top two basis states.
    """
    r = complex(r)
    op = _rotated_exp(_squeezing_eig(basis.dim), abs(r), -0.5 * np.angle(r), basis.dim)
    if edge_population(op[:, 0]) > EDGE_TOLERANCE:
        warnings.warn(
            f"squeezing |r|={abs(r):.3g} leaks past the truncation at dim={basis.dim}",
            TruncationWarning,
            stacklevel=2,
        )
    return op


def core_state(params: CoreStateParams, basis: FockBasis) -> StateVector:
    """D(alpha) S(r) sum_m c_m |m>, squeezing applied first."""
    if params.rank > basis.dim // 2:
        raise ValueError(
            f"{params.rank} core coefficients need dim >= {2 * params.rank}, got {basis.dim}"
        )
    c = np.zeros(basis.dim, dtype=complex)
    c[: params.rank] = params.coeffs
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        s = squeezing_operator(params.r, basis)
    psi = displacement_operator(params.alpha, basis) @ (s @ c)
    leak = edge_population(psi)
    psi = psi / np.linalg.norm(psi)
    return StateVector(psi, truncated=leak > EDGE_TOLERANCE)


# ---------------------------------------------------------------------------
# Closed-form displaced-Fock overlaps
# ---------------------------------------------------------------------------


def laguerre(p: int, k: float, x):
    """Generalized Laguerre polynomial L_p^k(x) by upward recurrence in p."""
    x = np.asarray(x, dtype=float)
    if p < 0:
        return np.zeros_like(x)
    prev = np.ones_like(x)
    if p == 0:
        return prev
    cur = 1.0 + k - x
    for j in range(1, p):
        prev, cur = cur, ((2 * j + 1 + k - x) * cur - (j + k) * prev) / (j + 1)
    return cur


def _overlap_parts(m, n, d):
    """Signed amplitude of |<m|D(d)|n>| and its derivative in d (d > 0)."""
    lo, hi = min(m, n), max(m, n)
    k = hi - lo
    x = d * d
    # 2 log d rather than log(d * d): the square underflows for tiny d
    log_pref = 0.5 * (gammaln(lo + 1) - gammaln(hi + 1) - x + 2.0 * k * np.log(d))
    pref = np.exp(log_pref)
    lag = laguerre(lo, k, x)
    amp = pref * lag
    # d/dx L_p^k = -L_{p-1}^{k+1}
    lag_d = -laguerre(lo - 1, k + 1, x)
    # amp * k / d taken in log space as well so that tiny d cannot overflow
    edge = k * np.exp(log_pref - np.log(d)) * lag if k else 0.0
    damp = edge - d * amp + 2.0 * d * pref * lag_d
    return amp, damp


def displacement_overlap(m: int, n: int, alpha):
    """|<m|D(alpha)|n>|^2 from the generalized-Laguerre closed form.

    Depends only on |alpha| and is symmetric in (m, n). The prefactor is
    evaluated in log space so indices of a few hundred are safe.
    """
    if m < 0 or n < 0:
        raise ValueError("Fock indices must be non-negative")
    d = np.abs(np.asarray(alpha))
    if np.ndim(d) == 0 and d == 0:
        return 1.0 if m == n else 0.0
    amp, _ = _overlap_parts(m, n, np.where(d == 0, 1.0, d))
    out = np.where(d == 0, float(m == n), amp * amp)
    return float(out) if np.ndim(out) == 0 else out


def overlap_tables(dmax_in: int, m_max: int, d: float):
    """Amplitudes and d-derivatives of <m|D(d)|n> magnitudes.

    Returns two arrays of shape (m_max+1, dmax_in) with entry [m, n].
    """
    amp = np.empty((m_max + 1, dmax_in))
    damp = np.empty_like(amp)
    for n in range(dmax_in):
        for m in range(m_max + 1):
            amp[m, n], damp[m, n] = _overlap_parts(m, n, d)
    return amp, damp


def displaced_fock_distribution(dist: FockDistribution, alpha, out_len: int) -> FockDistribution:
    """Populations of D(alpha) rho D(alpha)^dag for Fock-diagonal rho."""
    d = abs(complex(alpha))
    if d == 0:
        out = np.zeros(out_len)
        k = min(out_len, len(dist))
        out[:k] = dist.probs[:k]
        return FockDistribution(out, truncated=out.sum() < dist.total - 1e-6)
    amp, _ = overlap_tables(len(dist), out_len - 1, d)
    out = (amp**2) @ dist.probs
    return FockDistribution(np.clip(out, 0.0, 1.0), truncated=out.sum() < dist.total - 1e-6)
