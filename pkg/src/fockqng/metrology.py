"""Fisher information of Fock-diagonal states for displacement sensing."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.constants import hbar
from scipy.optimize import brentq

from .channels import NoiseParams, damp_evolve
from .hilbert import DensityMatrix, FockDistribution, overlap_tables

#: Probabilities below this are treated as empty outcomes.
PROB_FLOOR = 1e-14


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class FisherResult:
    fi: float
    alpha: float
    terms_used: int
    skipped_terms: int = 0
    nudged: bool = False


@dataclass(frozen=True)
class FisherProfile:
    alpha: np.ndarray
    fi: np.ndarray
    fi_max: float
    d0: float


def qfi_fock(n: int) -> float:
    """QFI of |n> for the displacement amplitude, 4(2n+1)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return 4.0 * (2 * n + 1)


def avg_qfi_bound(nbar: float) -> float:
    if nbar < 0:
        raise ValueError("mean phonon number must be non-negative")
    return 4.0 * (1.0 + 2.0 * nbar)


def _default_m_max(n_in, d):
    return int(n_in + 4 * d * d + 12 * d + 30)


def _displaced_populations(probs, d, m_max):
    """P_m(d), dP_m/dd and the Cauchy-Schwarz bound on each FI term."""
    amp, damp = overlap_tables(probs.size, m_max, d)
    pm = (amp * amp) @ probs
    dpm = (2.0 * amp * damp) @ probs
    bound = (4.0 * damp * damp) @ probs
    return pm, dpm, bound


def _fisher_terms(pm, dpm, bound):
    # (dP)^2 / P <= bound, so a tiny P only matters near a Laguerre zero
    negligible = (pm < PROB_FLOOR) & (bound < PROB_FLOOR)
    keep = (pm > 0) & ~negligible
    terms = np.zeros_like(pm)
    terms[keep] = dpm[keep] ** 2 / pm[keep]
    skipped = int(np.count_nonzero(negligible & (dpm != 0)))
    return terms, skipped


def fisher_displacement(dist: FockDistribution, alpha: float, m_max: int | None = None,
                        rel_tol: float = 1e-6) -> FisherResult:
    """Classical FI of phonon counting on D(alpha) rho D(alpha)^dag.

    Parameters
    ----------
    dist : FockDistribution
        Populations of the Fock-diagonal probe state.
    alpha : float
        Displacement amplitude d = |alpha| > 0.
    m_max : int, optional
        Largest outcome kept in the sum. By default it is chosen from the
        input support and ``alpha``; the sum must then have converged to
        ``rel_tol``, otherwise :class:`ConvergenceError` is raised.

    Notes
    -----
    Derivatives come from the closed-form derivative of the Laguerre
    overlap. Outcomes with P_m(alpha) < 1e-14 are dropped and counted in
    ``skipped_terms``. If an outcome vanishes exactly while its derivative
    does not (alpha at a Laguerre zero) the point is shifted by 1e-9.
    """
    d = abs(alpha)
    if d <= 0:
        raise ValueError("alpha must be positive; use small_alpha_fisher for the alpha -> 0 limit")
    probs = dist.probs
    auto = m_max is None
    if auto:
        m_max = _default_m_max(probs.size, d)

    nudged = False
    pm, dpm, bound = _displaced_populations(probs, d, m_max)
    if np.any((pm == 0) & (bound >= PROB_FLOOR)):
        d += 1e-9
        nudged = True
        pm, dpm, bound = _displaced_populations(probs, d, m_max)

    terms, skipped = _fisher_terms(pm, dpm, bound)
    fi = float(terms.sum())
    missing = dist.total - float(pm.sum())
    tail = float(terms[-5:].sum())
    if fi > 0 and (tail > rel_tol * fi or missing > rel_tol):
        msg = (f"FI sum not converged at m_max={m_max}: last terms {tail:.3e}, "
               f"unaccounted probability {missing:.3e}")
        if auto:
            raise ConvergenceError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return FisherResult(fi, d, m_max + 1, skipped, nudged)


def fisher_displacement_fd(dist: FockDistribution, alpha: float, m_max: int | None = None,
                           step: float | None = None) -> float:
    """FI with the derivative replaced by a central finite difference."""
    d = abs(alpha)
    if m_max is None:
        m_max = _default_m_max(len(dist), d)
    h = 1e-5 * max(d, 1.0) if step is None else step
    plus = _displaced_populations(dist.probs, d + h, m_max)[0]
    minus = _displaced_populations(dist.probs, d - h, m_max)[0]
    centre = _displaced_populations(dist.probs, d, m_max)[0]
    keep = centre >= PROB_FLOOR
    terms = ((plus - minus) / (2 * h))[keep] ** 2 / centre[keep]
    return float(terms.sum())


def fisher_profile(dist: FockDistribution, alpha_grid) -> FisherProfile:
    grid = np.asarray(alpha_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("alpha grid must be positive and strictly ascending")
    fi = np.array([fisher_displacement(dist, a).fi for a in grid])
    best = int(np.argmax(fi))
    # ties broken towards the smallest displacement
    tied = np.flatnonzero(fi >= fi[best] - 1e-9 * max(fi[best], 1.0))
    best = int(tied[0])
    return FisherProfile(grid, fi, float(fi[best]), float(grid[best]))


def fisher_error_bar(probs, sigmas, alpha: float, rel_step: float = 1e-6) -> float:
    """First-order propagation of independent population errors into the FI."""
    probs = np.asarray(probs, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    base = fisher_displacement(FockDistribution(probs), alpha).fi
    var = 0.0
    for k in np.flatnonzero(sigmas > 0):
        h = rel_step * max(probs[k], 1e-3)
        up = probs.copy()
        down = probs.copy()
        down[k] = max(down[k] - h, 0.0)
        # populations are treated as independent, so step upward only while
        # the total stays physical and fall back to a one-sided difference
        if up.sum() + h <= 1.0:
            up[k] += h
        elif down[k] == probs[k]:
            # P_k = 0 with no free weight left: move weight from the rest
            up[k] += h
            up *= probs.sum() / up.sum()
        f_up = fisher_displacement(FockDistribution(up), alpha).fi if up[k] != probs[k] else base
        f_down = fisher_displacement(FockDistribution(down), alpha).fi
        var += ((f_up - f_down) / (up[k] - down[k]) * sigmas[k]) ** 2
    return math.sqrt(var) if base >= 0 else float("nan")


def damped_fock_distribution(n: int, t_over_t1: float) -> FockDistribution:
    """Populations of |n> after amplitude damping for ``t_over_t1`` lifetimes."""
    rho = damp_evolve(DensityMatrix.fock(n, max(n + 1, 2)), NoiseParams(1.0), t_over_t1)
    return rho.diagonal()


def small_alpha_fisher(n: int, t_over_t1: float, d_start: float = 2e-3, levels: int = 5,
                       rtol: float = 1e-6):
    """alpha -> 0 limit of the FI of a damped Fock state.

    The FI is even in alpha, so Richardson extrapolation in alpha^2 over a
    halving sequence removes the leading corrections. Returns a dict with
    the extrapolated ``fi_limit``, the analytic ``fi_approx`` =
    4(n+1) exp(-n t/T1) and the Richardson table diagnostics.
    """
    if n < 0 or t_over_t1 < 0:
        raise ValueError("n and t must be non-negative")
    dist = damped_fock_distribution(n, t_over_t1)
    ds = d_start * 0.5 ** np.arange(levels)
    table = [np.array([fisher_displacement(dist, d).fi for d in ds])]
    for j in range(1, levels):
        prev = table[-1]
        fac = 4.0**j
        table.append((fac * prev[1:] - prev[:-1]) / (fac - 1.0))
    estimates = np.array([row[-1] for row in table])
    fi_limit = float(estimates[-1])
    spread = abs(estimates[-1] - estimates[-2])
    if not np.isfinite(fi_limit) or spread > rtol * max(abs(fi_limit), 1.0):
        raise ConvergenceError(
            f"Richardson extrapolation unstable for n={n}, t/T1={t_over_t1}: "
            f"estimates {estimates.tolist()}"
        )
    return {
        "fi_limit": fi_limit,
        "fi_approx": 4.0 * (n + 1) * math.exp(-n * t_over_t1),
        "estimates": estimates,
    }


def damped_fock_fisher(n: int, noise: NoiseParams, t: float, alpha_grid) -> FisherProfile:
    """FI profile of |n> after free decay for time ``t``."""
    dim = max(n + 1, 2)
    rho = damp_evolve(DensityMatrix.fock(n, dim), noise, t)
    return fisher_profile(rho.diagonal(), alpha_grid)


def crossover_eta(n: int, m: int) -> float:
    """Transmittance above which |m> beats |n> in the small-alpha limit."""
    if not 0 <= n < m:
        raise ValueError(f"need 0 <= n < m, got n={n}, m={m}")
    return ((1.0 + n) / (1.0 + m)) ** (1.0 / (m - n))


def crossover_eta_numeric(n: int, m: int, exact_limit: bool = True) -> float:
    """Root-find the transmittance where the two small-alpha FI curves cross.

    With ``exact_limit`` the extrapolated FI of the damped states is used,
    otherwise the analytic approximation.
    """
    crossover_eta(n, m)
    key = "fi_limit" if exact_limit else "fi_approx"

    def gap(eta):
        tau = -math.log(eta)
        return small_alpha_fisher(m, tau)[key] - small_alpha_fisher(n, tau)[key]

    return brentq(gap, 0.05, 0.999, xtol=1e-10)


def fisher_reparam(fi_alpha: float, target: str, alpha: float | None = None) -> float:
    """Re-express an amplitude FI for theta = sqrt(2) alpha or nbar = |alpha|^2."""
    if fi_alpha < 0:
        raise ValueError("Fisher information must be non-negative")
    if target == "theta":
        return fi_alpha / 2.0
    if target == "nbar":
        if alpha is None or alpha == 0:
            raise ValueError("the nbar parametrisation needs alpha != 0")
        return fi_alpha / (4.0 * abs(alpha) ** 2)
    raise ValueError(f"unknown target {target!r}; expected 'theta' or 'nbar'")


def phase_average(rho: DensityMatrix) -> DensityMatrix:
    """Average over random phase-space rotations: keep the Fock diagonal."""
    return DensityMatrix(np.diag(np.diag(rho.elements)))


# --- force sensing ---------------------------------------------------------


def zero_point_fluctuation(mass: float, omega: float) -> float:
    if mass <= 0 or omega <= 0:
        raise ValueError("mass and omega must be positive")
    return math.sqrt(hbar / (2.0 * mass * omega))


@dataclass(frozen=True)
class ForceParams:
    """Force-sensing budget in SI units (kg, rad/s, s)."""

    mass: float
    omega: float
    t_probe: float
    t_dead: float
    fq: float = 4.0
    total_time: float | None = None

    def __post_init__(self):
        if self.mass <= 0 or self.omega <= 0:
            raise ValueError("mass and omega must be positive")
        if self.t_probe < 0 or self.t_dead < 0:
            raise ValueError("times must be non-negative")
        if self.total_time is not None and self.total_time < self.t_cycle:
            raise ValueError("total measurement time shorter than one cycle")

    @property
    def t_cycle(self) -> float:
        return self.t_probe + self.t_dead

    @property
    def total(self) -> float:
        return self.t_cycle if self.total_time is None else self.total_time

    @property
    def nu(self) -> float:
        return self.total / self.t_cycle

    @classmethod
    def device_defaults(cls) -> "ForceParams":
        """16.2 ug mode at 5.023 GHz, 90 us probe, 210 us dead time, F_Q = 4."""
        return cls(mass=16.2e-9, omega=2 * math.pi * 5.023e9, t_probe=90e-6, t_dead=210e-6, fq=4.0)


def force_sensitivity(params: ForceParams) -> dict:
    """Cramer-Rao bound on the resonant force amplitude, in N/sqrt(Hz)."""
    if params.t_probe == 0:
        raise ValueError("probe time must be positive")
    if params.fq <= 0:
        raise ValueError("Fisher information must be positive")
    xzpf = zero_point_fluctuation(params.mass, params.omega)
    bound = (2 * hbar / xzpf) * (params.t_cycle / params.t_probe) / math.sqrt(params.total * params.fq)
    return {
        "delta_f0_per_sqrt_hz": bound,
        "delta_f0": bound / math.sqrt(params.t_cycle),
        "nu": params.nu,
        "x_zpf": xzpf,
    }


def force_to_alpha(f0: float, x_zpf: float, t: float, phi: float = 0.0) -> complex:
    """Displacement produced by a resonant force F0 cos(w t + phi) in time t."""
    return 1j * f0 * x_zpf * t * complex(math.cos(phi), math.sin(phi)) / (2 * hbar)


def alpha_to_force(alpha: complex, x_zpf: float, t: float) -> float:
    return 2 * hbar * abs(alpha) / (x_zpf * t)
