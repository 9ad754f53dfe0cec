"""Loss and dephasing channels on Fock-space states."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import gammaln

from .hilbert import DensityMatrix, FockDistribution


@dataclass(frozen=True)
class NoiseParams:
    """Markovian loss and pure dephasing of one bosonic mode.

    ``kappa`` is 1/T1, ``gamma_phi`` enters through the collapse operator
    sqrt(2 gamma_phi) a^dag a, ``omega`` only sets the rotating phase.
    """

    kappa: float
    gamma_phi: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if self.kappa < 0 or self.gamma_phi < 0:
            raise ValueError("kappa and gamma_phi must be non-negative")

    @classmethod
    def from_times(cls, t1: float, t2_star: float | None = None, omega: float = 0.0):
        """Rates from T1 and Ramsey T2*, using 1/T2* = 1/(2 T1) + gamma_phi."""
        kappa = 1.0 / t1
        gphi = 0.0 if t2_star is None else max(1.0 / t2_star - 0.5 * kappa, 0.0)
        return cls(kappa, gphi, omega)


@dataclass(frozen=True)
class LossChannel:
    eta: float

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"transmittance must lie in [0, 1], got {self.eta!r}")

    @classmethod
    def from_decay(cls, kappa: float, t: float) -> "LossChannel":
        return cls(math.exp(-kappa * t))


def _sqrt_binom(n, k):
    """sqrt(C(n, k)) for array arguments, via log-gamma."""
    return np.exp(0.5 * (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)))


def damp_evolve(rho0: DensityMatrix, noise: NoiseParams, t: float, ell_max: int | None = None):
    """Closed-form solution of the loss + dephasing master equation.

    Parameters
    ----------
    rho0 : DensityMatrix
        Initial state.
    noise : NoiseParams
        Loss rate, dephasing rate and frame frequency.
    t : float
        Evolution time, same time unit as the rates.
    ell_max : int, optional
        Last term of the series; defaults to the largest shift that still
        touches a nonzero element of ``rho0`` (the sum is then exact).

    Returns
    -------
    DensityMatrix
    """
    if t < 0:
        raise ValueError(f"evolution time must be non-negative, got {t!r}")
    r0 = rho0.elements
    dim = r0.shape[0]
    if ell_max is None:
        ell_max = dim - 1
    if t == 0:
        return rho0

    kt = noise.kappa * t
    lossy = -math.expm1(-kt)
    m = np.arange(dim)[:, None]
    n = np.arange(dim)[None, :]
    out = np.zeros_like(r0)
    if lossy == 0.0:
        out = r0.copy()
    else:
        log_lossy = math.log(lossy)
        for ell in range(0, min(ell_max, dim - 1) + 1):
            block = r0[ell:, ell:]
            mm, nn = m[: dim - ell], n[:, : dim - ell]
            weight = _sqrt_binom(mm + ell, ell) * _sqrt_binom(nn + ell, ell) * math.exp(ell * log_lossy)
            out[: dim - ell, : dim - ell] += weight * block
    factor = np.exp(-(m + n) * 0.5 * kt - (m - n) ** 2 * noise.gamma_phi * t)
    if noise.omega:
        factor = factor * np.exp(-1j * noise.omega * (m - n) * t)
    out = out * factor
    return DensityMatrix(out)


def binomial_loss(dist: FockDistribution, channel: LossChannel) -> FockDistribution:
    """Populations after a beamsplitter of transmittance ``eta``."""
    eta = channel.eta
    p = dist.probs
    if eta == 1.0:
        return dist
    size = p.size
    if eta == 0.0:
        out = np.zeros(size)
        out[0] = p.sum()
        return FockDistribution(out)
    n = np.arange(size)[None, :]
    m = np.arange(size)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = (
            gammaln(n + 1) - gammaln(m + 1) - gammaln(np.maximum(n - m, 0) + 1)
            + m * math.log(eta) + (n - m) * math.log1p(-eta)
        )
    kernel = np.where(n >= m, np.exp(logw), 0.0)
    out = kernel @ p
    return FockDistribution(np.clip(out, 0.0, 1.0))


def loss_db(kappa: float, t: float) -> float:
    """Power loss in dB of a coherent probe after time ``t`` at rate ``kappa``."""
    if kappa < 0 or t < 0:
        raise ValueError("kappa and t must be non-negative")
    return 10.0 * kappa * t / math.log(10.0)


def eta_to_db(eta: float) -> float:
    return -10.0 * math.log10(eta)


class IntegrationError(RuntimeError):
    pass


def lindblad_propagate(
    hamiltonian,
    collapse_ops,
    rho0: DensityMatrix,
    t_grid,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    method: str = "DOP853",
    check: bool = True,
):
    """Integrate the GKSL master equation and return snapshots on ``t_grid``.

    ``hamiltonian`` is either a constant matrix or a callable ``H(t)``.
    Snapshots are returned as :class:`DensityMatrix` objects; with
    ``check=False`` positivity and trace are not re-validated (useful in
    long inner loops).
    """
    r0 = rho0.elements
    dim = r0.shape[0]
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a non-empty 1-d array")
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be sorted ascending")

    if callable(hamiltonian):
        h_of_t = hamiltonian
        if h_of_t(t_grid[0]).shape != (dim, dim):
            raise ValueError("Hamiltonian dimension does not match the state")
    else:
        h_fixed = np.asarray(hamiltonian, dtype=complex)
        if h_fixed.shape != (dim, dim):
            raise ValueError(f"Hamiltonian shape {h_fixed.shape} does not match state dim {dim}")
        h_of_t = None

    cops = [np.asarray(c, dtype=complex) for c in collapse_ops]
    for c in cops:
        if c.shape != (dim, dim):
            raise ValueError(f"collapse operator shape {c.shape} does not match state dim {dim}")
    cdags = [c.conj().T for c in cops]
    # -i H_eff with H_eff = H - (i/2) sum L^dag L
    sum_ld_l = sum((cd @ c for c, cd in zip(cops, cdags)), np.zeros((dim, dim), complex))

    def rhs(t, y):
        rho = y.reshape(dim, dim)
        h = h_fixed if h_of_t is None else h_of_t(t)
        heff = -1j * h - 0.5 * sum_ld_l
        # explicit two-sided form; heff @ rho + h.c. amplifies anti-Hermitian round-off
        drho = heff @ rho + rho @ heff.conj().T
        for c, cd in zip(cops, cdags):
            drho += c @ rho @ cd
        return drho.ravel()

    snapshots = [r0.copy()]
    if t_grid.size > 1 and t_grid[-1] > t_grid[0]:
        sol = solve_ivp(
            rhs,
            (t_grid[0], t_grid[-1]),
            r0.ravel(),
            method=method,
            t_eval=t_grid,
            rtol=rtol,
            atol=atol,
        )
        if not sol.success:
            raise IntegrationError(
                f"master equation integration failed at t={sol.t[-1] if sol.t.size else t_grid[0]!r}: "
                f"{sol.message} (nfev={sol.nfev})"
            )
        snapshots = [sol.y[:, i].reshape(dim, dim) for i in range(1, sol.y.shape[1])]
        snapshots.insert(0, r0.copy())
    elif t_grid.size > 1:
        snapshots = [r0.copy() for _ in t_grid]

    out = []
    for rho in snapshots:
        rho = 0.5 * (rho + rho.conj().T)
        out.append(DensityMatrix(rho, check=check))
    return out


def fit_exponential_decay(t, p, floor: float = 1e-4):
    """Log-linear fit of p(t) = A exp(-t / tau) on points above ``floor``.

    Returns ``(tau, amplitude, rms_log_residual)``.
    """
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    keep = p > floor
    if keep.sum() < 3:
        raise ValueError(f"only {keep.sum()} points above {floor}; cannot fit a decay")
    slope, intercept = np.polyfit(t[keep], np.log(p[keep]), 1)
    resid = np.log(p[keep]) - (slope * t[keep] + intercept)
    if slope >= 0:
        raise ValueError(f"population does not decay (slope {slope:.3e}, rms residual {np.sqrt(np.mean(resid**2)):.3e})")
    return -1.0 / slope, math.exp(intercept), float(np.sqrt(np.mean(resid**2)))


def fock_decay_times(n_list, kappa: float, n_points: int = 41, span: float = 3.0):
    """Decay time of P_n for each initial Fock state |n>.

    P_n(t) is sampled from the analytic channel over ``span`` expected
    lifetimes 1/(n kappa) and fitted with a single exponential.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    taus = []
    for n in n_list:
        if n < 1:
            raise ValueError("Fock index must be >= 1")
        rho = DensityMatrix.fock(n, n + 1)
        t = np.linspace(0.0, span / (n * kappa), n_points)
        pn = [damp_evolve(rho, NoiseParams(kappa), ti).elements[n, n].real for ti in t]
        tau, _, rms = fit_exponential_decay(t, pn)
        if rms > 1e-6:
            raise ValueError(f"exponential fit for n={n} has rms log residual {rms:.3e}")
        taus.append(tau)
    return taus
