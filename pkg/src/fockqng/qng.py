"""Genuine n-phonon quantum non-Gaussianity thresholds and witnesses.

The excluded ("core") states are D(alpha) S(r) sum_{m<n} c_m |m>. For the
witness F_{a,n} = P_n + a P_{n+1}^+ the optimisation over the coefficients
c is an n x n Hermitian eigenproblem, so only |alpha|, |r| and the
relative squeezing phase are searched numerically; the global phase is
removed by taking alpha real.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .channels import LossChannel, binomial_loss, eta_to_db
from .hilbert import (
    CoreStateParams,
    FockBasis,
    FockDistribution,
    _displacement_eig,
    _squeezing_eig,
    core_state,
)
from .io import write_json

CURVE_FORMAT = "fockqng.threshold-curve"
CURVE_VERSION = 1


def default_a_grid(size: int = 64, a_max: float = 20.0, a_min: float = 1e-2) -> np.ndarray:
    """Zero plus log-spaced values of both signs in [-a_max, a_max]."""
    n_neg = (size - 1) // 2
    n_pos = size - 1 - n_neg
    neg = -np.geomspace(a_max, a_min, n_neg)
    pos = np.geomspace(a_min, a_max, n_pos)
    return np.concatenate([neg, [0.0], pos])


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 64
    alpha_box: float = 3.0
    r_box: float = 1.0
    dim: int = 80
    seed: int = 0
    tolerance: float = 1e-4
    jobs: int = 1

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.alpha_box <= 0 or self.r_box <= 0:
            raise ValueError("search boxes must be positive")
        if self.dim < 4:
            raise ValueError("dim too small")

    def key(self) -> dict:
        """Fields that influence the optimisation result."""
        d = dataclasses.asdict(self)
        d.pop("jobs")
        return d


@dataclass(frozen=True)
class QngPoint:
    p_n: float
    p_np1: float
    n: int

    def __post_init__(self):
        if not (0 <= self.p_n <= 1 and 0 <= self.p_np1 <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.p_n + self.p_np1 > 1 + 1e-9:
            raise ValueError(
                f"unphysical point: P_n + P_n+1 = {self.p_n + self.p_np1:.6f} > 1"
            )

    @classmethod
    def from_distribution(cls, dist: FockDistribution, n: int) -> "QngPoint":
        return cls(dist[n], min(dist.tail(n + 1), 1.0 - dist[n]), n)


@dataclass(frozen=True)
class CurvePoint:
    a: float
    f_bar: float
    p_n: float
    p_np1: float
    alpha: float = 0.0
    r: complex = 0j
    coeffs: tuple = ()
    restarts: int = 0
    converged: bool = True
    asymptotic: bool = False


@dataclass(frozen=True)
class ThresholdCurve:
    n: int
    points: tuple
    config: OptimizerConfig = field(default_factory=OptimizerConfig)

    @property
    def a_grid(self) -> np.ndarray:
        return np.array([p.a for p in self.points])

    @property
    def f_bar(self) -> np.ndarray:
        return np.array([p.f_bar for p in self.points])

    def max_p_n(self) -> float:
        return max(p.p_n for p in self.points)

    def f_bar_at(self, a: float) -> float:
        """F-bar at a grid value of a."""
        for p in self.points:
            if p.a == a:
                return p.f_bar
        raise KeyError(a)

    def boundary(self) -> np.ndarray:
        """Upper envelope of the maximisers in the (P_n, P_{n+1}^+) plane.

        Rows are (P_{n+1}^+, P_n) sorted by P_{n+1}^+; linear interpolation
        between rows gives the violation boundary.
        """
        pts = np.array([(p.p_np1, p.p_n) for p in self.points])
        pts = pts[np.argsort(pts[:, 0], kind="stable")]
        hull = []
        for x, y in pts:
            while len(hull) >= 2:
                (x1, y1), (x2, y2) = hull[-2], hull[-1]
                if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) >= 0:
                    hull.pop()
                else:
                    break
            hull.append((x, y))
        return np.array(hull)

    def to_dict(self) -> dict:
        return {
            "format": CURVE_FORMAT,
            "version": CURVE_VERSION,
            "n": self.n,
            "config": self.config.key(),
            "a_grid": [p.a for p in self.points],
            "points": [
                {
                    "a": p.a,
                    "f_bar": p.f_bar,
                    "p_n": p.p_n,
                    "p_np1": p.p_np1,
                    "alpha": p.alpha,
                    "r": [p.r.real, p.r.imag],
                    "coeffs": [[c.real, c.imag] for c in p.coeffs],
                    "restarts": p.restarts,
                    "converged": p.converged,
                    "asymptotic": p.asymptotic,
                }
                for p in self.points
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ThresholdCurve":
        if doc.get("format") != CURVE_FORMAT:
            raise ValueError("not a threshold-curve document")
        if doc.get("version") != CURVE_VERSION:
            raise ValueError(f"unsupported threshold-curve version {doc.get('version')!r}")
        pts = tuple(
            CurvePoint(
                a=p["a"],
                f_bar=p["f_bar"],
                p_n=p["p_n"],
                p_np1=p["p_np1"],
                alpha=p["alpha"],
                r=complex(*p["r"]),
                coeffs=tuple(complex(*c) for c in p["coeffs"]),
                restarts=p["restarts"],
                converged=p["converged"],
                asymptotic=p["asymptotic"],
            )
            for p in doc["points"]
        )
        return cls(doc["n"], pts, OptimizerConfig(**doc["config"]))


# ---------------------------------------------------------------------------
# Core-state block and the reduced objective
# ---------------------------------------------------------------------------


class _CoreBlock:
    """<m| D(d) S(s e^{i phi}) |k> for m <= n, k < n."""

    def __init__(self, n: int, dim: int):
        self.n = n
        self.dim = dim
        self.wd, vd = _displacement_eig(dim)
        self.ws, vs = _squeezing_eig(dim)
        self.vd_rows = vd[: n + 1, :]
        self.vd_h = vd.conj().T
        self.vs = vs
        self.vs_h_cols = vs.conj().T[:, :n]
        self.j = np.arange(dim)

    def __call__(self, d, s, phi):
        rows = (self.vd_rows * np.exp(-1j * d * self.wd)) @ self.vd_h
        cols = (self.vs * np.exp(-1j * s * self.ws)) @ self.vs_h_cols
        rot = np.exp(0.5j * phi * self.j)
        cols = rot[:, None] * cols * rot[: self.n].conj()[None, :]
        return rows @ cols

    def with_grad(self, d, s, phi):
        """The block and its derivatives in (d, s, phi)."""
        ed = np.exp(-1j * d * self.wd)
        rows = (self.vd_rows * ed) @ self.vd_h
        rows_d = (self.vd_rows * (-1j * self.wd * ed)) @ self.vd_h
        es = np.exp(-1j * s * self.ws)
        raw = (self.vs * es) @ self.vs_h_cols
        raw_s = (self.vs * (-1j * self.ws * es)) @ self.vs_h_cols
        rot = np.exp(0.5j * phi * self.j)
        outer = rot[:, None] * rot[: self.n].conj()[None, :]
        cols, cols_s = outer * raw, outer * raw_s
        cols_phi = 0.5j * (self.j[:, None] - self.j[None, : self.n]) * cols
        return rows @ cols, (rows_d @ cols, rows @ cols_s, rows @ cols_phi)


def _weights(n, a):
    w = np.full(n + 1, -float(a))
    w[n] = 1.0 - a
    return w


def _best_coeffs(block, a):
    """Max of F_{a,n} over normalised c for a fixed Gaussian part."""
    n = block.shape[1]
    k = (block.conj().T * _weights(n, a)) @ block
    vals, vecs = np.linalg.eigh(k)
    return a + vals[-1], vecs[:, -1]


def _point_from(block, c):
    psi = block @ c
    pops = np.abs(psi) ** 2
    p_n = float(pops[-1])
    return p_n, float(min(max(1.0 - pops.sum(), 0.0), 1.0 - p_n))


@lru_cache(maxsize=16)
def _core_block(n, dim):
    return _CoreBlock(n, dim)


def _bounds(cfg):
    return [(0.0, cfg.alpha_box), (0.0, cfg.r_box), (0.0, math.pi)]


def _coarse_grid(cfg):
    d = np.linspace(0.0, cfg.alpha_box, 25)
    s = np.linspace(0.0, cfg.r_box, 13)
    phi = np.linspace(0.0, math.pi, 7)
    return np.array(np.meshgrid(d, s, phi, indexing="ij")).reshape(3, -1).T


@lru_cache(maxsize=16)
def _coarse_blocks(n, cfg_key):
    cfg = OptimizerConfig(**dict(cfg_key))
    blk = _core_block(n, cfg.dim)
    grid = _coarse_grid(cfg)
    return grid, np.stack([blk(*x) for x in grid])


def _starts(n, a, cfg):
    """Deterministic start list; a prefix of the list for any larger restarts."""
    grid, blocks = _coarse_blocks(n, tuple(sorted(cfg.key().items())))
    w = _weights(n, a)
    ks = np.einsum("gmi,m,gmj->gij", blocks.conj(), w, blocks)
    vals = np.linalg.eigvalsh(ks)[:, -1]
    n_grid = min(8, cfg.restarts)
    # distinct coarse cells, best first
    order = np.argsort(-vals, kind="stable")[:n_grid]
    seeded = [grid[i] for i in order]
    n_sobol = cfg.restarts - n_grid
    if n_sobol > 0:
        m = max(0, math.ceil(math.log2(n_sobol)))
        sob = qmc.Sobol(d=3, scramble=True, seed=cfg.seed).random_base2(m)[:n_sobol]
        lo = np.array([b[0] for b in _bounds(cfg)])
        hi = np.array([b[1] for b in _bounds(cfg)])
        seeded.extend(lo + sob * (hi - lo))
    return seeded


def _maximise(n, a, cfg):
    blk = _core_block(n, cfg.dim)

    w = _weights(n, a)

    def neg(x):
        # Hellmann-Feynman gradient of the top eigenvalue
        b, db = blk.with_grad(*x)
        val, c = _best_coeffs(b, a)
        wbc = w * (b @ c)
        return -val, np.array([-2.0 * np.real(np.vdot(wbc, g @ c)) for g in db])

    best_val, best_x, all_ok = -np.inf, None, True
    for x0 in _starts(n, a, cfg):
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=_bounds(cfg),
                       options={"ftol": 1e-13, "gtol": 1e-9, "maxiter": 500})
        val = -res.fun
        if val > best_val + 1e-14:
            best_val, best_x, all_ok = val, res.x, bool(res.success)
    f_opt, c = _best_coeffs(blk(*best_x), a)
    p_n, p_np1 = _point_from(blk(*best_x), c)
    return f_opt, best_x, c, p_n, p_np1, all_ok


def _check_truncation(n, x, c, cfg):
    d, s, phi = x
    params = CoreStateParams(d, s * np.exp(1j * phi), c)
    state = core_state(params, FockBasis(cfg.dim))
    return state.truncated


def _curve_point(n, a, cfg):
    f_opt, x, c, p_n, p_np1, ok = _maximise(n, a, cfg)
    if _check_truncation(n, x, c, cfg):
        bigger = dataclasses.replace(cfg, dim=2 * cfg.dim)
        f_big = _best_coeffs(_core_block(n, bigger.dim)(*x), a)[0]
        if abs(f_big - f_opt) > cfg.tolerance:
            raise RuntimeError(
                f"core-state optimum for n={n}, a={a} depends on the truncation "
                f"(F={f_opt:.6f} at dim={cfg.dim}, {f_big:.6f} at dim={bigger.dim})"
            )
    d, s, phi = (float(v) for v in x)
    # an optimum pinned to the search box is only a lower bound on F-bar
    pinned = d > cfg.alpha_box - 1e-6 or s > cfg.r_box - 1e-6
    pt = CurvePoint(
        a=float(a), f_bar=float(f_opt), p_n=p_n, p_np1=p_np1, alpha=d,
        r=complex(s * np.exp(1j * phi)), coeffs=tuple(complex(v) for v in c),
        restarts=cfg.restarts, converged=ok and not pinned,
    )
    # |alpha| -> infinity sends the core state to (P_n, P_{n+1}^+) = (0, 1)
    if a >= f_opt - cfg.tolerance:
        pt = CurvePoint(a=float(a), f_bar=float(a), p_n=0.0, p_np1=1.0,
                        restarts=cfg.restarts, asymptotic=True)
    return pt


def _curve_point_job(args):
    return _curve_point(*args)


def threshold_pbar(n: int, cfg: OptimizerConfig | None = None) -> float:
    """Largest |<n|core state>|^2 over the (n-1)-phonon core family."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = cfg or OptimizerConfig()
    return _curve_point(n, 0.0, cfg).f_bar


def threshold_curve(n: int, a_grid=None, cfg: OptimizerConfig | None = None) -> ThresholdCurve:
    """F-bar_n(a) and its maximisers for every a in ``a_grid``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = cfg or OptimizerConfig()
    grid = default_a_grid() if a_grid is None else np.asarray(a_grid, dtype=float)
    grid = np.unique(grid)
    jobs = [(n, float(a), cfg) for a in grid]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            pts = list(pool.map(_curve_point_job, jobs))
    else:
        pts = [_curve_point(*j) for j in jobs]
    return ThresholdCurve(n, tuple(pts), cfg)


# ---------------------------------------------------------------------------
# Witness and depth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WitnessResult:
    violated: bool
    margin: float
    best_a: float
    margins: np.ndarray = field(repr=False, compare=False, default=None)


def qng_witness(point: QngPoint, curve: ThresholdCurve, tolerance: float | None = None) -> WitnessResult:
    """Check P_n + a P_{n+1}^+ > F-bar_n(a) over the curve's a grid.

    Curve points flagged as unconverged are not trusted and never produce
    a violation; their entries in ``margins`` are -inf.
    """
    if point.n != curve.n:
        raise ValueError(f"point is for n={point.n}, curve for n={curve.n}")
    tol = curve.config.tolerance if tolerance is None else tolerance
    a = curve.a_grid
    trusted = np.array([p.converged for p in curve.points])
    margins = np.where(trusted, point.p_n + a * point.p_np1 - curve.f_bar, -np.inf)
    k = int(np.argmax(margins))
    return WitnessResult(bool(margins[k] > tol), float(margins[k]), float(a[k]), margins)


@dataclass(frozen=True)
class DepthResult:
    eta_min: float
    depth_db: float
    violated: bool


def qng_depth(dist: FockDistribution, n: int, curve: ThresholdCurve, eta_tol: float = 1e-5) -> DepthResult:
    """Smallest beamsplitter transmittance at which ``dist`` still violates.

    A non-violating input gives eta_min = 1 (0 dB) with ``violated=False``.
    """

    def violates(eta):
        lossy = binomial_loss(dist, LossChannel(eta))
        return qng_witness(QngPoint.from_distribution(lossy, n), curve).violated

    if not violates(1.0):
        return DepthResult(1.0, 0.0, False)
    lo, hi = 0.0, 1.0
    if violates(1e-12):
        return DepthResult(1e-12, eta_to_db(1e-12), True)
    while hi - lo > eta_tol:
        mid = 0.5 * (lo + hi)
        if violates(mid):
            hi = mid
        else:
            lo = mid
    return DepthResult(hi, eta_to_db(hi), True)


def depth_time_equivalent(eta_min: float, kappa: float) -> float:
    """Free-decay time with the same loss as transmittance ``eta_min``."""
    if not 0 < eta_min <= 1:
        raise ValueError("eta_min must lie in (0, 1]")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return max(0.0, -math.log(eta_min) / kappa)


# ---------------------------------------------------------------------------
# On-disk cache
# ---------------------------------------------------------------------------


def curve_cache_key(n: int, a_grid, cfg: OptimizerConfig) -> str:
    payload = json.dumps(
        {"n": n, "a": [float(a) for a in np.unique(a_grid)], "cfg": cfg.key(), "v": CURVE_VERSION},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def cached_threshold_curve(n: int, a_grid=None, cfg: OptimizerConfig | None = None,
                           cache_dir: Path | str | None = None) -> ThresholdCurve:
    """threshold_curve with a JSON cache keyed by (n, a grid, config)."""
    cfg = cfg or OptimizerConfig()
    grid = default_a_grid() if a_grid is None else np.asarray(a_grid, dtype=float)
    if cache_dir is None:
        return threshold_curve(n, grid, cfg)
    path = Path(cache_dir) / f"curve_n{n}_{curve_cache_key(n, grid, cfg)}.json"
    if path.exists():
        return ThresholdCurve.from_dict(json.loads(path.read_text()))
    curve = threshold_curve(n, grid, cfg)
    write_json(path, curve.to_dict())
    return curve
