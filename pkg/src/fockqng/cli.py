"""Command-line front end.

Exit codes: 0 success, 1 malformed input or usage, 2 physically invalid input.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .channels import LossChannel, NoiseParams, binomial_loss
from .control import (
    GrapeConfig,
    SystemParams,
    default_readout_grid,
    grape_optimize,
    rpn_basis,
    rpn_fit,
    rpn_signal,
    shortest_duration,
    simulate_preparation_chain,
)
from .hilbert import DensityMatrix, FockDistribution
from .io import (
    MalformedFileError,
    UnphysicalInputError,
    distribution_document,
    pulse_document,
    read_distribution,
    read_rpn_csv,
    write_csv,
    write_distribution_csv,
    write_json,
    write_rpn_csv,
)
from .metrology import ForceParams, fisher_error_bar, fisher_profile, force_sensitivity, qfi_fock
from .qng import (
    OptimizerConfig,
    QngPoint,
    cached_threshold_curve,
    default_a_grid,
    depth_time_equivalent,
    qng_depth,
    qng_witness,
)

CONFIG_ENV = "FOCKQNG_CONFIG"
CACHE_ENV = "FOCKQNG_CACHE"

DEFAULT_CONFIG = {
    # device, frequencies are f with omega = 2 pi f
    "qubit_freq_ghz": 5.023,
    "phonon_freq_ghz": 5.023,
    "drive_freq_ghz": 5.023,
    "anharm_mhz": 185.0,
    "g_khz": 292.0,
    "qubit_levels": 3,
    "phonon_levels": None,
    "qubit_t1_us": 17.2,
    "qubit_t2_star_us": 24.5,
    "phonon_t1_us": 89.0,
    "phonon_t2_star_us": 152.0,
    # force budget
    "mass_ug": 16.2,
    "t_probe_us": 90.0,
    "t_dead_us": 210.0,
    "probe_fisher": 4.0,
    # pulse synthesis
    "dt_ns": 4.0,
    "ceiling_mhz": 10.0,
    "target_fidelity": 0.999,
    "grape_restarts": 3,
    "grape_max_iter": 2000,
    # thresholds
    "qng_restarts": 64,
    "alpha_box": 3.0,
    "r_box": 1.0,
    "dim": 80,
    "tolerance": 1e-4,
    "a_grid_size": 64,
    "a_max": 20.0,
    "cache_dir": None,
    # readout
    "readout_window_us": 10.0,
    "readout_points": 251,
    "seed": 0,
    "jobs": 1,
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: error: {message}", 1)


# ---------------------------------------------------------------------------
# configuration and manifest
# ---------------------------------------------------------------------------


def load_config(args) -> tuple[dict, str | None]:
    cfg = dict(DEFAULT_CONFIG)
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise CliError(f"{path}: cannot read config ({exc.strerror})", 1) from None
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}:{exc.lineno}: {exc.msg}", 1) from None
        if not isinstance(user, dict):
            raise CliError(f"{path}: config must be a JSON object", 1)
        unknown = sorted(set(user) - set(cfg))
        if unknown:
            raise CliError(f"{path}: unknown config keys {', '.join(unknown)}", 1)
        cfg.update(user)
    for key in ("seed", "dim", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg, path


def _two_pi(f, unit):
    return 2.0 * math.pi * f * unit


def system_params(cfg, n=None) -> SystemParams:
    levels = cfg["phonon_levels"]
    if levels is None:
        levels = (n + 4) if n is not None else 10
    return SystemParams(
        omega_q=_two_pi(cfg["qubit_freq_ghz"], 1e9),
        anharm=_two_pi(cfg["anharm_mhz"], 1e6),
        omega_a=_two_pi(cfg["phonon_freq_ghz"], 1e9),
        g=_two_pi(cfg["g_khz"], 1e3),
        omega_d=_two_pi(cfg["drive_freq_ghz"], 1e9),
        qubit_levels=int(cfg["qubit_levels"]),
        phonon_levels=int(levels),
    )


def qubit_noise(cfg) -> NoiseParams:
    return NoiseParams.from_times(cfg["qubit_t1_us"] * 1e-6, cfg["qubit_t2_star_us"] * 1e-6)


def phonon_noise(cfg) -> NoiseParams:
    return NoiseParams.from_times(cfg["phonon_t1_us"] * 1e-6, cfg["phonon_t2_star_us"] * 1e-6)


def optimizer_config(cfg) -> OptimizerConfig:
    return OptimizerConfig(
        restarts=int(cfg["qng_restarts"]), alpha_box=float(cfg["alpha_box"]), r_box=float(cfg["r_box"]),
        dim=int(cfg["dim"]), seed=int(cfg["seed"]), tolerance=float(cfg["tolerance"]), jobs=int(cfg["jobs"]),
    )


def grape_config(cfg) -> GrapeConfig:
    return GrapeConfig(
        ceiling=_two_pi(cfg["ceiling_mhz"], 1e6), dt=cfg["dt_ns"] * 1e-9,
        target_fidelity=float(cfg["target_fidelity"]), max_iter=int(cfg["grape_max_iter"]),
        restarts=int(cfg["grape_restarts"]), seed=int(cfg["seed"]),
    )


def cache_dir(cfg) -> Path:
    if cfg["cache_dir"]:
        return Path(cfg["cache_dir"])
    if os.environ.get(CACHE_ENV):
        return Path(os.environ[CACHE_ENV])
    return Path.home() / ".cache" / "fockqng"


class Run:
    """Collects the manifest of one invocation."""

    def __init__(self, command, args, cfg, config_path):
        self.command = command
        self.cfg = cfg
        self.config_path = config_path
        self.out = Path(args.out)
        self.inputs = []
        self.outputs = []
        self.start = time.perf_counter()

    def path(self, name) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "config": self.cfg,
            "config_path": self.config_path,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "seed": self.cfg["seed"],
            "tool_version": __version__,
            "wall_time_s": round(time.perf_counter() - self.start, 3),
        }

    def write_json(self, path, doc):
        doc = dict(doc)
        doc["manifest"] = self.manifest()
        write_json(path, doc)


# ---------------------------------------------------------------------------
# qng
# ---------------------------------------------------------------------------


def _n_list(args):
    ns = args.n or [1, 2, 3, 4, 5, 6]
    if any(n < 1 for n in ns):
        raise CliError("Fock indices for the non-Gaussianity test must be >= 1", 1)
    return ns


def _curve(n, cfg):
    grid = default_a_grid(int(cfg["a_grid_size"]), float(cfg["a_max"]))
    return cached_threshold_curve(n, grid, optimizer_config(cfg), cache_dir(cfg))


def _write_curve(run, curve):
    rows = [
        (repr(p.a), repr(p.f_bar), repr(p.p_n), repr(p.p_np1), repr(p.alpha), repr(abs(p.r)),
         repr(float(np.angle(p.r))), int(p.converged), int(p.asymptotic))
        for p in curve.points
    ]
    write_csv(run.path(f"curve_n{curve.n}.csv"),
              ("a", "f_bar", "p_n", "p_np1_plus", "alpha", "r_abs", "r_phase", "converged", "asymptotic"), rows)


def cmd_qng(args, run):
    cfg = run.cfg
    ns = _n_list(args)
    if args.action == "threshold":
        summary = []
        for n in ns:
            curve = _curve(n, cfg)
            _write_curve(run, curve)
            doc = curve.to_dict()
            run.write_json(run.path(f"curve_n{n}.json"), doc)
            summary.append({"n": n, "p_bar": curve.f_bar_at(0.0)})
            print(f"n={n}: P_bar = {curve.f_bar_at(0.0):.6f}")
        run.write_json(run.path("threshold_report.json"), {"thresholds": summary})
        return 0

    if not args.input:
        raise CliError(f"qng {args.action} needs --input", 1)
    measured = read_distribution(args.input)
    run.inputs.append(str(args.input))
    dist = measured.dist
    kappa = 1.0 / (cfg["phonon_t1_us"] * 1e-6)
    results = []
    for n in ns:
        curve = _curve(n, cfg)
        _write_curve(run, curve)
        point = QngPoint.from_distribution(dist, n)
        wit = qng_witness(point, curve)
        entry = {
            "n": n,
            "p_n": point.p_n,
            "p_np1_plus": point.p_np1,
            "violated": wit.violated,
            "margin": wit.margin,
            "best_a": wit.best_a,
        }
        if args.action == "depth":
            depth = qng_depth(dist, n, curve)
            entry.update(
                eta_min=depth.eta_min,
                depth_db=depth.depth_db,
                wait_time_us=depth_time_equivalent(depth.eta_min, kappa) * 1e6,
            )
        results.append(entry)
        line = f"n={n}: violated={wit.violated} margin={wit.margin:+.5f}"
        if args.action == "depth":
            line += f" depth={entry['depth_db']:.3f} dB wait={entry['wait_time_us']:.2f} us"
        print(line)
    report = {
        "units": {"depth_db": "dB", "wait_time_us": "us"},
        "results": results,
        "violated_n": [r["n"] for r in results if r["violated"]],
    }
    run.write_json(run.path(f"qng_{args.action}.json"), report)
    return 0


# ---------------------------------------------------------------------------
# fisher
# ---------------------------------------------------------------------------


def cmd_fisher(args, run):
    cfg = run.cfg
    sigma = None
    if args.input:
        measured = read_distribution(args.input)
        run.inputs.append(str(args.input))
        dist, sigma = measured.dist, measured.sigma
        label = str(args.input)
    elif args.fock is not None:
        if args.fock < 0:
            raise CliError("--fock must be >= 0", 1)
        dist = FockDistribution.fock(args.fock)
        label = f"fock-{args.fock}"
    else:
        raise CliError("fisher needs --input or --fock", 1)
    if args.t_us:
        if args.t_us < 0:
            raise CliError("--t-us must be non-negative", 2)
        eta = math.exp(-args.t_us / cfg["phonon_t1_us"])
        size = len(dist)
        dist = binomial_loss(FockDistribution(dist.padded(size)), LossChannel(eta))
        sigma = None
    grid = np.linspace(args.alpha_min, args.alpha_max, args.alpha_points)
    if np.any(grid <= 0):
        raise CliError("alpha grid must be positive", 1)
    prof = fisher_profile(dist, grid)
    write_csv(run.path("fisher.csv"), ("alpha", "fi"),
              [(repr(float(a)), repr(float(f))) for a, f in zip(prof.alpha, prof.fi)])
    doc = {
        "source": label,
        "readout_damping_us": args.t_us or 0.0,
        "fi_max": prof.fi_max,
        "d0": prof.d0,
        "qfi_reference": {f"fock_{k}": qfi_fock(k) for k in range(0, 7)},
    }
    if sigma is not None and np.any(sigma > 0):
        doc["fi_max_sigma"] = fisher_error_bar(dist.probs, sigma, prof.d0)
    run.write_json(run.path("fisher.json"), doc)
    print(f"{label}: FI_max = {prof.fi_max:.4f} at alpha = {prof.d0:.4f}")
    return 0


# ---------------------------------------------------------------------------
# grape
# ---------------------------------------------------------------------------


def cmd_grape(args, run):
    cfg = run.cfg
    n = args.n
    if n < 1:
        raise CliError("--n must be >= 1", 1)
    params = system_params(cfg, n)
    gcfg = grape_config(cfg)
    if args.shortest:
        duration, res = shortest_duration(n, params, gcfg, t_max=args.duration_us * 1e-6)
    else:
        duration = args.duration_us * 1e-6
        steps = duration / gcfg.dt
        if abs(steps - round(steps)) > 1e-6:
            raise CliError(f"duration {args.duration_us} us is not a multiple of dt = {cfg['dt_ns']} ns", 1)
        res = grape_optimize(n, duration, params, gcfg)
    run.write_json(run.path(f"pulse_n{n}.json"), pulse_document(res.pulse))
    report = {
        "n": n,
        "duration_us": duration * 1e6,
        "fidelity": res.fidelity,
        "iterations": res.iterations,
        "converged": res.converged,
        "ceiling_mhz": cfg["ceiling_mhz"],
        "max_amplitude_mhz": float(np.max(np.abs(res.pulse.samples))) / (2 * math.pi * 1e6),
    }
    if args.open_system:
        chain = simulate_preparation_chain(
            res.pulse, n, params, qubit_noise(cfg), phonon_noise(cfg),
            readout_grid=default_readout_grid(cfg["readout_window_us"] * 1e-6, int(cfg["readout_points"])),
        )
        report.update(fidelity_prepared=chain.fidelity_prepared, fidelity_readout=chain.fidelity_readout,
                      residual_excitation=chain.residual_excitation)
    run.write_json(run.path(f"grape_n{n}.json"), report)
    print(f"n={n}: F = {res.fidelity:.6f} in {duration * 1e6:.3f} us (converged={res.converged})")
    return 0


# ---------------------------------------------------------------------------
# rpn
# ---------------------------------------------------------------------------


def _rpn_noise(cfg, mode):
    return qubit_noise(cfg) if mode == "device" else None


def cmd_rpn(args, run):
    cfg = run.cfg
    params = system_params(cfg, args.n_max)
    if args.action == "simulate":
        t = default_readout_grid(cfg["readout_window_us"] * 1e-6, int(cfg["readout_points"]))
        basis = rpn_basis(args.n_max, params, _rpn_noise(cfg, args.noise), t)
        header = ("t_us",) + tuple(f"n{k}" for k in range(args.n_max + 1))
        write_csv(run.path("rpn_basis.csv"), header,
                  [(repr(float(ti * 1e6)),) + tuple(repr(float(c)) for c in col)
                   for ti, col in zip(t, basis.curves.T)])
        if args.fock is not None or args.input:
            if args.input:
                dist = read_distribution(args.input).dist
                run.inputs.append(str(args.input))
            else:
                dist = FockDistribution.fock(args.fock)
            probs = dist.padded(args.n_max + 1)
            if len(dist) > args.n_max + 1 and dist.tail(args.n_max + 1) > 0:
                raise CliError(f"distribution has weight above n_max = {args.n_max}", 1)
            state = DensityMatrix(np.diag(probs / probs.sum()).astype(complex))
            decay = phonon_noise(cfg) if args.phonon_decay else None
            signal = rpn_signal(state, params, t, _rpn_noise(cfg, args.noise), decay)
            rng = np.random.default_rng(cfg["seed"])
            if args.sigma > 0:
                signal = np.clip(signal + rng.normal(0.0, args.sigma, signal.size), 0.0, 1.0)
            write_rpn_csv(run.path("rpn_data.csv"), t, signal, np.full(t.size, args.sigma))
        run.write_json(run.path("rpn_simulate.json"), {"n_max": args.n_max, "noise": args.noise,
                                                       "points": int(t.size)})
        print(f"wrote basis for n = 0..{args.n_max} on {t.size} points")
        return 0

    if not args.input:
        raise CliError("rpn fit needs --input", 1)
    t, p_e, sigma = read_rpn_csv(args.input)
    run.inputs.append(str(args.input))
    basis = rpn_basis(args.n_max, params, _rpn_noise(cfg, args.noise), t)
    use_sigma = sigma if sigma is not None and np.all(sigma > 0) else None
    fit = rpn_fit(p_e, basis, use_sigma)
    write_distribution_csv(run.path("distribution.csv"), fit.distribution, fit.uncertainty)
    run.write_json(run.path("distribution.json"),
                   distribution_document(fit.distribution, fit.uncertainty, residual_rms=fit.residual_rms))
    best = int(np.argmax(fit.distribution.probs))
    print(f"fitted distribution: largest weight P_{best} = {fit.distribution[best]:.4f}")
    return 0


# ---------------------------------------------------------------------------
# force
# ---------------------------------------------------------------------------


def cmd_force(args, run):
    cfg = run.cfg
    fp = ForceParams(
        mass=cfg["mass_ug"] * 1e-9,
        omega=_two_pi(cfg["phonon_freq_ghz"], 1e9),
        t_probe=cfg["t_probe_us"] * 1e-6,
        t_dead=cfg["t_dead_us"] * 1e-6,
        fq=float(cfg["probe_fisher"]),
    )
    res = force_sensitivity(fp)
    doc = {
        "units": {"sensitivity": "N/sqrt(Hz)", "x_zpf": "m"},
        "sensitivity": res["delta_f0_per_sqrt_hz"],
        "sensitivity_fN_per_sqrt_hz": res["delta_f0_per_sqrt_hz"] * 1e15,
        "x_zpf": res["x_zpf"],
        "shots_per_second": res["nu"],
        "params": {k: v for k, v in asdict(fp).items()},
    }
    run.write_json(run.path("force.json"), doc)
    print(f"force sensitivity: {doc['sensitivity_fN_per_sqrt_hz']:.1f} fN/sqrt(Hz), x_zpf = {res['x_zpf']:.3e} m")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--dim", type=int, help="Fock truncation for threshold optimisation")
    common.add_argument("--jobs", type=int, help="worker processes")

    parser = _Parser(prog="fockqng", description="Fock-state non-Gaussianity and sensing toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    qng = sub.add_parser("qng", parents=[common], help="non-Gaussianity thresholds, witness and depth")
    qng.add_argument("action", choices=("threshold", "witness", "depth"))
    qng.add_argument("--n", type=int, nargs="+", help="Fock indices to test (default 1..6)")
    qng.add_argument("--input", help="distribution file (.json or .csv)")

    fi = sub.add_parser("fisher", parents=[common], help="Fisher information for displacement sensing")
    fi.add_argument("--input")
    fi.add_argument("--fock", type=int)
    fi.add_argument("--t-us", type=float, default=0.0, help="readout damping time in us")
    fi.add_argument("--alpha-min", type=float, default=0.01)
    fi.add_argument("--alpha-max", type=float, default=2.5)
    fi.add_argument("--alpha-points", type=int, default=250)

    gr = sub.add_parser("grape", parents=[common], help="optimal-control pulse for |0,g> -> |n,g>")
    gr.add_argument("--n", type=int, required=True)
    gr.add_argument("--duration-us", type=float, default=2.0)
    gr.add_argument("--shortest", action="store_true", help="bisect for the shortest viable duration")
    gr.add_argument("--open-system", action="store_true", help="add decoherence and readout predictions")

    rp = sub.add_parser("rpn", parents=[common], help="phonon-number readout basis and fit")
    rp.add_argument("action", choices=("simulate", "fit"))
    rp.add_argument("--n-max", type=int, default=8)
    rp.add_argument("--noise", choices=("none", "device"), default="device")
    rp.add_argument("--fock", type=int)
    rp.add_argument("--input")
    rp.add_argument("--sigma", type=float, default=0.0, help="Gaussian noise added to simulated data")
    rp.add_argument("--phonon-decay", action="store_true", help="include phonon decay in simulated data")

    sub.add_parser("force", parents=[common], help="force-sensing budget")
    return parser


COMMANDS = {"qng": cmd_qng, "fisher": cmd_fisher, "grape": cmd_grape, "rpn": cmd_rpn, "force": cmd_force}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg, path = load_config(args)
        name = args.command + (f" {args.action}" if hasattr(args, "action") else "")
        run = Run(name, args, cfg, path)
        return COMMANDS[args.command](args, run)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    except MalformedFileError as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return 1
    except UnphysicalInputError as exc:
        print(f"unphysical input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
