"""File formats: Fock distributions, pulses, RPN traces and plain CSV tables."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control.hamiltonian import Pulse
from .hilbert import FockDistribution

DIST_FORMAT = "fockqng.distribution"
PULSE_FORMAT = "fockqng.pulse"
#: Distributions read from files may exceed unit sum by this much (rounding).
SUM_SLACK = 1e-6


class MalformedFileError(ValueError):
    """Syntax or schema problem in an input file; ``line`` is 1-based when known."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class UnphysicalInputError(ValueError):
    """Well-formed file whose content violates probability constraints."""


@dataclass(frozen=True)
class MeasuredDistribution:
    dist: FockDistribution
    sigma: np.ndarray | None = None


def _check_probs(path, probs, sigma):
    probs = np.asarray(probs, dtype=float)
    if probs.size == 0:
        raise MalformedFileError(path, "no populations found")
    if not np.all(np.isfinite(probs)):
        raise MalformedFileError(path, "populations must be finite numbers")
    bad = np.flatnonzero((probs < 0) | (probs > 1))
    if bad.size:
        k = int(bad[0])
        raise UnphysicalInputError(f"{path}: P_{k} = {probs[k]!r} outside [0, 1]")
    total = probs.sum()
    if total > 1 + SUM_SLACK:
        raise UnphysicalInputError(f"{path}: populations sum to {total:.9f} > 1")
    if total > 1:
        probs = probs / total
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise UnphysicalInputError(f"{path}: uncertainties must be finite and non-negative")
    return MeasuredDistribution(FockDistribution(probs), sigma)


def _read_distribution_csv(path, text):
    rows = {}
    sig = {}
    reader = csv.reader(io.StringIO(text))
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
            continue
        if not header_seen:
            header_seen = True
            names = [c.strip().lower() for c in row]
            if names[:2] != ["n", "p_n"]:
                raise MalformedFileError(path, f"expected header 'n,P_n[,sigma]', got {','.join(row)!r}", lineno)
            has_sigma = len(names) > 2 and names[2] == "sigma"
            continue
        if len(row) < 2:
            raise MalformedFileError(path, f"expected at least 2 columns, got {len(row)}", lineno)
        try:
            n = int(row[0])
            p = float(row[1])
            s = float(row[2]) if has_sigma and len(row) > 2 and row[2].strip() else 0.0
        except ValueError as exc:
            raise MalformedFileError(path, f"cannot parse row {','.join(row)!r} ({exc})", lineno) from None
        if n < 0:
            raise MalformedFileError(path, f"negative Fock index {n}", lineno)
        if n in rows:
            raise MalformedFileError(path, f"duplicate Fock index {n}", lineno)
        rows[n], sig[n] = p, s
    if not header_seen or not rows:
        raise MalformedFileError(path, "no data rows")
    size = max(rows) + 1
    probs = np.zeros(size)
    sigma = np.zeros(size)
    for n, p in rows.items():
        probs[n], sigma[n] = p, sig[n]
    return _check_probs(path, probs, sigma if has_sigma else None)


def _read_distribution_json(path, text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFileError(path, exc.msg, exc.lineno) from None
    if not isinstance(doc, dict) or "probs" not in doc:
        raise MalformedFileError(path, "expected an object with a 'probs' array")
    probs = doc["probs"]
    sigma = doc.get("sigma")
    if not isinstance(probs, list) or not all(isinstance(p, (int, float)) for p in probs):
        raise MalformedFileError(path, "'probs' must be an array of numbers")
    if sigma is not None and (not isinstance(sigma, list) or len(sigma) != len(probs)):
        raise MalformedFileError(path, "'sigma' must be an array as long as 'probs'")
    return _check_probs(path, probs, sigma)


def read_distribution(path) -> MeasuredDistribution:
    """Load a Fock distribution from ``.json`` or ``.csv``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MalformedFileError(path, f"cannot read file ({exc.strerror})") from None
    if path.suffix.lower() == ".json":
        return _read_distribution_json(path, text)
    return _read_distribution_csv(path, text)


def distribution_document(dist: FockDistribution, sigma=None, **extra) -> dict:
    doc = {"format": DIST_FORMAT, "probs": [float(p) for p in dist.probs]}
    if sigma is not None:
        doc["sigma"] = [float(s) for s in sigma]
    doc.update(extra)
    return doc


def write_distribution_csv(path, dist: FockDistribution, sigma=None):
    sigma = np.zeros(len(dist)) if sigma is None else np.asarray(sigma)
    rows = [(n, repr(float(p)), repr(float(s))) for n, (p, s) in enumerate(zip(dist.probs, sigma))]
    write_csv(path, ("n", "P_n", "sigma"), rows)


def pulse_document(pulse: Pulse, **extra) -> dict:
    doc = {
        "format": PULSE_FORMAT,
        "dt_ns": pulse.dt * 1e9,
        "samples": [{"i": float(s.real), "q": float(s.imag)} for s in pulse.samples],
        "amplitude_units": "rad_per_s",
        "frame": "rotating_at_omega_a",
    }
    if pulse.ceiling is not None:
        doc["ceiling_rad_per_s"] = pulse.ceiling
    doc.update(extra)
    return doc


def read_pulse(path) -> Pulse:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFileError(path, exc.msg, exc.lineno) from None
    try:
        if doc.get("amplitude_units", "rad_per_s") != "rad_per_s":
            raise MalformedFileError(path, f"unsupported amplitude units {doc['amplitude_units']!r}")
        samples = np.array([complex(s["i"], s["q"]) for s in doc["samples"]])
        return Pulse(samples, float(doc["dt_ns"]) * 1e-9, doc.get("ceiling_rad_per_s"))
    except (KeyError, TypeError, AttributeError) as exc:
        raise MalformedFileError(path, f"missing or invalid pulse field ({exc})") from None


def read_rpn_csv(path):
    """Returns (t in seconds, p_e, sigma or None)."""
    path = Path(path)
    t, pe, sg = [], [], []
    header_seen = False
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if not header_seen:
                header_seen = True
                if [c.strip().lower() for c in row[:2]] != ["t_us", "p_e"]:
                    raise MalformedFileError(path, "expected header 't_us,p_e[,sigma]'", lineno)
                continue
            try:
                t.append(float(row[0]) * 1e-6)
                pe.append(float(row[1]))
                sg.append(float(row[2]) if len(row) > 2 and row[2].strip() else math.nan)
            except (ValueError, IndexError) as exc:
                raise MalformedFileError(path, f"cannot parse row {','.join(row)!r} ({exc})", lineno) from None
    if not t:
        raise MalformedFileError(path, "no data rows")
    pe = np.array(pe)
    if np.any((pe < 0) | (pe > 1)):
        raise UnphysicalInputError(f"{path}: excited-state populations must lie in [0, 1]")
    sg = np.array(sg)
    return np.array(t), pe, (None if np.any(np.isnan(sg)) else sg)


def write_rpn_csv(path, t, p_e, sigma):
    rows = [(repr(float(ti * 1e6)), repr(float(p)), repr(float(s))) for ti, p, s in zip(t, p_e, sigma)]
    write_csv(path, ("t_us", "p_e", "sigma"), rows)


def _atomic_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _atomic_text(path, buf.getvalue())


def write_json(path, doc):
    _atomic_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
