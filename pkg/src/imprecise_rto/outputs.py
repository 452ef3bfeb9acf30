"""Artifact writers: density maps, histories, bound reports and envelopes.

Floats are written with ``repr`` so that re-reading reproduces them
exactly, and nothing time-dependent is written, so identical runs produce
byte-identical files.  Provenance (config hash, seed, file digests) lives in
the graymap comments and in a ``manifest.json`` sidecar.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import gaussian_kde

from .bounds import MomentBounds, RefCompliance, ca_bounds, qmcs_bounds
from .errors import InvalidInputError
from .moments import ISSERLIS_FULL, mc_compliance_oracle
from .optimizer import HISTORY_COLUMNS, HistoryRecord
from .random_field import PBox

_PGM_LINE = 70


def _grid(values: np.ndarray, nx: int, ny: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.size != nx * ny:
        raise InvalidInputError(f"field has {values.size} values, expected {nx}x{ny}")
    return values.reshape(ny, nx)[::-1]  # top row first


def write_pgm(rho_phys: np.ndarray, nx: int, ny: int, path, comments: Sequence[str] = ()) -> Path:
    """Plain graymap, 0 = solid (black), 255 = void (white)."""
    path = Path(path)
    pix = np.rint(255.0 * (1.0 - np.clip(_grid(rho_phys, nx, ny), 0.0, 1.0))).astype(int)
    lines = ["P2"] + [f"# {c}" for c in comments] + [f"{nx} {ny}", "255"]
    for row in pix:
        line = ""
        for v in row:
            tok = str(v)
            if line and len(line) + 1 + len(tok) > _PGM_LINE:
                lines.append(line)
                line = tok
            else:
                line = f"{line} {tok}" if line else tok
        lines.append(line)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_pgm(path) -> tuple[np.ndarray, int, int]:
    """Pixels (top row first), width and height."""
    tokens = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        if line.startswith("#"):
            continue
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise InvalidInputError(f"{path} is not a plain graymap")
    nx, ny, _ = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pix = np.array([int(t) for t in tokens[4:]], dtype=int)
    return pix.reshape(ny, nx), nx, ny


def write_density_csv(rho_phys: np.ndarray, nx: int, ny: int, path) -> Path:
    """Raw densities as an ``ny x nx`` table, top row first."""
    path = Path(path)
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in _grid(rho_phys, nx, ny):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_density_csv(path) -> np.ndarray:
    """Inverse of :func:`write_density_csv`, in element order."""
    with Path(path).open(newline="", encoding="ascii") as fh:
        rows = [[float(v) for v in r] for r in csv.reader(fh) if r]
    return np.array(rows[::-1]).ravel()


def write_density_outputs(rho_phys: np.ndarray, nx: int, ny: int, stem,
                          config_hash: str = "", seed: int | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.pgm`` and ``<stem>.csv``."""
    stem = Path(stem)
    comments = [f"config_sha256 {config_hash}", f"seed {seed}"]
    pgm = write_pgm(rho_phys, nx, ny, stem.with_suffix(".pgm"), comments)
    dat = write_density_csv(rho_phys, nx, ny, stem.with_suffix(".csv"))
    return pgm, dat


def write_history(history: Iterable[HistoryRecord], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for rec in history:
            row = rec.row()
            w.writerow([str(row[0])] + [repr(float(v)) for v in row[1:]])
    return path


def read_history(path) -> list[dict]:
    with Path(path).open(newline="", encoding="ascii") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "iter" else float(v)) for k, v in r.items()} for r in rows]


def write_bounds_report(bounds: MomentBounds, path, extra: dict | None = None) -> Path:
    """Key-value text with the intervals, achieving points and engine settings."""
    path = Path(path)
    lines = ["[bounds]", f"engine = {bounds.engine}"]
    for q in ("mean", "std", "obj"):
        lo, hi = bounds.interval(q)
        lines.append(f"{q}_lo = {lo!r}")
        lines.append(f"{q}_hi = {hi!r}")
    lines += ["", "[arg_points]"]
    for q in ("mean", "std", "obj"):
        lines.append(f"{q}_min = {bounds.argmin[q][0]!r}, {bounds.argmin[q][1]!r}")
        lines.append(f"{q}_max = {bounds.argmax[q][0]!r}, {bounds.argmax[q][1]!r}")
    if bounds.meta:
        lines += ["", "[engine]"] + [f"{k} = {v}" for k, v in bounds.meta.items()]
    if extra:
        lines += ["", "[run]"] + [f"{k} = {v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass
class Envelopes:
    grid: np.ndarray
    cdf_lower: np.ndarray
    cdf_upper: np.ndarray
    pdf_lower: np.ndarray
    pdf_upper: np.ndarray
    corner_lower: tuple[float, float]
    corner_upper: tuple[float, float]
    samples_lower: np.ndarray
    samples_upper: np.ndarray


def _ecdf(samples: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.searchsorted(np.sort(samples), t, side="right") / samples.size


def _kde(samples: np.ndarray, t: np.ndarray) -> np.ndarray:
    if np.ptp(samples) == 0:
        return np.zeros_like(t)
    return gaussian_kde(samples, bw_method="silverman")(t)


def distribution_envelopes(ref: RefCompliance, pbox: PBox, beta: float, n_samples: int,
                           seed: int, n_grid: int = 200, mode: str = ISSERLIS_FULL) -> Envelopes:
    """Compliance distributions at the two objective-extreme corners.

    Both corners use the same seed, so their samples are paired.
    """
    if n_samples < 100:
        raise InvalidInputError(f"need at least 100 samples, got {n_samples}")
    if pbox.straddles_zero and pbox.mu_lo != pbox.mu_hi:
        bnd = qmcs_bounds(ref, pbox, beta, mode=mode)
    else:
        bnd = ca_bounds(ref, pbox, beta, mode)
    lo_pt, hi_pt = bnd.argmin["obj"], bnd.argmax["obj"]
    out = []
    for mu, sigma in (lo_pt, hi_pt):
        s = ref.scales(mu, sigma)[0]
        out.append(mc_compliance_oracle(ref.C * np.outer(s, s), n_samples, seed)[2])
    lower, upper = out
    top = max(float(lower.max()), float(upper.max()))
    t = np.linspace(0.0, top, n_grid)
    return Envelopes(t, _ecdf(lower, t), _ecdf(upper, t), _kde(lower, t), _kde(upper, t),
                     lo_pt, hi_pt, lower, upper)


def write_distribution_envelopes(ref: RefCompliance, pbox: PBox, beta: float, n_samples: int,
                                 seed: int, path, n_grid: int = 200,
                                 mode: str = ISSERLIS_FULL) -> Envelopes:
    env = distribution_envelopes(ref, pbox, beta, n_samples, seed, n_grid, mode)
    with Path(path).open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["compliance", "cdf_lower", "cdf_upper", "pdf_lower", "pdf_upper"])
        for row in zip(env.grid, env.cdf_lower, env.cdf_upper, env.pdf_lower, env.pdf_upper):
            w.writerow([repr(float(v)) for v in row])
    return env


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, config_hash: str, seed: int, files: Sequence[Path],
                   extra: dict | None = None) -> Path:
    """``manifest.json`` with the config hash, seed and a digest of every file."""
    directory = Path(directory)
    doc = {"config_sha256": config_hash, "seed": seed,
           "files": {Path(f).name: sha256_file(f) for f in sorted(files, key=lambda p: Path(p).name)}}
    if extra:
        doc.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
