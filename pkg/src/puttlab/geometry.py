"""Artifact/proximity decomposition and the 2-D diagnostic plane.

An enhancement error ``enhanced - clean`` splits into a part lying on the
line through clean and noisy (the proximity vector) and a part orthogonal
to it (the artifact vector). Sounds on that line are plain mixtures of the
clean speech and the original noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .errors import DegenerateBasis, DegenerateLine, LengthMismatch, PuttlabError

EPS_BASIS = 1e-12


def _vec(w):
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64).reshape(-1)


def line_epsilon(n):
    return 1e-12 * math.sqrt(n)


@dataclass(frozen=True, eq=False)
class ArtifactDecomposition:
    artifact: np.ndarray
    proximity: np.ndarray

    @property
    def artifact_norm(self):
        return float(np.linalg.norm(self.artifact))

    @property
    def proximity_norm(self):
        return float(np.linalg.norm(self.proximity))


@dataclass(frozen=True, eq=False)
class ProjectionBasis:
    anchor: np.ndarray
    e_parallel: np.ndarray
    e_perp: np.ndarray

    def __len__(self):
        return self.anchor.size


@dataclass(frozen=True)
class PlanePoint:
    x: float
    y: float


@dataclass(frozen=True)
class FieldSample:
    at: PlanePoint
    vector: PlanePoint


def artifact_vector(enhanced, clean, noisy):
    """Component of the enhancement error orthogonal to the clean-noisy line.

    Works on the last axis, so batches of shape ``[B, T]`` are accepted.
    """
    e = np.asarray(enhanced, dtype=np.float64)
    s = np.asarray(clean, dtype=np.float64)
    x = np.asarray(noisy, dtype=np.float64)
    if not (e.shape == s.shape == x.shape):
        raise LengthMismatch(f"shapes differ: {e.shape}, {s.shape}, {x.shape}")
    line = s - x
    norm = np.linalg.norm(line, axis=-1, keepdims=True)
    if np.any(norm <= line_epsilon(e.shape[-1])):
        raise DegenerateLine("clean and noisy coincide; the S-X line is undefined")
    u = line / norm
    # e - x and e - s differ by a multiple of u; the latter is exact at e == s
    d = e - s
    return d - np.sum(u * d, axis=-1, keepdims=True) * u


def decompose(enhanced, clean, noisy):
    e, s, x = _vec(enhanced), _vec(clean), _vec(noisy)
    perp = artifact_vector(e, s, x)
    return ArtifactDecomposition(artifact=perp, proximity=e - perp - s)


def make_basis(enhanced, clean, noisy):
    """Plane spanned by the normalized proximity and artifact of ``enhanced``."""
    d = decompose(enhanced, clean, noisy)
    if d.proximity_norm <= EPS_BASIS or d.artifact_norm <= EPS_BASIS:
        raise DegenerateBasis(
            f"|proximity|={d.proximity_norm:.3g}, |artifact|={d.artifact_norm:.3g}; pick another reference"
        )
    return ProjectionBasis(
        anchor=_vec(clean).copy(),
        e_parallel=d.proximity / d.proximity_norm,
        e_perp=d.artifact / d.artifact_norm,
    )


def project(z, basis):
    d = _vec(z) - basis.anchor
    return PlanePoint(float(d @ basis.e_parallel), float(d @ basis.e_perp))


def embed(p, basis, sample_rate=16000):
    z = basis.anchor + p.x * basis.e_parallel + p.y * basis.e_perp
    return Waveform(z, sample_rate)


def grid_points(x_range, y_range, nx=21, ny=21):
    xs = np.linspace(x_range[0], x_range[1], nx)
    ys = np.linspace(y_range[0], y_range[1], ny)
    return [PlanePoint(float(x), float(y)) for y in ys for x in xs]


def default_grid(enhanced, clean, noisy, nx=21, ny=21):
    """Grid covering [-0.2, 1.2] of |X-S| along x and of |artifact(X~)| along y."""
    line = float(np.linalg.norm(_vec(noisy) - _vec(clean)))
    art = decompose(enhanced, clean, noisy).artifact_norm
    return grid_points((-0.2 * line, 1.2 * line), (-0.2 * art, 1.2 * art), nx, ny)


class FieldError(PuttlabError):
    def __init__(self, point, cause):
        super().__init__(f"enhancer failed at ({point.x:.6g}, {point.y:.6g}): {cause}")
        self.point = point


def sample_field(enhancer, basis, grid, sample_rate=16000, jobs=1):
    """Evaluate the displacement ``enhancer(Z) - Z`` projected onto the plane.

    ``enhancer`` maps a Waveform to a Waveform. With ``jobs > 1`` grid
    points are evaluated on a thread pool, so the enhancer must tolerate
    concurrent calls.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")

    def one(p):
        z = embed(p, basis, sample_rate)
        try:
            out = enhancer(z)
        except Exception as e:
            raise FieldError(p, e) from e
        step = _vec(out) - z.samples
        return FieldSample(p, PlanePoint(float(step @ basis.e_parallel), float(step @ basis.e_perp)))

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, grid))
    return [one(p) for p in grid]


def trace_trajectory(stages, basis):
    return [project(z, basis) for z in stages]


def write_field_csv(samples, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "fx", "fy"])
        for s in samples:
            w.writerow([f"{v:.15g}" for v in (s.at.x, s.at.y, s.vector.x, s.vector.y)])


def write_trajectory_csv(points, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stage", "x", "y"])
        for k, p in enumerate(points):
            w.writerow([k, f"{p.x:.15g}", f"{p.y:.15g}"])
