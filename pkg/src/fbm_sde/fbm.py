"""Exact sampling of fractional Brownian motion on [0, 1].

Two exact samplers are provided: Cholesky factorisation of the increment
covariance on an arbitrary grid (O(n^3) set-up), and the Davies-Harte
circulant embedding on equidistant dyadic grids (O(n log n) per path). Both
read the covariance from :func:`covariance` / :func:`increment_autocovariance`.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import lapack

from . import rng as _rng
from .variations import theta


class CholeskyError(np.linalg.LinAlgError):
    """Increment covariance is not numerically positive definite."""

    def __init__(self, pivot: int, message: str):
        super().__init__(message)
        self.pivot = pivot


class CirculantEmbeddingError(RuntimeError):
    """A circulant eigenvalue came out negative."""

    def __init__(self, eigenvalue: float, index: int):
        super().__init__(
            f"Davies-Harte circulant has negative eigenvalue {eigenvalue:.3e} at index {index}; "
            "this cannot happen for fBm increments and indicates a bug"
        )
        self.eigenvalue = eigenvalue
        self.index = index


def check_hurst(h: float) -> float:
    h = float(h)
    if not 0.0 < h < 1.0:
        raise ValueError(f"Hurst index must lie in (0, 1), got {h}")
    return h


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered time points ``0 = t_0 < ... < t_n = 1``."""

    points: np.ndarray
    equidistant: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("a grid needs at least the two points 0 and 1")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise ValueError("grid must start at 0 and end at 1")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, n: int) -> "Grid":
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        return cls(np.arange(n + 1) / n, equidistant=True)

    @property
    def n(self) -> int:
        return self.points.size - 1

    def __len__(self) -> int:
        return self.points.size


@dataclass(frozen=True, eq=False)
class FbmPath:
    """One fBm trajectory sampled on ``grid``."""

    grid: Grid
    values: np.ndarray
    h: float
    seed_tag: str | None = field(default=None)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (len(self.grid),):
            raise ValueError(f"values shape {vals.shape} does not match grid of {len(self.grid)} points")
        if vals[0] != 0.0:
            raise ValueError("fBm paths start at 0")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "h", check_hurst(self.h))

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def restrict(self, n: int) -> "FbmPath":
        """Exact restriction of an equidistant path to the coarser grid ``k/n``."""
        return FbmPath(Grid.uniform(n), subsample(self.values, n), self.h, self.seed_tag)


def subsample(values: np.ndarray, n: int) -> np.ndarray:
    """Keep every ``(N/n)``-th sample of equidistant values on N steps."""
    values = np.asarray(values)
    big = values.shape[-1] - 1
    if n < 1 or big % n:
        raise ValueError(f"cannot coarsen a {big}-step path to {n} steps")
    return values[..., :: big // n]


def covariance(h: float, s, t):
    """``R_H(s, t) = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2`` on [0, 1]."""
    h = check_hurst(h)
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    for name, arr in (("s", s_arr), ("t", t_arr)):
        if np.any((arr < 0.0) | (arr > 1.0)):
            raise ValueError(f"{name} must lie in [0, 1]")
    p = 2.0 * h
    out = 0.5 * (s_arr**p + t_arr**p - np.abs(t_arr - s_arr) ** p)
    return float(out) if out.ndim == 0 else out


def increment_covariance_matrix(h: float, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    levels = covariance(h, pts[1:, None], pts[None, 1:])
    levels = np.pad(levels, ((1, 0), (1, 0)))  # B_0 = 0
    return np.diff(np.diff(levels, axis=0), axis=1)


def increment_autocovariance(h: float, n: int, lags) -> np.ndarray:
    """Autocovariance of the increments ``B_{(k+1)/n} - B_{k/n}``."""
    return theta(h, lags) * float(n) ** (-2.0 * h)


class CholeskySampler:
    """Exact sampler on an arbitrary grid; the factor is computed once."""

    def __init__(self, h: float, grid: Grid, jitter: float | None = None):
        self.h = check_hurst(h)
        self.grid = grid
        cov = increment_covariance_matrix(self.h, grid.points)
        if jitter:
            cov = cov + jitter * np.eye(cov.shape[0])
        factor, info = lapack.dpotrf(cov, lower=1, clean=1)
        if info > 0:
            raise CholeskyError(
                info - 1,
                f"increment covariance not positive definite at pivot {info - 1} "
                f"(h={self.h}, n={grid.n}); pass jitter= to regularise explicitly",
            )
        if info < 0:
            raise ValueError(f"dpotrf argument {-info} invalid")
        self.factor = factor
        self.factor.setflags(write=False)

    def sample_values(self, generator: np.random.Generator) -> np.ndarray:
        z = generator.standard_normal(self.grid.n)
        out = np.zeros(self.grid.n + 1)
        np.cumsum(self.factor @ z, out=out[1:])
        return out

    def sample(self, generator: np.random.Generator, seed_tag: str | None = None) -> FbmPath:
        return FbmPath(self.grid, self.sample_values(generator), self.h, seed_tag)


class DaviesHarteSampler:
    """Circulant-embedding sampler for the uniform grid with ``n = 2^k`` steps.

    The ``n`` increments have Toeplitz covariance ``gamma(l) = theta(l) n^{-2H}``;
    it is embedded in a circulant of size ``2n`` whose eigenvalues come from
    one real FFT.
    """

    def __init__(self, h: float, n: int):
        self.h = check_hurst(h)
        if n < 1 or n & (n - 1):
            raise ValueError(f"Davies-Harte needs n a power of two, got {n}")
        self.n = n
        gamma = increment_autocovariance(self.h, n, np.arange(n + 1))
        row = np.concatenate([gamma, gamma[-2:0:-1]])
        eig = np.fft.rfft(row).real
        worst = int(np.argmin(eig))
        if eig[worst] < -1e-12 * max(float(np.max(eig)), 1.0):
            raise CirculantEmbeddingError(float(eig[worst]), worst)
        eig = np.maximum(eig, 0.0)
        full = np.concatenate([eig, eig[-2:0:-1]])
        self.scale = np.sqrt(full / (2 * n))
        self.scale.setflags(write=False)
        self.grid = Grid.uniform(n)

    def increments_from_normals(self, z_re: np.ndarray, z_im: np.ndarray) -> np.ndarray:
        """Map standard normals of shape ``(..., 2n)`` to increments ``(..., n)``."""
        spec = self.scale * (z_re + 1j * z_im)
        return np.fft.fft(spec, axis=-1)[..., : self.n].real

    def sample_values(self, generator: np.random.Generator) -> np.ndarray:
        m = 2 * self.n
        z_re = generator.standard_normal(m)
        z_im = generator.standard_normal(m)
        out = np.zeros(self.n + 1)
        np.cumsum(self.increments_from_normals(z_re, z_im), out=out[1:])
        return out

    def sample(self, generator: np.random.Generator, seed_tag: str | None = None) -> FbmPath:
        return FbmPath(self.grid, self.sample_values(generator), self.h, seed_tag)


@lru_cache(maxsize=32)
def _davies_harte(h: float, n: int) -> DaviesHarteSampler:
    return DaviesHarteSampler(h, n)


@lru_cache(maxsize=8)
def _uniform_cholesky(h: float, n: int) -> CholeskySampler:
    return CholeskySampler(h, Grid.uniform(n))


def sample_cholesky(
    h: float,
    grid: Grid,
    generator: np.random.Generator,
    jitter: float | None = None,
    seed_tag: str | None = None,
) -> FbmPath:
    """Exact fBm draw on ``grid`` via Cholesky factorisation of the increments.

    Raises :class:`CholeskyError` (with the failing pivot) if the covariance is
    not numerically positive definite; ``jitter`` adds ``jitter * I`` and must
    be requested explicitly.
    """
    return CholeskySampler(h, grid, jitter).sample(generator, seed_tag)


def sample_davies_harte(h: float, n: int, generator: np.random.Generator, seed_tag: str | None = None) -> FbmPath:
    """Exact equidistant fBm draw in O(n log n).

    Non-dyadic ``n`` falls back to Cholesky with a warning.
    """
    if n < 1 or n & (n - 1):
        warnings.warn(f"n={n} is not a power of two; using the Cholesky sampler", stacklevel=2)
        return _uniform_cholesky(check_hurst(h), n).sample(generator, seed_tag)
    return _davies_harte(check_hurst(h), n).sample(generator, seed_tag)


def sample_path(h: float, n: int, master_seed: int, path_index: int = 0, method: str = "davies_harte") -> FbmPath:
    """Draw path ``path_index`` of the reproducible family seeded by ``master_seed``."""
    gen = _rng.path_stream(master_seed, path_index, _rng.DRIVER)
    tag = _rng.seed_tag(master_seed, path_index)
    if method == "davies_harte":
        return sample_davies_harte(h, n, gen, tag)
    if method == "cholesky":
        return _uniform_cholesky(check_hurst(h), n).sample(gen, tag)
    raise ValueError(f"unknown sampling method {method!r}")


def sample_paths(h: float, n: int, master_seed: int, indices, method: str = "davies_harte") -> np.ndarray:
    """Values of several reproducible paths stacked as ``(len(indices), n + 1)``.

    Each row depends only on ``(h, n, master_seed, index)``.
    """
    indices = list(indices)
    out = np.zeros((len(indices), n + 1))
    if method == "davies_harte" and not (n & (n - 1)):
        sampler = _davies_harte(check_hurst(h), n)
        z_re = np.empty((len(indices), 2 * n))
        z_im = np.empty((len(indices), 2 * n))
        for row, idx in enumerate(indices):
            gen = _rng.path_stream(master_seed, idx, _rng.DRIVER)
            z_re[row] = gen.standard_normal(2 * n)
            z_im[row] = gen.standard_normal(2 * n)
        for row in range(len(indices)):
            # row-wise FFT keeps every path bit-identical to a single draw
            np.cumsum(sampler.increments_from_normals(z_re[row], z_im[row]), out=out[row, 1:])
        return out
    for row, idx in enumerate(indices):
        out[row] = sample_path(h, n, master_seed, idx, method).values
    return out


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def write_path_csv(path: FbmPath, destination) -> None:
    """Write ``t,B`` rows with 17 significant digits to a path or open text file."""
    if hasattr(destination, "write"):
        _write_rows(path, destination)
        return
    with Path(destination).open("w", newline="") as fh:
        _write_rows(path, fh)


def _write_rows(path: FbmPath, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "B"])
    for t, b in zip(path.grid.points, path.values):
        writer.writerow([format_float(t), format_float(b)])


def read_path_csv(source, h: float) -> FbmPath:
    data = np.loadtxt(source, delimiter=",", skiprows=1, ndmin=2)
    n = data.shape[0] - 1
    grid = Grid(data[:, 0], equidistant=np.allclose(data[:, 0], np.arange(n + 1) / n, rtol=0, atol=1e-15))
    return FbmPath(grid, data[:, 1], h)


__all__ = [
    "CholeskyError",
    "CirculantEmbeddingError",
    "CholeskySampler",
    "DaviesHarteSampler",
    "FbmPath",
    "Grid",
    "covariance",
    "increment_autocovariance",
    "increment_covariance_matrix",
    "read_path_csv",
    "sample_cholesky",
    "sample_davies_harte",
    "sample_path",
    "sample_paths",
    "subsample",
    "write_path_csv",
]
