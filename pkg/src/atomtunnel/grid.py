"""Uniform 1D grids, scalar/spinor wavefunctions and their observables.

Grid points sit at cell centres, ``x_j = x_min + (j + 1/2) dx``, so a
symmetric domain has x = 0 on a cell edge.  Region probabilities then split
exactly at the origin.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        n = self.n_points
        if n < 256 or n & (n - 1):
            raise GridError(f"n_points must be a power of two >= 256, got {n}")
        if not self.x_max > self.x_min:
            raise GridError("x_max must exceed x_min")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @cached_property
    def x(self) -> np.ndarray:
        x = self.x_min + (np.arange(self.n_points) + 0.5) * self.dx
        x.flags.writeable = False
        return x

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        k = 2 * np.pi * np.fft.fftfreq(self.n_points, self.dx)
        k.flags.writeable = False
        return k

    @property
    def dk(self) -> float:
        return 2 * np.pi / (self.n_points * self.dx)

    @property
    def k_max(self) -> float:
        return np.pi / self.dx

    def index_of(self, x: float) -> int:
        """Index of the cell edge nearest ``x`` (0..n_points)."""
        return int(np.clip(np.rint((x - self.x_min) / self.dx), 0, self.n_points))

    def region_mask(self, a: float, b: float) -> np.ndarray:
        """Boolean mask of cells whose centres lie in [a, b), snapped to cell edges."""
        lo = self.index_of(a) if np.isfinite(a) else (0 if a < 0 else self.n_points)
        hi = self.index_of(b) if np.isfinite(b) else (0 if b < 0 else self.n_points)
        mask = np.zeros(self.n_points, dtype=bool)
        mask[lo:hi] = True
        return mask


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class WaveFunction:
    grid: Grid
    psi: np.ndarray = field(repr=False)

    def __post_init__(self):
        psi = _frozen(self.psi)
        if psi.shape != (self.grid.n_points,):
            raise GridError("amplitude array does not match grid")
        object.__setattr__(self, "psi", psi)

    @property
    def norm2(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2) * self.grid.dx)

    def normalized(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.psi / np.sqrt(self.norm2))

    def scaled(self, c: complex) -> "WaveFunction":
        return WaveFunction(self.grid, c * self.psi)

    def momentum_density(self) -> tuple[np.ndarray, np.ndarray]:
        """(k, |phi(k)|^2) in FFT order, normalised so sum(density) * dk = norm2."""
        g = self.grid
        phi = np.fft.fft(self.psi) * g.dx / np.sqrt(2 * np.pi)
        return g.k, np.abs(phi) ** 2

    def boundary_ratio(self) -> float:
        """max(|psi| at the two edge cells) / max|psi|."""
        a = np.abs(self.psi)
        return float(max(a[0], a[-1]) / a.max()) if a.max() > 0 else 0.0


@dataclass(frozen=True)
class SpinorWaveFunction:
    """Spin-1/2 state; ``up``/``down`` are the sigma_z components."""

    grid: Grid
    up: np.ndarray = field(repr=False)
    down: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "up", _frozen(self.up))
        object.__setattr__(self, "down", _frozen(self.down))

    @classmethod
    def polarized_x(cls, psi: WaveFunction) -> "SpinorWaveFunction":
        s = 1 / np.sqrt(2)
        return cls(psi.grid, s * psi.psi, s * psi.psi)

    @property
    def norm2(self) -> float:
        dx = self.grid.dx
        return float((np.sum(np.abs(self.up) ** 2) + np.sum(np.abs(self.down) ** 2)) * dx)

    def spin(self) -> tuple[float, float, float]:
        """Unnormalised (<sx>, <sy>, <sz>) integrated over the grid."""
        return spin_expectations(self.up, self.down, self.grid.dx)


def spin_expectations(up: np.ndarray, down: np.ndarray, dx: float) -> tuple[float, float, float]:
    c = np.sum(np.conj(up) * down) * dx
    sz = (np.sum(np.abs(up) ** 2) - np.sum(np.abs(down) ** 2)) * dx
    return float(2 * c.real), float(2 * c.imag), float(sz)


class Observables(NamedTuple):
    norm2: float
    mean_x: float
    var_x: float
    mean_p: float
    kinetic_energy: float


def gaussian_packet(grid: Grid, x0: float, sigma: float, k0: float) -> WaveFunction:
    """Normalised Gaussian ``exp(-(x-x0)^2 / 4 sigma^2 + i k0 x)``.

    ``sigma`` is the position standard deviation of |psi|^2.
    """
    if not grid.x_min <= x0 <= grid.x_max:
        raise GridError(f"x0={x0} outside the grid")
    if sigma < 4 * grid.dx:
        raise GridError(f"sigma={sigma} under-resolved; need >= 4 dx = {4 * grid.dx}")
    if abs(k0) + 3 / sigma >= grid.k_max:
        raise GridError(
            f"packet bandwidth |k0| + 3/sigma = {abs(k0) + 3 / sigma:.4g} exceeds Nyquist k_max = {grid.k_max:.4g}"
        )
    x = grid.x
    psi = np.exp(-((x - x0) ** 2) / (4 * sigma**2) + 1j * k0 * x)
    return WaveFunction(grid, psi).normalized()


def observables(psi: WaveFunction) -> Observables:
    g = psi.grid
    dens = np.abs(psi.psi) ** 2
    n2 = float(np.sum(dens) * g.dx)
    mean_x = float(np.sum(g.x * dens) * g.dx / n2)
    var_x = float(np.sum((g.x - mean_x) ** 2 * dens) * g.dx / n2)
    k, pd = psi.momentum_density()
    mean_p = float(np.sum(k * pd) * g.dk / n2)
    ke = float(np.sum(0.5 * k**2 * pd) * g.dk / n2)
    return Observables(n2, mean_x, var_x, mean_p, ke)


def region_probability(psi: WaveFunction, a: float, b: float) -> float:
    if not a < b:
        raise GridError("region needs a < b")
    dens = np.abs(psi.psi) ** 2
    mask = psi.grid.region_mask(a, b)
    return float(np.sum(dens[mask]) / np.sum(dens))


def dump_wavefunction(psi: WaveFunction, path) -> None:
    g = psi.grid
    header = f"x_min={g.x_min!r} x_max={g.x_max!r} n_points={g.n_points}\nx, re_psi, im_psi"
    np.savetxt(path, np.column_stack([g.x, psi.psi.real, psi.psi.imag]),
               header=header, delimiter=", ", fmt="%.17g")


def load_wavefunction(path) -> WaveFunction:
    with open(path) as fh:
        meta = fh.readline().lstrip("#").split()
    kv = dict(item.split("=") for item in meta)
    grid = Grid(float(kv["x_min"]), float(kv["x_max"]), int(kv["n_points"]))
    data = np.loadtxt(path, delimiter=",", comments="#")
    return WaveFunction(grid, data[:, 1] + 1j * data[:, 2])
