"""Potential terms with time windows, and helpers for locating local wells."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize

INF = math.inf


class NoWellError(ValueError):
    """The searched interval holds no local minimum bounded by a barrier."""


@dataclass(frozen=True)
class Term:
    t_on: float = field(default=-INF, kw_only=True)
    t_off: float = field(default=INF, kw_only=True)

    def active(self, t: float) -> bool:
        return self.t_on <= t < self.t_off

    @property
    def always_on(self) -> bool:
        return self.t_on == -INF and self.t_off == INF

    def is_static(self) -> bool:
        return True

    def shape(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, t: float = 0.0):
        x = np.asarray(x, dtype=float)
        if not self.active(t):
            return np.zeros_like(x)
        return self.shape(x, t)


@dataclass(frozen=True)
class Rectangular(Term):
    V0: float
    center: float
    width: float

    def shape(self, x, t):
        return np.where(np.abs(x - self.center) < self.width / 2, self.V0, 0.0)


@dataclass(frozen=True)
class Gaussian(Term):
    """``V0 exp(-2 (x - c(t))^2 / waist^2)`` with c(t) = center + drift (t - t_on)."""

    V0: float
    center: float
    waist: float
    drift: float = 0.0

    def __post_init__(self):
        if not self.waist > 0:
            raise ValueError("waist must be positive")

    def center_at(self, t: float) -> float:
        if self.drift == 0.0:
            return self.center
        t_ref = self.t_on if math.isfinite(self.t_on) else 0.0
        return self.center + self.drift * (t - t_ref)

    def is_static(self) -> bool:
        return self.drift == 0.0

    def shape(self, x, t):
        c = self.center_at(t)
        return self.V0 * np.exp(-2.0 * (x - c) ** 2 / self.waist**2)


@dataclass(frozen=True)
class LinearVee(Term):
    slope: float
    vertex: float = 0.0

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError("vee slope must be positive")

    def shape(self, x, t):
        return self.slope * np.abs(x - self.vertex)


@dataclass(frozen=True)
class Harmonic(Term):
    omega2: float
    center: float = 0.0

    def shape(self, x, t):
        return 0.5 * self.omega2 * (x - self.center) ** 2


@dataclass(frozen=True)
class UniformGradient(Term):
    """Constant force: V = g x."""

    g: float

    def shape(self, x, t):
        return self.g * x


@dataclass(frozen=True)
class PotentialSchedule:
    terms: tuple[Term, ...] = ()

    def __init__(self, terms: Sequence[Term] = ()):
        object.__setattr__(self, "terms", tuple(terms))

    def __add__(self, other: "PotentialSchedule | Term") -> "PotentialSchedule":
        extra = other.terms if isinstance(other, PotentialSchedule) else (other,)
        return PotentialSchedule(self.terms + tuple(extra))

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        return evaluate(self, x, t)

    def switch_times(self) -> list[float]:
        out = set()
        for term in self.terms:
            for s in (term.t_on, term.t_off):
                if math.isfinite(s):
                    out.add(s)
        return sorted(out)

    def is_static_on(self, t0: float, t1: float) -> bool:
        """True if V(x, t) does not change for t in [t0, t1)."""
        if any(t0 < s < t1 for s in self.switch_times()):
            return False
        return all(term.is_static() or not term.active(t0) for term in self.terms)


def evaluate(schedule: PotentialSchedule, x, t: float = 0.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    v = np.zeros_like(x)
    for term in schedule.terms:
        if term.active(t):
            v = v + term.shape(x, t)
    return v


@dataclass(frozen=True)
class LarmorField:
    """Spin coupling ``sign * omega_L / 2 * sigma_z`` inside a region.

    ``region`` is ``(a, b)`` for a sharp box, or ``gaussian=(center, width)``
    for a smooth window of unit peak.
    """

    omega_L: float
    region: tuple[float, float] | None = None
    sign: int = 1
    t_on: float = -INF
    t_off: float = INF
    gaussian: tuple[float, float] | None = None

    def __post_init__(self):
        if (self.region is None) == (self.gaussian is None):
            raise ValueError("give exactly one of region or gaussian")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def active(self, t: float) -> bool:
        return self.t_on <= t < self.t_off

    def profile(self, x: np.ndarray, grid=None) -> np.ndarray:
        if self.gaussian is not None:
            c, w = self.gaussian
            return np.exp(-((x - c) ** 2) / (2 * w**2))
        a, b = self.region
        if grid is not None:
            return grid.region_mask(a, b).astype(float)
        return ((x >= a) & (x < b)).astype(float)

    def coupling(self, x: np.ndarray, t: float, grid=None) -> np.ndarray:
        """Coefficient of sigma_z in the Hamiltonian at time t."""
        if not self.active(t):
            return np.zeros_like(np.asarray(x, dtype=float))
        return 0.5 * self.sign * self.omega_L * self.profile(x, grid)


class LocalMinimum(NamedTuple):
    x_min: float
    depth: float
    barrier_top: float
    v_min: float
    x_rim_left: float | None
    x_rim_right: float | None


def _refine(f, a: float, b: float, c: float, tol: float) -> float:
    if not (f(b) < f(a) and f(b) < f(c)):
        return b  # flat bottom or step edge: the grid point is as good as any
    res = optimize.minimize_scalar(f, bracket=(a, b, c), method="golden",
                                   options={"xtol": tol})
    return float(res.x)


def local_minima(schedule: PotentialSchedule, t: float, search_interval: tuple[float, float],
                 n_grid: int = 20001, tol: float = 1e-6) -> list[LocalMinimum]:
    """All barrier-bounded interior minima on the interval.

    A side without an interior maximum counts as an infinitely high wall; a
    minimum with no interior maximum on either side is not a well.
    """
    lo, hi = search_interval
    xs = np.linspace(lo, hi, n_grid)
    vs = evaluate(schedule, xs, t)
    f = lambda x: float(evaluate(schedule, np.array([x]), t)[0])
    g = lambda x: -f(x)
    inner = np.arange(1, n_grid - 1)
    is_min = (vs[inner] < vs[inner - 1]) & (vs[inner] <= vs[inner + 1])
    is_max = (vs[inner] > vs[inner - 1]) & (vs[inner] >= vs[inner + 1])
    mins = inner[is_min]
    maxs = inner[is_max]
    h = xs[1] - xs[0]
    out = []
    for i in mins:
        left = maxs[maxs < i]
        right = maxs[maxs > i]
        if len(left) == 0 and len(right) == 0:
            continue
        xm = _refine(f, xs[i] - h, xs[i], xs[i] + h, tol)
        vm = f(xm)
        tops, rims = [], []
        for side in (left[-1:] , right[:1]):
            if len(side):
                j = side[0]
                xr = _refine(g, xs[j] - h, xs[j], xs[j] + h, tol)
                tops.append(f(xr))
                rims.append(xr)
            else:
                tops.append(INF)
                rims.append(None)
        top = min(tops)
        out.append(LocalMinimum(xm, top - vm, top, vm, rims[0], rims[1]))
    return out


def local_minimum(schedule: PotentialSchedule, t: float, search_interval: tuple[float, float],
                  n_grid: int = 20001, tol: float = 1e-6) -> LocalMinimum:
    """Deepest barrier-bounded local minimum on the interval.

    Raises NoWellError if there is none.
    """
    found = local_minima(schedule, t, search_interval, n_grid, tol)
    if not found:
        raise NoWellError(f"no well in {search_interval}")
    return max(found, key=lambda m: m.depth)


def curvature(schedule: PotentialSchedule, x0: float, t: float = 0.0, h: float = 1e-3) -> float:
    v = evaluate(schedule, np.array([x0 - h, x0, x0 + h]), t)
    return float((v[0] - 2 * v[1] + v[2]) / h**2)


def secular_period(schedule: PotentialSchedule, x0: float, t: float = 0.0) -> float:
    """2 pi / sqrt(V''(x0)) with unit mass."""
    c = curvature(schedule, x0, t)
    if c <= 0:
        raise NoWellError(f"non-positive curvature {c} at x={x0}")
    return 2 * math.pi / math.sqrt(c)
