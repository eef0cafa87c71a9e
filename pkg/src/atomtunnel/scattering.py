"""Stationary scattering through 1D barriers and bound-state counting in wells.

Transfer matrices act on (psi, psi') and are real for real energies, which
keeps them well conditioned for deep tunnelling.  Amplitudes are quoted
relative to the region edges::

    psi = exp(ik(x - x_L)) + r exp(-ik(x - x_L))   for x < x_L
    psi = t exp(ik(x - x_R))                        for x > x_R

so a vanishing potential gives t = exp(ik(x_R - x_L)) and a group delay
equal to the free traversal time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate, optimize

from . import kernels
from .potentials import PotentialSchedule, Rectangular, Term, evaluate, local_minima

ASYMPTOTIC_TOL = 1e-9


@dataclass(frozen=True)
class PiecewiseConstant:
    """Exact piecewise-constant profile: ``values[i]`` on ``[edges[i], edges[i+1])``."""

    edges: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.values) + 1:
            raise ValueError("need len(edges) == len(values) + 1")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("edges must increase")

    @classmethod
    def rectangular(cls, V0: float, d: float, x0: float = 0.0) -> "PiecewiseConstant":
        return cls((x0, x0 + d), (V0,))

    @property
    def x_left(self) -> float:
        return self.edges[0]

    @property
    def x_right(self) -> float:
        return self.edges[-1]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.edges, x, side="right") - 1
        inside = (idx >= 0) & (idx < len(self.values))
        vals = np.asarray(self.values)
        return np.where(inside, vals[np.clip(idx, 0, len(vals) - 1)], 0.0)


def _as_function(potential, t: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(potential, PotentialSchedule):
        return lambda x: evaluate(potential, x, t)
    if isinstance(potential, Term):
        return lambda x: potential(x, t)
    return lambda x: np.asarray(potential(np.asarray(x, dtype=float)), dtype=float)


def amplitudes_from_matrix(m11, m12, m21, m22, k):
    """(t, r) for unit incidence from the left; ``k`` may be complex (E < 0 continuation)."""
    denom = 1j * k * (m11 + m22) + k * k * m12 - m21
    t = 2j * k / denom
    r = -(1j * k * m11 - k * k * m12 - m21 - 1j * k * m22) / denom
    return t, r


def _wavenumber(E: np.ndarray) -> np.ndarray:
    return np.where(E < 0, 1j * np.sqrt(np.abs(2 * E)), np.sqrt(np.abs(2 * E)) + 0j)


def _chain(blocks, n_e: int):
    """Left-multiply 2x2 blocks, renormalizing each step; returns entries and log scale."""
    a = [np.ones(n_e, complex), np.zeros(n_e, complex), np.zeros(n_e, complex),
         np.ones(n_e, complex)]
    log_scale = np.zeros(n_e)
    for b in blocks:
        a = [b[0] * a[0] + b[1] * a[2], b[0] * a[1] + b[1] * a[3],
             b[2] * a[0] + b[3] * a[2], b[2] * a[1] + b[3] * a[3]]
        s = np.max(np.abs(a), axis=0)
        s = np.where(s > 0, s, 1.0)
        a = [x / s for x in a]
        log_scale += np.log(s)
    return a, log_scale


def _scaled_amplitudes(a, log_scale, k, length: float, relative: bool):
    denom = 1j * k * (a[0] + a[3]) + k * k * a[1] - a[2]
    # t = 2ik / (denom e^log_scale), assembled in log space so thick barriers do not overflow
    log_t = np.log(2j * k / denom) - log_scale
    if relative:
        log_t = log_t - 1j * k * length
    t = np.exp(log_t)
    r = -(1j * k * a[0] - k * k * a[1] - a[2] - 1j * k * a[3]) / denom
    return t, r


def _slab_blocks(V: np.ndarray, h: float, E: np.ndarray):
    """Transfer matrices of runs of slabs short enough that no entry overflows."""
    kappa_max = math.sqrt(2.0 * max(float(np.max(V, initial=0.0) - np.min(E)), 0.0))
    run = max(1, int(200.0 / max(kappa_max * h, 1e-300)))
    for i in range(0, len(V), run):
        yield kernels.transfer_matrices(np.ascontiguousarray(V[i:i + run]), float(h), E)


def slab_amplitudes(V: np.ndarray, h: float, E: np.ndarray,
                    relative: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """(t, r) for the slab profile ``V`` (width ``h`` each) at energies ``E``.

    Negative energies are allowed and give the analytic continuation with
    k = i sqrt(-2E). With ``relative`` the transmission is divided by the
    free-flight factor exp(ik len(V) h).
    """
    E = np.ascontiguousarray(np.atleast_1d(np.asarray(E, dtype=float)))
    V = np.asarray(V, dtype=float)
    a, log_scale = _chain(_slab_blocks(V, h, E), len(E))
    return _scaled_amplitudes(a, log_scale, _wavenumber(E), len(V) * h, relative)


def _piecewise_amplitudes(p: PiecewiseConstant, E: np.ndarray, relative: bool = False):
    E = np.ascontiguousarray(np.atleast_1d(np.asarray(E, dtype=float)))
    blocks = (kernels.transfer_matrices(np.array([float(v)]), x1 - x0, E)
              for (x0, x1), v in zip(zip(p.edges[:-1], p.edges[1:]), p.values))
    a, log_scale = _chain(blocks, len(E))
    return _scaled_amplitudes(a, log_scale, _wavenumber(E), p.x_right - p.x_left, relative)


class ScatteringSolution(NamedTuple):
    energies: np.ndarray
    t: np.ndarray
    r: np.ndarray
    x_left: float
    x_right: float
    n_slabs: int

    @property
    def T(self) -> np.ndarray:
        return np.abs(self.t) ** 2

    @property
    def R(self) -> np.ndarray:
        return np.abs(self.r) ** 2

    @property
    def residual(self) -> np.ndarray:
        """|t|^2 + |r|^2 - 1 per energy."""
        return self.T + self.R - 1.0

    @property
    def phase(self) -> np.ndarray:
        return np.unwrap(np.angle(self.t))

    @property
    def length(self) -> float:
        return self.x_right - self.x_left

    def to_csv(self, path) -> None:
        tau = group_delays(self) if len(self.energies) >= 3 else np.full(len(self.energies), np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["E", "re_t", "im_t", "re_r", "im_r", "T", "phase", "group_delay"])
            for row in zip(self.energies, self.t.real, self.t.imag, self.r.real, self.r.imag,
                           self.T, self.phase, tau):
                w.writerow([f"{v:.12g}" for v in row])


def scatter(potential, E, x_left: float | None = None, x_right: float | None = None,
            t: float = 0.0, tol: float = 1e-8, n_start: int = 256,
            n_max: int = 1 << 21) -> ScatteringSolution:
    """Transmission and reflection amplitudes for incidence from the left.

    ``potential`` is a :class:`PiecewiseConstant` (solved exactly), or any
    callable / schedule, which is sampled at slab midpoints with the slab
    count doubled until |t|^2 moves by less than ``tol`` at every energy.
    """
    E = np.atleast_1d(np.asarray(E, dtype=float))
    if np.any(E <= 0):
        raise ValueError("scattering energies must be positive")
    if isinstance(potential, PotentialSchedule):
        exact = piecewise_from_schedule(potential, t)
        if exact is not None:
            potential = exact
    if isinstance(potential, PiecewiseConstant):
        xl = potential.x_left if x_left is None else x_left
        xr = potential.x_right if x_right is None else x_right
        if xl > potential.x_left or xr < potential.x_right:
            raise ValueError("interval must contain every piece")
        pad = padded(potential, xl, xr)
        tt, rr = _piecewise_amplitudes(pad, E)
        return ScatteringSolution(E, tt, rr, xl, xr, len(pad.values))
    if x_left is None or x_right is None or not x_right > x_left:
        raise ValueError("need x_left < x_right for a sampled potential")
    f = _as_function(potential, t)
    ends = f(np.array([x_left, x_right]))
    if np.any(np.abs(ends) > ASYMPTOTIC_TOL):
        raise ValueError(
            f"potential does not vanish at the interval ends (V = {ends[0]:.3g}, {ends[1]:.3g})"
        )
    n = n_start
    prev = None
    while True:
        h = (x_right - x_left) / n
        V = f(x_left + (np.arange(n) + 0.5) * h)
        tt, rr = slab_amplitudes(V, h, E)
        T = np.abs(tt) ** 2
        if prev is not None and np.max(np.abs(T - prev)) < tol:
            return ScatteringSolution(E, tt, rr, x_left, x_right, n)
        if n >= n_max:
            raise RuntimeError(f"slab refinement did not converge by n = {n}")
        prev = T
        n *= 2


def piecewise_from_schedule(schedule: PotentialSchedule, t: float = 0.0) -> PiecewiseConstant | None:
    """Exact profile when every active term is a rectangle, else None."""
    active = [term for term in schedule.terms if term.active(t)]
    if not active or not all(isinstance(term, Rectangular) for term in active):
        return None
    edges = sorted({term.center + s * term.width / 2 for term in active for s in (-1, 1)})
    mids = 0.5 * (np.array(edges[:-1]) + np.array(edges[1:]))
    values = evaluate(schedule, mids, t)
    return PiecewiseConstant(tuple(edges), tuple(float(v) for v in values))


def padded(p: PiecewiseConstant, x_left: float, x_right: float) -> PiecewiseConstant:
    """``p`` extended with zero-potential pieces out to [x_left, x_right]."""
    edges, values = list(p.edges), list(p.values)
    if x_left < edges[0]:
        edges.insert(0, x_left)
        values.insert(0, 0.0)
    if x_right > edges[-1]:
        edges.append(x_right)
        values.append(0.0)
    return PiecewiseConstant(tuple(edges), tuple(values))


def scan(potential, energies, **kwargs) -> ScatteringSolution:
    return scatter(potential, energies, **kwargs)


def _check_unwrap(phase: np.ndarray) -> None:
    jumps = np.abs(np.diff(phase))
    if np.any(jumps > 0.9 * math.pi):
        raise ValueError("phase sampled too coarsely to unwrap; refine the energy grid")


def group_delays(solution: ScatteringSolution) -> np.ndarray:
    """dphi/dE at every grid energy (second-order differences)."""
    phase = solution.phase
    _check_unwrap(phase)
    return np.gradient(phase, solution.energies)


class GroupDelay(NamedTuple):
    tau: float
    free_reference: float

    @property
    def advance(self) -> float:
        """Free traversal time minus group delay (positive means superluminal-looking)."""
        return self.free_reference - self.tau


def group_delay(solution: ScatteringSolution, E: float) -> GroupDelay:
    """Central-difference dphi/dE at ``E`` with the free-traversal time d/v alongside."""
    Es = solution.energies
    if len(Es) < 3 or not Es[0] < E < Es[-1]:
        raise ValueError(f"E = {E} is not interior to the energy grid")
    tau = float(np.interp(E, Es, group_delays(solution)))
    return GroupDelay(tau, solution.length / math.sqrt(2 * E))


def group_delay_at(potential, E: float, dE: float | None = None, **kwargs) -> GroupDelay:
    dE = dE if dE is not None else 1e-4 * E
    sol = scatter(potential, np.array([E - dE, E, E + dE]), **kwargs)
    return group_delay(sol, E)


class BoundSpectrum(NamedTuple):
    energies: np.ndarray
    rim: float
    floor: float
    x_min: float
    basin: tuple[float, float]

    @property
    def count(self) -> int:
        return len(self.energies)


class _Counter:
    """Eigenvalue count below E for a well closed flat at its rim outside its basin."""

    PAD = 4

    def __init__(self, f, xa: float, xb: float, rim: float, n_points: int):
        x = np.linspace(xa, xb, n_points)
        self.h = h = x[1] - x[0]
        pad = h * np.arange(1, self.PAD + 1)
        self.x = np.concatenate([xa - pad[::-1], x, xb + pad])
        V = np.minimum(f(self.x), rim)
        V[: self.PAD] = rim
        V[-self.PAD:] = rim
        self.V = np.ascontiguousarray(V)
        self.rim = rim
        self.length = xb - xa

    def __call__(self, E: float) -> int:
        h = self.h
        kappa = math.sqrt(max(2 * (self.rim - E), 0.0))
        # flat exterior on the left: the decaying solution seen from outside
        nodes, pm, p0 = kernels.numerov_shoot(self.V, h, E, math.exp(-kappa * h), 1.0)
        if kappa == 0.0:
            # psi = p0 + slope s beyond the right edge; a state with zero
            # binding energy (slope 0) counts as bound
            slope = (p0 - pm) / h
            eta = 1e-3 / self.length
            return nodes + int(p0 * slope < eta * p0 * p0)
        # psi = A e^{-kappa s} + B e^{kappa s} beyond the right edge
        eh = math.exp(kappa * h)
        B = (p0 * eh - pm) / (eh - 1.0 / eh)
        return nodes + int(p0 * B < 0)


def count_bound_states(potential, search_interval: tuple[float, float], t: float = 0.0,
                       floor: float | None = None, n_points: int = 8001,
                       e_tol: float = 1e-10) -> BoundSpectrum:
    """Levels of the deepest well in ``search_interval`` below its rim.

    The rim is the lower of the two enclosing maxima (an interval end with
    no maximum counts as an infinite wall).  Outside the basin the potential
    is replaced by the rim value, so open wells get their quasi-bound levels.
    """
    sched = potential if isinstance(potential, PotentialSchedule) else \
        PotentialSchedule([_CallableTerm(_as_function(potential, t))])
    f = _as_function(sched, t)
    wells = local_minima(sched, t, search_interval)
    if not wells:
        return BoundSpectrum(np.zeros(0), math.nan, math.nan, math.nan, (math.nan, math.nan))
    w = max(wells, key=lambda m: m.depth)
    rim = w.barrier_top
    lo, hi = search_interval
    # a side bounded by a maximum ends at it; an open side ends where V climbs back to the rim
    xa = w.x_rim_left if w.x_rim_left is not None else _crossing(f, w.x_min, lo, rim)
    xb = w.x_rim_right if w.x_rim_right is not None else _crossing(f, w.x_min, hi, rim)
    if w.x_rim_left is not None and w.x_rim_right is not None:
        # the lower rim bounds one side; the higher side is closed where V reaches the rim
        xa = max(xa, _crossing(f, w.x_min, xa, rim))
        xb = min(xb, _crossing(f, w.x_min, xb, rim))
    floor = w.v_min if floor is None else max(floor, w.v_min)
    counter = _Counter(f, xa, xb, rim, n_points)
    n_total = counter(rim)
    levels = []
    scale = max(rim - floor, 1e-300)
    for n in range(n_total):
        a, b = floor, rim
        while b - a > e_tol * scale:
            mid = 0.5 * (a + b)
            if counter(mid) > n:
                b = mid
            else:
                a = mid
        levels.append(0.5 * (a + b))
    return BoundSpectrum(np.array(levels), rim, floor, w.x_min, (xa, xb))


def _crossing(f, x0: float, x_end: float, level: float) -> float:
    """First point from x0 towards x_end where V reaches ``level`` (or x_end)."""
    xs = np.linspace(x0, x_end, 4001)
    v = f(xs)
    # the rim value is a refined maximum the samples may fall just short of
    above = np.nonzero(v >= level - 1e-9 * max(1.0, abs(level)))[0]
    if len(above) == 0:
        return float(x_end)
    j = above[0]
    if j == 0:
        return float(x0)
    g = lambda x: float(f(np.array([x]))[0]) - level
    if g(xs[j]) == 0.0:
        return float(xs[j])
    return float(optimize.brentq(g, xs[j - 1], xs[j], xtol=1e-12))


@dataclass(frozen=True)
class _CallableTerm(Term):
    func: Callable = None

    def shape(self, x, t):
        return self.func(x)


def stationary_states(potential, E, x_left: float, x_right: float, n_slabs: int = 8192,
                      t: float = 0.0, extra_edges: Sequence[float] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Scattering states for unit incidence from the left, sampled on slab edges.

    Returns ``(x, psi)`` with ``psi`` of shape ``(len(E), len(x))``.  Piece
    edges of rectangular profiles and ``extra_edges`` are inserted into the
    slab grid so that region integrals can end exactly on them.
    """
    E = np.atleast_1d(np.asarray(E, dtype=float))
    if np.any(E <= 0):
        raise ValueError("energies must be positive")
    if isinstance(potential, PotentialSchedule):
        exact = piecewise_from_schedule(potential, t)
        potential = exact if exact is not None else potential
    pieces = list(potential.edges) if isinstance(potential, PiecewiseConstant) else []
    edges = np.union1d(np.linspace(x_left, x_right, n_slabs + 1),
                       [e for e in list(pieces) + list(extra_edges) if x_left < e < x_right])
    h = np.diff(edges)
    f = _as_function(potential, t)
    V = f(0.5 * (edges[:-1] + edges[1:]))
    k = np.sqrt(2 * E)
    psi = np.empty((len(E), len(edges)), dtype=complex)
    # transfer through all slabs first to get r, then march (psi, psi') forward
    a = np.ones((len(E),)), np.zeros(len(E)), np.zeros(len(E)), np.ones(len(E))
    mats = []
    for v, hh in zip(V, h):
        q2 = 2 * (E - v)
        c, s, qs = _slab_np(q2, hh)
        mats.append((c, s, qs))
        a = (c * a[0] + s * a[2], c * a[1] + s * a[3], qs * a[0] + c * a[2], qs * a[1] + c * a[3])
    _, r = amplitudes_from_matrix(*a, k)
    u = 1 + r
    du = 1j * k * (1 - r)
    psi[:, 0] = u
    for j, (c, s, qs) in enumerate(mats):
        u, du = c * u + s * du, qs * u + c * du
        psi[:, j + 1] = u
    return edges, psi


def _slab_np(q2: np.ndarray, h: float):
    q = np.sqrt(np.abs(q2))
    x = q * h
    safe = np.where(q > 0, q, 1.0)
    pos = q2 > 0
    c = np.where(pos, np.cos(x), np.cosh(x))
    s = np.where(q > 0, np.where(pos, np.sin(x), np.sinh(x)) / safe, h)
    qs = np.where(pos, -q * np.sin(x), q * np.sinh(x))
    return c, s, qs


def dwell_time(potential, E, region: tuple[float, float], x_left: float, x_right: float,
               n_slabs: int = 8192, t: float = 0.0) -> np.ndarray:
    """Stationary dwell time: integral of |psi_E|^2 over ``region`` divided by the incident flux k."""
    a, b = region
    x, psi = stationary_states(potential, E, x_left, x_right, n_slabs, t, extra_edges=(a, b))
    sel = (x >= a) & (x <= b)
    dens = np.abs(psi[:, sel]) ** 2
    k = np.sqrt(2 * np.atleast_1d(np.asarray(E, dtype=float)))
    return integrate.trapezoid(dens, x[sel], axis=1) / k
