"""Delta-kick cooling of classical ensembles and sweep-capture velocity selection.

The kick part works in SI units (m, s, m/s).  The sweep part works in the
internal units of :mod:`atomtunnel.units` (hbar = m = 1, micrometres).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.special import ai_zeros

from .grid import Grid
from .potentials import Gaussian, LinearVee, NoWellError, PotentialSchedule, evaluate, local_minimum
from .propagator import Absorber, PropagatorConfig, SplitStepper, relax_ground_state
from .scattering import count_bound_states
from .units import K_B, SPECIES_MASS

CHUNK = 8192
G_EARTH = 9.80665


@dataclass(frozen=True)
class Ensemble:
    x: np.ndarray
    v: np.ndarray
    weight: np.ndarray
    seed: int | None = None
    mass: float = SPECIES_MASS["Rb87"]

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
            raise ValueError("weights must sum to 1")

    def __len__(self) -> int:
        return len(self.x)

    def _var(self, a: np.ndarray) -> float:
        m = np.sum(self.weight * a)
        return float(np.sum(self.weight * (a - m) ** 2))

    @property
    def sigma_x(self) -> float:
        return math.sqrt(self._var(self.x))

    @property
    def sigma_v(self) -> float:
        return math.sqrt(self._var(self.v))

    @property
    def temperature(self) -> float:
        """m Var(v) / k_B in kelvin."""
        return self.mass * self._var(self.v) / K_B

    def covariance(self) -> float:
        mx = np.sum(self.weight * self.x)
        mv = np.sum(self.weight * self.v)
        return float(np.sum(self.weight * (self.x - mx) * (self.v - mv)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "v", "weight"])
            for row in zip(self.x, self.v, self.weight):
                w.writerow([f"{v:.12g}" for v in row])


def sample_thermal(T: float, sigma_x0: float, n: int, seed: int,
                   mass: float = SPECIES_MASS["Rb87"]) -> Ensemble:
    """Gaussian positions and Maxwell velocities, equal weights.

    Samples are drawn in fixed-size chunks, each from its own child of
    ``SeedSequence(seed)``, so member i depends only on (seed, i).
    """
    if not T >= 0:
        raise ValueError("temperature must be non-negative")
    sigma_v = math.sqrt(K_B * T / mass)
    n_chunks = -(-n // CHUNK)
    xs, vs = [], []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_chunks)):
        # full chunks always, so the draws never depend on n
        rng = np.random.default_rng(child)
        m = min(CHUNK, n - i * CHUNK)
        xs.append(rng.normal(0.0, 1.0, CHUNK)[:m] * sigma_x0)
        vs.append(rng.normal(0.0, 1.0, CHUNK)[:m] * sigma_v)
    w = np.full(n, 1.0 / n)
    return Ensemble(np.concatenate(xs), np.concatenate(vs), w, seed, mass)


@dataclass(frozen=True)
class KickSpec:
    """Impulsive restoring kick.

    ``strength`` is omega^2 * tau (1/s) for ``harmonic`` and the velocity
    change a * tau / m (m/s) for ``quadrupole``, whose force is -a sign(x).
    """

    kind: str
    strength: float
    duration: float = 1e-4
    gravity_compensation: bool = True
    g: float = G_EARTH

    def __post_init__(self):
        if self.kind not in ("harmonic", "quadrupole"):
            raise ValueError(f"unknown kick kind {self.kind!r}")
        if self.duration <= 0:
            raise ValueError("kick duration must be positive")

    @property
    def omega2(self) -> float:
        if self.kind != "harmonic":
            raise AttributeError("omega2 is defined for harmonic kicks")
        return self.strength / self.duration

    def impulse(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "harmonic":
            return -self.strength * x
        return -self.strength * np.sign(x)


class ImpulseApproximationWarning(UserWarning):
    pass


def free_drift(ens: Ensemble, t_free: float, gravity: float = 0.0) -> Ensemble:
    """Ballistic flight; ``gravity`` is a uniform acceleration along -x."""
    x = ens.x + ens.v * t_free - 0.5 * gravity * t_free**2
    v = ens.v - gravity * t_free
    return Ensemble(x, v, ens.weight, ens.seed, ens.mass)


def delta_kick(ens: Ensemble, t_free: float, kick: KickSpec) -> Ensemble:
    if not t_free > 0:
        raise ValueError("t_free must be positive")
    if kick.duration > t_free / 10:
        warnings.warn(f"kick duration {kick.duration} s is not short against t_free {t_free} s",
                      ImpulseApproximationWarning, stacklevel=2)
    g = 0.0 if kick.gravity_compensation else kick.g
    drifted = free_drift(ens, t_free, g)
    v = drifted.v + kick.impulse(drifted.x)
    return Ensemble(drifted.x, v, ens.weight, ens.seed, ens.mass)


def cooling_ratio_closed_form(sigma_x0: float, sigma_v: float, t_free: float) -> float:
    """Final/initial temperature for the optimal harmonic kick on a Gaussian cloud."""
    return sigma_x0**2 / (sigma_x0**2 + sigma_v**2 * t_free**2)


def regression_strength(ens: Ensemble, t_free: float, gravity: float = 0.0) -> float:
    """Harmonic omega^2 tau that removes the linear x-v correlation: Cov(x, v) / Var(x)."""
    d = free_drift(ens, t_free, gravity)
    var_x = d._var(d.x)
    return d.covariance() / var_x if var_x > 0 else 0.0


def optimize_kick(ens: Ensemble, t_free: float, kind: str = "harmonic",
                  duration: float = 1e-4, gravity_compensation: bool = True,
                  xtol: float = 1e-10) -> KickSpec:
    """Kick strength minimising the post-kick velocity variance (golden-section search)."""
    g = 0.0 if gravity_compensation else G_EARTH
    d = free_drift(ens, t_free, g)
    basis = d.x if kind == "harmonic" else np.sign(d.x)

    def var_after(s):
        return d._var(d.v - s * basis)

    scale = d.sigma_v / (math.sqrt(d._var(basis)) or 1.0)
    if scale == 0.0:
        return KickSpec(kind, 0.0, duration, gravity_compensation)
    res = optimize.minimize_scalar(var_after, bracket=(-scale, 0.3 * scale, 2 * scale),
                                   method="golden", options={"xtol": xtol})
    return KickSpec(kind, float(res.x), duration, gravity_compensation)


# ---------------------------------------------------------------- sweep capture

@dataclass(frozen=True)
class SweepGeometry:
    """Vee trap plus a Gaussian barrier swept linearly from c0 to c1 (internal units)."""

    slope: float
    V0: float
    waist: float
    speed: float
    c0: float = 35.0
    c1: float = -12.0
    x_min: float = -40.0
    x_max: float = 40.0
    n_points: int = 1024
    dt: float = 0.0025
    v_ceiling: float = 190.0
    absorber: Absorber = field(default_factory=lambda: Absorber(6.0, 50.0))

    @property
    def duration(self) -> float:
        return abs(self.c1 - self.c0) / self.speed

    @property
    def drift(self) -> float:
        return math.copysign(self.speed, self.c1 - self.c0)

    def grid(self) -> Grid:
        return Grid(self.x_min, self.x_max, self.n_points)

    def dip_search(self) -> tuple[float, float]:
        """Interval holding the dip ahead of the barrier at the end of the sweep.

        It runs from the grid edge the barrier moves towards to halfway back
        to the vertex, which keeps the vertex trap itself out of the search.
        """
        half = 0.5 * self.c1
        return (self.x_min, half) if self.drift < 0 else (half, self.x_max)

    def schedule(self) -> PotentialSchedule:
        terms = [LinearVee(self.slope)]
        if self.V0 != 0.0:
            terms.append(Gaussian(self.V0, self.c0, self.waist, self.drift, t_on=0.0))
        return PotentialSchedule(terms)

    def trap(self) -> PotentialSchedule:
        return PotentialSchedule([LinearVee(self.slope)])


def vee_spectrum(slope: float, n_levels: int) -> np.ndarray:
    """Exact levels of a|x| (hbar = m = 1) from the Airy zeros, ascending."""
    n_half = n_levels // 2 + 1
    a, ap, _, _ = ai_zeros(n_half)
    scale = (slope**2 / 2) ** (1 / 3)
    return np.sort(np.concatenate([-ap, -a]))[:n_levels] * scale


def vee_partition(slope: float, kT: float, rel_tol: float = 1e-12) -> float:
    n = 64
    while True:
        E = vee_spectrum(slope, n)
        if math.exp(-(E[-1] - E[0]) / kT) < rel_tol:
            return float(np.sum(np.exp(-E / kT)))
        n *= 2


def kinetic_matrix(grid: Grid) -> np.ndarray:
    """Dense spectral kinetic operator, so eigenstates are stationary under the stepper."""
    eye = np.eye(grid.n_points)
    return np.fft.ifft(0.5 * grid.k[:, None] ** 2 * np.fft.fft(eye, axis=0), axis=0).real


def lowest_states(H: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    E, vec = linalg.eigh(H, subset_by_index=(0, n - 1))
    return E, vec


class FinalWell(NamedTuple):
    depth: float
    rim: float
    x_min: float
    basin: tuple[float, float]
    energies: np.ndarray
    states: np.ndarray  # (n_bound, N), normalised with dx
    n_numerov: int

    @property
    def n_bound(self) -> int:
        return len(self.energies)


def final_well(geom: SweepGeometry, search: tuple[float, float] | None = None) -> FinalWell:
    """Levels of the dip at the end of the sweep, closed flat at its rim."""
    grid = geom.grid()
    sched = geom.schedule()
    t_end = geom.duration
    if search is None:
        search = geom.dip_search()
    lm = local_minimum(sched, t_end, search)
    spectrum = count_bound_states(sched, search, t=t_end)
    a, b = spectrum.basin
    V = np.minimum(evaluate(sched, grid.x, t_end), geom.v_ceiling)
    closed = np.where((grid.x >= a) & (grid.x <= b), np.minimum(V, lm.barrier_top), lm.barrier_top)
    H = kinetic_matrix(grid) + np.diag(closed)
    n_try = max(spectrum.count + 2, 4)
    E, vec = lowest_states(H, n_try)
    keep = E < lm.barrier_top
    states = vec[:, keep].T / math.sqrt(grid.dx)
    return FinalWell(lm.depth, lm.barrier_top, lm.x_min, (a, b), E[keep], states, spectrum.count)


@dataclass
class CaptureResult:
    depth: float
    n_bound: int
    n_bound_numerov: int
    trap_energies: np.ndarray
    p_transfer: np.ndarray
    kT: float
    capture_fraction: float
    kinetic_energy: float
    ground_energy: float
    partition: float
    flagged: str | None = None
    well: FinalWell | None = None

    slope: float = 0.0

    def capture_at(self, kT: float) -> float:
        """Thermal capture fraction for another temperature (same transfer probabilities)."""
        if len(self.trap_energies) == 0:
            return 0.0
        Z = vee_partition(self.slope, kT)
        return float(np.sum(np.exp(-self.trap_energies / kT) * self.p_transfer) / Z)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# depth={self.depth:.12g} n_bound={self.n_bound} kT={self.kT:.12g} "
                     f"capture_fraction={self.capture_fraction:.12g}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["E", "P_transfer"])
            for row in zip(self.trap_energies, self.p_transfer):
                w.writerow([f"{v:.12g}" for v in row])


def sweep_capture(geom: SweepGeometry, kT: float, n_states: int | None = None,
                  margin: int = 8, relax_dt: float = 0.0025) -> CaptureResult:
    """Thermal probability of being carried off in the swept dip.

    Each eigenstate of the vee trap is evolved through the sweep; its
    transfer probability is the weight it ends with in the quasi-bound
    levels of the final dip.  Weights are Boltzmann factors over the exact
    vee spectrum.
    """
    grid = geom.grid()
    Z = vee_partition(geom.slope, kT)
    try:
        well = final_well(geom)
    except NoWellError:
        return CaptureResult(0.0, 0, 0, np.zeros(0), np.zeros(0), kT, 0.0, math.nan, math.nan,
                             Z, "no well at sweep end", None, geom.slope)
    if n_states is None:
        n_states = well.n_bound + margin
    V_trap = np.minimum(evaluate(geom.trap(), grid.x), geom.v_ceiling)
    E0, vec = lowest_states(kinetic_matrix(grid) + np.diag(V_trap), n_states)
    psi = (vec.T / math.sqrt(grid.dx)).astype(complex)[:, None, :]
    config = PropagatorConfig(geom.dt, geom.absorber, v_ceiling=geom.v_ceiling)
    stepper = SplitStepper(grid, geom.schedule(), config, batch=n_states)
    psi, _ = stepper.run(psi, 0.0, geom.duration)
    overlaps = (well.states.conj() @ psi[:, 0, :].T) * grid.dx
    P = np.sum(np.abs(overlaps) ** 2, axis=0)
    flagged = None
    if P[-1] > 1e-2:
        flagged = f"highest evolved state still transfers {P[-1]:.3g}; raise n_states"
    weights = np.exp(-E0 / kT) / Z
    frac = float(np.sum(weights * P))
    gs = relax_ground_state(grid, PotentialSchedule([SampledPotential(well_potential(geom, well))]),
                            PropagatorConfig(relax_dt), region=well.basin)
    return CaptureResult(well.depth, well.n_bound, well.n_numerov, E0, P, kT, frac, gs.kinetic,
                         gs.E0, Z, flagged, well, geom.slope)


def well_potential(geom: SweepGeometry, well: FinalWell) -> np.ndarray:
    grid = geom.grid()
    V = np.minimum(evaluate(geom.schedule(), grid.x, geom.duration), geom.v_ceiling)
    a, b = well.basin
    return np.where((grid.x >= a) & (grid.x <= b), np.minimum(V, well.rim), well.rim)


@dataclass(frozen=True)
class SampledPotential:
    """Fixed sampled potential on the sweep grid."""

    values: np.ndarray
    t_on: float = -math.inf
    t_off: float = math.inf

    def active(self, t):
        return True

    def is_static(self):
        return True

    def shape(self, x, t):
        return self.values


class StaircasePoint(NamedTuple):
    V0: float
    depth: float
    n_bound: int
    capture: float


def depth_scan(geom: SweepGeometry, V0_values: Sequence[float], kT: float,
               n_states: int | None = None) -> tuple[list[StaircasePoint], list[CaptureResult]]:
    points, results = [], []
    for V0 in V0_values:
        g = SweepGeometry(geom.slope, float(V0), geom.waist, geom.speed, geom.c0, geom.c1,
                          geom.x_min, geom.x_max, geom.n_points, geom.dt, geom.v_ceiling,
                          geom.absorber)
        res = sweep_capture(g, kT, n_states)
        results.append(res)
        points.append(StaircasePoint(float(V0), res.depth, res.n_bound, res.capture_fraction))
    return points, results


def staircase_report(points: Sequence[StaircasePoint], step_threshold: float = 0.03) -> dict:
    """Compare capture increments with changes of the bound-state count.

    Returns the number of capture increments of at least ``step_threshold``,
    the total change in bound-state count, and whether capture is monotone.
    """
    pts = sorted(points, key=lambda p: p.depth)
    cap = np.array([p.capture for p in pts])
    nb = np.array([p.n_bound for p in pts])
    inc = np.diff(cap)
    return {
        "n_big_steps": int(np.sum(inc >= step_threshold)),
        "bound_change": int(nb[-1] - nb[0]) if len(nb) else 0,
        "monotone": bool(np.all(inc >= -1e-3)),
        "steps_at_count_changes": bool(np.all((inc >= step_threshold) <= (np.diff(nb) > 0))),
    }


def write_depth_table(points: Sequence[StaircasePoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["depth", "capture_fraction", "n_bound"])
        for p in sorted(points, key=lambda p: p.depth):
            w.writerow([f"{p.depth:.12g}", f"{p.capture:.12g}", p.n_bound])
