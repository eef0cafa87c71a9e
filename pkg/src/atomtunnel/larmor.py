"""Larmor-clock interaction times for post-selected tunnelling subensembles.

A packet polarised along +x meets a weak field ``omega_L/2 sigma_z``
confined to a region.  The spin of the flux absorbed at the right edge
(transmitted) or left edge (reflected) gives the conditional times
``tau_y = <sigma_y>/omega_L`` and ``tau_z = <sigma_z>/omega_L``, which are
extrapolated linearly to omega_L -> 0.  All field configurations of one
call share a single batched spinor evolution.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .grid import Grid, WaveFunction
from .potentials import LarmorField, PotentialSchedule
from .propagator import PropagatorConfig, SplitStepper, _spin_from_rho
from .scattering import dwell_time

SUBENSEMBLES = ("transmitted", "reflected", "all")
WEAK_LIMIT = 0.2


class PostSelectionError(ValueError):
    """Transmission too small for a usable post-selected subensemble."""


@dataclass(frozen=True)
class TunnellingSetup:
    """A scalar packet launched at a static barrier, absorbed at both grid edges."""

    grid: Grid
    schedule: PotentialSchedule
    psi0: WaveFunction
    config: PropagatorConfig
    t_end: float
    t0: float = 0.0

    def __post_init__(self):
        if self.config.absorber is None:
            raise ValueError("post-selection needs an absorber")

    @property
    def mean_speed(self) -> float:
        k, dens = self.psi0.momentum_density()
        return abs(float(np.sum(k * dens) / np.sum(dens)))


class SpinTallies(NamedTuple):
    """Absorbed/remaining 2x2 spin density matrices per batch member."""

    left: np.ndarray
    right: np.ndarray
    remaining: np.ndarray

    def rho(self, which: str) -> np.ndarray:
        if which == "transmitted":
            return self.right
        if which == "reflected":
            return self.left
        return self.left + self.right + self.remaining


def run_spinor_batch(setup: TunnellingSetup, field_lists: Sequence[Sequence[LarmorField]],
                     t_split: float | None = None) -> SpinTallies | tuple[SpinTallies, SpinTallies]:
    """Evolve an x-polarised copy of ``setup.psi0`` once per field list.

    With ``t_split`` the tallies at that instant are returned as well.
    """
    grid = setup.grid
    batch = len(field_lists)
    stepper = SplitStepper(grid, setup.schedule, setup.config, fields=field_lists,
                           batch=batch, components=2)
    amp = np.asarray(setup.psi0.psi, dtype=complex) / math.sqrt(2)
    state = np.broadcast_to(amp, (batch, 2, grid.n_points)).copy()
    mid = None
    if t_split is not None:
        state, _ = stepper.run(state, setup.t0, t_split)
        mid = _tallies(stepper, state, grid)
        state, _ = stepper.run(state, t_split, setup.t_end)
    else:
        state, _ = stepper.run(state, setup.t0, setup.t_end)
    final = _tallies(stepper, state, grid)
    return (final, mid) if mid is not None else final


def _tallies(stepper: SplitStepper, state: np.ndarray, grid: Grid) -> SpinTallies:
    rem = np.einsum("bcn,bdn->bcd", state, np.conj(state)) * grid.dx
    return SpinTallies(stepper.rho_left.copy(), stepper.rho_right.copy(), rem)


@dataclass(frozen=True)
class ConditionalTimes:
    region: tuple[float, float]
    subensemble: str
    omegas: np.ndarray
    tau_y: np.ndarray
    tau_z: np.ndarray
    tau_y0: float
    tau_z0: float
    residual: float
    probability: float
    flagged: bool = False

    def sigma_y(self) -> np.ndarray:
        return self.tau_y * self.omegas


def _extrapolate(omegas: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    if np.any(~np.isfinite(values)):
        return math.nan, math.nan
    c1, c0 = np.polyfit(omegas, values, 1)
    resid = values - (c1 * omegas + c0)
    scale = max(np.max(np.abs(values)), 1e-300)
    return float(c0), float(np.sqrt(np.mean(resid**2)) / scale)


def _conditional(region, sub, omegas, rhos) -> ConditionalTimes:
    spins = [_spin_from_rho(r) for r in rhos]
    prob = float(np.mean([s[0] for s in spins]))
    flagged = prob < 1e-10
    if flagged:
        nan = np.full(len(omegas), math.nan)
        return ConditionalTimes(region, sub, omegas, nan, nan, math.nan, math.nan, math.nan,
                                prob, True)
    ty = np.array([s[2] for s in spins]) / omegas
    tz = np.array([s[3] for s in spins]) / omegas
    y0, ry = _extrapolate(omegas, ty)
    z0, _ = _extrapolate(omegas, tz)
    return ConditionalTimes(region, sub, omegas, ty, tz, y0, z0, ry, prob)


def _check_weak(setup: TunnellingSetup, region, omegas) -> None:
    span = region[1] - region[0]
    v = setup.mean_speed
    expected = min(span / v if v > 0 else math.inf, setup.t_end - setup.t0)
    worst = float(np.max(np.abs(omegas))) * expected
    if worst >= WEAK_LIMIT:
        raise ValueError(
            f"omega_L * expected dwell = {worst:.3g} is outside the weak regime (< {WEAK_LIMIT})"
        )


def _check_transmission(tallies: SpinTallies) -> None:
    T = float(np.trace(tallies.right[0]).real)
    if T < 1e-10:
        raise PostSelectionError(f"transmitted probability {T:.3g} < 1e-10")


def _conditional_batch(setup: TunnellingSetup, regions: Sequence[tuple[float, float]],
                       omegas) -> list[dict[str, ConditionalTimes]]:
    omegas = np.asarray(omegas, dtype=float)
    if len(omegas) < 3:
        raise ValueError("need at least three omega_L values to extrapolate")
    if np.any(omegas == 0):
        raise ValueError("omega_L values must be nonzero")
    for reg in regions:
        _check_weak(setup, reg, omegas)
    fields = [[LarmorField(float(w), region=tuple(reg))] for reg in regions for w in omegas]
    tallies = run_spinor_batch(setup, fields)
    _check_transmission(tallies)
    out = []
    n = len(omegas)
    for i, reg in enumerate(regions):
        sl = slice(i * n, (i + 1) * n)
        out.append({sub: _conditional(tuple(reg), sub, omegas, tallies.rho(sub)[sl])
                    for sub in SUBENSEMBLES})
    return out


def larmor_times(setup: TunnellingSetup, region: tuple[float, float],
                 omegas: Sequence[float]) -> dict[str, ConditionalTimes]:
    """Conditional Larmor times for the transmitted, reflected and whole ensembles."""
    return _conditional_batch(setup, [region], omegas)[0]


@dataclass(frozen=True)
class DwellMap:
    bins: list[tuple[float, float]]
    times: list[dict[str, ConditionalTimes]]

    def tau_y0(self, sub: str) -> np.ndarray:
        return np.array([t[sub].tau_y0 for t in self.times])

    def tau_y(self, sub: str) -> np.ndarray:
        """Per-bin times at each omega_L, shape (bins, omegas)."""
        return np.array([t[sub].tau_y for t in self.times])

    def probability(self, sub: str) -> float:
        return self.times[0][sub].probability

    def merged_pairwise(self, sub: str) -> np.ndarray:
        tau = self.tau_y0(sub)
        m = len(tau) // 2 * 2
        return tau[:m:2] + tau[1:m:2]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_a", "bin_b", "subensemble", "omega_L", "tau_y", "tau_z"])
            for (a, b), rec in zip(self.bins, self.times):
                for sub in SUBENSEMBLES:
                    c = rec[sub]
                    for om, ty, tz in zip(c.omegas, c.tau_y, c.tau_z):
                        w.writerow([f"{a:.12g}", f"{b:.12g}", sub, f"{om:.12g}",
                                    f"{ty:.12g}", f"{tz:.12g}"])
                    w.writerow([f"{a:.12g}", f"{b:.12g}", sub, "0",
                                f"{c.tau_y0:.12g}", f"{c.tau_z0:.12g}"])


def dwell_map(setup: TunnellingSetup, bins: Sequence[tuple[float, float]] | np.ndarray,
              omegas: Sequence[float]) -> DwellMap:
    """Conditional times per bin.  ``bins`` may be a list of (a, b) or an array of edges."""
    bins = np.asarray(bins, dtype=float)
    if bins.ndim == 1:
        bins = np.stack([bins[:-1], bins[1:]], axis=1)
    pairs = [(float(a), float(b)) for a, b in bins]
    return DwellMap(pairs, _conditional_batch(setup, pairs, omegas))


def packet_dwell_time(setup: TunnellingSetup, region: tuple[float, float],
                      x_left: float, x_right: float, n_slabs: int = 8192,
                      cutoff: float = 1e-12) -> float:
    """Stationary dwell time averaged over the packet's momentum distribution.

    Equals the time integral of the probability inside ``region`` for a
    packet that starts far to the left with only positive momenta.
    """
    k, dens = setup.psi0.momentum_density()
    dk = setup.grid.dk
    keep = (dens > cutoff * dens.max()) & (k > 0)
    if np.sum(dens[(k <= 0)]) * dk > 1e-8:
        warnings.warn("packet has non-negligible negative momenta", RuntimeWarning)
    E = 0.5 * k[keep] ** 2
    tau = dwell_time(setup.schedule, E, region, x_left, x_right, n_slabs)
    w = dens[keep] * dk
    return float(np.sum(w * tau) / np.sum(w))


class TwoFieldRecord(NamedTuple):
    omegas: np.ndarray
    theta_both: np.ndarray
    theta_left: np.ndarray
    theta_right: np.ndarray
    w2_duration: float
    slope_both: float
    slope_ratio: float
    transmitted: float
    leak_before_switch: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# w2_duration={self.w2_duration:.12g} slope_both={self.slope_both:.6g} "
                     f"slope_ratio={self.slope_ratio:.6g}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["omega_L", "theta_both", "theta_left", "theta_right"])
            for row in zip(self.omegas, self.theta_both, self.theta_left, self.theta_right):
                w.writerow([f"{v:.12g}" for v in row])


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    y = np.abs(y)
    if np.any(y <= 0):
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _theta(rho: np.ndarray) -> float:
    p, sx, sy, _ = _spin_from_rho(rho)
    return math.atan2(sy, sx)


def two_field_experiment(setup: TunnellingSetup, left_region: tuple[float, float],
                         right_region: tuple[float, float], omegas: Sequence[float],
                         t_switch: float, w2_duration: float | None = None,
                         calibration_factor: float = 1e-2) -> TwoFieldRecord:
    """Pulsed +z field left of the barrier, then a -z pulse right of it.

    The left pulse is on during [t0, t_switch); the right pulse during
    [t_switch, t_switch + w2).  Without ``w2_duration`` the right pulse is
    set equal to the transmitted time spent in the left region, measured
    by a left-only run at a much weaker field, so the two devices cancel
    at first order in omega_L.  The windows do not overlap and the regions
    must be disjoint.
    """
    omegas = np.asarray(omegas, dtype=float)
    if np.any(omegas <= 0):
        raise ValueError("omega_L values must be positive")
    if not (left_region[1] <= right_region[0] or right_region[1] <= left_region[0]):
        raise ValueError("field regions overlap")
    if not setup.t0 < t_switch < setup.t_end:
        raise ValueError("t_switch must lie inside the run")
    t0 = setup.t0
    if w2_duration is None:
        w_cal = calibration_factor * float(omegas.min())
        cal = run_spinor_batch(setup, [[LarmorField(w_cal, region=left_region, t_on=t0,
                                                    t_off=t_switch)]])
        _check_transmission(cal)
        w2_duration = _theta(cal.right[0]) / w_cal
        if w2_duration <= 0:
            raise ValueError("left device gives no positive transmitted precession")
    t_w2 = t_switch + w2_duration
    if t_w2 >= setup.t_end:
        raise ValueError("second window runs past the end of the simulation")
    fields = []
    for w in omegas:
        lf = LarmorField(float(w), region=left_region, t_on=t0, t_off=t_switch)
        rf = LarmorField(float(w), region=right_region, sign=-1, t_on=t_switch, t_off=t_w2)
        fields += [[lf, rf], [lf], [rf]]
    final, mid = run_spinor_batch(setup, fields, t_split=t_switch)
    _check_transmission(final)
    T = float(np.trace(final.right[0]).real)
    leak = float(np.trace(mid.right[0]).real) / T
    th = np.array([_theta(r) for r in final.right]).reshape(len(omegas), 3)
    both, left, right = th[:, 0], th[:, 1], th[:, 2]
    return TwoFieldRecord(omegas, both, left, right, float(w2_duration),
                          _loglog_slope(omegas, both), _loglog_slope(omegas, both / left),
                          T, leak)
