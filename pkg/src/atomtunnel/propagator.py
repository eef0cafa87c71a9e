"""Split-operator time evolution, imaginary-time relaxation and decay fits.

All evolution runs through :class:`SplitStepper`, which advances a stack of
wavefunctions of shape ``(batch, components, n_points)``.  A scalar run is
``(1, 1, N)``, a spinor run ``(1, 2, N)``; ensembles of trap eigenstates or
Larmor-field configurations share one stack and one FFT per step.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .grid import Grid, SpinorWaveFunction, WaveFunction
from .potentials import LarmorField, PotentialSchedule, evaluate


class PhaseWrapError(ValueError):
    def __init__(self, dt: float, vmax: float):
        self.suggested_dt = 0.45 / vmax
        super().__init__(
            f"dt * max|V| = {dt * vmax:.3g} >= 0.5; use dt <= {self.suggested_dt:.4g}"
        )


class AliasingWarning(RuntimeWarning):
    """Kinetic phase per step exceeds pi at the grid's largest momentum."""


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        self.residual = residual
        super().__init__(f"{msg} (last residual {residual:.3g})")


@dataclass(frozen=True)
class Absorber:
    """Edge layers removing amplitude at rate ``strength * sin^2(pi s / 2)``.

    ``s`` runs from 0 at the inner edge of a layer to 1 at the grid boundary,
    so the per-step amplitude mask is ``exp(-rate * dt)`` with a cos^2 ramp.
    """

    width: float
    strength: float = 1.0

    def rate(self, grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.width < 8 * grid.dx:
            raise ValueError(f"absorber width {self.width} < 8 dx")
        x = grid.x
        s_left = np.clip((grid.x_min + self.width - x) / self.width, 0, 1)
        s_right = np.clip((x - (grid.x_max - self.width)) / self.width, 0, 1)
        s = np.maximum(s_left, s_right)
        return self.strength * np.sin(0.5 * np.pi * s) ** 2, s_left > 0, s_right > 0


@dataclass(frozen=True)
class PropagatorConfig:
    dt: float
    absorber: Absorber | None = None
    record_stride: int = 1
    v_ceiling: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")


class SplitStepper:
    """Strang step exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2), V at the step midpoint.

    ``fields`` holds one list of :class:`LarmorField` per batch member (or a
    single list shared by all).  Amplitude removed by the absorber is
    accumulated as a per-member density matrix for each edge.
    """

    def __init__(self, grid: Grid, schedule: PotentialSchedule, config: PropagatorConfig,
                 fields: Sequence[Sequence[LarmorField]] | None = None, batch: int = 1,
                 components: int = 1, imaginary: bool = False):
        self.grid = grid
        self.schedule = schedule
        self.config = config
        self.batch = batch
        self.components = components
        self.imaginary = imaginary
        dt = config.dt
        k2 = grid.k**2
        self._kin = np.exp(-0.5 * k2 * dt) if imaginary else np.exp(-0.5j * k2 * dt)
        if fields is None:
            fields = [[]] * batch
        elif fields and isinstance(fields[0], LarmorField):
            fields = [list(fields)] * batch
        if len(fields) != batch:
            raise ValueError("need one field list per batch member")
        self.fields = [list(f) for f in fields]
        if components == 1 and any(self.fields):
            raise ValueError("Larmor fields need a two-component state")
        self._profiles = [[f.profile(grid.x, grid) for f in fl] for fl in self.fields]
        self._static_V = None
        if config.absorber is not None:
            rate, self._left, self._right = config.absorber.rate(grid)
            self._mask = np.exp(-rate * dt)
            self._lost = 1.0 - self._mask**2
        else:
            self._mask = None
        self.rho_left = np.zeros((batch, components, components), dtype=complex)
        self.rho_right = np.zeros((batch, components, components), dtype=complex)

    def potential(self, t: float) -> np.ndarray:
        V = evaluate(self.schedule, self.grid.x, t)
        if self.config.v_ceiling is not None:
            V = np.minimum(V, self.config.v_ceiling)
        return V

    def check_guard(self, t0: float, t1: float) -> None:
        if self.imaginary:
            return
        kin_phase = 0.5 * self.grid.k_max**2 * self.config.dt
        if kin_phase > math.pi:
            # high-k quasi-energies fold onto the occupied band; sharp
            # potential features then scatter amplitude into them
            warnings.warn(
                f"kinetic phase k_max^2 dt / 2 = {kin_phase:.3g} > pi; "
                f"use dt <= {2 * math.pi / self.grid.k_max**2:.4g} or a coarser grid",
                AliasingWarning, stacklevel=3)
        times = {t0, 0.5 * (t0 + t1), t1}
        times.update(s for s in self.schedule.switch_times() if t0 <= s <= t1)
        times.update(np.linspace(t0, t1, 9))
        vmax = max(float(np.max(np.abs(self.potential(t)))) for t in times)
        if self.config.dt * vmax >= 0.5:
            raise PhaseWrapError(self.config.dt, vmax)

    def _spin_phase(self, t: float) -> np.ndarray | None:
        """Half-step spin phases for the step starting at ``t``.

        A pulse edge falling inside the step contributes in proportion to the
        overlap, so pulse lengths need not be multiples of dt.
        """
        if not any(self.fields):
            return None
        dt = self.config.dt
        b = np.zeros((self.batch, self.grid.n_points))
        for i, (fl, prof) in enumerate(zip(self.fields, self._profiles)):
            for f, p in zip(fl, prof):
                frac = (min(t + dt, f.t_off) - max(t, f.t_on)) / dt
                if frac > 0:
                    b[i] += 0.5 * f.sign * f.omega_L * min(frac, 1.0) * p
        if not b.any():
            return None
        half = 0.5 * dt
        return np.stack([np.exp(-1j * b * half), np.exp(1j * b * half)], axis=1)

    def _half_potential(self, t: float, static: bool) -> np.ndarray:
        if static and self._static_V is not None:
            return self._static_V
        V = self.potential(t)
        half = 0.5 * self.config.dt
        ph = np.exp(-V * half) if self.imaginary else np.exp(-1j * V * half)
        if static:
            self._static_V = ph
        return ph

    def step(self, psi: np.ndarray, t: float, static: bool = False) -> np.ndarray:
        tm = t + 0.5 * self.config.dt
        ph = self._half_potential(tm, static)
        spin = self._spin_phase(t)
        psi = psi * ph
        if spin is not None:
            psi = psi * spin
        psi = np.fft.ifft(np.fft.fft(psi, axis=-1) * self._kin, axis=-1)
        psi = psi * ph
        if spin is not None:
            psi = psi * spin
        if self._mask is not None:
            self._tally(psi)
            psi = psi * self._mask
        return psi

    def _tally(self, psi: np.ndarray) -> None:
        dx = self.grid.dx
        for sel, rho in ((self._left, self.rho_left), (self._right, self.rho_right)):
            p = psi[..., sel]
            w = self._lost[sel]
            rho += np.einsum("bcn,bdn->bcd", p * w, np.conj(p)) * dx

    def run(self, psi: np.ndarray, t0: float, t1: float, callback=None) -> tuple[np.ndarray, float]:
        """Advance from t0 to t1 with dt adjusted to an integer step count.

        ``callback(step_index, t, psi)`` is called after each recorded step.
        """
        n = max(1, int(round((t1 - t0) / self.config.dt)))
        dt = (t1 - t0) / n
        if not math.isclose(dt, self.config.dt, rel_tol=1e-12):
            self.config = PropagatorConfig(dt, self.config.absorber, self.config.record_stride,
                                           self.config.v_ceiling)
            self.__init_rescale(dt)
        self.check_guard(t0, t1)
        static = self.schedule.is_static_on(t0, t1)
        stride = self.config.record_stride
        for i in range(n):
            t = t0 + i * dt
            psi = self.step(psi, t, static)
            if callback is not None and ((i + 1) % stride == 0 or i == n - 1):
                callback(i + 1, t0 + (i + 1) * dt, psi)
        return psi, t1

    def __init_rescale(self, dt: float) -> None:
        k2 = self.grid.k**2
        self._kin = np.exp(-0.5 * k2 * dt) if self.imaginary else np.exp(-0.5j * k2 * dt)
        self._static_V = None
        if self.config.absorber is not None:
            rate, _, _ = self.config.absorber.rate(self.grid)
            self._mask = np.exp(-rate * dt)
            self._lost = 1.0 - self._mask**2


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    norm2: list = field(default_factory=list)
    mean_x: list = field(default_factory=list)
    var_x: list = field(default_factory=list)
    p_well: list = field(default_factory=list)
    absorbed_left: list = field(default_factory=list)
    absorbed_right: list = field(default_factory=list)
    sx: list = field(default_factory=list)
    sy: list = field(default_factory=list)
    sz: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final: WaveFunction | SpinorWaveFunction | None = None
    rho_left: np.ndarray | None = None
    rho_right: np.ndarray | None = None

    @property
    def is_spinor(self) -> bool:
        return bool(self.sx)

    def columns(self) -> dict[str, np.ndarray]:
        cols = {
            "t": self.times, "norm2": self.norm2, "mean_x": self.mean_x, "var_x": self.var_x,
            "P_well": self.p_well, "absorbed_left": self.absorbed_left,
            "absorbed_right": self.absorbed_right,
        }
        if self.is_spinor:
            cols.update(sx=self.sx, sy=self.sy, sz=self.sz)
        return {k: np.asarray(v, dtype=float) for k, v in cols.items()}

    def to_csv(self, path, units: dict[str, str] | None = None) -> None:
        cols = self.columns()
        units = units or {}
        with open(path, "w", newline="") as fh:
            fh.write("# trajectory\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"{k} [{units[k]}]" if k in units else k for k in cols])
            for row in zip(*cols.values()):
                w.writerow([f"{v:.12g}" for v in row])

    def subensemble_spin(self, which: str) -> tuple[float, float, float, float]:
        """(probability, <sx>, <sy>, <sz>) of the 'transmitted' (right) or 'reflected' (left) flux."""
        rho = {"transmitted": self.rho_right, "reflected": self.rho_left}[which]
        return _spin_from_rho(rho)


def _spin_from_rho(rho: np.ndarray) -> tuple[float, float, float, float]:
    p = float((rho[0, 0] + rho[1, 1]).real)
    if p <= 0:
        return 0.0, math.nan, math.nan, math.nan
    sx = 2 * rho[0, 1].real / p
    sy = -2 * rho[0, 1].imag / p
    sz = float((rho[0, 0] - rho[1, 1]).real) / p
    return p, float(sx), float(sy), sz


def _record(traj: Trajectory, grid: Grid, psi: np.ndarray, t: float, stepper: SplitStepper,
            well: np.ndarray | None, snapshots: bool) -> None:
    dx = grid.dx
    comps = psi[0]
    dens = np.sum(np.abs(comps) ** 2, axis=0)
    n2 = float(np.sum(dens) * dx)
    mx = float(np.sum(grid.x * dens) * dx / n2) if n2 > 0 else math.nan
    vx = float(np.sum((grid.x - mx) ** 2 * dens) * dx / n2) if n2 > 0 else math.nan
    traj.times.append(t)
    traj.norm2.append(n2)
    traj.mean_x.append(mx)
    traj.var_x.append(vx)
    traj.p_well.append(float(np.sum(dens[well]) * dx) if well is not None else math.nan)
    traj.absorbed_left.append(float(np.trace(stepper.rho_left[0]).real))
    traj.absorbed_right.append(float(np.trace(stepper.rho_right[0]).real))
    if comps.shape[0] == 2:
        c = np.sum(np.conj(comps[0]) * comps[1]) * dx
        traj.sx.append(float(2 * c.real))
        traj.sy.append(float(2 * c.imag))
        traj.sz.append(float((np.sum(np.abs(comps[0]) ** 2) - np.sum(np.abs(comps[1]) ** 2)) * dx))
    if snapshots:
        traj.snapshots.append((t, comps.copy()))


def evolve(psi: WaveFunction, schedule: PotentialSchedule, config: PropagatorConfig,
           t0: float, t1: float, well_region: tuple[float, float] | None = None,
           snapshots: bool = False) -> Trajectory:
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    grid = psi.grid
    stepper = SplitStepper(grid, schedule, config)
    well = grid.region_mask(*well_region) if well_region is not None else None
    traj = Trajectory()
    state = np.array(psi.psi, dtype=complex)[None, None, :]
    _record(traj, grid, state, t0, stepper, well, snapshots)
    cb = lambda i, t, p: _record(traj, grid, p, t, stepper, well, snapshots)
    state, _ = stepper.run(state, t0, t1, cb)
    traj.final = WaveFunction(grid, state[0, 0])
    traj.rho_left = stepper.rho_left[0]
    traj.rho_right = stepper.rho_right[0]
    return traj


def evolve_spinor(spsi: SpinorWaveFunction, schedule: PotentialSchedule,
                  fields: Sequence[LarmorField], config: PropagatorConfig,
                  t0: float, t1: float, well_region: tuple[float, float] | None = None,
                  snapshots: bool = False) -> Trajectory:
    """Spinor evolution; ``Trajectory.subensemble_spin`` gives the per-flux polarisation."""
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    grid = spsi.grid
    for f in fields:
        if f.region is not None:
            a, b = f.region
            if b <= grid.x_min or a >= grid.x_max:
                raise ValueError(f"field region {f.region} lies off the grid")
    stepper = SplitStepper(grid, schedule, config, fields=[list(fields)], batch=1, components=2)
    well = grid.region_mask(*well_region) if well_region is not None else None
    traj = Trajectory()
    state = np.stack([spsi.up, spsi.down]).astype(complex)[None]
    _record(traj, grid, state, t0, stepper, well, snapshots)
    cb = lambda i, t, p: _record(traj, grid, p, t, stepper, well, snapshots)
    state, _ = stepper.run(state, t0, t1, cb)
    traj.final = SpinorWaveFunction(grid, state[0, 0], state[0, 1])
    traj.rho_left = stepper.rho_left[0]
    traj.rho_right = stepper.rho_right[0]
    return traj


class GroundState(NamedTuple):
    psi0: WaveFunction
    E0: float
    kinetic: float
    potential: float
    iterations: int
    residual: float


def energy_terms(psi: np.ndarray, V: np.ndarray, grid: Grid) -> tuple[float, float]:
    """(kinetic, potential) expectation values of a normalised state."""
    phi = np.fft.fft(psi)
    n2 = np.sum(np.abs(psi) ** 2)
    kin = float(np.sum(0.5 * grid.k**2 * np.abs(phi) ** 2) / (grid.n_points * n2))
    pot = float(np.sum(V * np.abs(psi) ** 2) / n2)
    return kin, pot


def relax_ground_state(grid: Grid, schedule: PotentialSchedule, config: PropagatorConfig,
                       t: float = 0.0, region: tuple[float, float] | None = None,
                       initial: WaveFunction | None = None, tol: float = 1e-10,
                       max_iter: int = 400_000) -> GroundState:
    """Imaginary-time relaxation to the lowest state (inside ``region`` if given).

    The energy is ⟨H⟩ of the relaxed state evaluated spectrally, so the
    splitting error enters only at second order in the state error.
    """
    frozen = PotentialSchedule([_FrozenAt(schedule, t)])
    stepper = SplitStepper(grid, frozen, config, imaginary=True)
    V = stepper.potential(t)
    keep = grid.region_mask(*region) if region is not None else np.ones(grid.n_points, bool)
    if initial is not None:
        psi = np.array(initial.psi, dtype=complex)
    else:
        # start from a broad bump centred on the potential minimum of the search window
        x = grid.x
        xc = x[keep][np.argmin(V[keep])]
        width = max(0.05 * (x[keep][-1] - x[keep][0]), 4 * grid.dx)
        psi = np.exp(-((x - xc) ** 2) / (2 * width**2)).astype(complex)
    psi = np.where(keep, psi, 0)[None, None, :]
    E_prev = math.inf
    resid = math.inf
    for it in range(1, max_iter + 1):
        psi = stepper.step(psi, t, static=True)
        psi[..., ~keep] = 0
        psi /= math.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx)
        if it % 10 == 0:
            kin, pot = energy_terms(psi[0, 0], V, grid)
            E = kin + pot
            resid = abs(E - E_prev)
            if resid < tol:
                wf = WaveFunction(grid, psi[0, 0])
                return GroundState(wf, E, kin, pot, it, resid)
            E_prev = E
    raise ConvergenceError("imaginary-time relaxation did not converge", resid)


@dataclass(frozen=True)
class _FrozenAt:
    """A schedule pinned at one instant (always active)."""

    schedule: PotentialSchedule
    t: float
    t_on: float = -math.inf
    t_off: float = math.inf

    def active(self, t):
        return True

    def is_static(self):
        return True

    def shape(self, x, t):
        return evaluate(self.schedule, x, self.t)


class DecayFit(NamedTuple):
    rate: float
    intercept: float
    residual: float
    flagged: bool
    window: tuple[float, float]
    times: np.ndarray
    survival: np.ndarray


def fit_decay(times: np.ndarray, survival: np.ndarray, band: tuple[float, float] = (0.5, 0.9),
              skip_fraction: float = 0.1, residual_threshold: float = 0.05) -> DecayFit:
    """Straight-line fit of ln(survival) against time.

    Uses samples with survival inside ``band`` if there are at least five;
    otherwise everything after the first ``skip_fraction`` of the record.
    The residual is the rms deviation of ln P relative to the total drop of
    ln P over the window (or absolute when there is no drop).
    """
    times = np.asarray(times, float)
    survival = np.asarray(survival, float)
    lo, hi = band
    sel = (survival >= lo) & (survival <= hi)
    if sel.sum() < 5:
        sel = times >= times[0] + skip_fraction * (times[-1] - times[0])
    t = times[sel]
    y = np.log(np.clip(survival[sel], 1e-300, None))
    slope, intercept = np.polyfit(t, y, 1)
    resid_abs = float(np.sqrt(np.mean((y - (slope * t + intercept)) ** 2)))
    drop = abs(slope) * (t[-1] - t[0])
    residual = resid_abs / drop if drop > 1e-3 else resid_abs
    return DecayFit(float(-slope), float(intercept), residual, residual > residual_threshold,
                    (float(t[0]), float(t[-1])), times, survival)


def decay_rate(psi0: WaveFunction, schedule: PotentialSchedule, config: PropagatorConfig,
               T_obs: float, well_region: tuple[float, float], t0: float = 0.0,
               band: tuple[float, float] = (0.5, 0.9)) -> DecayFit:
    """Tunnelling decay rate of ``psi0`` out of ``well_region``; needs an absorber."""
    if config.absorber is None:
        raise ValueError("decay_rate needs an absorber")
    traj = evolve(psi0, schedule, config, t0, t0 + T_obs, well_region=well_region)
    return fit_decay(np.asarray(traj.times), np.asarray(traj.p_well), band)
