"""Experiment drivers behind the command-line front end.

Each runner takes a validated :class:`Scenario` and an output directory
and returns the tables it produced, keyed by file name.  Tables are CSV
with ``#`` metadata lines and units in brackets after every column name.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import causal, cooling, larmor, scattering
from .grid import Grid, WaveFunction, gaussian_packet
from .potentials import (Gaussian, LinearVee, NoWellError, PotentialSchedule, Rectangular,
                         evaluate, local_minima, secular_period)
from .propagator import Absorber, PropagatorConfig, decay_rate, relax_ground_state
from .scenario import Scenario
from .units import K_B, internal


class Table:
    """Column-unit annotated CSV writer with deterministic number formatting."""

    def __init__(self, columns: Sequence[tuple[str, str]], meta: dict | None = None):
        self.columns = list(columns)
        self.meta = dict(meta or {})
        self.rows: list[list] = []

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError("row length does not match the columns")
        self.rows.append(list(values))

    @staticmethod
    def _fmt(v) -> str:
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.12g}"
        return str(v)

    def write(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in self.meta.items():
                fh.write(f"# {k} = {self._fmt(v)}\n")
            fh.write(",".join(n if u is None else f"{n}[{u}]" for n, u in self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(self._fmt(v) for v in row) + "\n")


class Summary(Table):
    """Key, value, unit rows."""

    def __init__(self, meta: dict | None = None):
        super().__init__([("quantity", None), ("value", None), ("unit", None)], meta)

    def put(self, key: str, value, unit: str = "1") -> None:
        # text and flags carry no unit
        if isinstance(value, (str, bool)) or value is None:
            unit = ""
        self.add(key, value, unit)


def _per(sc: Scenario, unit: str) -> float:
    """Internal value of one lab ``unit``; divide an internal number by it to display."""
    return internal(f"1 {unit}", sc.units)


# ------------------------------------------------------------------ builders

def build_grid(sc: Scenario) -> Grid:
    return Grid(sc["grid.x_min"], sc["grid.x_max"], sc["grid.n_points"])


def build_barrier(sc: Scenario, drift: float = 0.0, t_on: float | None = None):
    V0, c = sc["barrier.height"], sc["barrier.center"]
    if sc["barrier.shape"] == "rectangular":
        return Rectangular(V0, c, sc["barrier.width"])
    if t_on is None:
        return Gaussian(V0, c, sc["barrier.waist"], drift)
    return Gaussian(V0, c, sc["barrier.waist"], drift, t_on=t_on)


def barrier_extent(sc: Scenario) -> tuple[float, float]:
    c = sc["barrier.center"]
    if sc["barrier.shape"] == "rectangular":
        h = 0.5 * sc["barrier.width"]
    else:
        h = 5.0 * sc["barrier.waist"]
    return c - h, c + h


def stationary_barrier(sc: Scenario):
    """Exact pieces for a rectangle, otherwise a callable profile."""
    if sc["barrier.shape"] == "rectangular":
        a, b = barrier_extent(sc)
        return scattering.PiecewiseConstant.rectangular(sc["barrier.height"], b - a, a)
    return PotentialSchedule([build_barrier(sc)])


def build_config(sc: Scenario) -> PropagatorConfig:
    absorber = None
    if sc.has("propagator.absorber_width"):
        strength = sc.get("propagator.absorber_strength", 1.0)
        absorber = Absorber(sc["propagator.absorber_width"], strength)
    return PropagatorConfig(sc["propagator.dt"], absorber, sc["propagator.record_stride"],
                            sc.get("propagator.v_ceiling"))


def tunnelling_setup(sc: Scenario) -> larmor.TunnellingSetup:
    grid = build_grid(sc)
    k0 = math.sqrt(2.0 * sc["packet.energy"])
    psi0 = gaussian_packet(grid, sc["packet.x0"], sc["packet.sigma"], k0)
    schedule = PotentialSchedule([build_barrier(sc)])
    return larmor.TunnellingSetup(grid, schedule, psi0, build_config(sc), sc["propagator.t_end"])


def sweep_geometry(sc: Scenario, V0: float | None = None) -> cooling.SweepGeometry:
    ab = build_config(sc).absorber or Absorber(6.0, 50.0)
    return cooling.SweepGeometry(
        sc["trap.slope"], sc["barrier.height"] if V0 is None else V0, sc["barrier.waist"],
        sc["sweep.speed"], sc["sweep.c0"], sc["sweep.c1"], sc["grid.x_min"], sc["grid.x_max"],
        sc["grid.n_points"], sc["propagator.dt"], sc.get("propagator.v_ceiling", 190.0), ab)


# ------------------------------------------------------------------ runners

def run_scatter_scan(sc: Scenario, out: Path, jobs: int = 1) -> dict[str, Table]:
    pot = stationary_barrier(sc)
    a, b = barrier_extent(sc)
    tables: dict[str, Table] = {}
    if sc.has("scan.e_min"):
        E = np.linspace(sc["scan.e_min"], sc["scan.e_max"], sc["scan.n_energies"])
        sol = scattering.scatter(pot, E, a, b)
        tau = scattering.group_delays(sol) if len(E) >= 3 else np.full(len(E), np.nan)
        t = Table([("E", "iu"), ("re_t", "1"), ("im_t", "1"), ("re_r", "1"), ("im_r", "1"),
                   ("T", "1"), ("phase", "rad"), ("group_delay", "iu")],
                  {"barrier_height_iu": sc["barrier.height"], "x_left_iu": a, "x_right_iu": b,
                   "n_slabs": sol.n_slabs})
        for row in zip(E, sol.t.real, sol.t.imag, sol.r.real, sol.r.imag, sol.T, sol.phase, tau):
            t.add(*row)
        tables["transfer_vs_E.csv"] = t
    if sc.has("scan.kappa_d"):
        if sc["barrier.shape"] != "rectangular":
            raise ValueError("a thickness scan needs a rectangular barrier")
        V0 = sc["barrier.height"]
        E = sc["scan.e_over_v0"] * V0
        k, kappa = math.sqrt(2 * E), math.sqrt(2 * (V0 - E))
        t = Table([("kappa_d", "1"), ("width", "iu"), ("T", "1"), ("group_delay", "iu"),
                   ("opaque_limit", "iu"), ("free_time", "iu")],
                  {"E_iu": E, "V0_iu": V0})
        for kd in sc["scan.kappa_d"]:
            d = kd / kappa
            bar = scattering.PiecewiseConstant.rectangular(V0, d, 0.0)
            gd = scattering.group_delay_at(bar, E)
            T = float(scattering.scatter(bar, np.array([E])).T[0])
            t.add(kd, d, T, gd.tau, 2.0 / (k * kappa), gd.free_reference)
        tables["hartman.csv"] = t
    return tables


def run_larmor(sc: Scenario, out: Path, jobs: int = 1) -> dict[str, Table]:
    setup = tunnelling_setup(sc)
    a, b = barrier_extent(sc)
    ra, rb = sc.get("larmor.region_a", a), sc.get("larmor.region_b", b)
    edges = np.linspace(ra, rb, sc["larmor.n_bins"] + 1)
    omegas = np.asarray(sc["larmor.omegas"])
    dm = larmor.dwell_map(setup, edges, omegas)
    t = Table([("bin_a", "iu"), ("bin_b", "iu"), ("subensemble", None), ("omega_L", "iu"),
               ("tau_y", "iu"), ("tau_z", "iu")])
    for (ba, bb), rec in zip(dm.bins, dm.times):
        for sub in larmor.SUBENSEMBLES:
            c = rec[sub]
            for om, ty, tz in zip(c.omegas, c.tau_y, c.tau_z):
                t.add(ba, bb, sub, om, ty, tz)
            t.add(ba, bb, sub, 0.0, c.tau_y0, c.tau_z0)
    T, R = dm.probability("transmitted"), dm.probability("reflected")
    tau_all, tau_t, tau_r = (dm.tau_y0(s) for s in ("all", "transmitted", "reflected"))
    decomposition = float(np.max(np.abs(tau_all - (T * tau_t + R * tau_r))))
    x_lo, x_hi = sorted((a - 1.0, b + 1.0))
    oracle = larmor.packet_dwell_time(setup, (ra, rb), min(x_lo, ra), max(x_hi, rb))
    s = Summary()
    s.put("transmission", T)
    s.put("reflection", R)
    s.put("dwell_all_region", float(np.sum(tau_all)), "iu")
    s.put("dwell_transmitted_region", float(np.sum(tau_t)), "iu")
    s.put("dwell_reflected_region", float(np.sum(tau_r)), "iu")
    s.put("stationary_dwell_oracle", oracle, "iu")
    s.put("decomposition_error", decomposition, "iu")
    s.put("flagged_bins", sum(any(rec[sub].flagged for sub in rec) for rec in dm.times))
    return {"dwell_map.csv": t, "larmor_summary.csv": s}


def run_two_field(sc: Scenario, out: Path, jobs: int = 1) -> dict[str, Table]:
    setup = tunnelling_setup(sc)
    rec = larmor.two_field_experiment(
        setup, (sc["two_field.left_a"], sc["two_field.left_b"]),
        (sc["two_field.right_a"], sc["two_field.right_b"]), sc["two_field.omegas"],
        sc["two_field.t_switch"])
    t = Table([("omega_L", "iu"), ("theta_both", "rad"), ("theta_left", "rad"),
               ("theta_right", "rad"), ("ratio_both_left", "1")],
              {"w2_duration_iu": rec.w2_duration, "loglog_slope_both": rec.slope_both,
               "loglog_slope_ratio": rec.slope_ratio, "transmission": rec.transmitted,
               "transmitted_before_switch": rec.leak_before_switch})
    for row in zip(rec.omegas, rec.theta_both, rec.theta_left, rec.theta_right,
                   rec.theta_both / rec.theta_left):
        t.add(*row)
    return {"two_field.csv": t}


def run_delta_kick(sc: Scenario, out: Path, jobs: int = 1) -> dict[str, Table]:
    u = sc.units
    T0 = sc["cloud.temperature"] * u.energy_unit / K_B
    sx0 = sc["cloud.sigma_x0"] * u.length_unit
    t_free = sc["kick.t_free"] * u.time_unit
    tau = sc.get("kick.duration", 1e-4 / u.time_unit) * u.time_unit
    gc = sc["kick.gravity_compensation"]
    ens = cooling.sample_thermal(T0, sx0, sc["cloud.n_samples"], sc.seed, u.mass)
    kick = cooling.optimize_kick(ens, t_free, sc["kick.kind"], tau, gc)
    final = cooling.delta_kick(ens, t_free, kick)
    g = 0.0 if gc else cooling.G_EARTH
    reg = cooling.regression_strength(ens, t_free, g)
    closed = cooling.cooling_ratio_closed_form(sx0, ens.sigma_v, t_free)
    s = Summary({"seed": sc.seed, "n_samples": len(ens)})
    s.put("kick_kind", sc["kick.kind"])
    s.put("initial_temperature", ens.temperature * 1e9, "nK")
    s.put("final_temperature", final.temperature * 1e9, "nK")
    s.put("simulated_ratio", final.temperature / ens.temperature)
    if sc["kick.kind"] == "harmonic":
        s.put("closed_form_ratio", closed)
    s.put("optimal_strength", kick.strength, "1/s" if sc["kick.kind"] == "harmonic" else "m/s")
    s.put("regression_strength", reg, "1/s")
    s.put("sigma_x_at_kick", cooling.free_drift(ens, t_free, g).sigma_x * 1e6, "um")
    return {"kick_summary.csv": s}


TRANSFER_THRESHOLD = 0.5


def n_transferred(res: cooling.CaptureResult) -> int:
    """Trap levels carried into the dip with probability above the threshold."""
    return int(np.sum(res.p_transfer > TRANSFER_THRESHOLD))


def _capture_point(args):
    sc, V0, kT = args
    res = cooling.sweep_capture(sweep_geometry(sc, V0), kT)
    return cooling.StaircasePoint(V0, res.depth, res.n_bound, res.capture_fraction), res


def _map(fn: Callable, items: list, jobs: int) -> list:
    """Ordered map; the result order never depends on the worker count."""
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def run_sweep_capture(sc: Scenario, out: Path, jobs: int = 1) -> dict[str, Table]:
    nK = _per(sc, "nK")
    kT = sc["sweep.temperature"]
    heights = list(sc.get("sweep.heights", ())) or [sc["barrier.height"]]
    main_V0 = sc["barrier.height"]
    todo = sorted(set(heights) | {main_V0})
    results = dict(zip(todo, _map(_capture_point, [(sc, v, kT) for v in todo], jobs)))
    point, main = results[main_V0]
    depth = Table([("barrier_height", "nK"), ("depth", "nK"), ("capture_fraction", "1"),
                   ("n_bound", "1"), ("n_transferred", "1")],
                  {"temperature_nK": kT / nK, "transfer_threshold": TRANSFER_THRESHOLD})
    for v in todo:
        p, res = results[v]
        depth.add(v / nK, p.depth / nK, p.capture, p.n_bound, n_transferred(res))
    tr = Table([("E", "nK"), ("P_transfer", "1"), ("boltzmann_weight", "1")],
               {"barrier_height_nK": main_V0 / nK})
    for E, P in zip(main.trap_energies, main.p_transfer):
        tr.add(E / nK, P, math.exp(-E / kT) / main.partition)
    s = Summary()
    s.put("barrier_height", main_V0 / nK, "nK")
    s.put("depth", main.depth / nK, "nK")
    s.put("n_bound", main.n_bound)
    s.put("n_bound_numerov", main.n_bound_numerov)
    s.put("temperature", kT / nK, "nK")
    s.put("capture_fraction", main.capture_fraction)
    s.put("captured_kinetic_temperature", main.kinetic_energy / nK, "nK")
    if main.well is not None:
        floor = main.well.rim - main.well.depth
        s.put("captured_ground_energy_above_floor", (main.ground_energy - floor) / nK, "nK")
    s.put("flagged", main.flagged or "")
    pts = [results[v][0] for v in todo]
    if len(pts) > 1:
        rep = cooling.staircase_report(pts)
        s.put("staircase_monotone", rep["monotone"])
        s.put("staircase_bound_change", rep["bound_change"])
        lag = [p.n_bound - n_transferred(r) for p, r in (results[v] for v in todo)]
        s.put("staircase_max_level_lag", max(lag))
        s.put("staircase_min_level_lag", min(lag))
    return {"depth_capture.csv": depth, "transfer_vs_E.csv": tr, "capture_summary.csv": s}


def well_decay(sc: Scenario):
    """Relax into the dip of the static composite potential, then watch it leak out."""
    grid = build_grid(sc)
    schedule = PotentialSchedule([LinearVee(sc["trap.slope"]), build_barrier(sc)])
    c = sc["barrier.center"]
    search = (grid.x_min, 0.5 * c) if c < 0 else (0.5 * c, grid.x_max)
    wells = local_minima(schedule, 0.0, search)
    if not wells:
        raise NoWellError("no local minimum beside the barrier")
    lm = max(wells, key=lambda w: w.depth)
    basin = (lm.x_rim_left if lm.x_rim_left is not None else grid.x_min,
             lm.x_rim_right if lm.x_rim_right is not None else grid.x_max)
    config = build_config(sc)
    ceiling = config.v_ceiling if config.v_ceiling is not None else math.inf
    V = np.minimum(evaluate(schedule, grid.x), ceiling)
    inside = (grid.x >= basin[0]) & (grid.x <= basin[1])
    frozen = PotentialSchedule([cooling.SampledPotential(np.where(inside, np.minimum(V, lm.barrier_top),
                                                         lm.barrier_top))])
    gs = relax_ground_state(grid, frozen, PropagatorConfig(config.dt), region=basin)
    period = secular_period(schedule, lm.x_min)
    band = (sc["decay.band_low"], sc["decay.band_high"])
    T_obs = sc["decay.periods"] * period
    fit = decay_rate(gs.psi0, schedule, config, T_obs, basin, band=band)
    spectrum = scattering.count_bound_states(schedule, search)
    # the least bound level of the closed dip, for comparison with the ground state
    H = cooling.kinetic_matrix(grid) + np.diag(frozen(grid.x))
    E, vec = cooling.lowest_states(H, max(spectrum.count, 1))
    top = WaveFunction(grid, vec[:, -1].astype(complex) / math.sqrt(grid.dx))
    top_fit = decay_rate(top, schedule, config, T_obs, basin, band=band)
    return lm, basin, gs, period, fit, spectrum, top_fit, float(E[-1])


def run_evolve(sc: Scenario, out: Path, jobs: int = 1) -> dict[str, Table]:
    nK, ms = _per(sc, "nK"), _per(sc, "ms")
    lm, basin, gs, period, fit, spectrum, top_fit, E_top = well_decay(sc)
    traj = Table([("t", "ms"), ("survival", "1")], {"secular_period_ms": period / ms})
    for t, p in zip(fit.times, fit.survival):
        traj.add(t / ms, p)
    s = Summary()
    s.put("depth", lm.depth / nK, "nK")
    s.put("n_bound", spectrum.count)
    s.put("well_x_min", lm.x_min, "iu")
    s.put("basin_left", basin[0], "iu")
    s.put("basin_right", basin[1], "iu")
    s.put("ground_energy_above_floor", (gs.E0 - lm.v_min) / nK, "nK")
    s.put("ground_kinetic_energy", gs.kinetic / nK, "nK")
    s.put("secular_period", period / ms, "ms")
    s.put("decay_rate", fit.rate * ms, "1/ms")
    s.put("decay_per_period", fit.rate * period)
    s.put("fit_residual", fit.residual)
    s.put("fit_flagged", fit.flagged)
    s.put("final_survival", float(fit.survival[-1]))
    s.put("top_level_above_floor", (E_top - lm.v_min) / nK, "nK")
    s.put("top_level_decay_per_period", top_fit.rate * period)
    s.put("top_level_fit_residual", top_fit.residual)
    return {"decay_trajectory.csv": traj, "decay_summary.csv": s}


def _local_delay(tf: causal.TransferFunction, band: causal.BandPass | None, w0: float) -> float:
    """d arg / d omega of the (band-passed) relative transfer function at w0, plus the front delay."""
    order = np.argsort(tf.omega)
    w = tf.omega[order]
    vals = tf.t[order] * (band(w) if band is not None else 1.0)
    i = int(np.searchsorted(w, w0))
    sl = slice(max(i - 3, 0), min(i + 4, len(w)))
    ph = np.unwrap(np.angle(vals[sl]))
    return float(np.interp(w0, w[sl], np.gradient(ph, w[sl]))) + tf.front_delay


def run_causal(sc: Scenario, out: Path, jobs: int = 1) -> dict[str, Table]:
    n, W = sc["causal.n_omega"], sc["causal.omega_max"]
    band = causal.BandPass(sc.get("causal.band_low", 0.05), sc["causal.order_low"],
                           sc.get("causal.band_high", 20.0), sc["causal.order_high"])
    if sc["causal.medium"] == "matter_wave":
        a, b = barrier_extent(sc)
        tf = causal.matter_wave_transfer(stationary_barrier(sc), a, b, n, W)
        w0 = sc["causal.carrier"]
    else:
        tf = causal.cutoff_line_transfer(n, W, sc["causal.line_length"], sc["causal.line_speed"],
                                         sc["causal.cutoff"])
        w0 = sc.get("causal.carrier", 2.0 * sc["causal.cutoff"])
    kernel = causal.kernel_from_transfer(tf, band)
    t = np.arange(n) * kernel.dtau
    pulse = causal.gaussian_waveform(t, sc["causal.t_peak"], sc["causal.sigma_t"], w0)
    out_pulse = causal.transmit(kernel, pulse)
    shift = out_pulse.peak_time() - pulse.peak_time()
    predicted = _local_delay(tf, band, w0)
    t_front = sc.get("causal.t_front", sc["causal.t_peak"])
    step = causal.step_waveform(t, t_front, w0)
    step_out = causal.transmit(kernel, step)
    arrival = causal.front_arrival(step_out)
    rng = np.random.default_rng(np.random.SeedSequence([sc.seed, 1]))
    cuts = rng.uniform(sc["causal.t_peak"] - 3 * sc["causal.sigma_t"],
                       sc["causal.t_peak"] + 3 * sc["causal.sigma_t"], sc["causal.n_tests"])
    seeds = np.random.SeedSequence([sc.seed, 2]).spawn(len(cuts))
    ptab = Table([("test", "1"), ("t_cut", "iu"), ("bound", "iu"), ("first_divergence", "iu"),
                  ("max_early_change", "rel"), ("passed", None)])
    n_pass = 0
    for i, (tc, ss) in enumerate(zip(cuts, seeds)):
        rep = causal.perturbation_test(kernel, pulse, float(tc), rng=np.random.default_rng(ss))
        n_pass += rep.passed
        ptab.add(i, rep.t_cut, rep.bound, rep.first_divergence, rep.max_early_change, rep.passed)
    ktab = Table([("tau", "iu"), ("re_f", "1"), ("im_f", "1")],
                 {"front_delay_iu": kernel.front_delay, "acausal_residual": kernel.acausal_residual})
    for tau, f in zip(kernel.tau, kernel.f):
        ktab.add(tau, f.real, f.imag)
    wtab = Table([("t", "iu"), ("re_in", "1"), ("im_in", "1"), ("re_out", "1"), ("im_out", "1")])
    for row in zip(t, pulse.values.real, pulse.values.imag, out_pulse.values.real,
                   out_pulse.values.imag):
        wtab.add(*row)
    s = Summary()
    s.put("medium", sc["causal.medium"])
    s.put("acausal_residual", kernel.acausal_residual)
    s.put("front_delay", kernel.front_delay, "iu")
    s.put("passive", tf.passive)
    s.put("energy_in", pulse.energy(), "iu")
    s.put("energy_out", out_pulse.energy(), "iu")
    s.put("peak_shift", shift, "iu")
    s.put("predicted_shift", predicted, "iu")
    s.put("step_front_in", t_front, "iu")
    s.put("step_front_out", arrival, "iu")
    s.put("step_front_ok", arrival >= t_front + kernel.front_delay - kernel.dtau)
    s.put("perturbation_tests", len(cuts))
    s.put("perturbation_passed", n_pass)
    return {"kernel.csv": ktab, "pulse.csv": wtab, "perturbations.csv": ptab,
            "causal_summary.csv": s}


RUNNERS: dict[str, Callable[[Scenario, Path, int], dict[str, Table]]] = {
    "evolve": run_evolve,
    "scatter_scan": run_scatter_scan,
    "larmor": run_larmor,
    "two_field": run_two_field,
    "delta_kick": run_delta_kick,
    "sweep_capture": run_sweep_capture,
    "causal": run_causal,
}
