"""Causal response kernels from transmission functions.

Time dependence is exp(-i omega t).  The output at distance d is a causal
convolution of the input delayed by the front time d/c::

    out(t) = sum_{tau >= 0} f(tau) in(t - d/c - tau)

with f the inverse transform of the transmission relative to the
reference medium.  Two media are provided:

* a matter wave crossing a barrier, with free propagation over the same
  distance as reference (Schrödinger waves have no finite front speed, so
  the reference is dispersive and the front delay is zero);
* a dispersive line with cutoff, t = exp(i d sqrt(omega^2 - omega_c^2) / c),
  which is evanescent below omega_c and has a true front speed c.

An optional causal band-pass "detector" multiplies the transmission so
that the kernel decays fast at both ends of the spectrum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal

from .potentials import PotentialSchedule
from .scattering import (PiecewiseConstant, _piecewise_amplitudes, padded,
                         piecewise_from_schedule, slab_amplitudes)

ACAUSAL_REJECT = 1e-3


class CausalityError(ValueError):
    """Kernel has too much weight at negative delay to be treated as causal."""


@dataclass(frozen=True)
class TransferFunction:
    """Samples of t(omega) on an FFT-ordered grid ``omega = 2 pi fftfreq(N, dtau)``.

    ``t`` is relative to the reference medium; ``front_delay`` is d/c.
    """

    omega: np.ndarray
    t: np.ndarray
    dtau: float
    front_delay: float = 0.0
    label: str = ""

    @property
    def passive(self) -> bool:
        return bool(np.all(np.abs(self.t) <= 1 + 1e-12))

    def hermitian_error(self) -> float:
        """max |t(-omega) - conj t(omega)|, zero for real kernels.

        The Nyquist bin of an even grid has no partner and is skipped.
        """
        n = len(self.omega)
        idx = np.arange(n)
        mirror = (-idx) % n
        paired = idx != mirror if n % 2 == 0 else np.ones(n, dtype=bool)
        paired[0] = True
        return float(np.max(np.abs(self.t[mirror] - np.conj(self.t))[paired]))

    def times(self, other: np.ndarray | "TransferFunction") -> "TransferFunction":
        vals = other.t if isinstance(other, TransferFunction) else other
        return TransferFunction(self.omega, self.t * vals, self.dtau, self.front_delay, self.label)


def omega_grid(n: int, omega_max: float) -> tuple[np.ndarray, float]:
    """FFT-ordered frequencies reaching +-omega_max, and the matching time step."""
    dtau = math.pi / omega_max
    return 2 * math.pi * np.fft.fftfreq(n, dtau), dtau


def delay_transfer(n: int, omega_max: float, delay: float) -> TransferFunction:
    w, dtau = omega_grid(n, omega_max)
    return TransferFunction(w, np.exp(1j * w * delay), dtau, 0.0, f"delay {delay}")


def identity_transfer(n: int, omega_max: float) -> TransferFunction:
    w, dtau = omega_grid(n, omega_max)
    return TransferFunction(w, np.ones(n, dtype=complex), dtau, 0.0, "identity")


def matter_wave_transfer(potential, x_left: float, x_right: float, n: int, omega_max: float,
                         n_slabs: int = 4096) -> TransferFunction:
    """Barrier transmission over E = omega relative to free flight across [x_left, x_right].

    Negative omega uses the analytic continuation k = i sqrt(-2E); the
    relative transmission t exp(-ikd) tends to 1 at large |omega|.
    """
    w, dtau = omega_grid(n, omega_max)
    d = x_right - x_left
    # the zero-energy sample is taken as its limit from above
    w_eval = np.where(w == 0, 1e-12 * omega_max, w)
    if isinstance(potential, PotentialSchedule):
        exact = piecewise_from_schedule(potential)
        potential = exact if exact is not None else potential
    if isinstance(potential, PiecewiseConstant):
        t, _ = _piecewise_amplitudes(padded(potential, x_left, x_right), w_eval, relative=True)
    else:
        h = d / n_slabs
        V = np.asarray(potential(x_left + (np.arange(n_slabs) + 0.5) * h), dtype=float)
        t, _ = slab_amplitudes(V, h, w_eval, relative=True)
    return TransferFunction(w, t, dtau, 0.0, "matter wave / free")


def cutoff_line_transfer(n: int, omega_max: float, d: float, c: float,
                         omega_c: float) -> TransferFunction:
    """exp(i d sqrt(omega^2 - omega_c^2)/c) relative to exp(i omega d/c), front delay d/c."""
    w, dtau = omega_grid(n, omega_max)
    # branch continuous from the upper half plane: sign(omega) sqrt above cutoff, i sqrt below
    q = np.where(np.abs(w) > omega_c, np.sign(w) * np.sqrt(np.abs(w**2 - omega_c**2)),
                 1j * np.sqrt(np.abs(omega_c**2 - w**2)))
    t = np.exp(1j * d * (q - w) / c)
    return TransferFunction(w, t, dtau, d / c, f"cutoff line d={d} c={c} wc={omega_c}")


@dataclass(frozen=True)
class BandPass:
    """(-i w / (w_h - i w))^m (1 - i w / w_c)^-n, poles in the lower half plane."""

    omega_h: float = 0.05
    m: int = 2
    omega_c: float = 20.0
    n: int = 6

    def __call__(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        hp = (-1j * w / (self.omega_h - 1j * w)) ** self.m if self.m else 1.0
        lp = (1 - 1j * w / self.omega_c) ** (-self.n) if self.n else 1.0
        return hp * lp

    def group_delay(self, w0: float) -> float:
        """d arg B / d omega at w0 (closed form)."""
        hp = self.m * self.omega_h / (self.omega_h**2 + w0**2) if self.m else 0.0
        lp = self.n * self.omega_c / (self.omega_c**2 + w0**2) if self.n else 0.0
        return hp + lp


def raised_cosine_taper(omega: np.ndarray, fraction: float = 0.1) -> np.ndarray:
    a = np.abs(omega) / np.abs(omega).max()
    edge = a > 1 - fraction
    out = np.ones_like(a)
    out[edge] = np.cos(0.5 * np.pi * (a[edge] - (1 - fraction)) / fraction) ** 2
    return out


@dataclass(frozen=True)
class CausalKernel:
    tau: np.ndarray
    f: np.ndarray
    dtau: float
    front_delay: float
    acausal_residual: float
    label: str = ""

    def to_text(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# front_delay={self.front_delay:.12g} acausal_residual={self.acausal_residual:.3e}\n")
            fh.write("tau,re_f,im_f\n")
            for t, v in zip(self.tau, self.f):
                fh.write(f"{t:.12g},{v.real:.12g},{v.imag:.12g}\n")


def kernel_from_transfer(tf: TransferFunction, band_pass: BandPass | None = None,
                         taper: float = 0.1, reject_above: float = ACAUSAL_REJECT) -> CausalKernel:
    """Inverse transform of t(omega) (times band-pass and taper), truncated to tau >= 0.

    The largest |f| at negative delay relative to max |f| is reported as
    the acausal residual; above ``reject_above`` the kernel is refused.
    """
    vals = tf.t.astype(complex)
    if band_pass is not None:
        vals = vals * band_pass(tf.omega)
    if taper > 0:
        vals = vals * raised_cosine_taper(tf.omega, taper)
    n = len(vals)
    f = np.fft.fft(vals) / n
    idx = np.fft.fftfreq(n) * n
    neg = idx < 0
    peak = np.max(np.abs(f))
    resid = float(np.max(np.abs(f[neg])) / peak) if peak > 0 else 0.0
    if resid > reject_above:
        raise CausalityError(f"acausal residual {resid:.3g} > {reject_above:g}")
    keep = ~neg
    return CausalKernel(idx[keep] * tf.dtau, f[keep], tf.dtau, tf.front_delay, resid, tf.label)


@dataclass(frozen=True)
class Waveform:
    t: np.ndarray
    values: np.ndarray
    front: float | None = None

    def __post_init__(self):
        if self.front is not None:
            pre = self.values[self.t < self.front]
            if np.any(pre != 0):
                raise ValueError("a waveform with a front must vanish before it")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def peak_time(self) -> float:
        """Peak of |values| refined by a parabola through the three top samples."""
        a = np.abs(self.values)
        i = int(np.argmax(a))
        if 0 < i < len(a) - 1:
            y0, y1, y2 = a[i - 1], a[i], a[i + 1]
            den = y0 - 2 * y1 + y2
            shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
            return float(self.t[i] + shift * self.dt)
        return float(self.t[i])

    def energy(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.dt)

    def to_text(self, path) -> None:
        complex_ = np.iscomplexobj(self.values)
        with open(path, "w") as fh:
            fh.write("t,re_value,im_value\n" if complex_ else "t,value\n")
            for t, v in zip(self.t, self.values):
                if complex_:
                    fh.write(f"{t:.12g},{v.real:.12g},{v.imag:.12g}\n")
                else:
                    fh.write(f"{t:.12g},{v:.12g}\n")

    @classmethod
    def from_text(cls, path) -> "Waveform":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        vals = data[:, 1] + 1j * data[:, 2] if data.shape[1] == 3 else data[:, 1]
        return cls(data[:, 0], vals)


def gaussian_waveform(t: np.ndarray, t0: float, sigma_t: float, omega0: float) -> Waveform:
    """Envelope exp(-(t-t0)^2 / 4 sigma_t^2) on carrier exp(-i omega0 t); band-limited."""
    return Waveform(t, np.exp(-((t - t0) ** 2) / (4 * sigma_t**2) - 1j * omega0 * t))


def step_waveform(t: np.ndarray, t_front: float, omega0: float, rise: float = 0.0) -> Waveform:
    """Carrier switched on at ``t_front`` (with an optional sin^2 ramp of length ``rise``)."""
    env = (t >= t_front).astype(float)
    if rise > 0:
        s = np.clip((t - t_front) / rise, 0, 1)
        env = env * np.sin(0.5 * np.pi * s) ** 2
    return Waveform(t, env * np.exp(-1j * omega0 * t), t_front)


def _shift_samples(kernel: CausalKernel, dt: float) -> int:
    if not math.isclose(dt, kernel.dtau, rel_tol=1e-9):
        raise ValueError(f"waveform step {dt} does not match kernel step {kernel.dtau}")
    return int(round(kernel.front_delay / dt))


def transmit(kernel: CausalKernel, wave: Waveform) -> Waveform:
    """Causal convolution; output sample j uses input samples up to j - round(front/dt)."""
    s = _shift_samples(kernel, wave.dt)
    n = len(wave.values)
    f = kernel.f[:n]
    y = signal.fftconvolve(wave.values, f)[:n]
    out = np.zeros(n, dtype=complex)
    if s < n:
        out[s:] = y[: n - s]
    # the convolution is exactly zero before the delayed front; clear FFT round-off there
    if wave.front is not None:
        out[wave.t < wave.front + s * wave.dt] = 0.0
    if not np.iscomplexobj(wave.values) and np.all(np.isreal(kernel.f)):
        out = out.real
    front = None if wave.front is None else wave.front + s * wave.dt
    return Waveform(wave.t, out, front)


class PerturbationReport(NamedTuple):
    t_cut: float
    bound: float
    first_divergence: float
    max_early_change: float
    passed: bool


def perturbation_test(kernel: CausalKernel, wave: Waveform, t_cut: float,
                      perturbation: np.ndarray | None = None, rng=None,
                      rel_tol: float = 1e-10) -> PerturbationReport:
    """Change the input after ``t_cut`` and locate the first output difference.

    Without an explicit ``perturbation`` random noise of the input's scale is
    added.  The output may not change before t_cut + d/c (minus one sample).
    """
    late = wave.t > t_cut
    if perturbation is None:
        rng = np.random.default_rng(rng)
        scale = np.max(np.abs(wave.values))
        noise = rng.normal(size=len(wave.t)) * scale
        if np.iscomplexobj(wave.values):
            noise = noise + 1j * rng.normal(size=len(wave.t)) * scale
        perturbation = noise
    changed = Waveform(wave.t, np.where(late, wave.values + perturbation, wave.values))
    base = transmit(kernel, Waveform(wave.t, wave.values))
    alt = transmit(kernel, changed)
    diff = np.abs(alt.values - base.values)
    peak = max(np.max(np.abs(base.values)), 1e-300)
    hits = np.nonzero(diff > rel_tol * peak)[0]
    first = float(wave.t[hits[0]]) if len(hits) else math.inf
    bound = t_cut + kernel.front_delay
    early = wave.t < bound - wave.dt
    max_early = float(np.max(diff[early]) / peak) if np.any(early) else 0.0
    return PerturbationReport(t_cut, bound, first, max_early, first >= bound - wave.dt)


def front_arrival(wave: Waveform, rel_tol: float = 1e-10) -> float:
    """First time |values| exceeds rel_tol of its maximum."""
    a = np.abs(wave.values)
    hits = np.nonzero(a > rel_tol * a.max())[0]
    return float(wave.t[hits[0]]) if len(hits) else math.inf
