"""Natural units (hbar = m = 1, length unit 1 um) and lab-unit conversion.

Everything downstream of this module works in dimensionless internal
numbers.  Temperatures are stored as energies (k_B T).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

HBAR = 1.054572e-34
K_B = 1.380649e-23
MU_B = 9.2740100783e-24
AMU = 1.66053906660e-27

SPECIES_MASS = {
    "Rb87": 1.44316e-25,
    "Rb85": 84.911789738 * AMU,
}

DIMENSIONS = (
    "length",
    "time",
    "energy",
    "velocity",
    "temperature",
    "frequency",
    "force",
    "dimensionless",
)

# unit suffix -> (dimension, SI scale). Temperatures scale to kelvin,
# forces to J/m; "G/cm" is handled separately (needs a magnetic moment).
_LAB_UNITS = {
    "m": ("length", 1.0),
    "mm": ("length", 1e-3),
    "um": ("length", 1e-6),
    "µm": ("length", 1e-6),
    "nm": ("length", 1e-9),
    "s": ("time", 1.0),
    "ms": ("time", 1e-3),
    "us": ("time", 1e-6),
    "µs": ("time", 1e-6),
    "J": ("energy", 1.0),
    "K": ("temperature", 1.0),
    "mK": ("temperature", 1e-3),
    "uK": ("temperature", 1e-6),
    "µK": ("temperature", 1e-6),
    "nK": ("temperature", 1e-9),
    "m/s": ("velocity", 1.0),
    "mm/s": ("velocity", 1e-3),
    "um/ms": ("velocity", 1e-3),
    "Hz": ("frequency", 2 * math.pi),
    "kHz": ("frequency", 2e3 * math.pi),
    "rad/s": ("frequency", 1.0),
    "rad/ms": ("frequency", 1e3),
    "nK/um": ("force", 1e-9 * K_B / 1e-6),
    "uK/cm": ("force", 1e-6 * K_B / 1e-2),
    "µK/cm": ("force", 1e-6 * K_B / 1e-2),
    "G/cm": ("force", MU_B * 1e-4 / 1e-2),
    "1": ("dimensionless", 1.0),
    "": ("dimensionless", 1.0),
}


class UnitError(ValueError):
    """Raised for unknown units or dimension mismatches."""


@dataclass(frozen=True)
class UnitSystem:
    length_unit: float = 1e-6
    mass: float = SPECIES_MASS["Rb87"]
    hbar: float = HBAR
    k_B: float = K_B

    def __post_init__(self):
        if self.length_unit <= 0 or self.mass <= 0:
            raise UnitError("length_unit and mass must be positive")

    @classmethod
    def for_species(cls, name: str, length_unit: float = 1e-6) -> "UnitSystem":
        try:
            return cls(length_unit=length_unit, mass=SPECIES_MASS[name])
        except KeyError:
            raise UnitError(f"unknown species {name!r}; known: {sorted(SPECIES_MASS)}") from None

    @property
    def time_unit(self) -> float:
        return self.mass * self.length_unit**2 / self.hbar

    @property
    def energy_unit(self) -> float:
        return self.hbar / self.time_unit

    @property
    def velocity_unit(self) -> float:
        return self.length_unit / self.time_unit

    def si_scale(self, dimension: str) -> float:
        """SI value of one internal unit of ``dimension``."""
        scales = {
            "length": self.length_unit,
            "time": self.time_unit,
            "energy": self.energy_unit,
            "velocity": self.velocity_unit,
            "temperature": self.energy_unit / self.k_B,
            "frequency": 1.0 / self.time_unit,
            "force": self.energy_unit / self.length_unit,
            "dimensionless": 1.0,
        }
        try:
            return scales[dimension]
        except KeyError:
            raise UnitError(f"unknown dimension {dimension!r}") from None

    def energy_to_kelvin(self, e: float) -> float:
        return e * self.energy_unit / self.k_B

    def kelvin_to_energy(self, T: float) -> float:
        return T * self.k_B / self.energy_unit


@dataclass(frozen=True)
class Quantity:
    """A value in SI units (kelvin for temperatures) tagged with a dimension."""

    value: float
    dimension: str

    def __post_init__(self):
        if self.dimension not in DIMENSIONS:
            raise UnitError(f"unknown dimension {self.dimension!r}")

    def _check(self, other: "Quantity") -> None:
        if not isinstance(other, Quantity):
            raise UnitError("can only combine Quantity with Quantity")
        if other.dimension != self.dimension:
            raise UnitError(f"dimension mismatch: {self.dimension} vs {other.dimension}")

    def __add__(self, other: "Quantity") -> "Quantity":
        self._check(other)
        return Quantity(self.value + other.value, self.dimension)

    def __sub__(self, other: "Quantity") -> "Quantity":
        self._check(other)
        return Quantity(self.value - other.value, self.dimension)

    def __mul__(self, k: float) -> "Quantity":
        if isinstance(k, Quantity):
            raise UnitError("products of quantities are not supported")
        return Quantity(self.value * k, self.dimension)

    __rmul__ = __mul__

    def __neg__(self) -> "Quantity":
        return Quantity(-self.value, self.dimension)


_QTY_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


def parse_quantity(text: str) -> Quantity:
    """Parse ``"300 nK"`` style strings into a :class:`Quantity`."""
    m = _QTY_RE.match(text)
    if not m:
        raise UnitError(f"cannot parse quantity {text!r}")
    number, suffix = float(m.group(1)), m.group(2)
    if suffix not in _LAB_UNITS:
        raise UnitError(f"unknown unit {suffix!r} in {text!r}")
    dim, scale = _LAB_UNITS[suffix]
    return Quantity(number * scale, dim)


def to_internal(q: Quantity, u: UnitSystem | None = None) -> float:
    """Convert a lab quantity to the dimensionless internal value."""
    u = u or UnitSystem()
    if q.dimension == "temperature":
        return q.value * u.k_B / u.energy_unit
    return q.value / u.si_scale(q.dimension)


def to_lab(value: float, dimension: str, u: UnitSystem | None = None) -> Quantity:
    """Inverse of :func:`to_internal`; temperatures come back in kelvin."""
    u = u or UnitSystem()
    if dimension == "temperature":
        return Quantity(value * u.energy_unit / u.k_B, "temperature")
    return Quantity(value * u.si_scale(dimension), dimension)


def internal(text: str, u: UnitSystem | None = None) -> float:
    return to_internal(parse_quantity(text), u)


def thermal_de_broglie(T: float, u: UnitSystem | None = None,
                       convention: str = "h_over_mv_rms") -> float:
    """Thermal de Broglie wavelength in internal length units.

    ``T`` is a temperature in kelvin.  ``h_over_mv_rms`` is h/(m v_rms) with
    the 1D rms velocity sqrt(k_B T/m); ``thermal_standard`` is
    h/sqrt(2 pi m k_B T).
    """
    u = u or UnitSystem()
    if not T > 0:
        raise UnitError("temperature must be positive")
    h = 2 * math.pi * u.hbar
    if convention == "h_over_mv_rms":
        lam = h / (u.mass * math.sqrt(u.k_B * T / u.mass))
    elif convention == "thermal_standard":
        lam = h / math.sqrt(2 * math.pi * u.mass * u.k_B * T)
    else:
        raise UnitError(f"unknown convention {convention!r}")
    return lam / u.length_unit


def gradient_to_force(gradient_G_per_cm: float, moment: float = MU_B) -> Quantity:
    """Magnetic field gradient times a magnetic moment, as a force (J/m)."""
    return Quantity(gradient_G_per_cm * 1e-4 / 1e-2 * moment, "force")
