"""Scenario files: sectioned ``key = value`` text with explicit units.

A scenario looks like::

    name = fig3_sweep
    kind = sweep_capture
    seed = 1

    [trap]
    slope = 30 nK/um

    barrier.height = 300 nK     # dotted keys work outside sections too

Dimensioned values must carry a unit suffix.  ``iu`` marks a value already
in internal units (hbar = m = 1, one length unit), which is how the
dimensionless toy problems are written.  Lists are comma separated and a
trailing suffix applies to every bare item: ``omegas = 1, 2, 4 rad/ms``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .units import UnitError, UnitSystem, parse_quantity, to_internal

KINDS = ("evolve", "scatter_scan", "larmor", "two_field", "delta_kick", "sweep_capture", "causal")

EXAMPLE_UNITS = {
    "length": "um",
    "time": "ms",
    "energy": "nK",
    "velocity": "mm/s",
    "temperature": "nK",
    "frequency": "rad/ms",
    "force": "nK/um",
}


class ScenarioError(ValueError):
    """Parse or validation failure, anchored to a line when possible."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path or '<scenario>'}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + message)


@dataclass(frozen=True)
class Field:
    kind: str  # quantity, quantities, int, float, floats, str, bool
    dimension: str | None = None
    default: object = None
    required: bool = False
    choices: tuple[str, ...] = ()


def Q(dim, default=None, required=False):
    return Field("quantity", dim, default, required)


def QL(dim, default=None, required=False):
    return Field("quantities", dim, default, required)


def I(default=None, required=False):
    return Field("int", None, default, required)


def F(default=None, required=False):
    return Field("float", None, default, required)


def FL(default=None, required=False):
    return Field("floats", None, default, required)


def S(choices=(), default=None, required=False):
    return Field("str", None, default, required, tuple(choices))


def B(default=None):
    return Field("bool", None, default)


SECTIONS: dict[str, dict[str, Field]] = {
    "": {"name": S(required=True), "kind": S(KINDS, required=True), "seed": I(0),
         "description": S(default="")},
    "units": {"species": S(("Rb87", "Rb85"), "Rb87"), "length_unit": Q("length"),
              "mass_kg": F(), "length_unit_m": F()},
    "grid": {"x_min": Q("length", required=True), "x_max": Q("length", required=True),
             "n_points": I(required=True)},
    "packet": {"x0": Q("length", required=True), "sigma": Q("length", required=True),
               "energy": Q("energy", required=True)},
    "barrier": {"shape": S(("rectangular", "gaussian"), "rectangular"),
                "height": Q("energy", required=True), "width": Q("length"),
                "waist": Q("length"), "center": Q("length", 0.0)},
    "propagator": {"dt": Q("time", required=True), "t_end": Q("time"),
                   "absorber_width": Q("length"), "absorber_strength": Q("frequency"),
                   "v_ceiling": Q("energy"), "record_stride": I(1)},
    "scan": {"e_min": Q("energy"), "e_max": Q("energy"), "n_energies": I(200),
             "kappa_d": FL(), "e_over_v0": F(0.5)},
    "larmor": {"omegas": QL("frequency", required=True), "region_a": Q("length"),
               "region_b": Q("length"), "n_bins": I(6)},
    "two_field": {"left_a": Q("length", required=True), "left_b": Q("length", required=True),
                  "right_a": Q("length", required=True), "right_b": Q("length", required=True),
                  "t_switch": Q("time", required=True), "omegas": QL("frequency", required=True)},
    "cloud": {"temperature": Q("temperature", required=True),
              "sigma_x0": Q("length", required=True), "n_samples": I(100000)},
    "kick": {"kind": S(("harmonic", "quadrupole"), "harmonic"), "t_free": Q("time", required=True),
             "duration": Q("time"), "gravity_compensation": B(True)},
    "trap": {"slope": Q("force", required=True)},
    "sweep": {"c0": Q("length", required=True), "c1": Q("length", required=True),
              "speed": Q("velocity", required=True), "temperature": Q("temperature", required=True),
              "heights": QL("energy")},
    "decay": {"periods": F(required=True), "band_low": F(0.5), "band_high": F(0.9)},
    "causal": {"medium": S(("matter_wave", "cutoff_line"), "matter_wave"),
               "n_omega": I(65536), "omega_max": Q("energy", required=True),
               "carrier": Q("energy"), "sigma_t": Q("time", required=True),
               "t_peak": Q("time", required=True), "t_front": Q("time"),
               "n_tests": I(100), "band_low": Q("energy"), "band_high": Q("energy"),
               "order_low": I(2), "order_high": I(6), "line_length": Q("length"),
               "line_speed": Q("velocity"), "cutoff": Q("energy")},
    "output": {"files": Field("strs", None, None)},
}

KIND_SECTIONS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    # kind: (required sections, optional sections)
    "evolve": (("grid", "trap", "barrier", "propagator", "decay"), ("units", "output")),
    "scatter_scan": (("barrier", "scan"), ("units", "output")),
    "larmor": (("grid", "barrier", "packet", "propagator", "larmor"), ("units", "output")),
    "two_field": (("grid", "barrier", "packet", "propagator", "two_field"), ("units", "output")),
    "delta_kick": (("cloud", "kick"), ("units", "output")),
    "sweep_capture": (("grid", "trap", "barrier", "sweep", "propagator"), ("units", "output")),
    "causal": (("barrier", "causal"), ("units", "output")),
}

KIND_OUTPUTS: dict[str, tuple[str, ...]] = {
    "evolve": ("decay_trajectory.csv", "decay_summary.csv"),
    "scatter_scan": ("transfer_vs_E.csv", "hartman.csv"),
    "larmor": ("dwell_map.csv", "larmor_summary.csv"),
    "two_field": ("two_field.csv",),
    "delta_kick": ("kick_summary.csv",),
    "sweep_capture": ("depth_capture.csv", "transfer_vs_E.csv", "capture_summary.csv"),
    "causal": ("kernel.csv", "pulse.csv", "perturbations.csv", "causal_summary.csv"),
}


@dataclass
class Entry:
    raw: str
    line: int


@dataclass
class Scenario:
    """Validated scenario; quantities are stored in internal units."""

    name: str
    kind: str
    seed: int
    units: UnitSystem
    values: dict[str, dict[str, object]]
    lines: dict[str, int]
    text: str
    path: str | None = None
    outputs: tuple[str, ...] = field(default=())

    def __getitem__(self, dotted: str):
        section, _, key = dotted.rpartition(".")
        return self.values[section][key]

    def get(self, dotted: str, default=None):
        section, _, key = dotted.rpartition(".")
        v = self.values.get(section, {}).get(key)
        return default if v is None else v

    def has(self, dotted: str) -> bool:
        return self.get(dotted) is not None

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def error(self, dotted: str, message: str) -> ScenarioError:
        return ScenarioError(f"{dotted}: {message}", self.lines.get(dotted), self.path)


def _strip_comment(line: str) -> str:
    pos = line.find("#")
    return line if pos < 0 else line[:pos]


def tokenize(text: str, path: str | None = None) -> dict[str, dict[str, Entry]]:
    """Split text into sections of raw entries, checking only the layout."""
    out: dict[str, dict[str, Entry]] = {"": {}}
    section = ""
    for n, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip().isidentifier():
                raise ScenarioError(f"malformed section header {line!r}", n, path)
            section = line[1:-1].strip()
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ScenarioError(f"expected 'key = value', got {line!r}", n, path)
        key, value = (s.strip() for s in line.split("=", 1))
        sec = section
        if "." in key:
            if section:
                raise ScenarioError(f"dotted key {key!r} inside section [{section}]", n, path)
            sec, key = key.split(".", 1)
        if not key.isidentifier():
            raise ScenarioError(f"invalid key {key!r}", n, path)
        if not value:
            raise ScenarioError(f"{_dotted(sec, key)}: empty value", n, path)
        bucket = out.setdefault(sec, {})
        if key in bucket:
            raise ScenarioError(f"{_dotted(sec, key)}: duplicate key (first set on line "
                                f"{bucket[key].line})", n, path)
        bucket[key] = Entry(value, n)
    return out


def _dotted(section: str, key: str) -> str:
    return f"{section}.{key}" if section else key


def _quantity(text: str, dim: str, u: UnitSystem, name: str) -> float:
    hint = f"expected a {dim} with a unit, e.g. '{name.rpartition('.')[2]} = 1 {EXAMPLE_UNITS[dim]}'"
    parts = text.split()
    if len(parts) == 2 and parts[1] == "iu":
        try:
            return float(parts[0])
        except ValueError:
            raise UnitError(f"{hint}; got {text!r}") from None
    try:
        q = parse_quantity(text)
    except UnitError:
        raise UnitError(f"{hint}; got {text!r}") from None
    if q.dimension == "dimensionless":
        raise UnitError(f"missing unit: {hint}; got {text!r}")
    if dim == "energy" and q.dimension == "temperature":
        return to_internal(q, u)
    if q.dimension != dim:
        raise UnitError(f"{hint}; {text!r} is a {q.dimension}")
    return to_internal(q, u)


def _split_list(text: str) -> list[str]:
    return [s.strip() for s in text.strip("[]").split(",") if s.strip()]


def _convert(f: Field, raw: str, u: UnitSystem, name: str):
    if f.kind == "quantity":
        return _quantity(raw, f.dimension, u, name)
    if f.kind == "quantities":
        items = _split_list(raw)
        if not items:
            raise UnitError("empty list")
        tail = items[-1].split()
        suffix = tail[1] if len(tail) == 2 else None
        out = []
        for item in items:
            if len(item.split()) == 1 and suffix is not None:
                item = f"{item} {suffix}"
            out.append(_quantity(item, f.dimension, u, name))
        return tuple(out)
    if f.kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise UnitError(f"expected an integer, got {raw!r}") from None
    if f.kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise UnitError(f"expected a plain number, got {raw!r}") from None
    if f.kind == "floats":
        try:
            return tuple(float(s) for s in _split_list(raw))
        except ValueError:
            raise UnitError(f"expected a list of plain numbers, got {raw!r}") from None
    if f.kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise UnitError(f"expected true or false, got {raw!r}")
    if f.kind == "strs":
        return tuple(_split_list(raw))
    if f.choices and raw not in f.choices:
        raise UnitError(f"expected one of {', '.join(f.choices)}; got {raw!r}")
    return raw


def _unit_system(tokens, path) -> UnitSystem:
    sec = tokens.get("units", {})
    species = sec["species"].raw if "species" in sec else "Rb87"
    if species not in ("Rb87", "Rb85"):
        raise ScenarioError(f"units.species: expected Rb87 or Rb85; got {species!r}",
                            sec["species"].line, path)
    length = 1e-6
    if "length_unit" in sec:
        e = sec["length_unit"]
        try:
            q = parse_quantity(e.raw)
        except UnitError as exc:
            raise ScenarioError(f"units.length_unit: {exc}", e.line, path) from None
        if q.dimension != "length" or not q.value > 0:
            raise ScenarioError("units.length_unit: expected a positive length, e.g. '1 um'",
                                e.line, path)
        length = q.value
    for key in ("mass_kg", "length_unit_m"):
        if key in sec:
            try:
                v = float(sec[key].raw)
            except ValueError:
                v = -1.0
            if not v > 0:
                raise ScenarioError(f"units.{key}: expected a positive plain number in SI",
                                    sec[key].line, path)
    if "length_unit" in sec and "length_unit_m" in sec:
        raise ScenarioError("units.length_unit_m: give length_unit or length_unit_m, not both",
                            sec["length_unit_m"].line, path)
    if "length_unit_m" in sec:
        length = float(sec["length_unit_m"].raw)
    u = UnitSystem.for_species(species, length)
    if "mass_kg" in sec:
        u = UnitSystem(length, float(sec["mass_kg"].raw))
    return u


def parse(text: str, path: str | None = None) -> Scenario:
    """Parse and validate scenario text."""
    tokens = tokenize(text, path)
    top = tokens[""]
    if "kind" not in top:
        raise ScenarioError("missing required key 'kind'", None, path)
    kind = top["kind"].raw
    if kind not in KINDS:
        raise ScenarioError(f"kind: expected one of {', '.join(KINDS)}; got {kind!r}",
                            top["kind"].line, path)
    required, optional = KIND_SECTIONS[kind]
    allowed = set(required) | set(optional) | {""}
    for sec, entries in tokens.items():
        if sec not in allowed:
            first = min((e.line for e in entries.values()), default=None)
            if sec in SECTIONS:
                msg = f"section [{sec}] is not used by kind {kind!r}"
            else:
                msg = f"unknown section [{sec}]"
            raise ScenarioError(msg, first, path)
    u = _unit_system(tokens, path)
    values: dict[str, dict[str, object]] = {}
    lines: dict[str, int] = {}
    for sec in sorted(allowed):
        schema = SECTIONS[sec]
        entries = tokens.get(sec, {})
        if sec in required and not entries and any(f.required for f in schema.values()):
            raise ScenarioError(f"missing section [{sec}] required by kind {kind!r}", None, path)
        for key, e in entries.items():
            if key not in schema:
                known = ", ".join(sorted(schema))
                raise ScenarioError(f"unknown key {_dotted(sec, key)!r} (known: {known})",
                                    e.line, path)
        out = {}
        for key, f in schema.items():
            name = _dotted(sec, key)
            if key in entries:
                e = entries[key]
                lines[name] = e.line
                try:
                    out[key] = _convert(f, e.raw, u, name)
                except UnitError as exc:
                    raise ScenarioError(f"{name}: {exc}", e.line, path) from None
            elif f.required and (sec in required or sec == ""):
                raise ScenarioError(f"missing required key {name!r}", None, path)
            else:
                out[key] = f.default
        values[sec] = out
    outputs = KIND_OUTPUTS[kind]
    sel = values.get("output", {}).get("files")
    if sel:
        bad = [s for s in sel if s not in outputs]
        if bad:
            raise ScenarioError(f"output.files: {bad[0]!r} is not produced by kind {kind!r} "
                                f"(available: {', '.join(outputs)})", lines.get("output.files"), path)
        outputs = tuple(sel)
    sc = Scenario(values[""]["name"], kind, values[""]["seed"], u, values, lines, text, path,
                  outputs)
    _check_consistency(sc)
    return sc


def load(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", None, str(p)) from None
    return parse(text, str(p))


def _positive(sc: Scenario, *names: str) -> None:
    for n in names:
        v = sc.get(n)
        if v is not None and not v > 0:
            raise sc.error(n, "must be positive")


def _check_consistency(sc: Scenario) -> None:
    _positive(sc, "grid.n_points", "packet.sigma", "packet.energy", "propagator.dt",
              "propagator.t_end", "propagator.absorber_width", "barrier.width", "barrier.waist",
              "cloud.temperature", "cloud.sigma_x0", "cloud.n_samples", "kick.t_free",
              "kick.duration", "trap.slope", "sweep.speed", "sweep.temperature",
              "decay.periods", "causal.n_omega", "causal.omega_max", "causal.sigma_t",
              "causal.n_tests", "scan.n_energies")
    if sc.has("grid.x_min") and not sc["grid.x_max"] > sc["grid.x_min"]:
        raise sc.error("grid.x_max", "must exceed grid.x_min")
    if sc.has("barrier.height"):
        shape = sc["barrier.shape"]
        need = "width" if shape == "rectangular" else "waist"
        other = "waist" if shape == "rectangular" else "width"
        if not sc.has(f"barrier.{need}"):
            raise ScenarioError(f"missing required key 'barrier.{need}' for a {shape} barrier",
                                sc.lines.get("barrier.shape"), sc.path)
        if sc.has(f"barrier.{other}"):
            raise sc.error(f"barrier.{other}", f"not used by a {shape} barrier")
    if sc.kind in ("larmor", "two_field", "evolve"):
        for n in ("propagator.absorber_width", "propagator.absorber_strength", "propagator.t_end"):
            if sc.kind != "evolve" or n != "propagator.t_end":
                if not sc.has(n):
                    raise ScenarioError(f"missing required key {n!r} for kind {sc.kind!r}",
                                        None, sc.path)
    if sc.kind == "evolve" and not sc.has("propagator.absorber_width"):
        raise ScenarioError("missing required key 'propagator.absorber_width'", None, sc.path)
    if sc.kind == "larmor" and sc.has("larmor.region_a") != sc.has("larmor.region_b"):
        raise sc.error("larmor.region_a", "give both region_a and region_b or neither")
    if sc.kind == "scatter_scan":
        if not (sc.has("scan.kappa_d") or (sc.has("scan.e_min") and sc.has("scan.e_max"))):
            raise ScenarioError("scan needs e_min and e_max, or kappa_d", None, sc.path)
    if sc.kind == "causal":
        if sc["causal.medium"] == "cutoff_line":
            for n in ("line_length", "line_speed", "cutoff"):
                if not sc.has(f"causal.{n}"):
                    raise ScenarioError(f"missing required key 'causal.{n}' for a cutoff line",
                                        None, sc.path)
        elif not sc.has("causal.carrier"):
            raise ScenarioError("missing required key 'causal.carrier'", None, sc.path)
