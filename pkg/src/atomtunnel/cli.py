"""Command-line front end: ``atomtunnel run <scenario>`` and ``atomtunnel list``.

Exit codes: 0 success, 2 parse or validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__, kernels
from .causal import CausalityError
from .larmor import PostSelectionError
from .potentials import NoWellError
from .propagator import ConvergenceError, PhaseWrapError
from .runners import RUNNERS, build_config, build_grid, sweep_geometry, tunnelling_setup
from .scenario import Scenario, ScenarioError, load

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
NUMERICAL_ERRORS = (PhaseWrapError, ConvergenceError, CausalityError, NoWellError,
                    PostSelectionError, FloatingPointError, ArithmeticError, RuntimeError)

SCENARIO_DIR = Path(__file__).with_name("scenarios")


def bundled() -> dict[str, Path]:
    return {p.stem: p for p in sorted(SCENARIO_DIR.glob("*.scn"))}


def resolve(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    cat = bundled()
    stem = p.stem if p.suffix == ".scn" else name_or_path
    if stem in cat:
        return cat[stem]
    return p


def check(sc: Scenario) -> None:
    """Build the cheap objects a run needs so bad configurations fail before computing."""
    try:
        if sc.kind in ("larmor", "two_field"):
            tunnelling_setup(sc)
        elif sc.kind == "sweep_capture":
            g = sweep_geometry(sc)
            g.absorber.rate(g.grid())
        elif sc.kind == "evolve":
            cfg = build_config(sc)
            cfg.absorber.rate(build_grid(sc))
    except ScenarioError:
        raise
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"configuration rejected: {exc}", None, sc.path) from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(path: str, out_dir: str | None = None, seed: int | None = None, jobs: int = 1,
        validate_only: bool = False, stream=None) -> int:
    stream = stream or sys.stderr
    try:
        sc = load(resolve(path))
        if seed is not None:
            sc = dataclasses.replace(sc, seed=seed)
        if jobs < 1:
            raise ScenarioError("--jobs must be at least 1")
        check(sc)
    except ScenarioError as exc:
        print(f"error: {exc}", file=stream)
        return EXIT_INVALID
    if validate_only:
        print(f"{sc.name}: ok ({sc.kind})", file=stream)
        return EXIT_OK
    out = Path(out_dir or f"out_{sc.name}")
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        tables = RUNNERS[sc.kind](sc, out, jobs)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=stream)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: configuration rejected: {exc}", file=stream)
        return EXIT_INVALID
    wall = time.perf_counter() - start
    written = []
    for name in sc.outputs:
        if name in tables:
            tables[name].write(out / name)
            written.append(name)
    manifest = {
        "scenario": sc.name,
        "kind": sc.kind,
        "scenario_hash": sc.digest,
        "version": __version__,
        "backend": kernels.BACKEND_NAME,
        "seed": sc.seed,
        "jobs": jobs,
        "wall_time_s": round(wall, 3),
        "files": [{"name": n, "sha256": _sha256(out / n)} for n in written],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"{sc.name}: wrote {', '.join(written)} to {out}", file=stream)
    return EXIT_OK


def list_scenarios(stream=None) -> list[str]:
    stream = stream or sys.stdout
    names = []
    for name, p in bundled().items():
        try:
            sc = load(p)
            desc = sc.values['']['description']
            print(f"{name:26s} {sc.kind:14s} {desc}", file=stream)
        except ScenarioError as exc:
            print(f"{name:26s} invalid: {exc}", file=stream)
        names.append(name)
    return names


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="atomtunnel", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file or a bundled scenario name")
    r.add_argument("scenario")
    r.add_argument("--out-dir")
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--validate-only", action="store_true")
    sub.add_parser("list", help="list bundled scenarios")
    args = ap.parse_args(argv)
    if args.command == "list":
        list_scenarios()
        return EXIT_OK
    return run(args.scenario, args.out_dir, args.seed, args.jobs, args.validate_only)


if __name__ == "__main__":
    sys.exit(main())
