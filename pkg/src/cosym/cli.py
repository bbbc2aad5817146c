"""Command-line front end: ``cosym validate|simulate|legendre-check|list-examples``.

Exit codes: 0 pass, 1 an invariant failed, 2 invalid config, 3 integration
failure, 4 singular Legendre map.  With several scenario files the largest
code wins.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import random
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import Scenario, load_scenario
from .dynamics import DEFAULT_TOLERANCES, IntegratorConfig, Trajectory, check_invariants, integrate
from .errors import (
    ConfigError,
    DegenerateStructure,
    DomainError,
    NewtonDivergence,
    NonFiniteState,
    SingularLegendre,
    StepFailure,
)
from .legendre import hamiltonian_system, transport_gap

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
EXIT_LEGENDRE = 4

ENV_EXAMPLES = "COSYM_EXAMPLES_DIR"


def examples_dir() -> Path:
    override = os.environ.get(ENV_EXAMPLES)
    if override:
        return Path(override)
    return Path(str(resources.files("cosym") / "scenarios"))


def list_examples() -> list[Path]:
    d = examples_dir()
    return sorted(d.glob("*.toml")) if d.is_dir() else []


def resolve(target: str) -> Path:
    """A path as given, else the name of a shipped example (with or without .toml)."""
    p = Path(target)
    if p.exists():
        return p
    stem = target[:-5] if target.endswith(".toml") else target
    candidate = examples_dir() / f"{stem}.toml"
    return candidate if candidate.exists() else p


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(path: Path, traj: Trajectory, energy: np.ndarray) -> None:
    diag_keys = sorted(k for k in traj.diagnostics if k != "energy")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *traj.chart.names, traj.energy_label, *diag_keys])
        for i, (t, x) in enumerate(zip(traj.times, traj.states)):
            w.writerow([_fmt(t), *(_fmt(v) for v in x), _fmt(energy[i]),
                        *(_fmt(traj.diagnostics[k][i]) for k in diag_keys)])


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _out_dir(sc: Scenario, override: str | None) -> Path:
    base = override or sc.output_dir or "."
    d = Path(base)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# Commands (each returns (exit code, summary dict))
# ---------------------------------------------------------------------------


def cmd_validate(path: str, **_: object) -> tuple[int, dict]:
    p = resolve(path)
    try:
        load_scenario(p)
    except ConfigError as exc:
        return EXIT_CONFIG, {"command": "validate", "path": str(p), "valid": False, "diagnostics": exc.diagnostics}
    return EXIT_OK, {"command": "validate", "path": str(p), "valid": True, "diagnostics": []}


def _integrate_partial(sc: Scenario, system, x0, cfg: IntegratorConfig) -> tuple[Trajectory | None, str, int]:
    """Run one integration; returns (trajectory or None, message, exit code)."""
    try:
        traj = integrate(system, x0, cfg)
    except (StepFailure, NonFiniteState) as exc:
        return getattr(exc, "trajectory", None), str(exc), EXIT_INTEGRATION
    except (SingularLegendre, NewtonDivergence) as exc:
        return None, str(exc), EXIT_LEGENDRE
    except DegenerateStructure as exc:
        return None, f"degenerate structure at the initial state: {exc}", EXIT_INTEGRATION
    except DomainError as exc:
        return None, f"field cannot be evaluated at the initial state: {exc}", EXIT_INTEGRATION
    if traj.halted:
        code = EXIT_LEGENDRE if traj.halt_kind == "legendre" else EXIT_INTEGRATION
        return traj, traj.message, code
    return traj, "", EXIT_OK


def cmd_simulate(path: str, out: str | None = None, tolerance: float | None = None, seed: int = 0,
                 **_: object) -> tuple[int, dict]:
    p = resolve(path)
    try:
        sc = load_scenario(p)
    except ConfigError as exc:
        return EXIT_CONFIG, {"command": "simulate", "path": str(p), "diagnostics": exc.diagnostics}
    random.seed(seed)
    np.random.seed(seed)
    outdir = _out_dir(sc, out)
    csv_path = outdir / f"{sc.prefix}.csv"
    report_path = outdir / f"{sc.prefix}.report.json"
    traj, message, code = _integrate_partial(sc, sc.system, sc.x0, sc.integrator)
    doc = {
        "scenario": sc.name,
        "class": sc.chart.system_class.value,
        "energy": "E_L" if sc.is_lagrangian else "H",
        "seed": seed,
        "integrator": {"scheme": sc.integrator.scheme, "dt": sc.integrator.dt, "t_end": sc.integrator.t_end,
                       "rel_tol": sc.integrator.rel_tol, "abs_tol": sc.integrator.abs_tol},
        "status": "failed" if traj is None else traj.status,
        "message": message,
        "steps": 0 if traj is None else len(traj) - 1,
        "csv": csv_path.name,
    }
    if traj is not None and len(traj):
        write_csv(csv_path, traj, traj.diagnostics.get("energy", np.array([sc.system.energy(x) for x in traj.states])))
        tol = dict(sc.tolerances)
        if tolerance is not None:
            tol = {k: float(tolerance) for k in DEFAULT_TOLERANCES if k != "second_law"}
        try:
            report = check_invariants(traj, sc.system, tol, second_law=sc.second_law)
            doc["invariants"] = report.as_dict()
            doc["passed"] = report.passed and code == EXIT_OK
            if code == EXIT_OK and not report.passed:
                code = EXIT_INVARIANT
        except (DegenerateStructure, SingularLegendre, NewtonDivergence) as exc:
            doc["passed"] = False
            doc["message"] = (message + "; " if message else "") + f"invariant check failed: {exc}"
            code = code or EXIT_INTEGRATION
    else:
        doc["passed"] = False
    write_json(report_path, doc)
    return code, {"command": "simulate", "path": str(p), "exit": code, "passed": doc["passed"],
                  "report": str(report_path), "csv": str(csv_path) if csv_path.exists() else None,
                  "message": doc["message"], "failures": doc.get("invariants", {}).get("failures", [])}


def cmd_legendre_check(path: str, out: str | None = None, tolerance: float | None = None, seed: int = 0,
                       **_: object) -> tuple[int, dict]:
    p = resolve(path)
    try:
        sc = load_scenario(p)
    except ConfigError as exc:
        return EXIT_CONFIG, {"command": "legendre-check", "path": str(p), "diagnostics": exc.diagnostics}
    if not sc.is_lagrangian:
        diag = [{"code": "energy_function", "path": "system",
                 "message": "legendre-check needs a scenario with a lagrangian"}]
        return EXIT_CONFIG, {"command": "legendre-check", "path": str(p), "diagnostics": diag}
    tol = float(tolerance) if tolerance is not None else sc.legendre_tolerance
    lsys = sc.system
    summary = {"command": "legendre-check", "path": str(p), "tolerance": tol}
    try:
        hsys = hamiltonian_system(lsys)
        y0 = lsys.legendre.forward(sc.x0)
        gap0 = transport_gap(lsys, hsys, sc.x0)
    except (SingularLegendre, NewtonDivergence) as exc:
        summary.update(exit=EXIT_LEGENDRE, passed=False, message=str(exc))
        return EXIT_LEGENDRE, summary
    except DegenerateStructure as exc:
        summary.update(exit=EXIT_INTEGRATION, passed=False, message=str(exc))
        return EXIT_INTEGRATION, summary
    # both sides on the same fixed grid so the states line up
    cfg = replace(sc.integrator, scheme="rk4")
    tl, msg_l, code_l = _integrate_partial(sc, lsys, sc.x0, cfg)
    th, msg_h, code_h = _integrate_partial(sc, hsys, y0, cfg)
    code = max(code_l, code_h)
    doc = {"scenario": sc.name, "class": sc.chart.system_class.value, "seed": seed, "tolerance": tol,
           "transport_gap_initial": gap0, "dt": cfg.dt, "t_end": cfg.t_end,
           "message": "; ".join(m for m in (msg_l, msg_h) if m)}
    if code == EXIT_OK:
        mapped = np.array([lsys.legendre.forward(x, check=False) for x in tl.states])
        gaps = np.max(np.abs(mapped - th.states), axis=1)
        i = int(np.argmax(gaps))
        doc.update(max_gap=float(gaps[i]), max_gap_time=float(th.times[i]), steps=len(th) - 1)
        doc["passed"] = bool(gaps[i] <= tol)
        code = EXIT_OK if doc["passed"] else EXIT_INVARIANT
    else:
        doc["passed"] = False
    outdir = _out_dir(sc, out)
    report_path = outdir / f"{sc.prefix}.legendre.json"
    write_json(report_path, doc)
    summary.update(exit=code, passed=doc["passed"], max_gap=doc.get("max_gap"), report=str(report_path),
                   message=doc["message"])
    return code, summary


def cmd_list_examples(**_: object) -> tuple[int, dict]:
    items = []
    for path in list_examples():
        try:
            desc = load_scenario(path).description
        except ConfigError:
            desc = "(invalid)"
        items.append({"name": path.stem, "path": str(path), "description": desc})
    return EXIT_OK, {"command": "list-examples", "directory": str(examples_dir()), "examples": items}


COMMANDS: dict[str, Callable[..., tuple[int, dict]]] = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "legendre-check": cmd_legendre_check,
}


def _run_one(args: tuple[str, str, dict]) -> tuple[int, dict]:
    command, path, kwargs = args
    return COMMANDS[command](path, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cosym", description="Simulate thermodynamic systems on partially "
                                                                "cosymplectic manifolds.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("validate", "statically check scenario files"),
        ("simulate", "integrate scenarios and write CSV time series and invariant reports"),
        ("legendre-check", "integrate the Lagrangian and Hamiltonian sides and compare them"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("scenarios", nargs="+", help="scenario files or shipped example names")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for several scenarios")
        if name != "validate":
            sp.add_argument("--out", default=None, help="output directory (default: [output].dir or cwd)")
            sp.add_argument("--tolerance", type=float, default=None,
                            help="legendre-check: gap tolerance; simulate: uniform invariant tolerance")
            sp.add_argument("--seed", type=int, default=0, help="seed recorded in reports (runs are deterministic)")
    sub.add_parser("list-examples", help="list shipped example scenarios")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-examples":
        code, doc = cmd_list_examples()
        print(json.dumps(doc, indent=2, sort_keys=True))
        return code
    kwargs = {k: getattr(args, k) for k in ("out", "tolerance", "seed") if hasattr(args, k)}
    jobs = [(args.command, path, kwargs) for path in args.scenarios]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for _, doc in results:
        print(json.dumps(doc, sort_keys=True))
    return max(code for code, _ in results)


if __name__ == "__main__":
    sys.exit(main())
