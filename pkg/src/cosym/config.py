"""Scenario files: TOML schema, static validation and system construction.

Schema (all sections except [system] and [initial] are optional)::

    [meta]        description = "..."
    [system]      class, n, K, P, A, B, and exactly one of hamiltonian / lagrangian
    [parameters]  name = number
    [forces]      friction = [["expr", ...], ...]   one row of n entries per eta
                  external = ["expr", ...]          n entries
    [fluxes]      matter = [{l = 1, k = 2, expr = "..."}, ...]   1-based, l != k
                  heat   = [{a = 1, b = 2, expr = "..."}, ...]   off-diagonal J_ab
    [[ports]]     flow, chemical_potential, temperature, molar_entropy
    [[heat_sources]] entropy_flow, temperature
    [initial]     coordinate = number, for every chart coordinate
    [integrator]  scheme, dt, t_end, rel_tol, abs_tol, max_steps
    [invariants]  second_law = bool; [invariants.tolerances] name = number
    [legendre]    tolerance = number
    [output]      dir, prefix

Validation never evaluates the dynamics; it gathers every problem it can
find into a list of diagnostics ``{"code", "path", "message", ...}``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import DEFAULT_TOLERANCES, IntegratorConfig
from .errors import ConfigError, ExprSyntaxError, LayoutMismatch, UnknownVariable
from .expr import FUNCTIONS, Expression
from .geometry import ChartSpec, SystemClass
from .legendre import LagrangianSystem, lagrangian_system_from_expressions
from .systems import EXCLUDED_FROM_HAMILTONIAN, SystemInstance, system_from_expressions

__all__ = ["Scenario", "load_scenario", "parse_scenario", "validate_file"]

SECTIONS = {"meta", "system", "parameters", "forces", "fluxes", "ports", "heat_sources", "initial",
            "integrator", "invariants", "legendre", "output"}
PORT_KEYS = ("flow", "chemical_potential", "temperature", "molar_entropy")
SOURCE_KEYS = ("entropy_flow", "temperature")
DEFAULT_LEGENDRE_TOLERANCE = 1e-6


@dataclass
class Scenario:
    name: str
    path: Path | None
    raw: dict
    chart: ChartSpec
    system: SystemInstance | LagrangianSystem
    x0: np.ndarray
    integrator: IntegratorConfig
    tolerances: dict[str, float] = field(default_factory=dict)
    second_law: bool | None = None
    legendre_tolerance: float = DEFAULT_LEGENDRE_TOLERANCE
    output_dir: str | None = None
    prefix: str = ""
    description: str = ""

    @property
    def is_lagrangian(self) -> bool:
        return isinstance(self.system, LagrangianSystem)


class _Diagnostics:
    def __init__(self):
        self.items: list[dict] = []

    def add(self, code: str, path: str, message: str, **extra: Any) -> None:
        self.items.append({"code": code, "path": path, "message": message, **extra})

    def __bool__(self) -> bool:
        return bool(self.items)


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check_expr(diag: _Diagnostics, path: str, src: Any, vocab: list[str]) -> Expression | None:
    if not isinstance(src, str):
        diag.add("type", path, f"expected an expression string, got {type(src).__name__}")
        return None
    try:
        return Expression(src, vocab)
    except ExprSyntaxError as exc:
        diag.add("syntax", path, str(exc), offset=exc.offset, expected=sorted(exc.expected), source=src)
    except UnknownVariable as exc:
        diag.add("unknown_variable", path, str(exc), variable=exc.name, source=src)
    return None


def _chart(diag: _Diagnostics, raw: dict) -> tuple[ChartSpec | None, str | None, str | None]:
    system = raw.get("system")
    if not isinstance(system, dict):
        diag.add("missing", "system", "a [system] section is required")
        return None, None, None
    energy_keys = [k for k in ("hamiltonian", "lagrangian") if k in system]
    if len(energy_keys) != 1:
        diag.add("energy_function", "system",
                 "exactly one of 'hamiltonian' or 'lagrangian' must be given" +
                 (f" (found both)" if len(energy_keys) == 2 else ""))
        kind = energy_keys[0] if energy_keys else None
    else:
        kind = energy_keys[0]
    cls_name = system.get("class")
    if not isinstance(cls_name, str):
        diag.add("missing", "system.class", "system class name is required")
        return None, kind, None
    try:
        cls = SystemClass.parse(cls_name)
    except ValueError as exc:
        diag.add("unknown_class", "system.class", str(exc))
        return None, kind, None
    sizes = {}
    for key, default in (("n", None), ("K", 0), ("P", 1)):
        v = system.get(key, default)
        if v is None:
            diag.add("missing", f"system.{key}", f"'{key}' is required")
            return None, kind, None
        if not _is_int(v) or v < 0:
            diag.add("type", f"system.{key}", f"'{key}' must be a non-negative integer")
            return None, kind, None
        sizes[key] = v
    ports = raw.get("ports", [])
    sources = raw.get("heat_sources", [])
    A = len(ports) if isinstance(ports, list) else 0
    B = len(sources) if isinstance(sources, list) else 0
    for key, count in (("A", A), ("B", B)):
        if key in system and system[key] != count:
            diag.add("dimension", f"system.{key}",
                     f"'{key}' = {system[key]!r} but {count} {'port' if key == 'A' else 'heat source'} entries given")
    try:
        # ports on a closed class are reported later as flux_structure
        if cls is not SystemClass.OPEN_SIMPLE:
            A = B = 0
        chart = ChartSpec.for_class(cls, sizes["n"], K=sizes["K"], P=sizes["P"], A=A, B=B,
                                    velocity=(kind == "lagrangian"))
    except LayoutMismatch as exc:
        diag.add("layout", "system", str(exc))
        return None, kind, None
    return chart, kind, system.get(kind) if kind else None


def _friction_rows(diag: _Diagnostics, chart: ChartSpec, value: Any) -> list[list[Any]] | None:
    p, n = chart.n_etas, chart.n
    if isinstance(value, list) and value and all(isinstance(v, str) for v in value) and p == 1:
        value = [value]  # single eta: a flat list is accepted
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        diag.add("type", "forces.friction", "friction must be a list of rows (one per eta) of n expressions")
        return None
    if len(value) != p:
        diag.add("dimension", "forces.friction", f"{chart.system_class.value} needs {p} friction row(s), got {len(value)}")
        return None
    for i, row in enumerate(value):
        if len(row) != n:
            diag.add("dimension", f"forces.friction[{i}]", f"friction rows need n={n} entries, got {len(row)}")
            return None
    return value


def parse_scenario(raw: dict, name: str = "scenario", path: Path | None = None) -> Scenario:
    """Validate a decoded TOML document and build the scenario; raises ConfigError."""
    diag = _Diagnostics()
    for key in raw:
        if key not in SECTIONS:
            diag.add("unknown_section", key, f"unknown section [{key}]; expected one of {sorted(SECTIONS)}")
    chart, kind, energy_src = _chart(diag, raw)

    params = raw.get("parameters", {})
    if not isinstance(params, dict):
        diag.add("type", "parameters", "[parameters] must be a table of numbers")
        params = {}
    clean_params: dict[str, float] = {}
    for k, v in params.items():
        if not _is_number(v):
            diag.add("type", f"parameters.{k}", "parameter values must be finite numbers")
        elif k in FUNCTIONS or (chart is not None and k in chart.names):
            diag.add("name_clash", f"parameters.{k}", f"parameter {k!r} shadows a function or coordinate name")
        else:
            clean_params[k] = float(v)

    if chart is None or kind is None:
        raise ConfigError(diag.items)

    vocab = list(chart.names) + list(clean_params)
    what = "Hamiltonian" if kind == "hamiltonian" else "Lagrangian"
    energy = _check_expr(diag, f"system.{kind}", energy_src, vocab)
    if energy is not None:
        banned = {nm for b in EXCLUDED_FROM_HAMILTONIAN[chart.system_class] for nm in chart.block_names(b)}
        bad = sorted((energy.names - set(clean_params)) & banned)
        if bad:
            diag.add("independence_rule", f"system.{kind}",
                     f"the {what} must be independent of the thermodynamic displacements "
                     f"({', '.join(bad)}) for class {chart.system_class.value}", variables=bad)

    # forces
    forces = raw.get("forces", {})
    friction = external = None
    if not isinstance(forces, dict):
        diag.add("type", "forces", "[forces] must be a table")
        forces = {}
    if "friction" in forces:
        friction = _friction_rows(diag, chart, forces["friction"])
        if friction is not None:
            for i, row in enumerate(friction):
                for j, src in enumerate(row):
                    _check_expr(diag, f"forces.friction[{i}][{j}]", src, vocab)
    if "external" in forces:
        external = forces["external"]
        if not isinstance(external, list) or len(external) != chart.n:
            diag.add("dimension", "forces.external", f"external force needs n={chart.n} expressions")
            external = None
        else:
            for j, src in enumerate(external):
                _check_expr(diag, f"forces.external[{j}]", src, vocab)
    for key in forces:
        if key not in ("friction", "external"):
            diag.add("unknown_key", f"forces.{key}", f"unknown key {key!r} in [forces]")

    # fluxes
    fluxes = raw.get("fluxes", {})
    if not isinstance(fluxes, dict):
        diag.add("type", "fluxes", "[fluxes] must be a table")
        fluxes = {}
    matter: dict[tuple[int, int], str] = {}
    heat: dict[tuple[int, int], str] = {}
    cls = chart.system_class
    for key in fluxes:
        if key not in ("matter", "heat"):
            diag.add("unknown_key", f"fluxes.{key}", f"unknown key {key!r} in [fluxes]")
    if "matter" in fluxes:
        if cls not in (SystemClass.MASS_TRANSFER, SystemClass.NON_SIMPLE):
            diag.add("flux_structure", "fluxes.matter", f"{cls.value} has no internal matter transfer between compartments")
        else:
            seen: dict[frozenset, tuple[int, int]] = {}
            for i, entry in enumerate(fluxes["matter"] if isinstance(fluxes["matter"], list) else [None]):
                path_i = f"fluxes.matter[{i}]"
                if not isinstance(entry, dict) or not all(k in entry for k in ("l", "k", "expr")):
                    diag.add("type", path_i, "matter entries need integer 'l', 'k' and an 'expr'")
                    continue
                l, k = entry["l"], entry["k"]
                if not (_is_int(l) and _is_int(k) and 1 <= l <= chart.K and 1 <= k <= chart.K):
                    diag.add("index_range", path_i, f"compartment indices must be integers in 1..{chart.K}")
                    continue
                if l == k:
                    diag.add("flux_antisymmetry", path_i, f"J_{{{l},{k}}} is zero by antisymmetry and cannot be given")
                    continue
                pair = frozenset((l, k))
                if pair in seen:
                    prev = seen[pair]
                    code = "flux_antisymmetry" if prev != (l, k) else "flux_duplicate"
                    diag.add(code, path_i,
                             f"matter flux ({l},{k}) conflicts with ({prev[0]},{prev[1]}); J is antisymmetric, "
                             "so give each compartment pair once")
                    continue
                seen[pair] = (l, k)
                if _check_expr(diag, f"{path_i}.expr", entry["expr"], vocab) is not None:
                    matter[(l, k)] = entry["expr"]
    if "heat" in fluxes:
        if cls is not SystemClass.NON_SIMPLE:
            diag.add("flux_structure", "fluxes.heat", f"{cls.value} has no heat conduction between subsystems")
        else:
            for i, entry in enumerate(fluxes["heat"] if isinstance(fluxes["heat"], list) else [None]):
                path_i = f"fluxes.heat[{i}]"
                if not isinstance(entry, dict) or not all(k in entry for k in ("a", "b", "expr")):
                    diag.add("type", path_i, "heat entries need integer 'a', 'b' and an 'expr'")
                    continue
                a, b = entry["a"], entry["b"]
                if not (_is_int(a) and _is_int(b) and 1 <= a <= chart.P and 1 <= b <= chart.P):
                    diag.add("index_range", path_i, f"subsystem indices must be integers in 1..{chart.P}")
                    continue
                if a == b:
                    diag.add("flux_structure", path_i,
                             "diagonal heat entries are fixed by the zero column-sum condition and cannot be given")
                    continue
                if (a, b) in heat:
                    diag.add("flux_duplicate", path_i, f"heat entry ({a},{b}) given twice")
                    continue
                if _check_expr(diag, f"{path_i}.expr", entry["expr"], vocab) is not None:
                    heat[(a, b)] = entry["expr"]

    ports = raw.get("ports", [])
    sources = raw.get("heat_sources", [])
    for section, entries, keys in (("ports", ports, PORT_KEYS), ("heat_sources", sources, SOURCE_KEYS)):
        if not entries:
            continue
        if cls is not SystemClass.OPEN_SIMPLE:
            diag.add("flux_structure", section, f"{cls.value} is adiabatically closed; [[{section}]] not allowed")
            continue
        for i, entry in enumerate(entries):
            for k in keys:
                if not isinstance(entry, dict) or k not in entry:
                    diag.add("missing", f"{section}[{i}].{k}", f"missing '{k}'")
                else:
                    _check_expr(diag, f"{section}[{i}].{k}", entry[k], vocab)
            for k in (entry if isinstance(entry, dict) else {}):
                if k not in keys:
                    diag.add("unknown_key", f"{section}[{i}].{k}", f"unknown key {k!r}")

    # initial state
    initial = raw.get("initial")
    x0 = None
    if not isinstance(initial, dict):
        diag.add("missing", "initial", "an [initial] table with every coordinate is required")
    else:
        missing = [nm for nm in chart.names if nm not in initial]
        extra = [nm for nm in initial if nm not in chart.names]
        if missing or extra:
            diag.add("dimension", "initial",
                     f"initial state must give exactly the {chart.D} coordinates {list(chart.names)}",
                     missing=missing, unexpected=extra)
        bad = [nm for nm in chart.names if nm in initial and not _is_number(initial[nm])]
        for nm in bad:
            diag.add("type", f"initial.{nm}", "initial values must be finite numbers")
        if not (missing or extra or bad):
            x0 = np.array([float(initial[nm]) for nm in chart.names])

    # integrator
    integ = raw.get("integrator", {})
    cfg = None
    try:
        cfg = IntegratorConfig(**integ)
    except TypeError as exc:
        diag.add("unknown_key", "integrator", str(exc))
    except ValueError as exc:
        diag.add("integrator", "integrator", str(exc))

    inv = raw.get("invariants", {})
    tolerances = dict(inv.get("tolerances", {})) if isinstance(inv, dict) else {}
    for k, v in tolerances.items():
        if k not in DEFAULT_TOLERANCES:
            diag.add("unknown_key", f"invariants.tolerances.{k}", f"unknown invariant {k!r}")
        elif not _is_number(v) or v <= 0:
            diag.add("type", f"invariants.tolerances.{k}", "tolerances must be positive numbers")
    second_law = inv.get("second_law") if isinstance(inv, dict) else None
    if second_law is not None and not isinstance(second_law, bool):
        diag.add("type", "invariants.second_law", "second_law must be true or false")

    leg = raw.get("legendre", {})
    leg_tol = leg.get("tolerance", DEFAULT_LEGENDRE_TOLERANCE)
    if not _is_number(leg_tol) or leg_tol <= 0:
        diag.add("type", "legendre.tolerance", "tolerance must be a positive number")
    if leg and kind != "lagrangian":
        diag.add("flux_structure", "legendre", "[legendre] only applies to scenarios with a lagrangian")

    out = raw.get("output", {})
    meta = raw.get("meta", {})

    if diag:
        raise ConfigError(diag.items)

    build = lagrangian_system_from_expressions if kind == "lagrangian" else system_from_expressions
    try:
        system = build(
            cls, chart.n, energy_src, K=chart.K, P=chart.P, params=clean_params,
            friction=friction, external=external, matter=matter or None, heat=heat or None,
            ports=list(ports), sources=list(sources),
        )
    except (LayoutMismatch, ValueError) as exc:  # anything the static pass missed
        raise ConfigError([{"code": "layout", "path": "system", "message": str(exc)}]) from exc
    return Scenario(
        name=name, path=path, raw=raw, chart=system.chart, system=system, x0=x0, integrator=cfg,
        tolerances={k: float(v) for k, v in tolerances.items()}, second_law=second_law,
        legendre_tolerance=float(leg_tol), output_dir=out.get("dir"), prefix=out.get("prefix", name),
        description=str(meta.get("description", "")),
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([{"code": "io", "path": str(path), "message": str(exc)}]) from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([{"code": "toml_syntax", "path": str(path), "message": str(exc)}]) from exc
    return parse_scenario(raw, name=path.stem, path=path)


def validate_file(path: str | Path) -> list[dict]:
    """Diagnostics for ``path``; empty when the scenario is valid."""
    try:
        load_scenario(path)
    except ConfigError as exc:
        return exc.diagnostics
    return []
