"""Time integration of evolution fields and per-trajectory invariant checks.

``rk4`` is a classical fixed-step Runge-Kutta scheme.  ``rk45`` is the
Dormand-Prince embedded pair from :class:`scipy.integrate.RK45`.  Both accept
either a :class:`~cosym.systems.SystemInstance` or a
:class:`~cosym.legendre.LagrangianSystem`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import RK45

from .errors import DegenerateStructure, DomainError, NewtonDivergence, NonFiniteState, SingularLegendre, StepFailure
from .geometry import ChartSpec, SystemClass
from .legendre import LagrangianSystem, lagrangian_equation_residuals, lagrangian_terms
from .systems import (
    SystemInstance,
    entropy_bookkeeping_residual,
    entropy_identity_check,
    explicit_rhs_oracle,
    hamiltonian_terms,
)

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "InvariantResult",
    "InvariantReport",
    "DEFAULT_TOLERANCES",
    "MIN_STEP",
    "integrate",
    "check_invariants",
]

MIN_STEP = 1e-14
SECOND_LAW_SLACK = 1e-10

DEFAULT_TOLERANCES = {
    "oracle_equivalence": 1e-9,
    "entropy_identity": 1e-9,
    "lagrangian_equations": 1e-6,
    "energy_balance": 1e-6,
    "energy_drift": 1e-7,
    "matter_conservation": 1e-10,
    "gauge": 1e-7,
    "entropy_bookkeeping": 1e-9,
    "second_law": SECOND_LAW_SLACK,
}

# failures that end a trajectory early instead of propagating
_HALTING = (DegenerateStructure, SingularLegendre, NewtonDivergence)


# arithmetic failures mid-run (overflow, leaving an expression's domain)
_BLOW_UP = (DomainError, FloatingPointError, OverflowError)


def _non_finite(rec: "_Recorder", t: float, exc: Exception) -> NonFiniteState:
    if isinstance(exc, NonFiniteState):
        return exc
    err = NonFiniteState(f"non-finite arithmetic after t={t:.6g}: {exc}")
    err.trajectory = rec.trajectory("failed", str(err))
    return err


def _halt(rec: "_Recorder", t: float, exc: Exception) -> Trajectory:
    kind = "degenerate" if isinstance(exc, DegenerateStructure) else "legendre"
    return rec.trajectory("halted", f"halted at t={t:.6g}: {exc}", kind)


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "rk4"
    dt: float = 1e-3
    t_end: float = 1.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_steps: int = 1_000_000

    def __post_init__(self):
        scheme = self.scheme.lower()
        if scheme in ("rk45-adaptive", "rk45_adaptive", "dopri5"):
            scheme = "rk45"
        if scheme not in ("rk4", "rk45"):
            raise ValueError(f"unknown scheme {self.scheme!r}; use 'rk4' or 'rk45'")
        object.__setattr__(self, "scheme", scheme)
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError("t_end must be a positive finite number")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("rel_tol and abs_tol must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass
class Trajectory:
    """Accepted states of one integration run.

    ``status`` is ``"ok"`` for a completed run and ``"halted"`` when the
    structure degenerated mid-run; ``message`` then says why.
    """

    chart: ChartSpec
    times: np.ndarray
    states: np.ndarray
    diagnostics: dict[str, np.ndarray]
    energy_label: str = "H"
    status: str = "ok"
    message: str = ""
    halt_kind: str = ""  # "degenerate" or "legendre" when halted

    @property
    def halted(self) -> bool:
        return self.status != "ok"

    def __len__(self) -> int:
        return len(self.times)

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.chart.index(name)]


@dataclass(frozen=True)
class InvariantResult:
    max_residual: float
    index: int
    time: float
    tolerance: float
    passed: bool

    def as_dict(self) -> dict:
        return {"max_residual": self.max_residual, "index": self.index, "time": self.time,
                "tolerance": self.tolerance, "passed": self.passed}


@dataclass
class InvariantReport:
    results: dict[str, InvariantResult] = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        return sorted(k for k, r in self.results.items() if not r.passed)

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "failures": self.failures,
            "invariants": {k: self.results[k].as_dict() for k in sorted(self.results)},
        }


# ---------------------------------------------------------------------------
# Uniform access to Hamiltonian and Lagrangian systems
# ---------------------------------------------------------------------------


class _Model:
    def __init__(self, system: SystemInstance | LagrangianSystem):
        self.system = system
        self.lagrangian = isinstance(system, LagrangianSystem)
        self.chart: ChartSpec = system.chart
        self.energy_label = "E_L" if self.lagrangian else "H"

    def field(self, x: np.ndarray) -> np.ndarray:
        return self.system.evolution_field(x)

    def energy(self, x: np.ndarray) -> float:
        return self.system.energy(x)

    def terms(self, x: np.ndarray):
        return lagrangian_terms(self.system, x) if self.lagrangian else hamiltonian_terms(self.system, x)

    def analytic(self, x: np.ndarray, xdot: np.ndarray) -> dict[str, float]:
        """Diagnostics that only need the state and its analytic field."""
        chart = self.chart
        cls = chart.system_class
        t = self.terms(x)
        qdot = xdot[chart.block("q")]
        power = float(t.external @ qdot + t.port_power)
        out = {
            "energy": self.energy(x),
            "power": power,
            "energy_rate_residual": float(t.grad @ xdot) - power,
            "min_abs_temperature": float(np.min(np.abs(t.temps))),
            "total_S": float(np.sum(x[chart.block("S")])),
        }
        if chart.K:
            out["total_N"] = float(np.sum(x[chart.block("N")]))
        if cls in (SystemClass.NON_SIMPLE, SystemClass.OPEN_SIMPLE):
            gaps = x[chart.block("S")] - x[chart.block("Sigma")]
            names = _indexed("gauge", len(gaps))
            out.update({nm: float(g) for nm, g in zip(names, gaps)})
        if self.lagrangian:
            eqs = lagrangian_equation_residuals(self.system, x, xdot)
            out["entropy_residual"] = float(eqs.pop("entropy"))
            out["lagrangian_residual"] = float(max(eqs.values()))
            return out
        res, scale = entropy_identity_check(self.system, x, xdot)
        rel = np.abs(res) / np.maximum(1.0, scale)
        for nm, r in zip(_indexed("entropy_residual", len(rel)), rel):
            out[nm] = float(r)
        oracle = explicit_rhs_oracle(self.system, x)
        out["oracle_gap"] = float(np.max(np.abs(xdot - oracle)) / max(1.0, float(np.max(np.abs(oracle)))))
        if cls is SystemClass.OPEN_SIMPLE:
            out["entropy_bookkeeping"] = abs(entropy_bookkeeping_residual(self.system, x, xdot))
        return out


def _indexed(base: str, count: int) -> list[str]:
    return [base] if count == 1 else [f"{base}_{i + 1}" for i in range(count)]


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------


class _Recorder:
    def __init__(self, model: _Model, with_diagnostics: bool):
        self.model = model
        self.with_diagnostics = with_diagnostics
        self.times: list[float] = []
        self.states: list[np.ndarray] = []
        self.rows: list[dict[str, float]] = []

    def accept(self, t: float, x: np.ndarray, xdot: np.ndarray) -> None:
        self.times.append(float(t))
        self.states.append(np.array(x, dtype=float))
        if self.with_diagnostics:
            self.rows.append(self.model.analytic(x, xdot))

    def trajectory(self, status: str = "ok", message: str = "", halt_kind: str = "") -> Trajectory:
        D = self.model.chart.D
        diags: dict[str, np.ndarray] = {}
        if self.rows:
            for key in self.rows[0]:
                diags[key] = np.array([r[key] for r in self.rows])
        states = np.array(self.states).reshape(len(self.states), D)
        return Trajectory(self.model.chart, np.array(self.times), states, diags,
                          self.model.energy_label, status, message, halt_kind)


def _check_finite(x: np.ndarray, t: float, rec: _Recorder) -> None:
    if not np.all(np.isfinite(x)):
        err = NonFiniteState(f"state became non-finite at t={t:.6g}")
        err.trajectory = rec.trajectory("failed", str(err))
        raise err


def integrate(
    system: SystemInstance | LagrangianSystem,
    x0,
    cfg: IntegratorConfig | None = None,
    *,
    diagnostics: bool = True,
) -> Trajectory:
    """Integrate the evolution field of ``system`` from ``x0``.

    A degenerate structure (or singular Legendre map) at ``x0`` raises.  If
    it degenerates later, the run stops and the partial trajectory comes back
    with ``status="halted"``.  :class:`StepFailure` and
    :class:`NonFiniteState` carry the partial run as ``err.trajectory``.
    """
    cfg = cfg or IntegratorConfig()
    model = _Model(system)
    x0 = np.array(x0, dtype=float)
    if x0.shape != (model.chart.D,):
        raise ValueError(f"initial state has shape {x0.shape}, expected ({model.chart.D},)")
    rec = _Recorder(model, diagnostics)
    _check_finite(x0, 0.0, rec)
    f0 = model.field(x0)
    rec.accept(0.0, x0, f0)
    if cfg.scheme == "rk4":
        return _run_rk4(model, x0, f0, cfg, rec)
    return _run_rk45(model, x0, cfg, rec)


def _run_rk4(model: _Model, x: np.ndarray, k1: np.ndarray, cfg: IntegratorConfig, rec: _Recorder) -> Trajectory:
    f = model.field
    n_steps = int(math.ceil(cfg.t_end / cfg.dt - 1e-9))
    if n_steps > cfg.max_steps:
        raise StepFailure(f"{n_steps} steps needed but max_steps is {cfg.max_steps}")
    t = 0.0
    for i in range(1, n_steps + 1):
        t_new = min(i * cfg.dt, cfg.t_end)
        h = t_new - t
        try:
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            _check_finite(x_new, t_new, rec)
            k1 = f(x_new)
        except _HALTING as exc:
            return _halt(rec, t, exc)
        except _BLOW_UP as exc:
            raise _non_finite(rec, t, exc) from exc
        x, t = x_new, t_new
        rec.accept(t, x, k1)
    return rec.trajectory()


def _run_rk45(model: _Model, x0: np.ndarray, cfg: IntegratorConfig, rec: _Recorder) -> Trajectory:
    solver = RK45(lambda _t, y: model.field(y), 0.0, x0, cfg.t_end, rtol=cfg.rel_tol, atol=cfg.abs_tol,
                  first_step=min(cfg.dt, cfg.t_end))
    steps = 0
    while solver.status == "running":
        if steps >= cfg.max_steps:
            err = StepFailure(f"max_steps={cfg.max_steps} reached at t={solver.t:.6g}")
            err.trajectory = rec.trajectory("failed", str(err))
            raise err
        t_prev = solver.t
        try:
            message = solver.step()
        except _HALTING as exc:
            return _halt(rec, t_prev, exc)
        except _BLOW_UP as exc:
            raise _non_finite(rec, t_prev, exc) from exc
        steps += 1
        if solver.status == "failed" or (solver.status == "running" and solver.step_size < MIN_STEP):
            err = StepFailure(f"adaptive step underflow at t={solver.t:.6g}: {message or 'step size below 1e-14'}")
            err.trajectory = rec.trajectory("failed", str(err))
            raise err
        _check_finite(solver.y, solver.t, rec)
        if solver.t <= t_prev:
            continue
        # RK45 is FSAL: solver.f is the field at the accepted state
        rec.accept(solver.t, solver.y, np.array(solver.f))
    return rec.trajectory()


# ---------------------------------------------------------------------------
# Invariants
# ---------------------------------------------------------------------------


def _result(series: np.ndarray, times: np.ndarray, tol: float) -> InvariantResult:
    if series.size == 0:
        return InvariantResult(0.0, 0, float(times[0]) if times.size else 0.0, tol, True)
    series = np.where(np.isfinite(series), series, np.inf)
    i = int(np.argmax(series))
    worst = float(series[i])
    return InvariantResult(worst, i, float(times[i]), tol, worst <= tol)


def energy_balance_scores(times: np.ndarray, energy: np.ndarray, power: np.ndarray) -> np.ndarray:
    """Per-state score of the trapezoidal energy balance.

    r_i = E_{i+1} - E_i - dt (P_i + P_{i+1}) / 2 belongs to interval i; state
    i is scored by the mean of |r_{i-1}| and |r_i|, so a state that disagrees
    with both neighbours scores highest.
    """
    if len(times) < 2:
        return np.zeros(len(times))
    dt = np.diff(times)
    r = np.abs(np.diff(energy) - 0.5 * dt * (power[1:] + power[:-1]))
    left = np.concatenate(([r[0]], r))
    right = np.concatenate((r, [r[-1]]))
    return 0.5 * (left + right)


def check_invariants(
    traj: Trajectory,
    system: SystemInstance | LagrangianSystem,
    tolerances: Mapping[str, float] | None = None,
    *,
    second_law: bool | None = None,
) -> InvariantReport:
    """Re-evaluate every invariant of the system class along ``traj``.

    Analytic identities are checked from the field at each recorded state.
    Energy balance, drift, matter, gauge and the second law compare against
    the recorded history.  ``second_law`` defaults to on for the closed classes.
    """
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    model = _Model(system)
    chart = model.chart
    cls = chart.system_class
    times = np.asarray(traj.times, dtype=float)
    states = np.asarray(traj.states, dtype=float)
    rows = []
    for x in states:
        rows.append(model.analytic(x, model.field(x)))
    cols = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    report = InvariantReport()
    R = report.results

    def stacked(prefix: str) -> np.ndarray:
        keys = [k for k in cols if k == prefix or k.startswith(prefix + "_")]
        return np.max(np.abs(np.vstack([cols[k] for k in keys])), axis=0)

    if model.lagrangian:
        R["lagrangian_equations"] = _result(cols["lagrangian_residual"], times, tol["lagrangian_equations"])
        R["entropy_identity"] = _result(np.abs(cols["entropy_residual"]), times, tol["lagrangian_equations"])
    else:
        R["oracle_equivalence"] = _result(cols["oracle_gap"], times, tol["oracle_equivalence"])
        R["entropy_identity"] = _result(stacked("entropy_residual"), times, tol["entropy_identity"])
        if cls is SystemClass.OPEN_SIMPLE:
            R["entropy_bookkeeping"] = _result(cols["entropy_bookkeeping"], times, tol["entropy_bookkeeping"])

    R["energy_balance"] = _result(energy_balance_scores(times, cols["energy"], cols["power"]), times,
                                  tol["energy_balance"])
    closed = cls is not SystemClass.OPEN_SIMPLE
    if closed and not system.has_external_force:
        R["energy_drift"] = _result(np.abs(cols["energy"] - cols["energy"][0]), times, tol["energy_drift"])
    if cls in (SystemClass.MASS_TRANSFER, SystemClass.NON_SIMPLE):
        R["matter_conservation"] = _result(np.abs(cols["total_N"] - cols["total_N"][0]), times,
                                           tol["matter_conservation"])
    if cls is SystemClass.NON_SIMPLE:
        gaps = states[:, chart.block("S")] - states[:, chart.block("Sigma")]
        R["gauge"] = _result(np.max(np.abs(gaps - gaps[0]), axis=1), times, tol["gauge"])
    if second_law is None:
        second_law = closed
    if second_law:
        decrease = np.concatenate(([0.0], np.maximum(0.0, -np.diff(cols["total_S"]))))
        R["second_law"] = _result(decrease, times, tol["second_law"])
    return report


def series(traj: Trajectory, key: str) -> np.ndarray:
    """A diagnostic column, or a state column by coordinate name."""
    if key in traj.diagnostics:
        return traj.diagnostics[key]
    return traj.column(key)


def map_states(traj: Trajectory, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    return np.array([fn(x) for x in traj.states])
