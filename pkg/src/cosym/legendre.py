"""Lagrangian side: energy, Legendre map and the pulled-back structure.

The velocity-side chart mirrors the momentum-side one with the ``p`` block
replaced by ``qdot``.  Only the ``p``/``qdot`` coordinates change under the
Legendre map, so thermodynamic coordinates (W, N, Gamma, S, Sigma) carry
over unchanged.

Second derivatives of L are never taken symbolically.  The Hessian and the
Jacobian of the Legendre map are central finite differences of the exact
(AD) gradient, and Omega_L is evaluated as the numerical pullback of the
momentum-side two-form through that Jacobian.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import NewtonDivergence, SingularLegendre, TemperatureDegenerate
from .expr import Expression
from .geometry import ChartSpec, SystemClass, build_two_form, flat_operator, flat_solve
from .systems import (
    ExprScalarField,
    FluxSpec,
    ForceSpec,
    HeatSource,
    Port,
    ScalarField,
    SystemInstance,
    Terms,
    collect_terms,
    etas_from_terms,
    make_system,
    rhs_from_terms,
    specs_from_expressions,
    validate_specs,
)

__all__ = [
    "LegendreMap",
    "LagrangianSystem",
    "LegendreHamiltonian",
    "lagrangian_energy",
    "legendre_forward",
    "legendre_inverse",
    "lagrangian_evolution_field",
    "lagrangian_system_from_expressions",
    "make_lagrangian_system",
    "hamiltonian_system",
    "pullback_two_form",
    "intrinsic_two_form",
    "two_form_pairing_via_pushforward",
    "transport_gap",
    "lagrangian_equation_residuals",
]

FD_STEP = 1e-6
HESSIAN_COND_LIMIT = 1e8
HESSIAN_MIN_SINGULAR = 1e-8


def _steps(x: np.ndarray, idx: Sequence[int]) -> np.ndarray:
    return FD_STEP * np.maximum(1.0, np.abs(x[list(idx)]))


class LegendreMap:
    """(q, qdot, rest) -> (q, dL/dqdot, rest) and its Newton inverse."""

    def __init__(self, lagrangian: ScalarField, chart: ChartSpec, *, max_iter: int = 50, tol: float = 1e-12):
        if not chart.velocity:
            raise ValueError("the Legendre map is defined on the velocity-side chart")
        self.lagrangian = lagrangian
        self.chart = chart
        self.max_iter = max_iter
        self.tol = tol
        self._v = chart.block("p")
        self._v_idx = list(range(chart.D))[self._v]
        self._cached_inverse = functools.lru_cache(maxsize=512)(self._inverse_from_bytes)

    # -- derivatives ---------------------------------------------------------

    def momentum(self, x: np.ndarray) -> np.ndarray:
        return self.lagrangian.value_and_grad(x)[1][self._v]

    def _momentum_jacobian(self, x: np.ndarray, columns: Sequence[int]) -> np.ndarray:
        out = np.empty((self.chart.n, len(columns)))
        for c, (j, h) in enumerate(zip(columns, _steps(x, columns))):
            xp = x.copy()
            xm = x.copy()
            xp[j] += h
            xm[j] -= h
            out[:, c] = (self.momentum(xp) - self.momentum(xm)) / (2.0 * h)
        return out

    def velocity_hessian(self, x: np.ndarray) -> np.ndarray:
        """d^2 L / dqdot dqdot by central differences of the exact gradient."""
        Hs = self._momentum_jacobian(np.asarray(x, dtype=float), self._v_idx)
        return 0.5 * (Hs + Hs.T)

    def check_regular(self, x: np.ndarray) -> np.ndarray:
        Hs = self.velocity_hessian(x)
        if Hs.size == 0:
            return Hs
        sv = np.linalg.svd(Hs, compute_uv=False)
        if not np.all(np.isfinite(sv)) or sv[-1] < HESSIAN_MIN_SINGULAR or sv[0] / sv[-1] > HESSIAN_COND_LIMIT:
            cond = float("inf") if sv[-1] == 0 else sv[0] / sv[-1]
            raise SingularLegendre(
                f"Lagrangian is not regular here: velocity Hessian singular values {sv.tolist()} (condition {cond:.3g})")
        return Hs

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Full D x D Jacobian of the Legendre map (identity off the p rows)."""
        x = np.asarray(x, dtype=float)
        J = np.eye(self.chart.D)
        J[self._v] = self._momentum_jacobian(x, range(self.chart.D))
        return J

    def pushforward(self, x: np.ndarray, X: np.ndarray) -> np.ndarray:
        """TLeg(X) by a central difference along X."""
        x = np.asarray(x, dtype=float)
        X = np.asarray(X, dtype=float)
        scale = max(1.0, float(np.max(np.abs(x))))
        norm = float(np.max(np.abs(X)))
        if norm == 0.0:
            return np.zeros_like(X)
        h = FD_STEP * scale / norm
        return (self.forward(x + h * X, check=False) - self.forward(x - h * X, check=False)) / (2.0 * h)

    # -- the map -------------------------------------------------------------

    def forward(self, x: np.ndarray, check: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if check:
            self.check_regular(x)
        y = x.copy()
        y[self._v] = self.momentum(x)
        return y

    def inverse(self, y: np.ndarray) -> np.ndarray:
        y = np.ascontiguousarray(y, dtype=float)
        return self._cached_inverse(y.tobytes()).copy()

    def _inverse_from_bytes(self, key: bytes) -> np.ndarray:
        y = np.frombuffer(key, dtype=float)
        p = y[self._v]
        x = y.copy()  # initial guess qdot = p
        target = self.tol * (1.0 + float(np.max(np.abs(p), initial=0.0)))
        r = self.momentum(x) - p
        err = float(np.max(np.abs(r), initial=0.0))
        for _ in range(self.max_iter):
            if err <= target:
                return x
            Hs = self.check_regular(x)
            step = np.linalg.solve(Hs, -r)
            alpha = 1.0
            while True:
                trial = x.copy()
                trial[self._v] += alpha * step
                try:
                    r_trial = self.momentum(trial) - p
                    err_trial = float(np.max(np.abs(r_trial)))
                except ArithmeticError:
                    err_trial = np.inf
                if err_trial < (1.0 - 1e-4 * alpha) * err or alpha < 1e-10:
                    break
                alpha *= 0.5
            if not np.isfinite(err_trial):
                raise NewtonDivergence("Legendre inverse left the domain of L", x)
            x, r, err = trial, r_trial, err_trial
        if err <= target:
            return x
        raise NewtonDivergence(f"Legendre inverse did not converge in {self.max_iter} iterations (residual {err:.3g})", x)


def lagrangian_energy(L: ScalarField, chart: ChartSpec, x: np.ndarray) -> float:
    """E_L = qdot . dL/dqdot - L."""
    x = np.asarray(x, dtype=float)
    val, grad = L.value_and_grad(x)
    v = chart.block("p")
    return float(x[v] @ grad[v] - val)


class LegendreHamiltonian:
    """H = E_L o Leg^-1 on the momentum-side chart.

    dH follows from dL at the preimage: dH/dq = -dL/dq, dH/dp = qdot and
    dH/dz = -dL/dz for every other coordinate z.
    """

    names = None

    def __init__(self, legendre: LegendreMap):
        self.legendre = legendre

    def value(self, y: np.ndarray) -> float:
        return self.value_and_grad(y)[0]

    def value_and_grad(self, y: np.ndarray) -> tuple[float, np.ndarray]:
        y = np.asarray(y, dtype=float)
        x = self.legendre.inverse(y)
        L, dL = self.legendre.lagrangian.value_and_grad(x)
        v = self.legendre.chart.block("p")
        grad = -dL
        grad[v] = x[v]
        return float(y[v] @ x[v] - L), grad


@dataclass(frozen=True)
class _Pulled:
    """f o Leg^-1: a velocity-side coefficient read on the momentum side."""

    fn: object
    legendre: LegendreMap

    def __call__(self, y: np.ndarray) -> float:
        return self.fn(self.legendre.inverse(y))

    @property
    def is_zero(self) -> bool:
        return bool(getattr(self.fn, "is_zero", False))


@dataclass(frozen=True)
class LagrangianSystem:
    system_class: SystemClass
    chart: ChartSpec  # velocity side
    lagrangian: ScalarField
    forces: ForceSpec  # F~ = F o Leg, given directly on the velocity side
    fluxes: FluxSpec
    legendre: LegendreMap
    momentum_two_form: np.ndarray

    def evolution_field(self, x: np.ndarray) -> np.ndarray:
        return lagrangian_evolution_field(self, x)

    def energy(self, x: np.ndarray) -> float:
        return lagrangian_energy(self.lagrangian, self.chart, x)

    @property
    def has_external_force(self) -> bool:
        return not all(getattr(f, "is_zero", False) for f in self.forces.external)


def make_lagrangian_system(
    chart: ChartSpec,
    lagrangian: ScalarField,
    forces: ForceSpec | None = None,
    fluxes: FluxSpec | None = None,
) -> LagrangianSystem:
    if not chart.velocity:
        chart = chart.velocity_chart()
    forces, fluxes = validate_specs(chart, getattr(lagrangian, "names", None), forces, fluxes, "Lagrangian")
    leg = LegendreMap(lagrangian, chart)
    return LagrangianSystem(chart.system_class, chart, lagrangian, forces, fluxes, leg,
                            build_two_form(chart.momentum_chart()))


def lagrangian_system_from_expressions(
    system_class: SystemClass | str,
    n: int,
    lagrangian: str,
    *,
    K: int = 0,
    P: int = 1,
    params: Mapping[str, float] | None = None,
    **specs,
) -> LagrangianSystem:
    """Velocity-side analogue of :func:`cosym.systems.system_from_expressions`."""
    ports = specs.get("ports", ())
    sources = specs.get("sources", ())
    chart = ChartSpec.for_class(system_class, n, K=K, P=P, A=len(ports), B=len(sources), velocity=True)
    params = dict(params or {})
    L = ExprScalarField(Expression(lagrangian, list(chart.names) + list(params)), chart, params)
    forces, fluxes = specs_from_expressions(chart, params, **specs)
    return make_lagrangian_system(chart, L, forces, fluxes)


def legendre_forward(lsys: LagrangianSystem, x: np.ndarray) -> np.ndarray:
    return lsys.legendre.forward(x)


def legendre_inverse(lsys: LagrangianSystem, y: np.ndarray) -> np.ndarray:
    return lsys.legendre.inverse(y)


def pullback_two_form(lsys: LagrangianSystem, x: np.ndarray, jacobian: np.ndarray | None = None) -> np.ndarray:
    """Matrix of Leg^* omega at x: J^T W J."""
    J = lsys.legendre.jacobian(x) if jacobian is None else jacobian
    return J.T @ lsys.momentum_two_form @ J


def intrinsic_two_form(lsys: LagrangianSystem, x: np.ndarray) -> np.ndarray:
    """-d(lambda_L) plus the thermodynamic Darboux blocks.

    With lambda_L = (dL/dqdot_i) dq^i this is dq^i ^ d(dL/dqdot_i); the
    differentials of dL/dqdot_i are central differences of the AD gradient.
    """
    chart = lsys.chart
    x = np.asarray(x, dtype=float)
    D = chart.D
    dLv = lsys.legendre._momentum_jacobian(x, range(D))  # (n, D)
    q0 = chart.block("q").start
    Omega = np.zeros((D, D))
    for i in range(chart.n):
        Omega[q0 + i, :] += dLv[i]
        Omega[:, q0 + i] -= dLv[i]
    thermo = lsys.momentum_two_form.copy()
    thermo[chart.block("q"), :] = 0.0
    thermo[:, chart.block("q")] = 0.0
    return Omega + thermo


def two_form_pairing_via_pushforward(lsys: LagrangianSystem, x: np.ndarray, X: np.ndarray, Y: np.ndarray) -> float:
    """omega(TLeg X, TLeg Y) with both pushforwards by directional differences."""
    TX = lsys.legendre.pushforward(x, X)
    TY = lsys.legendre.pushforward(x, Y)
    return float(TX @ lsys.momentum_two_form @ TY)


def lagrangian_terms(lsys: LagrangianSystem, x: np.ndarray, jacobian: np.ndarray | None = None) -> Terms:
    """Per-state coefficients with grad = dE_L and temperatures -dL/dS."""
    chart = lsys.chart
    x = np.asarray(x, dtype=float)
    J = lsys.legendre.jacobian(x) if jacobian is None else jacobian
    _, dL = lsys.lagrangian.value_and_grad(x)
    v = chart.block("p")
    dE = J[v].T @ x[v] - dL
    dE[v] += dL[v]
    temps = -dL[chart.block("S")]
    return collect_terms(chart, lsys.forces, lsys.fluxes, x, dE, temps)


def lagrangian_evolution_field(lsys: LagrangianSystem, x: np.ndarray) -> np.ndarray:
    """Solve flat_L(E_L) = dE_L + sum_k eta_{k,L} - F~_ext (- port power * eta_L)."""
    x = np.asarray(x, dtype=float)
    lsys.legendre.check_regular(x)
    J = lsys.legendre.jacobian(x)
    t = lagrangian_terms(lsys, x, J)
    if np.any(t.temps == 0.0) or not np.all(np.isfinite(t.temps)):
        raise TemperatureDegenerate("dL/dS vanishes; the pulled-back structure is degenerate")
    etas = etas_from_terms(lsys.chart, t)
    op = flat_operator(pullback_two_form(lsys, x, J), etas)
    return flat_solve(op, rhs_from_terms(lsys.chart, t, etas))


def hamiltonian_system(lsys: LagrangianSystem) -> SystemInstance:
    """The momentum-side system with H = E_L o Leg^-1 and F = F~ o Leg^-1."""
    leg = lsys.legendre

    def pull(fn):
        return _Pulled(fn, leg)

    forces = ForceSpec(
        tuple(tuple(pull(f) for f in row) for row in lsys.forces.friction),
        tuple(pull(f) for f in lsys.forces.external),
    )
    fx = lsys.fluxes
    fluxes = FluxSpec(
        {k: pull(f) for k, f in fx.matter.items()},
        {k: pull(f) for k, f in fx.heat.items()},
        tuple(Port(pull(p.flow), pull(p.chemical_potential), pull(p.temperature), pull(p.molar_entropy))
              for p in fx.ports),
        tuple(HeatSource(pull(s.entropy_flow), pull(s.temperature)) for s in fx.sources),
    )
    return make_system(lsys.chart.momentum_chart(), LegendreHamiltonian(leg), forces, fluxes)


def transport_gap(lsys: LagrangianSystem, hsys: SystemInstance, x: np.ndarray) -> float:
    """max |TLeg(E_L(x)) - E_H(Leg(x))|."""
    x = np.asarray(x, dtype=float)
    EL = lagrangian_evolution_field(lsys, x)
    pushed = lsys.legendre.pushforward(x, EL)
    EH = hsys.evolution_field(lsys.legendre.forward(x))
    return float(np.max(np.abs(pushed - EH)))


def lagrangian_equation_residuals(lsys: LagrangianSystem, x: np.ndarray, xdot: np.ndarray | None = None) -> dict[str, float]:
    """Residuals of the Lagrangian-side equations of motion at ``x``.

    ``euler_lagrange`` is d/dt(dL/dqdot) - dL/dq - sum F~_fr - F~_ext with the
    time derivative taken as a directional difference along the field.
    """
    chart = lsys.chart
    cls = chart.system_class
    x = np.asarray(x, dtype=float)
    xdot = lagrangian_evolution_field(lsys, x) if xdot is None else np.asarray(xdot, dtype=float)
    t = lagrangian_terms(lsys, x)
    _, dL = lsys.lagrangian.value_and_grad(x)
    q, v = chart.block("q"), chart.block("p")
    qdot = xdot[q]
    dpdt = lsys.legendre.pushforward(x, xdot)[v]
    out = {
        "euler_lagrange": float(np.max(np.abs(dpdt - dL[q] - t.friction.sum(axis=0) - t.external), initial=0.0)),
        "velocity": float(np.max(np.abs(qdot - x[v]), initial=0.0)),
    }
    LS = dL[chart.block("S")]
    if cls is SystemClass.SIMPLE_CLOSED:
        out["entropy"] = abs(LS[0] * xdot[chart.block("S")][0] - qdot @ t.friction[0])
        return out
    LN = dL[chart.block("N")]
    out["displacement_W"] = float(np.max(np.abs(xdot[chart.block("W")] + LN)))
    if cls is SystemClass.MASS_TRANSFER:
        out["matter"] = float(np.max(np.abs(xdot[chart.block("N")] - t.matter)))
        out["entropy"] = abs(LS[0] * xdot[chart.block("S")][0] - qdot @ t.friction[0] + t.matter @ LN)
        return out
    out["displacement_Gamma"] = float(np.max(np.abs(xdot[chart.block("Gamma")] + LS)))
    Sdot = xdot[chart.block("S")]
    Sigdot = xdot[chart.block("Sigma")]
    if cls is SystemClass.NON_SIMPLE:
        out["matter"] = float(np.max(np.abs(xdot[chart.block("N")] - t.matter)))
        out["gauge"] = float(np.max(np.abs(Sdot - Sigdot)))
        ent = [LS[k] * Sdot[k] - qdot @ t.friction[k] + t.matter[k] * LN[k] + t.heat[k] @ LS
               for k in range(chart.P)]
        out["entropy"] = float(np.max(np.abs(ent)))
        return out
    out["matter"] = abs(xdot[chart.block("N")][0] - t.port_flow)
    out["gauge"] = abs(Sdot[0] - Sigdot[0] - t.entropy_inflow)
    out["entropy"] = abs(LS[0] * Sigdot[0] - (qdot @ t.friction[0] + t.port_flow * xdot[chart.block("W")][0]
                                             + t.entropy_inflow * xdot[chart.block("Gamma")][0] - t.port_power))
    return out
