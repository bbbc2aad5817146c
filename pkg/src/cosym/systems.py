"""The four thermodynamic system classes and their evolution fields.

A :class:`SystemInstance` bundles a chart, the Darboux two-form, a
Hamiltonian and the force/flux coefficient functions.  At a state ``x`` it
produces the eta covectors, the right-hand side ``dH + sum_k eta_k - F_ext``
(minus the port power times eta for open systems) and solves the flat
equation for the evolution vector field.

:func:`explicit_rhs_oracle` evaluates the closed-form equations of motion of
each class directly, without any linear algebra, and is used to cross-check
:func:`evolution_field`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .errors import LayoutMismatch, TemperatureDegenerate
from .expr import DualNumber, Expression
from .geometry import ChartSpec, SystemClass, build_two_form, flat_operator, flat_solve

__all__ = [
    "StateFunction",
    "ScalarField",
    "ConstantFunction",
    "ExprFunction",
    "ExprScalarField",
    "ForceSpec",
    "Port",
    "HeatSource",
    "FluxSpec",
    "SystemInstance",
    "EXCLUDED_FROM_HAMILTONIAN",
    "make_system",
    "validate_specs",
    "system_from_expressions",
    "specs_from_expressions",
    "build_etas",
    "assemble_rhs",
    "evolution_field",
    "explicit_rhs_oracle",
    "entropy_identity_residual",
    "entropy_identity_check",
    "energy_balance_residual",
    "entropy_bookkeeping_residual",
    "matter_flux_covector",
    "force_covectors",
    "temperatures",
    "total_entropy",
]


class StateFunction(Protocol):
    def __call__(self, x: np.ndarray) -> float: ...


class ScalarField(Protocol):
    """Differentiable scalar on a chart.  ``names`` is None when unknown."""

    names: frozenset[str] | None

    def value(self, x: np.ndarray) -> float: ...

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True)
class ConstantFunction:
    c: float = 0.0

    def __call__(self, x: np.ndarray) -> float:
        return self.c

    @property
    def is_zero(self) -> bool:
        return self.c == 0.0


class ExprFunction:
    """Value-only evaluation of an expression at chart states."""

    def __init__(self, expr: Expression | str, chart: ChartSpec, params: Mapping[str, float] | None = None):
        params = dict(params or {})
        if isinstance(expr, str):
            expr = Expression(expr, list(chart.names) + list(params))
        self.expr = expr
        self.chart = chart
        self.params = params
        self._slots = [(nm, i) for i, nm in enumerate(chart.names) if nm in expr.names]

    def __repr__(self) -> str:
        return f"ExprFunction({self.expr.src!r})"

    @property
    def is_zero(self) -> bool:
        return self.expr.is_constant and self.expr.value({}) == 0.0

    def __call__(self, x: np.ndarray) -> float:
        env = dict(self.params)
        for nm, i in self._slots:
            env[nm] = float(x[i])
        return self.expr.value(env)


class ExprScalarField:
    """Expression-backed scalar with exact gradients over every chart coordinate."""

    def __init__(self, expr: Expression | str, chart: ChartSpec, params: Mapping[str, float] | None = None):
        params = dict(params or {})
        if isinstance(expr, str):
            expr = Expression(expr, list(chart.names) + list(params))
        self.expr = expr
        self.chart = chart
        self.params = params
        self.names = frozenset(expr.names) - frozenset(params)
        D = chart.D
        self._slots = [(nm, i) for i, nm in enumerate(chart.names) if nm in expr.names]
        self._units = {i: np.eye(D)[i] for _, i in self._slots}
        self._const_env = {k: DualNumber(v) for k, v in params.items()}

    def __repr__(self) -> str:
        return f"ExprScalarField({self.expr.src!r})"

    def value(self, x: np.ndarray) -> float:
        env = dict(self.params)
        for nm, i in self._slots:
            env[nm] = float(x[i])
        return self.expr.value(env)

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        env = dict(self._const_env)
        for nm, i in self._slots:
            env[nm] = DualNumber(float(x[i]), self._units[i])
        out = self.expr.dual(env)
        return out.value, out.gradient(self.chart.D)


@dataclass(frozen=True)
class ForceSpec:
    """Semibasic forces.  ``friction[k][i]`` is F^fr_{k,i}; one row per eta."""

    friction: tuple[tuple[StateFunction, ...], ...]
    external: tuple[StateFunction, ...]


@dataclass(frozen=True)
class Port:
    flow: StateFunction  # molar flow rate J^a into the system
    chemical_potential: StateFunction  # mu^a
    temperature: StateFunction  # T^a
    molar_entropy: StateFunction  # S^a; the entropy flow J^a_S = J^a S^a is derived


@dataclass(frozen=True)
class HeatSource:
    entropy_flow: StateFunction  # J^b_S
    temperature: StateFunction  # T^b


@dataclass(frozen=True)
class FluxSpec:
    """Matter and heat fluxes, stored so their structural constraints hold.

    ``matter`` maps 0-based ``(l, k)`` with ``l < k`` to J_{l,k}; the mirrored
    entry is implied.  ``heat`` maps off-diagonal ``(A, B)`` to J_AB; the
    diagonal is minus the off-diagonal column sum.
    """

    matter: Mapping[tuple[int, int], StateFunction] = field(default_factory=dict)
    heat: Mapping[tuple[int, int], StateFunction] = field(default_factory=dict)
    ports: tuple[Port, ...] = ()
    sources: tuple[HeatSource, ...] = ()

    def matter_vector(self, x: np.ndarray, K: int) -> np.ndarray:
        """J_k = sum_l J_{l,k}."""
        out = np.zeros(K)
        for (l, k), fn in self.matter.items():
            c = fn(x)
            out[k] += c
            out[l] -= c
        return out

    def heat_matrix(self, x: np.ndarray, P: int) -> np.ndarray:
        J = np.zeros((P, P))
        for (a, b), fn in self.heat.items():
            J[a, b] = fn(x)
        J[np.diag_indices(P)] = 0.0
        J[np.diag_indices(P)] = -J.sum(axis=0)
        return J


EXCLUDED_FROM_HAMILTONIAN = {
    SystemClass.SIMPLE_CLOSED: (),
    SystemClass.MASS_TRANSFER: ("W",),
    SystemClass.NON_SIMPLE: ("W", "Gamma", "Sigma"),
    SystemClass.OPEN_SIMPLE: ("W", "Gamma", "Sigma"),
}


@dataclass(frozen=True)
class SystemInstance:
    system_class: SystemClass
    chart: ChartSpec
    hamiltonian: ScalarField
    forces: ForceSpec
    fluxes: FluxSpec
    two_form: np.ndarray

    def evolution_field(self, x: np.ndarray) -> np.ndarray:
        return evolution_field(self, x)

    def energy(self, x: np.ndarray) -> float:
        return self.hamiltonian.value(x)

    @property
    def has_external_force(self) -> bool:
        return not all(getattr(f, "is_zero", False) for f in self.forces.external)


def make_system(
    chart: ChartSpec,
    hamiltonian: ScalarField,
    forces: ForceSpec | None = None,
    fluxes: FluxSpec | None = None,
) -> SystemInstance:
    """Assemble and validate a :class:`SystemInstance`."""
    if chart.velocity:
        raise LayoutMismatch("Hamiltonian systems live on the momentum-side chart")
    forces, fluxes = validate_specs(chart, getattr(hamiltonian, "names", None), forces, fluxes, "Hamiltonian")
    return SystemInstance(chart.system_class, chart, hamiltonian, forces, fluxes, build_two_form(chart))


def validate_specs(
    chart: ChartSpec,
    energy_names: frozenset[str] | None,
    forces: ForceSpec | None,
    fluxes: FluxSpec | None,
    what: str = "Hamiltonian",
) -> tuple[ForceSpec, FluxSpec]:
    """Check counts, index ranges and the displacement-independence rule."""
    cls = chart.system_class
    n, p = chart.n, chart.n_etas
    zero = ConstantFunction(0.0)
    if forces is None:
        forces = ForceSpec(tuple((zero,) * n for _ in range(p)), (zero,) * n)
    fluxes = fluxes or FluxSpec()
    if len(forces.friction) != p:
        raise LayoutMismatch(f"{cls.value} needs {p} friction force(s), got {len(forces.friction)}")
    for row in forces.friction:
        if len(row) != n:
            raise LayoutMismatch(f"friction forces need exactly n={n} components")
    if len(forces.external) != n:
        raise LayoutMismatch(f"external force needs exactly n={n} components")
    if energy_names is not None:
        banned = {nm for b in EXCLUDED_FROM_HAMILTONIAN[cls] for nm in chart.block_names(b)}
        bad = sorted(energy_names & banned)
        if bad:
            raise LayoutMismatch(
                f"the {what} must be independent of the thermodynamic displacements; it references {bad}"
            )
    K = chart.K
    if fluxes.matter and cls not in (SystemClass.MASS_TRANSFER, SystemClass.NON_SIMPLE):
        raise LayoutMismatch(f"{cls.value} has no internal matter transfer")
    for (l, k) in fluxes.matter:
        if not (0 <= l < k < K):
            raise LayoutMismatch(f"matter flux index ({l}, {k}) must satisfy 0 <= l < k < K")
    if fluxes.heat and cls is not SystemClass.NON_SIMPLE:
        raise LayoutMismatch(f"{cls.value} has no heat conduction matrix")
    for (a, b) in fluxes.heat:
        if a == b or not (0 <= a < chart.P and 0 <= b < chart.P):
            raise LayoutMismatch(f"heat flux index ({a}, {b}) must be off-diagonal and < P")
    if cls is SystemClass.OPEN_SIMPLE:
        if len(fluxes.ports) != chart.A or len(fluxes.sources) != chart.B:
            raise LayoutMismatch(f"expected {chart.A} port(s) and {chart.B} heat source(s)")
    elif fluxes.ports or fluxes.sources:
        raise LayoutMismatch(f"{cls.value} is adiabatically closed; ports and heat sources are not allowed")
    return forces, fluxes


def system_from_expressions(
    system_class: SystemClass | str,
    n: int,
    hamiltonian: str,
    *,
    K: int = 0,
    P: int = 1,
    params: Mapping[str, float] | None = None,
    friction: Sequence[Sequence[str]] | None = None,
    external: Sequence[str] | None = None,
    matter: Mapping[tuple[int, int], str] | None = None,
    heat: Mapping[tuple[int, int], str] | None = None,
    ports: Sequence[Mapping[str, str]] = (),
    sources: Sequence[Mapping[str, str]] = (),
) -> SystemInstance:
    """Build a system from expression strings.  Flux indices are 1-based.

    ``matter[(l, k)]`` is J_{l,k}; giving both (l, k) and (k, l) is an error.
    ``ports`` entries have keys flow, chemical_potential, temperature,
    molar_entropy; ``sources`` entries have entropy_flow, temperature.
    """
    chart = ChartSpec.for_class(system_class, n, K=K, P=P, A=len(ports), B=len(sources))
    params = dict(params or {})
    H = ExprScalarField(Expression(hamiltonian, list(chart.names) + list(params)), chart, params)
    forces, fluxes = specs_from_expressions(
        chart, params, friction=friction, external=external, matter=matter, heat=heat, ports=ports, sources=sources)
    return make_system(chart, H, forces, fluxes)


def specs_from_expressions(
    chart: ChartSpec,
    params: Mapping[str, float],
    *,
    friction: Sequence[Sequence[str]] | None = None,
    external: Sequence[str] | None = None,
    matter: Mapping[tuple[int, int], str] | None = None,
    heat: Mapping[tuple[int, int], str] | None = None,
    ports: Sequence[Mapping[str, str]] = (),
    sources: Sequence[Mapping[str, str]] = (),
) -> tuple[ForceSpec, FluxSpec]:
    """Force and flux specs over ``chart`` from expression strings (1-based flux indices)."""
    n = chart.n
    vocab = list(chart.names) + list(params)

    def fn(src: str) -> ExprFunction:
        return ExprFunction(Expression(str(src), vocab), chart, params)

    zero = ConstantFunction(0.0)
    fr = tuple(tuple(fn(s) for s in row) for row in friction) if friction is not None else tuple(
        (zero,) * n for _ in range(chart.n_etas))
    ext = tuple(fn(s) for s in external) if external is not None else (zero,) * n
    stored: dict[tuple[int, int], StateFunction] = {}
    for (l, k), src in (matter or {}).items():
        if l == k:
            raise LayoutMismatch("matter flux J_{k,k} is zero by antisymmetry and cannot be given")
        key = (min(l, k) - 1, max(l, k) - 1)
        if key in stored:
            raise LayoutMismatch(f"matter flux between {l} and {k} given twice; antisymmetry fixes the mirror")
        f = fn(src)
        stored[key] = f if l < k else _Negated(f)
    hm = {(a - 1, b - 1): fn(src) for (a, b), src in (heat or {}).items()}
    pts = tuple(
        Port(fn(d["flow"]), fn(d["chemical_potential"]), fn(d["temperature"]), fn(d["molar_entropy"])) for d in ports
    )
    srcs = tuple(HeatSource(fn(d["entropy_flow"]), fn(d["temperature"])) for d in sources)
    return ForceSpec(fr, ext), FluxSpec(stored, hm, pts, srcs)


@dataclass(frozen=True)
class _Negated:
    inner: StateFunction

    def __call__(self, x: np.ndarray) -> float:
        return -self.inner(x)


# ---------------------------------------------------------------------------
# Per-state terms
# ---------------------------------------------------------------------------


@dataclass
class Terms:
    """Every coefficient entering the eta forms and the right-hand side at one state.

    The Lagrangian side fills the same record from L (with temperatures
    -dL/dS) so both sides share the assembly code below.
    """

    grad: np.ndarray  # dH (or dE_L)
    temps: np.ndarray  # one per eta
    friction: np.ndarray  # (p, n)
    external: np.ndarray  # (n,)
    matter: np.ndarray  # (K,) J_k
    heat: np.ndarray  # (P, P) J_AB for non_simple, else empty
    port_flow: float = 0.0  # sum_a J^a
    entropy_inflow: float = 0.0  # sum_a J^a S^a + sum_b J^b_S
    port_power: float = 0.0  # sum_a (J^a mu^a + J^a_S T^a) + sum_b J^b_S T^b


def _temperature_slice(chart: ChartSpec) -> slice:
    return chart.block("S")


def collect_terms(
    chart: ChartSpec,
    forces: ForceSpec,
    fluxes: FluxSpec,
    x: np.ndarray,
    grad: np.ndarray,
    temps: np.ndarray,
) -> Terms:
    cls = chart.system_class
    friction = np.array([[f(x) for f in row] for row in forces.friction], dtype=float).reshape(chart.n_etas, chart.n)
    external = np.array([f(x) for f in forces.external], dtype=float)
    matter = fluxes.matter_vector(x, chart.K) if chart.K else np.zeros(0)
    heat = fluxes.heat_matrix(x, chart.P) if cls is SystemClass.NON_SIMPLE else np.zeros((0, 0))
    t = Terms(grad, temps, friction, external, matter, heat)
    if cls is SystemClass.OPEN_SIMPLE:
        for port in fluxes.ports:
            flow = port.flow(x)
            js = flow * port.molar_entropy(x)
            t.port_flow += flow
            t.entropy_inflow += js
            t.port_power += flow * port.chemical_potential(x) + js * port.temperature(x)
        for src in fluxes.sources:
            js = src.entropy_flow(x)
            t.entropy_inflow += js
            t.port_power += js * src.temperature(x)
    return t


def hamiltonian_terms(sys: SystemInstance, x: np.ndarray) -> Terms:
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.chart.D,):
        raise LayoutMismatch(f"state has shape {x.shape}, expected ({sys.chart.D},)")
    _, grad = sys.hamiltonian.value_and_grad(x)
    return collect_terms(sys.chart, sys.forces, sys.fluxes, x, grad, grad[_temperature_slice(sys.chart)].copy())


def etas_from_terms(chart: ChartSpec, t: Terms) -> list[np.ndarray]:
    cls = chart.system_class
    D = chart.D
    q = chart.block("q")
    if cls is SystemClass.NON_SIMPLE:
        W0 = chart.block("W").start
        G = chart.block("Gamma")
        Sig0 = chart.block("Sigma").start
        out = []
        for a in range(chart.P):
            eta = np.zeros(D)
            eta[Sig0 + a] = -t.temps[a]
            eta[q] -= t.friction[a]
            eta[W0 + a] -= t.matter[a]
            eta[G] -= t.heat[a]
            out.append(eta)
        return out
    eta = np.zeros(D)
    eta[q] -= t.friction[0]
    if cls is SystemClass.OPEN_SIMPLE:
        eta[chart.block("Sigma")] = -t.temps[0]
        eta[chart.block("W")] -= t.port_flow
        eta[chart.block("Gamma")] -= t.entropy_inflow
    else:
        eta[chart.block("S")] = -t.temps[0]
        if cls is SystemClass.MASS_TRANSFER:
            eta[chart.block("W")] -= t.matter
    return [eta]


def rhs_from_terms(chart: ChartSpec, t: Terms, etas: Sequence[np.ndarray]) -> np.ndarray:
    rhs = np.array(t.grad, dtype=float)
    for eta in etas:
        rhs += eta
    rhs[chart.block("q")] -= t.external
    if chart.system_class is SystemClass.OPEN_SIMPLE:
        rhs -= t.port_power * etas[0]
    return rhs


def _check_temperatures(temps: np.ndarray) -> None:
    bad = [i for i, T in enumerate(temps) if not np.isfinite(T) or T == 0.0]
    if bad:
        raise TemperatureDegenerate(
            f"temperature dH/dS vanishes for eta index {bad}; the structure is degenerate at this state")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def temperatures(sys: SystemInstance, x: np.ndarray) -> np.ndarray:
    _, grad = sys.hamiltonian.value_and_grad(np.asarray(x, dtype=float))
    return grad[_temperature_slice(sys.chart)].copy()


def build_etas(sys: SystemInstance, x: np.ndarray) -> list[np.ndarray]:
    return etas_from_terms(sys.chart, hamiltonian_terms(sys, x))


def assemble_rhs(sys: SystemInstance, x: np.ndarray) -> np.ndarray:
    t = hamiltonian_terms(sys, x)
    return rhs_from_terms(sys.chart, t, etas_from_terms(sys.chart, t))


def evolution_field(sys: SystemInstance, x: np.ndarray) -> np.ndarray:
    """Solve flat(E_H) = dH + sum_k eta_k - F_ext (- port power * eta) at ``x``."""
    t = hamiltonian_terms(sys, x)
    _check_temperatures(t.temps)
    etas = etas_from_terms(sys.chart, t)
    op = flat_operator(sys.two_form, etas)
    return flat_solve(op, rhs_from_terms(sys.chart, t, etas))


def matter_flux_covector(sys: SystemInstance, x: np.ndarray) -> np.ndarray:
    """The one-form sum_k J_k dW^k."""
    out = np.zeros(sys.chart.D)
    if sys.chart.K and sys.fluxes.matter:
        out[sys.chart.block("W")] = sys.fluxes.matter_vector(np.asarray(x, dtype=float), sys.chart.K)
    return out


def force_covectors(sys: SystemInstance, x: np.ndarray) -> list[np.ndarray]:
    """Friction covectors (one per eta) followed by the external force."""
    x = np.asarray(x, dtype=float)
    out = []
    q = sys.chart.block("q")
    for row in list(sys.forces.friction) + [sys.forces.external]:
        c = np.zeros(sys.chart.D)
        c[q] = [f(x) for f in row]
        out.append(c)
    return out


def explicit_rhs_oracle(sys: SystemInstance, x: np.ndarray, entropy_divisor: str = "matching") -> np.ndarray:
    """Closed-form equations of motion for each class, with no linear solve.

    For non_simple systems the entropy equation of subsystem k is divided by
    dH/dS_k (``entropy_divisor="matching"``).  ``"total"`` divides every row
    by sum_A dH/dS_A instead, i.e. the derivative of H along a common shift
    of all entropies; it only agrees with the field when all temperatures
    are equal.
    """
    chart = sys.chart
    cls = chart.system_class
    x = np.asarray(x, dtype=float)
    t = hamiltonian_terms(sys, x)
    g = t.grad
    _check_temperatures(t.temps)
    out = np.zeros(chart.D)
    q, p = chart.block("q"), chart.block("p")
    Hq, Hp = g[q], g[p]
    out[q] = Hp
    out[p] = -Hq + t.friction.sum(axis=0) + t.external
    if cls is SystemClass.SIMPLE_CLOSED:
        out[chart.block("S")] = -(Hp @ t.friction[0]) / t.temps[0]
    elif cls is SystemClass.MASS_TRANSFER:
        mu = g[chart.block("N")]
        out[chart.block("W")] = mu
        out[chart.block("N")] = t.matter
        out[chart.block("S")] = -(Hp @ t.friction[0] + t.matter @ mu) / t.temps[0]
    elif cls is SystemClass.NON_SIMPLE:
        mu = g[chart.block("N")]
        T = t.temps
        out[chart.block("W")] = mu
        out[chart.block("N")] = t.matter
        out[chart.block("Gamma")] = T
        if entropy_divisor == "matching":
            divisor = T
        elif entropy_divisor == "total":
            divisor = np.full_like(T, T.sum())
        else:
            raise ValueError(f"unknown entropy_divisor {entropy_divisor!r}")
        sdot = np.array([
            -(Hp @ t.friction[k] + t.matter[k] * mu[k] + t.heat[k] @ T) / divisor[k] for k in range(chart.P)
        ])
        out[chart.block("S")] = sdot
        out[chart.block("Sigma")] = sdot
    else:
        T = t.temps[0]
        Wdot = g[chart.block("N")][0]
        Gdot = T
        out[chart.block("W")] = Wdot
        out[chart.block("N")] = t.port_flow
        out[chart.block("Gamma")] = Gdot
        sigma_dot = -(Hp @ t.friction[0] + t.port_flow * Wdot + t.entropy_inflow * Gdot - t.port_power) / T
        out[chart.block("Sigma")] = sigma_dot
        out[chart.block("S")] = sigma_dot + t.entropy_inflow
    return out


def _entropy_terms(sys: SystemInstance, x: np.ndarray, xdot: np.ndarray, heat_form: str) -> list[list[float]]:
    chart = sys.chart
    cls = chart.system_class
    t = hamiltonian_terms(sys, x)
    xdot = np.asarray(xdot, dtype=float)
    qdot = xdot[chart.block("q")]
    if cls is SystemClass.SIMPLE_CLOSED:
        sdot = xdot[chart.block("S")][0]
        return [[-t.temps[0] * sdot, -(qdot @ t.friction[0])]]
    if cls is SystemClass.MASS_TRANSFER:
        sdot = xdot[chart.block("S")][0]
        mu = t.grad[chart.block("N")]
        return [[-t.temps[0] * sdot, -(qdot @ t.friction[0]), -(t.matter @ mu)]]
    if cls is SystemClass.NON_SIMPLE:
        mu = t.grad[chart.block("N")]
        T = t.temps
        sdot = xdot[chart.block("S")]
        rows = []
        for k in range(chart.P):
            if heat_form == "absolute":
                heat = t.heat[k] @ T
            elif heat_form == "difference":
                heat = t.heat[k] @ (T - T[k])
            else:
                raise ValueError(f"unknown heat_form {heat_form!r}")
            rows.append([-T[k] * sdot[k], -(qdot @ t.friction[k]), -heat, -t.matter[k] * mu[k]])
        return rows
    sigma_dot = xdot[chart.block("Sigma")][0]
    Wdot = xdot[chart.block("W")][0]
    Gdot = xdot[chart.block("Gamma")][0]
    return [[
        -t.temps[0] * sigma_dot,
        -(qdot @ t.friction[0]),
        -t.port_flow * Wdot,
        -t.entropy_inflow * Gdot,
        t.port_power,
    ]]


def entropy_identity_check(
    sys: SystemInstance, x: np.ndarray, xdot: np.ndarray, heat_form: str = "absolute"
) -> tuple[np.ndarray, np.ndarray]:
    """Per-eta entropy-balance residuals and the magnitudes of their terms.

    ``heat_form="absolute"`` uses sum_A J_kA T^A, which follows from the
    equations of motion for any J with zero column sums.  ``"difference"``
    uses sum_A J_kA (T^A - T^k); the two agree when J also has zero row sums.
    """
    rows = _entropy_terms(sys, x, xdot, heat_form)
    res = np.array([sum(r) for r in rows])
    scale = np.array([sum(abs(v) for v in r) for r in rows])
    return res, scale


def entropy_identity_residual(
    sys: SystemInstance, x: np.ndarray, xdot: np.ndarray, heat_form: str = "absolute"
) -> list[float]:
    return [float(r) for r in entropy_identity_check(sys, x, xdot, heat_form)[0]]


def energy_balance_residual(sys: SystemInstance, x: np.ndarray, xdot: np.ndarray) -> float:
    """dH(xdot) - (F_ext(qdot) + port power); zero along the evolution field."""
    t = hamiltonian_terms(sys, x)
    qdot = np.asarray(xdot)[sys.chart.block("q")]
    return float(t.grad @ xdot - (t.external @ qdot + t.port_power))


def power_input(sys: SystemInstance, x: np.ndarray, xdot: np.ndarray) -> float:
    t = hamiltonian_terms(sys, x)
    return float(t.external @ np.asarray(xdot)[sys.chart.block("q")] + t.port_power)


def entropy_bookkeeping_residual(sys: SystemInstance, x: np.ndarray, xdot: np.ndarray) -> float:
    """Open systems: (dS/dt - dSigma/dt) - (sum_a J^a_S + sum_b J^b_S)."""
    chart = sys.chart
    if chart.system_class is not SystemClass.OPEN_SIMPLE:
        return 0.0
    t = hamiltonian_terms(sys, x)
    xdot = np.asarray(xdot)
    return float(xdot[chart.block("S")][0] - xdot[chart.block("Sigma")][0] - t.entropy_inflow)


def total_entropy(chart: ChartSpec, x: np.ndarray) -> float:
    return float(np.sum(np.asarray(x)[chart.block("S")]))


def friction_power(sys: SystemInstance, x: np.ndarray, xdot: np.ndarray) -> np.ndarray:
    """<F^fr_k, qdot> for every eta."""
    t = hamiltonian_terms(sys, x)
    return t.friction @ np.asarray(xdot)[sys.chart.block("q")]
