"""Reference systems and state samplers shared by the test modules."""

from __future__ import annotations

import numpy as np

from cosym.geometry import SystemClass
from cosym.legendre import lagrangian_system_from_expressions
from cosym.systems import system_from_expressions


def damped_oscillator(lam: float = 0.1, T0: float = 1.0):
    return system_from_expressions(
        "simple_closed", 1, "p^2/2 + q^2/2 + T0*S",
        params={"T0": T0, "lam": lam}, friction=[["-lam*p"]],
    )


def rich_simple():
    return system_from_expressions(
        "simple_closed", 2,
        "p1^2/(2*m) + p2^2/2*(1 + q1^2/4) + q1^2/2 + q1*q2/4 + q2^4/4 + exp(S) + S*q2^2/10",
        params={"m": 1.3, "lam": 0.2},
        friction=[["-lam*p1 + q2/10", "-lam*p2*(1 + S^2)"]],
        external=["sin(q1)", "0.3"],
    )


def rich_mass_transfer():
    return system_from_expressions(
        "mass_transfer", 1,
        "p^2/2 + q^2/2 + exp(S)*(1 + N1^2/4) + N2^2/2 + N3^2/3 + q*N1/5",
        K=3, params={"lam": 0.15, "c": 0.4},
        friction=[["-lam*p*(1 + q^2)"]],
        external=["cos(q)/2"],
        # (3, 1) exercises the stored mirror of J_{1,3}
        matter={(1, 2): "c*(N1 - N2)", (3, 1): "c*N3*exp(-S)", (2, 3): "0.2*sin(q + N2)"},
    )


def rich_non_simple(P: int = 3):
    energy = " + ".join(f"exp(S{a})*(1 + N{a}^2/8)" for a in range(1, P + 1))
    heat = {}
    for a in range(1, P + 1):
        for b in range(1, P + 1):
            if a != b:
                heat[(a, b)] = f"-0.{a + b}*(1 + q^2/{a + b})"
    matter = {(1, 2): "0.3*(N1 - N2)"}
    if P >= 3:
        matter[(3, 2)] = "0.1*exp(S3)*N3"
    friction = [[f"-0.{a}*p"] for a in range(1, P + 1)]
    return system_from_expressions(
        "non_simple", 1, f"p^2/2 + q^2/2 + q*S1/10 + {energy}", P=P,
        friction=friction, external=["0.2*q"], matter=matter, heat=heat,
    )


def rich_open():
    return system_from_expressions(
        "open_simple", 1, "p^2/2 + q^2/2 + exp(S)*(1 + N^2/4) + N^2",
        params={"lam": 0.1},
        friction=[["-lam*p"]],
        external=["0.1*sin(q)"],
        ports=[
            {"flow": "0.5*(1.5 - N)", "chemical_potential": "1.5", "temperature": "1.2 + q^2",
             "molar_entropy": "0.3"},
            {"flow": "-0.2*N*exp(S)", "chemical_potential": "2*N + q", "temperature": "exp(S)",
             "molar_entropy": "0.1 + S^2"},
        ],
        sources=[{"entropy_flow": "0.4*(2 - exp(S))/2", "temperature": "2.0"}],
    )


RICH = {
    SystemClass.SIMPLE_CLOSED: rich_simple,
    SystemClass.MASS_TRANSFER: rich_mass_transfer,
    SystemClass.NON_SIMPLE: rich_non_simple,
    SystemClass.OPEN_SIMPLE: rich_open,
}


def random_state(chart, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return rng.uniform(-scale, scale, chart.D)


LAGRANGIANS = {
    "quadratic": ("qdot^2/2 - q^2/2 - T0*S", "-lam*qdot"),
    "cosh": ("cosh(qdot) - q^2/2 - T0*S", "-lam*sinh(qdot)"),
    "position_mass": ("(1 + q^2/2)*qdot^2/2 - q^2/2 - T0*S", "-lam*qdot*(1 + q^2/2)"),
}


def lagrangian(kind: str, lam: float = 0.1, T0: float = 1.0):
    L, fr = LAGRANGIANS[kind]
    return lagrangian_system_from_expressions(
        "simple_closed", 1, L, params={"T0": T0, "lam": lam}, friction=[[fr]])


def closed_form_hamiltonian(kind: str, q: float, p: float, S: float, T0: float = 1.0) -> float:
    if kind == "quadratic":
        return p * p / 2 + q * q / 2 + T0 * S
    if kind == "cosh":
        return p * np.arcsinh(p) - np.sqrt(1 + p * p) + q * q / 2 + T0 * S
    m = 1 + q * q / 2
    return p * p / (2 * m) + q * q / 2 + T0 * S
