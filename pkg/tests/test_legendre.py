import numpy as np
import pytest

from cosym.dynamics import IntegratorConfig, integrate
from cosym.errors import NewtonDivergence, SingularLegendre
from cosym.legendre import (
    LegendreMap,
    hamiltonian_system,
    intrinsic_two_form,
    lagrangian_equation_residuals,
    lagrangian_energy,
    lagrangian_evolution_field,
    lagrangian_system_from_expressions,
    pullback_two_form,
    transport_gap,
    two_form_pairing_via_pushforward,
)

from _builders import LAGRANGIANS, closed_form_hamiltonian, lagrangian


def test_quadratic_forward_is_identity_on_momenta():
    ls = lagrangian("quadratic")
    x = np.array([0.3, -0.7, 0.2])
    np.testing.assert_allclose(ls.legendre.forward(x), x, atol=1e-14)
    np.testing.assert_allclose(ls.legendre.inverse(x), x, atol=1e-14)


def test_cosh_inverse_is_asinh():
    ls = lagrangian("cosh")
    for p in (-3.0, -0.4, 0.0, 0.9, 5.0):
        x = ls.legendre.inverse(np.array([0.2, p, 0.1]))
        assert x[1] == pytest.approx(np.arcsinh(p), abs=1e-12)
        assert ls.legendre.forward(x)[1] == pytest.approx(p, abs=1e-12)


def test_newton_gives_up_when_capped():
    ls = lagrangian("cosh")
    capped = LegendreMap(ls.lagrangian, ls.chart, max_iter=1)
    with pytest.raises(NewtonDivergence) as info:
        capped.inverse(np.array([0.0, 40.0, 0.0]))
    assert info.value.last_iterate is not None


def test_quartic_lagrangian_is_singular_at_rest():
    ls = lagrangian_system_from_expressions("simple_closed", 1, "qdot^4 - q^2/2 - S")
    with pytest.raises(SingularLegendre):
        ls.legendre.forward(np.array([0.0, 0.0, 0.0]))
    with pytest.raises(SingularLegendre):
        lagrangian_evolution_field(ls, np.array([0.0, 0.0, 0.0]))


@pytest.mark.parametrize("kind", sorted(LAGRANGIANS))
def test_numeric_hamiltonian_matches_closed_form(kind, rng):
    ls = lagrangian(kind)
    hs = hamiltonian_system(ls)
    for _ in range(30):
        y = rng.uniform(-1.5, 1.5, 3)
        assert hs.energy(y) == pytest.approx(closed_form_hamiltonian(kind, *y), abs=1e-10)
        # dH/dS = -dL/dS at mapped points
        x = ls.legendre.inverse(y)
        _, dH = hs.hamiltonian.value_and_grad(y)
        _, dL = ls.lagrangian.value_and_grad(x)
        assert dH[2] == pytest.approx(-dL[2], abs=1e-14)


def test_energy_of_quadratic_lagrangian():
    ls = lagrangian("quadratic")
    assert lagrangian_energy(ls.lagrangian, ls.chart, np.array([1.0, 2.0, 3.0])) == pytest.approx(2 + 0.5 + 3)


def test_quadratic_without_forces_is_canonical():
    ls = lagrangian_system_from_expressions("simple_closed", 1, "qdot^2/2 - q^2/2 - S")
    f = ls.evolution_field(np.array([0.4, 0.9, 0.0]))
    np.testing.assert_allclose(f, [0.9, -0.4, 0.0], atol=1e-9)


@pytest.mark.parametrize("kind", sorted(LAGRANGIANS))
def test_pullback_matches_intrinsic_and_pushforwards(kind, rng):
    ls = lagrangian(kind)
    for _ in range(20):
        x = rng.uniform(-1, 1, 3)
        Om = pullback_two_form(ls, x)
        np.testing.assert_allclose(Om, intrinsic_two_form(ls, x), atol=1e-6)
        X, Y = rng.normal(size=3), rng.normal(size=3)
        assert two_form_pairing_via_pushforward(ls, x, X, Y) == pytest.approx(X @ Om @ Y, abs=1e-6)


@pytest.mark.parametrize("kind", sorted(LAGRANGIANS))
def test_transport_identity(kind, rng):
    ls = lagrangian(kind)
    hs = hamiltonian_system(ls)
    for _ in range(20):
        assert transport_gap(ls, hs, rng.uniform(-1, 1, 3)) < 1e-8


def _other_class_lagrangians():
    mt = lagrangian_system_from_expressions(
        "mass_transfer", 1, "qdot^2/2*(1 + q^2/4) - q^2/2 - T0*S - N1^2/2 - N2^2/4", K=2,
        params={"T0": 1.5}, friction=[["-0.2*qdot"]], matter={(1, 2): "0.3*(N1 - N2/2)"})
    ns = lagrangian_system_from_expressions(
        "non_simple", 1, "cosh(qdot) - q^2/2 - exp(S1) - 2*exp(S2) - N1^2/2 - N2^2/2", P=2,
        friction=[["-0.1*qdot"], ["-0.05*qdot"]], heat={(1, 2): "-0.4", (2, 1): "-0.4"},
        matter={(1, 2): "0.2*(N1 - N2)"})
    op = lagrangian_system_from_expressions(
        "open_simple", 1, "qdot^2/2 - q^2/2 - exp(S) - N^2/2", friction=[["-0.1*qdot"]],
        ports=[{"flow": "0.5*(1.5 - N)", "chemical_potential": "1.5", "temperature": "1.2",
                "molar_entropy": "0.3"}],
        sources=[{"entropy_flow": "0.2", "temperature": "2"}])
    return {"mass_transfer": mt, "non_simple": ns, "open_simple": op}


@pytest.mark.parametrize("name", ["mass_transfer", "non_simple", "open_simple"])
def test_transport_identity_other_classes(name, rng):
    ls = _other_class_lagrangians()[name]
    hs = hamiltonian_system(ls)
    for _ in range(10):
        x = rng.uniform(-1, 1, ls.chart.D)
        assert transport_gap(ls, hs, x) < 1e-8
        res = lagrangian_equation_residuals(ls, x)
        assert max(res.values()) < 1e-6, res


@pytest.mark.parametrize("kind", sorted(LAGRANGIANS))
def test_lagrangian_equations_along_trajectory(kind):
    ls = lagrangian(kind)
    traj = integrate(ls, [0.5, 0.8, 0.0], IntegratorConfig("rk4", 2e-2, 2.0))
    for x in traj.states[::10]:
        assert max(lagrangian_equation_residuals(ls, x).values()) < 1e-6


def test_velocity_chart_required():
    ls = lagrangian("quadratic")
    with pytest.raises(ValueError):
        LegendreMap(ls.lagrangian, ls.chart.momentum_chart())
