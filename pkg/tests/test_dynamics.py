import dataclasses

import numpy as np
import pytest

from cosym.dynamics import (
    DEFAULT_TOLERANCES,
    IntegratorConfig,
    Trajectory,
    check_invariants,
    energy_balance_scores,
    integrate,
)
from cosym.errors import DegenerateStructure, NonFiniteState, StepFailure
from cosym.geometry import SystemClass
from cosym.systems import SystemInstance, system_from_expressions

from _builders import RICH, lagrangian, rich_non_simple


@pytest.mark.parametrize(
    "kwargs",
    [dict(scheme="euler"), dict(dt=0.0), dict(dt=2.0, t_end=1.0), dict(t_end=-1.0), dict(rel_tol=0.0),
     dict(max_steps=0)],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        IntegratorConfig(**kwargs)


def test_scheme_alias():
    assert IntegratorConfig("rk45-adaptive").scheme == "rk45"


def test_damped_oscillator_behaviour(damped_trajectory):
    tr = damped_trajectory
    H = tr.diagnostics["energy"]
    assert np.max(np.abs(H - H[0])) < 1e-8
    assert np.all(np.diff(tr.column("S")) >= -1e-10)
    amp = tr.column("q") ** 2 + tr.column("p") ** 2
    assert amp[-1] < 0.5 * amp[0]
    assert tr.times[-1] == pytest.approx(10.0) and np.all(np.diff(tr.times) > 0)
    # heat gained equals mechanical energy lost
    assert tr.column("S")[-1] == pytest.approx(0.5 * (amp[0] - amp[-1]), rel=1e-8)


def test_diagnostics_recorded_for_every_step(damped_trajectory):
    tr = damped_trajectory
    for key in ("energy", "power", "energy_rate_residual", "entropy_residual", "oracle_gap",
                "min_abs_temperature", "total_S"):
        assert len(tr.diagnostics[key]) == len(tr)


def test_zero_field_is_stationary():
    s = system_from_expressions("simple_closed", 1, "T0*S", params={"T0": 1.0})
    tr = integrate(s, [0.3, 0.0, 0.2], IntegratorConfig("rk4", 0.1, 1.0))
    assert np.all(tr.states == tr.states[0])


def test_rk4_and_rk45_agree(damped_system):
    a = integrate(damped_system, [1, 0, 0], IntegratorConfig("rk4", 1e-3, 1.0))
    b = integrate(damped_system, [1, 0, 0], IntegratorConfig("rk45", 1e-2, 1.0, rel_tol=1e-10, abs_tol=1e-12))
    assert b.times[-1] == pytest.approx(1.0)
    assert np.max(np.abs(a.states[-1] - b.states[-1])) < 1e-6
    assert len(b) < len(a)


def test_rk4_order(rk4_order_errors):
    coarse, fine = rk4_order_errors
    assert 12 <= coarse / fine <= 20


def test_last_step_is_shortened():
    s = system_from_expressions("simple_closed", 1, "p^2/2 + q^2/2 + S")
    tr = integrate(s, [1, 0, 0], IntegratorConfig("rk4", 0.3, 1.0))
    np.testing.assert_allclose(tr.times, [0, 0.3, 0.6, 0.9, 1.0])


def test_invariants_pass_on_damped_oscillator(damped_trajectory, damped_system):
    rep = check_invariants(damped_trajectory, damped_system)
    assert rep.passed, rep.as_dict()
    assert set(rep.results) == {"oracle_equivalence", "entropy_identity", "energy_balance", "energy_drift",
                                "second_law"}
    for r in rep.results.values():
        assert r.max_residual < 1e-6


def test_corrupted_state_is_located(damped_trajectory, damped_system):
    states = damped_trajectory.states.copy()
    states[4321, 0] += 1e-3
    bad = dataclasses.replace(damped_trajectory, states=states)
    rep = check_invariants(bad, damped_system)
    eb = rep.results["energy_balance"]
    assert not eb.passed and eb.index == 4321
    assert "energy_balance" in rep.failures and not rep.passed


@pytest.mark.parametrize("cls, extra", [
    (SystemClass.MASS_TRANSFER, {"matter_conservation"}),
    (SystemClass.NON_SIMPLE, {"matter_conservation", "gauge"}),
    (SystemClass.OPEN_SIMPLE, {"entropy_bookkeeping"}),
])
def test_report_covers_class_invariants(cls, extra):
    s = RICH[cls]()
    x0 = np.full(s.chart.D, 0.2)
    tr = integrate(s, x0, IntegratorConfig("rk4", 1e-2, 0.2))
    rep = check_invariants(tr, s, second_law=False)
    assert extra <= set(rep.results)
    for name in ("oracle_equivalence", "entropy_identity", "energy_balance"):
        assert rep.results[name].passed, rep.as_dict()


def test_fourier_pair_trajectory():
    s = system_from_expressions(
        "non_simple", 1, "p^2/2 + q^2/2 + exp(S1) + exp(S2) + N1^2/2 + N2^2/2", P=2,
        params={"kappa": 0.4}, friction=[["-0.1*p"], ["-0.05*p"]],
        heat={(1, 2): "-kappa", (2, 1): "-kappa"}, matter={(1, 2): "0.2*(N1/exp(S1) - N2/exp(S2))"})
    x0 = s.chart.vector({**{nm: 0.0 for nm in s.chart.names}, "q": 1.0, "N1": 1.5, "N2": 0.5, "S1": 0.5,
                         "S2": -0.5})
    tr = integrate(s, x0, IntegratorConfig("rk4", 1e-2, 3.0))
    S = tr.states[:, s.chart.block("S")]
    assert np.all(np.diff(S.sum(axis=1)) >= -1e-10)
    gaps = S - tr.states[:, s.chart.block("Sigma")]
    assert np.max(np.abs(gaps - gaps[0])) < 1e-7
    assert np.max(np.abs(tr.diagnostics["total_N"] - 2.0)) < 1e-10
    assert check_invariants(tr, s).passed


def test_lagrangian_trajectory_report():
    ls = lagrangian("cosh")
    tr = integrate(ls, [0.5, 0.8, 0.0], IntegratorConfig("rk4", 1e-2, 1.0))
    assert tr.energy_label == "E_L"
    rep = check_invariants(tr, ls)
    assert rep.passed and "lagrangian_equations" in rep.results


class _Fragile(SystemInstance):
    """Degenerates once q exceeds 0.5."""

    def evolution_field(self, x):
        if x[0] > 0.5:
            raise DegenerateStructure("synthetic degeneracy")
        return super().evolution_field(x)


def _fragile():
    s = system_from_expressions("simple_closed", 1, "p^2/2 + q^2/2 + S")
    return _Fragile(**{f.name: getattr(s, f.name) for f in dataclasses.fields(s)})


@pytest.mark.parametrize("scheme", ["rk4", "rk45"])
def test_early_halt_returns_flagged_partial_trajectory(scheme):
    tr = integrate(_fragile(), [0.0, 1.0, 0.0], IntegratorConfig(scheme, 1e-2, 3.0))
    assert tr.halted and tr.status == "halted" and tr.halt_kind == "degenerate"
    assert "synthetic" in tr.message
    assert 0.4 < tr.times[-1] < 0.6
    assert len(tr.diagnostics["energy"]) == len(tr)


def test_degenerate_initial_state_raises():
    with pytest.raises(DegenerateStructure):
        integrate(_fragile(), [1.0, 0.0, 0.0], IntegratorConfig("rk4", 1e-2, 1.0))


def _blow_up():
    # qddot = q^3 reaches infinity at a finite time
    return system_from_expressions("simple_closed", 1, "p^2/2 - q^4/4 + S")


def test_adaptive_underflow_is_a_step_failure():
    with pytest.raises(StepFailure) as info:
        integrate(_blow_up(), [1.0, 1.0 / np.sqrt(2.0), 0.0], IntegratorConfig("rk45", 1e-2, 10.0))
    partial = info.value.trajectory
    assert isinstance(partial, Trajectory) and len(partial) > 1


def test_fixed_step_blow_up_is_non_finite():
    with pytest.raises(NonFiniteState) as info:
        integrate(_blow_up(), [1.0, 1.0 / np.sqrt(2.0), 0.0], IntegratorConfig("rk4", 0.5, 20.0))
    assert len(info.value.trajectory) >= 1


def test_max_steps():
    s = system_from_expressions("simple_closed", 1, "p^2/2 + q^2/2 + S")
    with pytest.raises(StepFailure):
        integrate(s, [1, 0, 0], IntegratorConfig("rk4", 1e-3, 1.0, max_steps=10))
    with pytest.raises(StepFailure):
        integrate(s, [1, 0, 0], IntegratorConfig("rk45", 1e-3, 100.0, max_steps=3))


def test_initial_state_shape():
    s = rich_non_simple(2)
    with pytest.raises(ValueError):
        integrate(s, [0.0, 1.0], IntegratorConfig())


def test_energy_balance_scores_oracle():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    E = np.array([0.0, 1.0, 2.0, 3.0])
    P = np.ones(4)
    np.testing.assert_allclose(energy_balance_scores(t, E, P), 0.0)
    E[2] += 0.1
    s = energy_balance_scores(t, E, P)
    assert int(np.argmax(s)) == 2


def test_second_law_toggle_and_custom_tolerance(damped_trajectory, damped_system):
    tr = damped_trajectory
    short = dataclasses.replace(tr, times=tr.times[:1000], states=tr.states[:1000])
    rep = check_invariants(short, damped_system, second_law=False)
    assert "second_law" not in rep.results
    rep = check_invariants(short, damped_system, {"energy_drift": 1e-30})
    assert rep.failures == ["energy_drift"]
    assert set(DEFAULT_TOLERANCES) >= set(rep.results)
