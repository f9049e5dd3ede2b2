# tests/test_validation_1d.py
import numpy as np
import pytest

from modules.errors import ParameterBoxError
from modules.validation_1d import (
    RATE_COLUMNS,
    OneDimProblem,
    asymptotic_bounds,
    asymptotic_rates,
    build_system,
    cross_check_discrete,
    iterate,
    local_solutions,
    measured_contraction,
    rate_table,
    spectral_rates,
)


@pytest.mark.parametrize("delta", [0.25, 0.1, 0.01])
def test_poisson_closed_forms(delta):
    p = OneDimProblem("poisson", delta)
    system = build_system(p)
    c = (1 - delta) / (1 + delta)
    rates = spectral_rates(p)
    assert rates.rho_os == pytest.approx(c ** 2, rel=1e-12)
    assert rates.rho_os2 == pytest.approx((1 - delta ** 2) / (1 + delta ** 2), rel=1e-12)
    assert rates.cond == pytest.approx(1 / delta, rel=1e-10)
    assert system.alpha_p == pytest.approx(2 * delta / (1 + delta), rel=1e-12)
    assert system.gamma_p == pytest.approx(2 / (1 + delta), rel=1e-12)
    # the port values of the exact solution x^2
    np.testing.assert_allclose(system.fixed_point, [delta ** 2, delta ** 2], rtol=1e-12)

    asym = asymptotic_rates(p)
    bound_os, bound_os2 = asymptotic_bounds(p)
    assert abs(rates.rho_os - asym.rho_os) <= bound_os
    assert abs(rates.rho_os2 - asym.rho_os2) <= bound_os2


def test_local_solutions_match_the_exact_solution_at_the_fixed_point():
    p = OneDimProblem("poisson", 0.3)
    u1, u2 = local_solutions(p, build_system(p).fixed_point)
    x = np.linspace(-1.0, 0.3, 7)
    np.testing.assert_allclose(u1(x), x ** 2, atol=1e-14)
    x = np.linspace(-0.3, 1.0, 7)
    np.testing.assert_allclose(u2(x), x ** 2, atol=1e-14)


@pytest.mark.parametrize("gamma", [1.0, 5.0])
@pytest.mark.parametrize("delta", [0.1, 0.01])
def test_advdiff_fixed_point_and_rate(gamma, delta):
    p = OneDimProblem("advdiff", delta, gamma)
    exact = lambda x: np.expm1(gamma * (x + 1.0)) / np.expm1(2.0 * gamma)
    np.testing.assert_allclose(build_system(p).fixed_point, [exact(delta), exact(-delta)], rtol=1e-10)
    u1, u2 = local_solutions(p, build_system(p).fixed_point)
    assert u1(-1.0) == pytest.approx(0.0, abs=1e-14)
    assert u2(1.0) == pytest.approx(1.0)

    bound_os, _ = asymptotic_bounds(p)
    assert abs(spectral_rates(p).rho_os - asymptotic_rates(p).rho_os) <= bound_os
    k = gamma * (np.exp(gamma) + 1) / (np.exp(gamma) - 1)
    assert p.advection_constant == pytest.approx(k)


@pytest.mark.parametrize("problem", [OneDimProblem("poisson", 0.25), OneDimProblem("advdiff", 0.25, 1.0)])
def test_measured_contraction_is_the_spectral_radius(problem):
    system = build_system(problem)
    rates = spectral_rates(problem)
    start = np.zeros(2)
    os_history = iterate(system.os_step, start, 12)
    os2_history = iterate(system.os2_step, start, 12)
    assert measured_contraction(os_history, system.fixed_point, (2, 10)) == pytest.approx(rates.rho_os, abs=1e-9)
    assert measured_contraction(os2_history, system.fixed_point, (2, 10)) == pytest.approx(rates.rho_os2, abs=1e-9)


@pytest.mark.parametrize("delta", [0.25, 0.01])
def test_one_shot_contracts_slower_than_schwarz(delta):
    rates = spectral_rates(OneDimProblem("poisson", delta))
    assert rates.rho_os < rates.rho_os2 < 1.0


def test_one_shot_rate_closed_form_at_a_quarter_overlap():
    # (1 - delta^2) / (1 + delta^2) = 15/17, against the expansion 1 - 2 delta^2 = 7/8
    p = OneDimProblem("poisson", 0.25)
    assert spectral_rates(p).rho_os2 == pytest.approx(15.0 / 17.0, rel=1e-12)
    assert asymptotic_rates(p).rho_os2 == pytest.approx(0.875)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_advdiff_small_overlap_asymptotics(gamma):
    delta = 1e-3
    p = OneDimProblem("advdiff", delta, gamma)
    exact, asym = spectral_rates(p), asymptotic_rates(p)
    bound_os, bound_os2 = asymptotic_bounds(p)
    k = p.advection_constant
    assert abs(exact.rho_os - asym.rho_os) <= bound_os
    assert abs(exact.rho_os2 - asym.rho_os2) <= bound_os2
    assert exact.cond == pytest.approx(asym.cond, rel=10.0 * k * delta)
    # the one-shot gap to 1 is quadratic in the overlap, the Schwarz gap linear
    assert 1.0 - exact.rho_os2 == pytest.approx(0.5 * (k * delta) ** 2, rel=10.0 * k * delta)
    assert 1.0 - exact.rho_os == pytest.approx(2.0 * k * delta, rel=10.0 * k * delta)


@pytest.mark.parametrize("delta", [0.25, 0.1, 0.01])
def test_discrete_poisson_matches_the_closed_form(delta):
    check = cross_check_discrete(OneDimProblem("poisson", delta), h=0.05)
    assert check.ok, check.messages
    assert check.beta_error <= 1e-8
    np.testing.assert_allclose(check.beta_converged, [delta ** 2, delta ** 2], atol=1e-8)
    assert check.contraction_measured == pytest.approx(((1 - delta) / (1 + delta)) ** 2, abs=1e-3)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("delta", [0.25, 1e-3])
def test_discrete_advdiff_matches_the_closed_form(gamma, delta):
    check = cross_check_discrete(OneDimProblem("advdiff", delta, gamma), h=0.02)
    assert check.ok, check.messages
    assert check.contraction_measured == pytest.approx(check.contraction_exact, abs=1e-3)


def test_rate_table_layout():
    rows = rate_table([0.1, 0.01], gammas=[1.0])
    assert len(rows) == 4
    assert [r["kind"] for r in rows] == ["poisson", "poisson", "advdiff", "advdiff"]
    for row in rows:
        assert list(row) == RATE_COLUMNS
        assert row["discrete_ok"] == ""


def test_invalid_problems():
    with pytest.raises(ValueError):
        OneDimProblem("heat", 0.1)
    with pytest.raises(ParameterBoxError):
        OneDimProblem("poisson", 1.0)
    with pytest.raises(ParameterBoxError):
        OneDimProblem("advdiff", 0.1, 0.0)
