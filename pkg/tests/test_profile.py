import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nlsblowup.errors import ConvergedToTrivial, InvalidArgument, NotEnergyCritical
from nlsblowup.numerics import build_diff_matrices, build_grid
from nlsblowup.profile import (ProblemParams, ProfileSolution, assemble_jacobian,
                               assemble_residual, c0_check, c0_predicted,
                               continue_in_parameter, detect_oscillation, extrapolate,
                               grid_and_matrices, hamiltonian_study, identity_residuals,
                               phase_path, phase_path_from_samples, rescale_family, series_start,
                               shoot, solve_profile, volterra_residual)


def synthetic(params, f, df=None, n=129, length=20.0, a=1.0):
    """ProfileSolution wrapping samples of a given function (not a solution)."""
    g = build_grid(n, length)
    q = f(g.nodes)
    return ProfileSolution(params, g, np.real(q).copy(), np.imag(q).copy(), a, 0.0)


# --- parameters ----------------------------------------------------------------


def test_params_derived_quantities():
    p = ProblemParams(3, 1)
    assert p.p == 3 and p.s_c == 0.5
    assert ProblemParams(3, 2).s_c == 1.0
    assert ProblemParams(4, 1).s_c == 1.0


@pytest.mark.parametrize("d,sigma", [(3, 0), (0, 1), (math.nan, 1), (3, -1)])
def test_params_validation(d, sigma):
    with pytest.raises(InvalidArgument):
        ProblemParams(d, sigma)


@pytest.mark.parametrize("d,sigma", [(1, 3), (2, 1), (3, 0.5)])
def test_not_supercritical(d, sigma):
    with pytest.raises(InvalidArgument):
        ProblemParams(d, sigma).check_supercritical()


# --- collocation system -------------------------------------------------------------


def test_jacobian_matches_finite_differences():
    params = ProblemParams(3, 1)
    grid, mats = grid_and_matrices(33, 20.0)
    rng = np.random.default_rng(0)
    x = np.concatenate([np.exp(-grid.nodes**2 / 8) + 0.01 * rng.standard_normal(33),
                        0.1 * rng.standard_normal(33), [0.9]])
    jac = assemble_jacobian(x, params, grid, mats)
    fd = np.empty_like(jac)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = 1e-6
        fd[:, k] = (assemble_residual(x + e, params, grid, mats)
                    - assemble_residual(x - e, params, grid, mats)) / 2e-6
    np.testing.assert_allclose(jac, fd, atol=1e-6 * np.max(np.abs(jac)))


def test_residual_rejects_bad_shape():
    grid, mats = grid_and_matrices(33, 20.0)
    with pytest.raises(InvalidArgument):
        assemble_residual(np.zeros(10), ProblemParams(3, 1), grid, mats)


def test_series_start_satisfies_ode_at_small_xi():
    params = ProblemParams(3, 1)
    a, q0, eps = 0.9, 1.8, 1e-3
    q, dq = series_start(params, a, q0, eps)
    # Q'' at 0 from the expansion equals Q'(eps)/eps to O(eps^2)
    c = (q0 - 1j * a * q0 - q0**3) / 3
    assert dq / eps == pytest.approx(c, rel=1e-12)


def test_shoot_zero_amplitude_is_zero():
    q, dq = shoot(ProblemParams(3, 1), 0.9, 0.0, np.linspace(0, 5, 6))
    assert not np.any(q) and not np.any(dq)


def test_shoot_linear_small_amplitude_matches_bessel_like_growth():
    # tiny Q(0) keeps the nonlinearity negligible; with a -> 0 the real ODE
    # Q'' + 2/xi Q' = Q has the solution Q(0) sinh(xi)/xi in 3d
    params = ProblemParams(3, 1)
    xi = np.array([0.5, 1.0, 2.0])
    q, _ = shoot(params, 1e-12, 1e-6, xi, abs_tol=1e-20)
    np.testing.assert_allclose(q.real, 1e-6 * np.sinh(xi) / xi, rtol=1e-7)


def test_extrapolate_is_quadratic():
    assert extrapolate([0, 1, 2], [0.0, 1.0, 4.0], 3) == pytest.approx(9.0)
    assert extrapolate([0, 1], [1.0, 3.0], 2) == pytest.approx(5.0)


# --- solving -------------------------------------------------------------------


def test_cubic3d_converged(cubic3d):
    # reference values from an independent high-precision computation
    assert cubic3d.a == pytest.approx(0.9173561446, abs=1e-8)
    assert cubic3d.q0 == pytest.approx(1.8856569903, abs=1e-8)
    assert cubic3d.n_maxima() == 1
    assert abs(cubic3d.w_imag[0]) < 1e-14


def test_cubic3d_residual_recomputed(cubic3d):
    r = assemble_residual(cubic3d.x, cubic3d.params, cubic3d.grid, cubic3d.mats)
    assert np.max(np.abs(r)) == pytest.approx(cubic3d.residual_norm, rel=1e-6)
    assert cubic3d.residual_norm < 1e-10


def test_trivial_guess_reports_trivial():
    grid, _ = grid_and_matrices(65, 200.0)
    guess = np.concatenate([1e-3 * np.exp(-grid.nodes), np.zeros(65), [0.9]])
    with pytest.raises(ConvergedToTrivial) as info:
        solve_profile(ProblemParams(3, 1), guess, grid=grid)
    assert np.max(np.abs(info.value.solution.p_real)) < 1e-6


def test_guess_shape_checked():
    grid, _ = grid_and_matrices(65, 200.0)
    with pytest.raises(InvalidArgument):
        solve_profile(ProblemParams(3, 1), np.zeros(5), grid=grid)


def test_zero_length_continuation(cubic3d):
    record = continue_in_parameter(cubic3d, cubic3d.params)
    assert len(record.entries) == 1 and record.entries[0].a == cubic3d.a


def test_continuation_monotone_in_d(cubic_family):
    a = [cubic_family[d].a for d in (3, 4, 5)]
    q0 = [cubic_family[d].q0 for d in (3, 4, 5)]
    assert a[0] < a[1] < a[2]
    assert q0[0] > q0[1] > q0[2]
    assert cubic_family[4].a == pytest.approx(1.0300725152, abs=1e-7)


# --- rescaling -------------------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(target=st.floats(0.2, 5.0))
def test_rescaled_profile_solves_scaled_equation(cubic3d, target):
    prof, a_tilde = rescale_family(cubic3d, target)
    lam = prof.scale
    assert prof.q[0].real == pytest.approx(target, rel=1e-14)
    assert a_tilde == pytest.approx(cubic3d.a * lam**2, rel=1e-14)
    # q~ solves the profile equation with -omega q~ in place of -q~, omega = lam^(2 sigma)
    grid = build_grid(cubic3d.grid.n_points, cubic3d.grid.domain_length / lam)
    mats = build_diff_matrices(grid)
    x = np.concatenate([prof.q.real, prof.q.imag, [a_tilde]])
    r = assemble_residual(x, cubic3d.params, grid, mats, omega=lam**2)
    # the far-field rows assume omega = 1; the ODE rows scale by lam^3
    n_ode = 2 * (grid.n_points - 2)
    assert np.max(np.abs(r[:n_ode])) < 1e-10 * max(1.0, lam**3)


def test_rescale_rejects_nonpositive(cubic3d):
    with pytest.raises(InvalidArgument):
        rescale_family(cubic3d, 0.0)


def test_scaled_modulus_at_origin(cubic3d):
    prof, _ = rescale_family(cubic3d, 1.0)
    assert prof.modulus_at(0.0)[0] == pytest.approx(1.0, rel=1e-14)


# --- diagnostics -----------------------------------------------------------------


def test_phase_path_of_exponential():
    # Q = exp((-1 + 2i) xi): C = |Q|, D = -1, psi = 2
    xi = np.linspace(0, 5, 50)
    q = np.exp((-1 + 2j) * xi)
    path = phase_path_from_samples(xi, q, (-1 + 2j) * q)
    np.testing.assert_allclose(path.d_log, -1.0)
    np.testing.assert_allclose(path.psi, 2.0)


def test_phase_path_drops_zeros():
    path = phase_path_from_samples([0, 1, 2], [0, 1, 0], [0, 1, 0])
    assert path.xi.tolist() == [1]


def test_detect_oscillation_synthetic():
    xi = np.linspace(0, 40, 4000)
    smooth = np.exp(-xi)
    wavy = np.exp(-0.1 * xi) * (1 + 0.5 * np.cos(3 * xi))
    for q, expected in ((smooth, False), (wavy, True)):
        dq = np.gradient(q, xi)
        assert detect_oscillation(phase_path_from_samples(xi, q, dq))[0] is expected


def test_detect_oscillation_empty_path():
    path = phase_path_from_samples([1.0], [0.0], [0.0])
    with pytest.raises(InvalidArgument):
        detect_oscillation(path)


def test_converged_profile_is_monotone_tail(cubic3d):
    assert detect_oscillation(phase_path(cubic3d))[0] is False


def test_hamiltonian_against_adaptive_quadrature():
    params = ProblemParams(3, 2)
    sol = synthetic(params, lambda x: np.exp(-x**2 / 4) * (1 + 0.5j * x), length=20.0)

    def integrand(x):
        q = np.exp(-x**2 / 4) * (1 + 0.5j * x)
        dq = np.exp(-x**2 / 4) * (-x / 2 * (1 + 0.5j * x) + 0.5j)
        return (abs(dq) ** 2 - abs(q) ** 6 / 3) * x**2

    ks = [2.0, 5.0, 20.0]
    study = hamiltonian_study(sol, ks)
    ref = [quad(integrand, 0, k, epsabs=1e-13, epsrel=1e-13)[0] for k in ks]
    np.testing.assert_allclose(study.h_value, ref, rtol=1e-9, atol=1e-12)


def test_hamiltonian_rejects_bad_radii(cubic3d):
    with pytest.raises(InvalidArgument):
        hamiltonian_study(cubic3d, [50, 20])
    with pytest.raises(InvalidArgument):
        hamiltonian_study(cubic3d, [300])


def test_c0_closed_form():
    assert c0_predicted(1.0, 2.0) == pytest.approx(3.75**0.25, rel=1e-15)
    assert c0_predicted(2.0, 1.0) == pytest.approx(math.sqrt(2.5), rel=1e-15)


def test_c0_needs_energy_critical(cubic3d):
    with pytest.raises(NotEnergyCritical):
        c0_check(cubic3d)


def test_c0_of_power_tail():
    # |Q| = C xi^(-1/sigma) exactly at the test node
    params = ProblemParams(4, 1)
    c = c0_predicted(1.2, 1.0)
    sol = synthetic(params, lambda x: c / np.maximum(x, 1e-3) + 0j, a=1.2, length=200.0)
    c_num, c_pred, abs_err, _ = c0_check(sol)
    assert abs_err < 1e-12 and c_pred == c


def test_identities_on_zero_profile_vanish():
    sol = synthetic(ProblemParams(3, 1), lambda x: 0 * x + 0j)
    assert identity_residuals(sol, 5.0) == (0.0, 0.0)
    assert volterra_residual(sol, 10.0) == 0.0


def test_identities_reject_bad_xi(cubic3d):
    with pytest.raises(InvalidArgument):
        identity_residuals(cubic3d, 0.0)


def test_identities_detect_non_solutions():
    sol = synthetic(ProblemParams(3, 1), lambda x: np.exp(-x**2) + 0j, a=0.9)
    assert max(identity_residuals(sol, 1.0)) > 1e-3
    assert volterra_residual(sol, 5.0) > 1e-3


def test_identities_on_solution(cubic3d):
    for xi in (1.0, 5.0, 10.0, 50.0):
        assert max(identity_residuals(cubic3d, xi)) < 1e-7
