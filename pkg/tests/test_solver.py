"""Nonlinear solvers: Jacobian exactness, convergence behaviour,
singular-system detection and the small-data arithmetic."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from eoflow import forms, solver
from eoflow.fe_space import SystemState, build_space, interpolate, \
    taylor_hood_spaces
from eoflow.forms import ProblemConfig, SparseSystem
from eoflow.mesh import build_unit_square_mesh
from eoflow.mms import manufactured_problem


def _reduced_vector(velocity, potential, state):
    free_u = ~velocity.dirichlet_mask
    free_psi = ~potential.dirichlet_mask
    return np.concatenate([state.u[free_u], state.p, state.psi[free_psi]])


def _state_from_reduced(velocity, potential, base, x):
    free_u = ~velocity.dirichlet_mask
    free_psi = ~potential.dirichlet_mask
    nu, npsi = int(free_u.sum()), int(free_psi.sum())
    npre = len(base.p)
    state = base.copy()
    state.u[free_u] = x[:nu]
    state.p[:] = x[nu:nu + npre]
    state.psi[free_psi] = x[nu + npre:nu + npre + npsi]
    return state


def test_jacobian_matches_finite_differences():
    # central differences of the reduced residual along random directions,
    # step 1e-6, agreement to 1e-5
    cfg, _ = manufactured_problem()
    mesh = build_unit_square_mesh(2)
    velocity, pressure, potential = taylor_hood_spaces(mesh, 1)
    rng = np.random.default_rng(5)
    base = SystemState(rng.normal(size=velocity.num_dofs) * 0.3,
                       rng.normal(size=pressure.num_dofs) * 0.3,
                       rng.normal(size=potential.num_dofs) * 0.3)

    system = solver.newton_system(cfg, mesh, 1, base)
    x0 = _reduced_vector(velocity, potential, base)

    def residual(x):
        st = _state_from_reduced(velocity, potential, base, x)
        return -solver.newton_system(cfg, mesh, 1, st).rhs

    h = 1e-6
    for trial in range(4):
        d = rng.normal(size=len(x0))
        d /= np.linalg.norm(d)
        fd = (residual(x0 + h * d) - residual(x0 - h * d)) / (2 * h)
        jd = system.matrix @ d
        err = np.linalg.norm(fd - jd) / max(np.linalg.norm(jd), 1.0)
        assert err <= 1e-5, f"direction {trial}: {err:.3e}"


def test_newton_report(newton_k1_n4):
    _, report = newton_k1_n4
    assert report.method == "newton"
    assert report.converged
    assert 3 <= report.iterations <= 6
    assert len(report.residuals) == report.iterations + 1
    # strictly decreasing after the first iterate
    tail = report.residuals[1:]
    assert all(a > b for a, b in zip(tail, tail[1:]))
    assert tail[-1] <= 1e-7
    assert report.psi_range[0] == pytest.approx(-1.0, abs=0.05)
    assert report.psi_range[1] == pytest.approx(1.0, abs=0.05)


def test_converged_velocity_weakly_divergence_free(newton_k1_n4, mesh4):
    state, _ = newton_k1_n4
    velocity = build_space(mesh4, 2, components=2, fld="flow")
    pressure = build_space(mesh4, 1)
    B = forms.assemble_divergence(velocity, pressure)
    assert np.max(np.abs(B @ state.u)) <= 1e-8


def test_newton_picard_agree(newton_k1_n4, picard_k1_n4):
    newton_state, _ = newton_k1_n4
    picard_state, report = picard_k1_n4
    assert report.method == "picard"
    assert report.converged
    assert np.max(np.abs(newton_state.u - picard_state.u)) <= 1e-6
    assert np.max(np.abs(newton_state.p - picard_state.p)) <= 1e-6
    assert np.max(np.abs(newton_state.psi - picard_state.psi)) <= 1e-6


def test_dirichlet_values_interpolated_exactly(newton_k1_n4, mesh4,
                                               mms_problem):
    cfg, _ = mms_problem
    state, _ = newton_k1_n4
    velocity, _, potential = taylor_hood_spaces(mesh4, 1)
    u_data = interpolate(velocity, cfg.u_dirichlet)
    psi_data = interpolate(potential, cfg.psi_dirichlet)
    mu = velocity.dirichlet_mask
    mp = potential.dirichlet_mask
    assert np.array_equal(state.u[mu], u_data[mu])
    assert np.array_equal(state.psi[mp], psi_data[mp])


@pytest.mark.parametrize("method", ["newton", "picard"])
def test_zero_data_gives_zero_in_one_iteration(method):
    cfg = ProblemConfig()
    mesh = build_unit_square_mesh(2)
    solve = solver.newton_solve if method == "newton" else solver.picard_solve
    state, report = solve(cfg, mesh, 1)
    assert report.converged
    assert report.iterations == 1
    assert np.max(np.abs(state.u)) == 0.0
    assert np.max(np.abs(state.p)) == 0.0
    assert np.max(np.abs(state.psi)) == 0.0
    assert report.residuals[-1] == 0.0


def test_decoupled_linear_problem_needs_one_newton_step():
    # no charge (k0 = 0), no applied field, no potential source: the
    # remaining Stokes problem is linear, so one correction suffices
    cfg = ProblemConfig(
        k0=0.0, e_field=(0.0, 0.0),
        f=lambda x, y: np.array([np.ones_like(x), np.zeros_like(x)]))
    mesh = build_unit_square_mesh(2)
    state, report = solver.newton_solve(cfg, mesh, 1)
    assert report.converged
    assert report.iterations == 1
    assert np.max(np.abs(state.psi)) <= 1e-12
    assert np.max(np.abs(state.u)) > 0.0


def test_not_converged_report_instead_of_exception():
    cfg, _ = manufactured_problem()
    mesh = build_unit_square_mesh(4)
    state, report = solver.newton_solve(cfg, mesh, 1, maxit=1)
    assert not report.converged
    assert report.iterations == 1
    assert np.all(np.isfinite(state.u))


def test_equal_order_p1_p1_pressure_is_detected_as_singular():
    # the inf-sup failure mode: P1 velocity with P1 pressure on a coarse
    # mesh has more pressure DoFs than free velocity DoFs, so the saddle
    # matrix is rank deficient and a generic rhs is inconsistent
    mesh = build_unit_square_mesh(2)
    velocity = build_space(mesh, 1, components=2, fld="flow")
    pressure = build_space(mesh, 1)
    A = forms.assemble_stiffness(velocity)
    B = forms.assemble_divergence(velocity, pressure)
    free = np.flatnonzero(~velocity.dirichlet_mask)
    nu, npre = len(free), pressure.num_dofs
    matrix = sp.bmat([[A[free][:, free], B.T.tocsr()[free]],
                      [B[:, free], None]], format="csr")
    rhs = np.random.default_rng(0).normal(size=matrix.shape[0])
    system = SparseSystem(matrix, rhs, slice(0, nu),
                          slice(nu, nu + npre), slice(nu + npre, nu + npre))
    with pytest.raises(solver.LinearSolveError):
        solver.linear_solve(system)


def test_taylor_hood_stokes_system_solves_cleanly():
    # the same construction with the stable P2/P1 pair factors and passes
    # the residual trust check
    mesh = build_unit_square_mesh(2)
    velocity = build_space(mesh, 2, components=2, fld="flow")
    pressure = build_space(mesh, 1)
    A = forms.assemble_stiffness(velocity)
    B = forms.assemble_divergence(velocity, pressure)
    free = np.flatnonzero(~velocity.dirichlet_mask)
    nu, npre = len(free), pressure.num_dofs
    matrix = sp.bmat([[A[free][:, free], B.T.tocsr()[free]],
                      [B[:, free], None]], format="csr")
    rhs = np.random.default_rng(1).normal(size=matrix.shape[0])
    system = SparseSystem(matrix, rhs, slice(0, nu),
                          slice(nu, nu + npre), slice(nu + npre, nu + npre))
    x = solver.linear_solve(system)
    assert np.linalg.norm(matrix @ x - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_linear_solve_rejects_non_finite_and_singular():
    rhs = np.array([1.0, 1.0])
    singular = SparseSystem(
        sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]])), rhs,
        slice(0, 2), slice(2, 2), slice(2, 2))
    with pytest.raises(solver.LinearSolveError):
        solver.linear_solve(singular)


def test_small_data_lhs_unit_constants():
    # unit constants: front factor 4, bracket 1 + 1 + 2 = 4, so
    # lhs1 = 16 (|f| + |g|) = 1.6 at |f| + |g| = 0.1
    lhs1, lhs2, lhs3 = solver.small_data_lhs(
        mu=1.0, eps=1.0, e_bar=1.0, slope_bound=1.0, poincare=1.0,
        sobolev=1.0, f_norm=0.1, g_norm=0.0)
    assert lhs1 == pytest.approx(1.6, abs=1e-12)
    assert lhs2 == 0.0
    assert lhs3 == 0.0
    lhs1b, _, _ = solver.small_data_lhs(1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
                                        0.0, 0.1)
    assert lhs1b == pytest.approx(1.6, abs=1e-12)


def test_small_data_lhs_zero_data():
    assert solver.small_data_lhs(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0) \
        == (0.0, 0.0, 0.0)


def test_ball_radii():
    cfg = ProblemConfig()
    assert solver.velocity_ball_radius(cfg) == pytest.approx(0.5)
    assert solver.potential_ball_radius(cfg) == pytest.approx(0.5)
    unconditional = ProblemConfig(e_field=(0.0, 0.0))
    assert math.isinf(solver.potential_ball_radius(unconditional))


def test_diagnostics_zero_state():
    cfg = ProblemConfig()
    mesh = build_unit_square_mesh(2)
    velocity, pressure, potential = taylor_hood_spaces(mesh, 1)
    state = SystemState(np.zeros(velocity.num_dofs),
                        np.zeros(pressure.num_dofs),
                        np.zeros(potential.num_dofs))
    diag = solver.small_data_diagnostics(cfg, mesh, 1, state)
    assert diag.f_norm == 0.0 and diag.g_norm == 0.0
    assert diag.lhs1 == 0.0 and diag.lhs2 == 0.0 and diag.lhs3 == 0.0
    assert diag.small_data_ok
    assert diag.u_norm == 0.0 and diag.psi_norm == 0.0
    assert diag.in_velocity_ball and diag.in_potential_ball


def test_diagnostics_on_manufactured_solution(newton_k1_n4, mesh4,
                                              mms_problem):
    # the trig data is far from small; the report must say so honestly
    cfg, _ = mms_problem
    state, _ = newton_k1_n4
    diag = solver.small_data_diagnostics(cfg, mesh4, 1, state)
    assert diag.f_norm > 1.0 and diag.g_norm > 1.0
    assert not diag.small_data_ok
    assert diag.u_norm > diag.velocity_ball_radius
    assert not diag.in_velocity_ball
