"""Manufactured solutions: derivative fields checked by finite
differences, forcing consistency, error norms and the study driver."""

import numpy as np
import pytest

from eoflow import mms
from eoflow.forms import ProblemConfig, charge_density
from eoflow.mesh import build_unit_square_mesh


def _points(count=100, seed=2):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.05, 0.95, size=(count, 2))
    return pts[:, 0], pts[:, 1]


def _fd_grad(fn, x, y, h=1e-6):
    return np.array([(fn(x + h, y) - fn(x - h, y)) / (2 * h),
                     (fn(x, y + h) - fn(x, y - h)) / (2 * h)])


def _fd_lap(fn, x, y, h=1e-4):
    return ((fn(x + h, y) + fn(x - h, y) + fn(x, y + h) + fn(x, y - h)
             - 4 * fn(x, y)) / h**2)


def test_hand_coded_derivatives_match_finite_differences():
    ex = mms.standard_exact_solution()
    x, y = _points(40)
    for comp in range(2):
        u_c = lambda a, b, c=comp: ex.u(a, b)[c]
        assert ex.grad_u(x, y)[comp] == pytest.approx(
            _fd_grad(u_c, x, y), abs=5e-9)
        assert ex.lap_u(x, y)[comp] == pytest.approx(
            _fd_lap(u_c, x, y), abs=5e-6)
    assert ex.grad_p(x, y) == pytest.approx(_fd_grad(ex.p, x, y), abs=5e-9)
    assert ex.grad_psi(x, y) == pytest.approx(_fd_grad(ex.psi, x, y),
                                              abs=5e-9)
    assert ex.lap_psi(x, y) == pytest.approx(_fd_lap(ex.psi, x, y), abs=5e-6)


def test_manufactured_velocity_divergence_free():
    # trace of the hand-coded gradient at 100 random points, plus an
    # independent finite-difference cross-check
    ex = mms.standard_exact_solution()
    x, y = _points(100)
    grad = ex.grad_u(x, y)
    div = grad[0, 0] + grad[1, 1]
    assert np.max(np.abs(div)) <= 1e-12
    fd_div = (_fd_grad(lambda a, b: ex.u(a, b)[0], x, y)[0]
              + _fd_grad(lambda a, b: ex.u(a, b)[1], x, y)[1])
    assert np.max(np.abs(fd_div)) <= 1e-6


def test_forcing_satisfies_strong_form():
    # f and g rebuilt from finite differences of the primitive fields
    # only, independent of the hand-coded derivatives
    cfg, ex = mms.manufactured_problem()
    x, y = _points(30)
    lap_u = np.array([_fd_lap(lambda a, b: ex.u(a, b)[0], x, y),
                      _fd_lap(lambda a, b: ex.u(a, b)[1], x, y)])
    grad_p = _fd_grad(ex.p, x, y)
    lap_psi = _fd_lap(ex.psi, x, y)
    e = np.asarray(cfg.e_field)
    f_expected = (-cfg.mu * lap_u + grad_p
                  + cfg.eps * lap_psi * e[:, None])
    assert cfg.f(x, y) == pytest.approx(f_expected, abs=5e-5)

    grad_psi = _fd_grad(ex.psi, x, y)
    u = ex.u(x, y)
    g_expected = (charge_density(cfg, ex.psi(x, y))
                  + u[0] * grad_psi[0] + u[1] * grad_psi[1]
                  - cfg.eps * lap_psi)
    assert cfg.g(x, y) == pytest.approx(g_expected, abs=5e-5)


def test_neumann_data_matches_finite_differences():
    cfg, ex = mms.manufactured_problem()
    rng = np.random.default_rng(9)
    for normal in (np.array([0.0, 1.0]), np.array([-1.0, 0.0])):
        x, y = rng.uniform(0.1, 0.9, size=2)
        traction, flux = mms.neumann_data(ex, cfg, (x, y), normal)
        xa, ya = np.array([x]), np.array([y])
        grad_u = np.array([_fd_grad(lambda a, b: ex.u(a, b)[0], xa, ya),
                           _fd_grad(lambda a, b: ex.u(a, b)[1], xa, ya)])
        expected_t = (cfg.mu * grad_u[:, :, 0] @ normal
                      - float(ex.p(xa, ya)[0]) * normal)
        assert traction == pytest.approx(expected_t, abs=1e-7)
        grad_psi = _fd_grad(ex.psi, xa, ya)[:, 0]
        assert flux == pytest.approx(cfg.eps * grad_psi @ normal, abs=1e-7)


def test_neumann_data_rejects_non_unit_normal():
    cfg, ex = mms.manufactured_problem()
    with pytest.raises(ValueError):
        mms.neumann_data(ex, cfg, (0.5, 1.0), (0.0, 2.0))


def test_manufactured_problem_fills_all_data():
    base = ProblemConfig(mu=0.5, eps=2.0)
    cfg, ex = mms.manufactured_problem(base)
    assert cfg.mu == 0.5 and cfg.eps == 2.0
    for fn in (cfg.f, cfg.g, cfg.traction, cfg.flux, cfg.u_dirichlet,
               cfg.psi_dirichlet):
        assert fn is not None
    x, y = _points(5)
    assert cfg.u_dirichlet(x, y) == pytest.approx(ex.u(x, y), abs=1e-14)
    assert cfg.psi_dirichlet(x, y) == pytest.approx(ex.psi(x, y), abs=1e-14)


def test_interpolation_error_decreases():
    ex = mms.standard_exact_solution()
    errs = []
    for n in (2, 4):
        mesh = build_unit_square_mesh(n)
        state = mms.interpolate_exact(mesh, 1, ex)
        errs.append(mms.error_norms(mesh, 1, state, ex))
    for coarse, fine in zip(errs[0], errs[1]):
        assert fine < coarse / 3.0


def test_error_norms_zero_for_zero_fields():
    mesh = build_unit_square_mesh(2)
    ex = mms.zero_exact_solution()
    state = mms.interpolate_exact(mesh, 1, ex)
    assert mms.error_norms(mesh, 1, state, ex) == (0.0, 0.0, 0.0)


def test_convergence_rate():
    assert mms.convergence_rate(0.4, 0.1, 0.2, 0.1) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        mms.convergence_rate(0.0, 0.1, 0.2, 0.1)
    with pytest.raises(ValueError):
        mms.convergence_rate(0.4, 0.1, 0.1, 0.1)


def test_table_formatting():
    table = mms.ConvergenceTable(degree=1, rows=[
        mms.TableRow(dofs=57, h=np.sqrt(2) / 2, e_u=0.65, r_u=None,
                     e_p=0.221, r_p=None, e_psi=0.265, r_psi=None,
                     iterations=4),
        mms.TableRow(dofs=217, h=np.sqrt(2) / 4, e_u=0.179, r_u=1.86,
                     e_p=0.0349, r_p=2.658, e_psi=0.0696, r_psi=1.927,
                     iterations=4),
    ])
    csv = table.to_csv()
    lines = csv.strip().split("\n")
    assert lines[0] == "DoF,h,e(u),r(u),e(p),r(p),e(psi),r(psi),it"
    assert lines[1].startswith("57,0.7071,6.50e-01,") and "★" in lines[1]
    assert lines[2].split(",")[3] == "1.860"
    text = table.format_text()
    assert "DoF" in text and "217" in text


def test_run_study_reproduces_known_coarse_errors():
    table = mms.run_convergence_study(1, 2)
    assert [r.dofs for r in table.rows] == [57, 217]
    assert table.rows[0].e_u == pytest.approx(6.50e-1, rel=0.02)
    assert table.rows[0].e_p == pytest.approx(2.21e-1, rel=0.02)
    assert table.rows[0].e_psi == pytest.approx(2.65e-1, rel=0.02)
    assert table.rows[0].r_u is None
    assert table.rows[1].r_u is not None
    assert all(r.iterations >= 1 for r in table.rows)


def test_run_study_validation():
    with pytest.raises(ValueError):
        mms.run_convergence_study(1, 1)
    with pytest.raises(ValueError):
        mms.run_convergence_study(1, 2, method="sor")
    with pytest.raises(ValueError):
        mms.run_convergence_study(1, 2, cfg=ProblemConfig())


def test_study_failure_carries_partial_table():
    with pytest.raises(mms.StudyError) as excinfo:
        mms.run_convergence_study(1, 2, maxit=1)
    assert excinfo.value.table.rows == []
