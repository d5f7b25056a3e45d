"""Shared fixtures; the expensive nonlinear solves run once per session."""

import pytest
from hypothesis import settings

from eoflow import solver
from eoflow.mesh import build_unit_square_mesh
from eoflow.mms import manufactured_problem

settings.register_profile("eoflow", deadline=None, max_examples=50)
settings.load_profile("eoflow")


@pytest.fixture(scope="session")
def mms_problem():
    return manufactured_problem()


@pytest.fixture(scope="session")
def mesh4():
    return build_unit_square_mesh(4)


@pytest.fixture(scope="session")
def newton_k1_n4(mms_problem, mesh4):
    cfg, _ = mms_problem
    state, report = solver.newton_solve(cfg, mesh4, 1)
    assert report.converged
    return state, report


@pytest.fixture(scope="session")
def picard_k1_n4(mms_problem, mesh4):
    cfg, _ = mms_problem
    state, report = solver.picard_solve(cfg, mesh4, 1)
    assert report.converged
    return state, report
