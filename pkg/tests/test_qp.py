import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backupcbf.core import InputBox
from backupcbf.errors import ConfigurationError
from backupcbf.qp import INFEASIBLE, OPTIMAL, QpProblem, solve_qp

BOX = InputBox([-0.5], [0.75])


def test_unconstrained_projection():
    sol = solve_qp(QpProblem(u_d=[0.2], box=BOX))
    assert sol.status == OPTIMAL and sol.u[0] == pytest.approx(0.2)


def test_single_row():
    sol = solve_qp(QpProblem(u_d=[0.0], box=BOX, A_ineq=[[1.0]], b_ineq=[0.3]))
    assert sol.u[0] == pytest.approx(0.3, abs=1e-12)
    assert sol.kkt_residual < 1e-8


def test_infeasible_row():
    sol = solve_qp(QpProblem(u_d=[0.0], box=BOX, A_ineq=[[1.0]], b_ineq=[0.9]))
    assert sol.status == INFEASIBLE and not sol.optimal


def test_problem_validation():
    with pytest.raises(ConfigurationError):
        QpProblem(u_d=[0.0], A_ineq=[[1.0]], b_ineq=[0.0, 1.0])
    with pytest.raises(ConfigurationError):
        QpProblem(u_d=[np.nan])


def test_redundant_rows():
    A = np.array([[1.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    sol = solve_qp(QpProblem(u_d=[0.0, 0.0], A_ineq=A, b_ineq=[1.0, 1.0, 2.0]))
    np.testing.assert_allclose(sol.u, [1.0, 0.0], atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4), st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_optimal_solutions_satisfy_kkt(m, K, seed):
    r = np.random.default_rng(seed)
    box = InputBox(-r.uniform(0.5, 2, m), r.uniform(0.5, 2, m))
    p = QpProblem(u_d=r.normal(size=m) * 2, box=box, A_ineq=r.normal(size=(K, m)), b_ineq=r.normal(size=K))
    sol = solve_qp(p)
    if sol.optimal:
        assert box.contains(sol.u)
        assert np.all(p.A_ineq @ sol.u >= p.b_ineq - 1e-8 * (1 + np.abs(p.b_ineq)))
        assert sol.kkt_residual < 1e-8
        # no feasible random point does better
        pts = r.uniform(box.u_min, box.u_max, size=(2000, m))
        ok = np.all(pts @ p.A_ineq.T >= p.b_ineq, axis=1)
        if ok.any():
            best = np.min(np.sum((pts[ok] - p.u_d) ** 2, axis=1))
            assert p.objective(sol.u) <= best + 1e-9
