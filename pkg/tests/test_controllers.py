import numpy as np
import pytest

from backupcbf.controllers import FilterConfig, FilterStep, backup_cbf_qp, backup_rows, cbf_qp, select_high
from backupcbf.core import ClassKappa
from backupcbf.errors import ConfigurationError, FilterError
from backupcbf.flow import rollout
from backupcbf.systems import pendulum as pend
from backupcbf.systems import scalar as scal
from backupcbf.systems import vehicle as veh

SP = scal.ScalarParams()


def scalar_cfg(T=4.0, N_c=40, fallback="backup_controller"):
    return FilterConfig(T=T, N_c=N_c, alpha=ClassKappa(0.5), alpha_b=ClassKappa(0.25), fallback=fallback)


def test_cbf_qp_hand_example():
    sys, cf = scal.scalar_system(), scal.scalar_constraint()
    st = cbf_qp(sys, cf, ClassKappa(0.5), 0.0, SP.box, [0.9])
    # unsaturated bound: u <= -0.729 + 0.5 * 0.19 / 1.8, outside the box: infeasible
    bound = -0.729 + 0.5 * 0.19 / 1.8
    assert bound == pytest.approx(-0.6762, abs=1e-4)
    unbounded = cbf_qp(sys, cf, ClassKappa(0.5), 0.0, None, [0.9])
    assert unbounded.u[0] == pytest.approx(bound, abs=1e-12)
    assert st.qp_status == "infeasible"
    sat = cbf_qp(sys, cf, ClassKappa(0.5), 0.0, SP.box, [0.9], saturated=True)
    assert sat.u[0] == pytest.approx(-0.5)


def test_cbf_qp_inactive():
    st = cbf_qp(scal.scalar_system(), scal.scalar_constraint(), ClassKappa(0.5), 0.1, SP.box, [0.0])
    assert st.u[0] == 0.1 and not st.intervened


def test_backup_filter_passes_desired_at_center(scalar_pair):
    st = backup_cbf_qp(scalar_pair.system, scal.scalar_constraint(), scalar_pair, scalar_cfg(), 0.0, SP.box, [0.0])
    assert st.u[0] == 0.0 and st.qp_status == "optimal" and not st.fallback_used


def test_backup_rows_count(scalar_pair):
    cfg = scalar_cfg()
    fl = rollout(scalar_pair.system, scalar_pair, [0.3], cfg.T, cfg.N_c)
    A, b, h_nodes, hb_T = backup_rows(scalar_pair.system, scal.scalar_constraint(), scalar_pair, cfg, [0.3], fl)
    assert A.shape == (cfg.N_c + 1, 1) and b.shape == (cfg.N_c + 1,)
    assert h_nodes[0] == pytest.approx(1 - 0.09)


def test_zero_horizon_reduces_to_two_rows(scalar_pair):
    """With T = 0 the filter has the h row at x and the h_b row at x."""
    cf = scal.scalar_constraint()
    cfg = scalar_cfg(T=0.0, N_c=1)
    x = np.array([0.15])
    st = backup_cbf_qp(scalar_pair.system, cf, scalar_pair, cfg, 0.75, SP.box, x)
    # manual: h row -2x(x^3+u) >= -0.5 h, h_b row -2x(x^3+u) >= -0.25 h_b
    hb = scalar_pair.h_b(x)
    ub = min(0.5 * cf.value(x), 0.25 * hb) / (2 * x[0]) - x[0] ** 3
    assert st.u[0] == pytest.approx(min(0.75, ub), abs=1e-10)


def test_filter_config_validation():
    with pytest.raises(ConfigurationError):
        scalar_cfg(T=1.0, N_c=1)
    with pytest.raises(ConfigurationError):
        scalar_cfg(T=0.0, N_c=3)
    with pytest.raises(ConfigurationError):
        scalar_cfg(fallback="panic")


def test_fallback_applies_backup_controller(scalar_pair):
    # far outside S_I the rows cannot be met: the backup law is applied
    x = [0.95]
    st = backup_cbf_qp(scalar_pair.system, scal.scalar_constraint(), scalar_pair, scalar_cfg(T=0.5, N_c=6), 0.75, SP.box, x)
    assert st.qp_status == "infeasible" and st.fallback_used
    assert st.u[0] == pytest.approx(scalar_pair.kb(x)[0])
    st2 = backup_cbf_qp(scalar_pair.system, scal.scalar_constraint(), scalar_pair, scalar_cfg(T=0.5, N_c=6, fallback="hold_desired"), 0.75, SP.box, x)
    assert st2.fallback_used and st2.u[0] == 0.75


def test_divergent_rollout_raises_filter_error(scalar_pair):
    with pytest.raises(FilterError):
        backup_cbf_qp(scalar_pair.system, scal.scalar_constraint(), scalar_pair, scalar_cfg(T=4.0, N_c=400), 0.0, SP.box, [1.5])


def test_select_high():
    k = select_high(veh.VehicleParams().box)
    np.testing.assert_array_equal(k(None), [-12000, -4000, -6000, -2000])
    np.testing.assert_array_equal(k([1.0, 2.0, 3.0]), k(None))
    np.testing.assert_array_equal(select_high(SP.box)(0.3), [-0.5])


def test_pendulum_saturated_filter_violates_condition():
    p = pend.PendulumParams()
    sys, cf = pend.pendulum_system(), pend.pendulum_constraint(p)
    x = np.array([1.2, 0.9])
    st = cbf_qp(sys, cf, ClassKappa(1.0), 0.0, p.box, x, saturated=True)
    hdot = cf.gradient(x) @ sys.rhs(x, st.u)
    assert hdot < -cf.value(x)


def test_filter_step_intervened_flag():
    s = FilterStep(u=np.array([0.1]), u_desired=np.array([0.0]), qp_status="optimal", h_value=1.0)
    assert s.intervened


def test_zero_horizon_matches_plain_filter_on_backup_set(scalar_pair):
    from backupcbf.synthesis import build_hb
    cf = scal.scalar_constraint()
    cfg = scalar_cfg(T=0.0, N_c=1)
    for x, u_d in (([0.15], 0.75), ([-0.1], -0.5), ([0.05], 0.3)):
        a = backup_cbf_qp(scalar_pair.system, cf, scalar_pair, cfg, u_d, SP.box, x)
        b = cbf_qp(scalar_pair.system, build_hb(scalar_pair), cfg.alpha_b, u_d, SP.box, x)
        assert a.u[0] == pytest.approx(b.u[0], abs=1e-9)


def test_longer_horizon_keeps_more_states_safe():
    from backupcbf.harness import ScenarioConfig, run_scenario
    xs = np.linspace(-1.0, 1.0, 101)
    safe = {}
    for T, N_c in ((1.0, 10), (2.0, 20), (4.0, 40)):
        ok = []
        for x0 in xs:
            cfg = ScenarioConfig(system="scalar", controller="backup_cbf_qp", initial_state=(x0,), dt=0.05, t_max=5.0,
                                 filter_params={"T": T, "N_c": N_c})
            log = run_scenario(cfg)
            ok.append(log.status == "completed" and log.summary["min_h"] >= 0)
        safe[T] = np.array(ok)
    assert np.all(safe[2.0][safe[1.0]]) and np.all(safe[4.0][safe[2.0]])
