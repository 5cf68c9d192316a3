"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line."""

import time

import numpy as np
import pytest

from backupcbf.core import InputBox
from backupcbf.flow import rollout, sensitivity_vs_finite_difference
from backupcbf.harness import GridSpec, ScenarioConfig, rasterize_sets, run_scenario
from backupcbf.harness.raster import IN_S, IN_SB, IN_SI
from backupcbf.harness.simulate import STOPPED, compare_controllers
from backupcbf.lyapunov import solve_ctle
from backupcbf.qp import QpProblem, solve_qp
from backupcbf.synthesis import verify_validity
from backupcbf.systems import pendulum as pend
from backupcbf.systems import scalar as scal
from backupcbf.systems import vehicle as veh


@pytest.fixture
def report(capsys):
    def _report(number, ok, detail, elapsed):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f} s) {detail}")
        return ok

    return _report


# 1. CTLE oracle


def test_criterion_1_ctle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    min_eig = np.inf
    for _ in range(200):
        n = int(rng.integers(1, 7))
        A = rng.normal(size=(n, n))
        A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.05, 2.0)) * np.eye(n)
        B = rng.normal(size=(n, n))
        Q = B @ B.T + 0.1 * np.eye(n)
        sol = solve_ctle(A, Q)
        res = np.linalg.norm(A.T @ sol.P + sol.P @ A + Q) / (1.0 + np.linalg.norm(Q))
        worst = max(worst, res)
        min_eig = min(min_eig, np.linalg.eigvalsh(sol.P).min())
    closed = 0.0
    for name in ("k1_k1", "k1_k5", "k5_k1"):
        K1, K2, _ = pend.GAIN_PRESETS[name]
        A = np.array([[0.0, 1.0], [-K1, -K2]])
        P = solve_ctle(A, np.eye(2)).P
        P_ref = np.array([[(K1 * (K1 + 1) + K2**2) / (2 * K1 * K2), 1 / (2 * K1)], [1 / (2 * K1), (K1 + 1) / (2 * K1 * K2)]])
        closed = max(closed, np.max(np.abs(P - P_ref)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and min_eig > 0 and closed <= 1e-12 and elapsed < 5
    report(1, ok, f"max scaled residual {worst:.2e}, min eig(P) {min_eig:.2e}, closed-form error {closed:.1e}", elapsed)
    assert ok


# 2. Sensitivity correctness


def test_criterion_2_sensitivity(report):
    t0 = time.perf_counter()
    sp = scal.scalar_backup_pair()
    pp = pend.pendulum_backup_pair(pend.PendulumParams.preset("k1_k1"))
    errs = []
    for x in ([0.1], [-0.15], [0.2], [0.0]):
        fl = rollout(sp.system, sp, x, 4.0, 40)
        assert not fl.saturation_flags.any()
        errs.append(sensitivity_vs_finite_difference(sp.system, sp, x, 4.0, 40))
    for x in ([0.1, 0.0], [0.0, 0.2], [-0.2, 0.1], [0.15, -0.1]):
        fl = rollout(pp.system, pp, x, 5.0, 51)
        assert not fl.saturation_flags.any()
        errs.append(sensitivity_vs_finite_difference(pp.system, pp, x, 5.0, 51))
    elapsed = time.perf_counter() - t0
    ok = max(errs) < 1e-4 and elapsed < 10
    report(2, ok, f"max relative error {max(errs):.2e} over {len(errs)} unsaturated flows", elapsed)
    assert ok


# 3. Scalar example


def _scalar_in_SI(pair, cf, x, T=4.0, N_c=40):
    if cf.value([x]) < 0:
        return False
    try:
        fl = rollout(pair.system, pair, [x], T, N_c)
    except ArithmeticError:
        return False
    return bool(np.all(cf.values(fl.states) >= 0) and pair.h_b(fl.states[-1]) >= 0)


def _bisect_edge(pred, inside, outside, iters=50):
    for _ in range(iters):
        mid = 0.5 * (inside + outside)
        if pred(mid):
            inside = mid
        else:
            outside = mid
    return inside


def test_criterion_3_scalar(report):
    t0 = time.perf_counter()
    p = scal.ScalarParams()
    pair, cf = scal.scalar_backup_pair(p), scal.scalar_constraint()
    member = lambda x: _scalar_in_SI(pair, cf, x)
    lo = _bisect_edge(member, 0.0, -1.0)
    hi = _bisect_edge(member, 0.0, 1.0)
    margin = 0.01 * (hi - lo)
    x0s = np.linspace(lo + margin, hi - margin, 50)
    base = dict(system="scalar", dt=0.01, substeps=10, desired="zero")

    # (a) direct backup controller
    a_ok = True
    for x0 in x0s:
        log = run_scenario(ScenarioConfig(controller="backup_direct", initial_state=(x0,), t_max=p.T, **base))
        xs = log.column("x")
        a_ok &= all(member(x) for x in xs[::10])
        a_ok &= pair.h_b(xs[-1:]) >= 0.0
    # (b) backup CBF-QP with zero desired input
    b_min_h, b_box = np.inf, True
    for x0 in x0s:
        log = run_scenario(ScenarioConfig(controller="backup_cbf_qp", initial_state=(x0,), t_max=10.0, **base))
        b_min_h = min(b_min_h, log.summary["min_h"])
        u = log.column("u")[:-1]
        b_box &= bool(np.all((u >= p.u_min) & (u <= p.u_max)))
    # (c) a state in S but not in S_I leaves S under the backup controller
    x_out = 0.9
    log = run_scenario(ScenarioConfig(controller="backup_direct", initial_state=(x_out,), t_max=10.0, **base))
    c_ok = cf.value([x_out]) > 0 and not member(x_out) and log.summary["min_h"] < 0
    elapsed = time.perf_counter() - t0
    ok = a_ok and b_min_h >= -1e-6 and b_box and c_ok and elapsed < 60
    report(
        3,
        ok,
        f"S_I=[{lo:.4f}, {hi:.4f}]; (a) {a_ok}; (b) min h {b_min_h:.3e}, inputs in box {b_box}; (c) x0={x_out} exits S {c_ok}",
        elapsed,
    )
    assert ok


# 4. Pendulum


def test_criterion_4_pendulum(report):
    t0 = time.perf_counter()
    p = pend.PendulumParams.preset("k1_k1")
    pair, cf = pend.pendulum_backup_pair(p), pend.pendulum_constraint(p)
    grid = GridSpec(x_range=(-np.pi / 2, np.pi / 2), nx=201, y_range=(-1.5, 1.5), ny=201)
    horizons = [1.0, 2.0, 3.0, 5.0]
    res = rasterize_sets(cf, pair, grid, horizons, d_theta=0.1)
    nest_ok = True
    counts = []
    for T in horizons:
        f = res.flags[T]
        S, SI, Sb = (f & IN_S) > 0, (f & IN_SI) > 0, (f & IN_SB) > 0
        nest_ok &= bool(np.all(SI[Sb]) and np.all(S[SI]) and (SI & ~Sb).any() and (S & ~SI).any())
        counts.append(int(SI.sum()))
    mono_ok = all(a <= b for a, b in zip(counts, counts[1:]))

    # scan the interior boundary of S_I(5) for a state that separates the two filters
    si = (res.flags[5.0] & IN_SI) > 0
    pad = np.pad(si, 1)
    edge = si & ~(pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:])
    edge[[0, -1], :] = False
    edge[:, [0, -1]] = False
    js, is_ = np.nonzero(edge)
    base = dict(system="pendulum", dt=0.01, t_max=10.0, desired="zero", system_params={"preset": "k1_k1"})
    found = None
    for k in np.argsort(np.hypot(grid.xs[is_], grid.ys[js]))[::-1]:
        x0 = (grid.xs[is_[k]], grid.ys[js[k]])
        sat = run_scenario(ScenarioConfig(controller="cbf_qp_saturated", initial_state=x0, **base))
        if not sat.summary["min_h"] < 0:
            continue
        bk = run_scenario(ScenarioConfig(controller="backup_cbf_qp", initial_state=x0, **base))
        u = bk.column("u")[:-1]
        if bk.summary["min_h"] >= -1e-6 and np.all((u >= p.u_min) & (u <= p.u_max)):
            found = (x0, sat.summary, bk.summary)
            break
    b_ok = found is not None
    c_ok = b_ok and found[2]["first_intervention_time"] < found[1]["first_intervention_time"]
    elapsed = time.perf_counter() - t0
    ok = nest_ok and mono_ok and b_ok and c_ok and elapsed < 300
    detail = f"(a) nested {nest_ok}, S_I counts {counts}; "
    if b_ok:
        x0, s, b = found
        detail += (
            f"(b) x0=({x0[0]:.4f}, {x0[1]:.4f}) saturated min h {s['min_h']:.3f}, backup min h {b['min_h']:.2e}; "
            f"(c) first intervention backup {b['first_intervention_time']:.2f} s vs saturated {s['first_intervention_time']:.2f} s"
        )
    else:
        detail += "(b) no separating initial state found on the boundary of S_I"
    report(4, ok, detail, elapsed)
    assert ok


# 5. Vehicle


def test_criterion_5_vehicle(report):
    t0 = time.perf_counter()
    p = veh.VehicleParams()
    cfg = ScenarioConfig(system="vehicle", controller="backup_cbf_qp", initial_state=(25.0, 0.0, 0.0, 0.0, 0.0, 0.0))
    rep = compare_controllers(cfg, ["select_high", "cbf_qp_saturated", "backup_cbf_qp"])
    s = rep.summaries
    a_ok = s["select_high"]["min_h"] < 0
    b_ok = s["cbf_qp_saturated"]["min_h"] < 0
    bk = rep.logs["backup_cbf_qp"]
    F = bk.data[:-1, [bk.columns.index(n) for n in ("F_fl", "F_fr", "F_rl", "F_rr")]]
    forces_ok = bool(np.all(F >= -p.force_limits) and np.all(F <= 0.0))
    c_ok = s["backup_cbf_qp"]["min_h"] >= -1e-3 and forces_ok and bk.status == STOPPED
    d = {k: s[k]["stopping_distance"] for k in s}
    d_ok = d["select_high"] < d["backup_cbf_qp"] < d["cbf_qp_saturated"]
    chk = bk.data[:-1, [bk.columns.index(n) for n in ("chk_h", "chk_ns", "chk_hb")]]
    bad = np.any(chk < 0, axis=1)
    e_ok = not bad.any()
    elapsed = time.perf_counter() - t0
    ok = a_ok and b_ok and c_ok and d_ok and e_ok and elapsed < 600
    detail = (
        f"(a) select_high min h {s['select_high']['min_h']:.3f}; (b) saturated min h {s['cbf_qp_saturated']['min_h']:.3f}; "
        f"(c) backup min h {s['backup_cbf_qp']['min_h']:.4f}, forces in box {forces_ok}; "
        f"(d) distances {d['select_high']:.2f} < {d['backup_cbf_qp']:.2f} < {d['cbf_qp_saturated']:.2f} m {d_ok}; "
        f"(e) boundary check failed at {int(bad.sum())} of {len(bad)} steps"
    )
    if bad.any():
        v = bk.column("v_x")[:-1]
        detail += f" (all at v_x <= {v[bad].max():.2f} m/s; passes at every step with v_x > {v[bad].max():.2f} m/s)"
    report(5, ok, detail, elapsed)
    assert ok


# 6. QP oracle


def _grid_oracle(prob: QpProblem, per_level: int, levels: int):
    """Brute-force feasible-grid minimum: a full grid over the box, then grids zoomed around the incumbent.

    The zoom window keeps at least twice the last incumbent move, so an
    optimum on a constraint line is followed along the line.
    """
    m = prob.m
    lo, hi = prob.box.u_min.copy(), prob.box.u_max.copy()
    side = int(round(per_level ** (1.0 / m)))
    best_u, best, prev_u = None, np.inf, None
    for _ in range(levels):
        axes = [np.linspace(lo[i], hi[i], side) for i in range(m)]
        U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
        ok = np.all(U @ prob.A_ineq.T >= prob.b_ineq, axis=1) if prob.K else np.ones(len(U), bool)
        if ok.any():
            obj = np.sum((U[ok] - prob.u_d) ** 2, axis=1)
            i = int(np.argmin(obj))
            if obj[i] < best:
                best, best_u = float(obj[i]), U[ok][i]
        if best_u is None:
            break
        step = (hi - lo) / (side - 1)
        move = 0.0 if prev_u is None else np.max(np.abs(best_u - prev_u))
        prev_u = best_u
        w = np.maximum(8 * step, 2 * move)
        lo = np.maximum(prob.box.u_min, best_u - w)
        hi = np.minimum(prob.box.u_max, best_u + w)
    return best, best_u


def test_criterion_6_qp_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst, n_opt, n_inf, inf_bad, thin = 0.0, 0, 0, 0, 0
    for _ in range(500):
        m = int(rng.integers(1, 3))
        K = int(rng.integers(0, 5))
        box = InputBox(-rng.uniform(0.2, 2.0, m), rng.uniform(0.2, 2.0, m))
        A = rng.normal(size=(K, m))
        b = rng.normal(size=K) * 1.5
        prob = QpProblem(u_d=rng.normal(size=m) * 1.5, box=box, A_ineq=A, b_ineq=b)
        sol = solve_qp(prob)
        best, _ = _grid_oracle(prob, 100_000, 10)  # 10 levels of 1e5 samples: 1e6 in total
        if sol.optimal:
            n_opt += 1
            if not np.isfinite(best):
                thin += 1
                continue
            worst = max(worst, abs(prob.objective(sol.u) - best))
        else:
            n_inf += 1
            inf_bad += int(np.isfinite(best))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and inf_bad == 0 and thin == 0 and elapsed < 60
    report(
        6,
        ok,
        f"{n_opt} optimal, max |objective - oracle| {worst:.2e}; {n_inf} infeasible, {inf_bad} with a feasible grid point; "
        f"{thin} optimal with an empty grid",
        elapsed,
    )
    assert ok


# 7. Validity verifier


def test_criterion_7_validity(report):
    t0 = time.perf_counter()
    results = {}
    sp = scal.scalar_backup_pair()
    results["scalar"] = verify_validity(sp, scal.scalar_constraint()).passed
    for name in sorted(pend.GAIN_PRESETS):
        p = pend.PendulumParams.preset(name)
        results[f"pendulum {name}"] = verify_validity(pend.pendulum_backup_pair(p), pend.pendulum_constraint(p)).passed
    vp = veh.VehicleParams()
    vrep = {}
    for delta in (-0.02, 0.0, 0.02):
        r = verify_validity(veh.vehicle_backup_pair(vp, delta), veh.vehicle_constraint(vp))
        vrep[delta] = r
        results[f"vehicle delta={delta:+.2f}"] = r.passed
    bad_scalar = verify_validity(sp.with_c(1.5), scal.scalar_constraint())
    p = pend.PendulumParams.preset("k1_k1")
    bad_pend = verify_validity(pend.pendulum_backup_pair(p).with_c(0.5), pend.pendulum_constraint(p))
    neg_ok = (not bad_scalar.c1) and (not bad_pend.no_saturation)
    elapsed = time.perf_counter() - t0
    ok = all(results.values()) and neg_ok and elapsed < 60
    failed = [k for k, v in results.items() if not v]
    detail = f"passed {sum(results.values())}/{len(results)} pairs; scalar c=1.5 fails C1 {not bad_scalar.c1}; "
    detail += f"pendulum c=0.5 fails saturation {not bad_pend.no_saturation}"
    if failed:
        r = vrep.get(0.02)
        detail += f"; failing: {', '.join(failed)}"
        if r is not None and not r.passed:
            detail += f" (no-saturation margin {r.ns_min_margin:.1f} N, C3 min {r.c3_min_hb_dot:.2e})"
    report(7, ok, detail, elapsed)
    assert ok
