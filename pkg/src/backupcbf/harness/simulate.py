"""Closed-loop simulation with a zero-order-hold controller and RK4 plant substeps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..controllers import FilterConfig, backup_cbf_qp, cbf_qp, select_high
from ..core import ClassKappa, ConstraintFunction, ControlAffineSystem, InputBox
from ..errors import BackupCBFError, ConfigurationError
from ..systems import pendulum as pend
from ..systems import scalar as scal
from ..systems import vehicle as veh
from .config import ScenarioConfig

DIVERGENCE_BOUND = 1e6
INTERVENTION_TOL = 1e-6

# run outcomes
COMPLETED = "completed"  # reached t_max
STOPPED = "stopped"  # vehicle reached v_stop
DIVERGED = "diverged"  # plant state left every bound
FAILED = "failed"  # controller or integrator error


@dataclass
class SystemBundle:
    """Everything a run needs for one reference system."""

    name: str
    params: object
    box: InputBox
    cf: ConstraintFunction
    filter_config: FilterConfig
    desired: Callable
    pair_at: Callable  # state -> BackupPair (vehicle pairs depend on the steering angle)
    system_at: Callable  # state -> ControlAffineSystem
    control_state: Callable  # plant state -> control state
    plant_step: Callable  # (z, u, dt, substeps) -> z
    state_names: tuple
    input_names: tuple


def _rk4_step(sys: ControlAffineSystem, x, u, dt, substeps):
    h = dt / substeps
    for _ in range(substeps):
        k1 = sys.rhs(x, u)
        k2 = sys.rhs(x + 0.5 * h * k1, u)
        k3 = sys.rhs(x + 0.5 * h * k2, u)
        k4 = sys.rhs(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def _filter_config(defaults, overrides: dict) -> FilterConfig:
    T, N_c, alpha, alpha_b = defaults
    T = float(overrides.get("T", T))
    N_c = int(overrides.get("N_c", N_c))
    if T == 0.0:
        N_c = 1
    return FilterConfig(
        T=T,
        N_c=N_c,
        alpha=ClassKappa(float(overrides.get("alpha", alpha.coefficient))),
        alpha_b=ClassKappa(float(overrides.get("alpha_b", alpha_b.coefficient))),
        fallback=overrides.get("fallback", "backup_controller"),
    )


def build_bundle(cfg: ScenarioConfig) -> SystemBundle:
    """Instantiate the configured reference system, its pair and its defaults."""
    sp = dict(cfg.system_params)
    try:
        if cfg.system == "scalar":
            p = scal.ScalarParams(**sp)
            sys = scal.scalar_system()
            pair = scal.scalar_backup_pair(p)
            defaults = scal.scalar_filter_defaults(p)
            names, inputs = ("x",), ("u",)
        elif cfg.system == "pendulum":
            preset = sp.pop("preset", None)
            p = pend.PendulumParams.preset(preset, **sp) if preset else pend.PendulumParams(**sp)
            sys = pend.pendulum_system()
            pair = pend.pendulum_backup_pair(p)
            defaults = pend.pendulum_filter_defaults(p)
            names, inputs = ("x1", "x2"), ("u",)
        else:
            p = veh.VehicleParams(**sp)
            defaults = veh.vehicle_filter_defaults(p)
    except TypeError as exc:
        raise ConfigurationError(f"bad system parameters: {exc}") from exc
    fcfg = _filter_config(defaults, cfg.filter_params)

    if cfg.system in ("scalar", "pendulum"):
        desired = cfg.desired or "zero"
        k_d = select_high(p.box) if desired == "select_high" else (lambda x, m=sys.m: np.zeros(m))
        return SystemBundle(
            name=cfg.system,
            params=p,
            box=p.box,
            cf=scal.scalar_constraint() if cfg.system == "scalar" else pend.pendulum_constraint(p),
            filter_config=fcfg,
            desired=k_d,
            pair_at=lambda z, pair=pair: pair,
            system_at=lambda z, sys=sys: sys,
            control_state=lambda z: z,
            plant_step=lambda z, u, dt, n, sys=sys: _rk4_step(sys, z, u, dt, n),
            state_names=names,
            input_names=inputs,
        )

    desired = cfg.desired or "select_high"
    k_d = select_high(p.box) if desired == "select_high" else (lambda x: np.zeros(4))
    cache: dict = {}

    def pair_at(z):
        d = veh.driver_steering(p, z[4], z[5])
        if cache.get("delta") != d:
            cache["delta"] = d
            cache["pair"] = veh.vehicle_backup_pair(p, d, anchors=(z[0],))
        return cache["pair"]

    def system_at(z):
        return veh.vehicle_system(p, veh.driver_steering(p, z[4], z[5]))

    return SystemBundle(
        name="vehicle",
        params=p,
        box=p.box,
        cf=veh.vehicle_constraint(p),
        filter_config=fcfg,
        desired=k_d,
        pair_at=pair_at,
        system_at=system_at,
        control_state=lambda z: z[:3],
        plant_step=lambda z, u, dt, n: veh.plant_step(p, z, u, dt, n),
        state_names=("v_x", "beta", "omega", "x_E", "y_E", "psi"),
        input_names=("F_fl", "F_fr", "F_rl", "F_rr"),
    )


@dataclass
class TrajectoryLog:
    """Per-step rows and a summary. Numeric columns in ``data``; statuses separately."""

    columns: list
    data: np.ndarray
    qp_status: list
    status: str
    message: str = ""
    summary: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def failed(self) -> bool:
        return self.status == FAILED


def _controller(cfg: ScenarioConfig, b: SystemBundle):
    """Returns ``step(z) -> (u, u_desired, qp_status, fallback_used)``."""
    kind = cfg.controller
    fcfg = b.filter_config

    def step(z):
        x = b.control_state(z)
        u_d = np.asarray(b.desired(x), dtype=float)
        if kind == "select_high":
            return b.box.u_min.copy(), u_d, "none", False
        if kind == "desired":
            return b.box.clip(u_d), u_d, "none", False
        if kind == "backup_direct":
            return b.pair_at(z).kb(x), u_d, "none", False
        sys = b.system_at(z)
        if kind == "cbf_qp_saturated":
            st = cbf_qp(sys, b.cf, fcfg.alpha, b.desired, b.box, x, saturated=True)
        elif kind == "cbf_qp":
            st = cbf_qp(sys, b.cf, fcfg.alpha, b.desired, b.box, x, saturated=False)
        else:
            pair = b.pair_at(z)
            st = backup_cbf_qp(pair.system, b.cf, pair, fcfg, b.desired, b.box, x)
        return st.u, st.u_desired, st.qp_status, st.fallback_used

    return step


def run_scenario(cfg: ScenarioConfig, bundle: Optional[SystemBundle] = None) -> TrajectoryLog:
    """Fixed-step closed loop. Errors end the run with a failed status; the partial log is kept."""
    b = bundle or build_bundle(cfg)
    z = np.asarray(cfg.initial_state, dtype=float)
    n_state = len(b.state_names)
    if b.name == "vehicle" and z.size == 3:
        z = np.concatenate([z, np.zeros(3)])
    if z.size != n_state:
        raise ConfigurationError(f"initial_state needs {n_state} values for {b.name}, got {z.size}")
    is_vehicle = b.name == "vehicle"
    columns = ["t", *b.state_names, *b.input_names, "h", "h_b"]
    if is_vehicle:
        columns += ["delta", "chk_h", "chk_ns", "chk_hb"]
    columns += ["fallback", "intervened"]
    step = _controller(cfg, b)
    p = b.params
    n_steps = int(np.floor(cfg.t_max / cfg.dt + 1e-9))
    rows, statuses = [], []
    status, message, error_kind = COMPLETED, "", ""
    first_intervention = np.nan
    prev_v = None
    for k in range(n_steps + 1):
        t = k * cfg.dt
        if not np.all(np.isfinite(z)) or np.linalg.norm(z[: min(3, n_state)]) > DIVERGENCE_BOUND:
            status, message = DIVERGED, f"state left the bound at t={t:.6g}"
            break
        x = b.control_state(z)
        if is_vehicle and z[0] <= cfg.v_stop:
            status = STOPPED
            rows.append(_row(t, z, np.full(len(b.input_names), np.nan), b, x, is_vehicle, p, False, False))
            statuses.append("none")
            break
        if k == n_steps:
            rows.append(_row(t, z, np.full(len(b.input_names), np.nan), b, x, is_vehicle, p, False, False))
            statuses.append("none")
            break
        try:
            u, u_d, qp_status, fb = step(z)
        except (BackupCBFError, ArithmeticError) as exc:
            status, message = FAILED, f"{type(exc).__name__} at t={t:.6g}: {exc}"
            error_kind = "numerical" if isinstance(exc, ArithmeticError) else "run"
            break
        intervened = bool(np.any(np.abs(u - u_d) > INTERVENTION_TOL * (1.0 + np.abs(u_d))))
        if intervened and np.isnan(first_intervention):
            first_intervention = t
        rows.append(_row(t, z, u, b, x, is_vehicle, p, fb, intervened))
        statuses.append(qp_status)
        prev_v = z[0]
        try:
            # a blow-up inside the step is caught by the bound check on the next row
            with np.errstate(over="ignore", invalid="ignore"):
                z = b.plant_step(z, u, cfg.dt, cfg.substeps)
        except (BackupCBFError, ArithmeticError) as exc:
            status, message = FAILED, f"plant integration failed at t={t:.6g}: {exc}"
            error_kind = "numerical" if isinstance(exc, ArithmeticError) else "run"
            break
    data = np.array(rows, dtype=float).reshape(-1, len(columns))
    log = TrajectoryLog(columns=columns, data=data, qp_status=statuses, status=status, message=message)
    log.summary = _summarize(log, b, cfg, first_intervention, prev_v, z)
    log.meta = {"system": b.name, "controller": cfg.controller, "dt": cfg.dt, "substeps": cfg.substeps,
                "T": b.filter_config.T, "N_c": b.filter_config.N_c, "seed": cfg.seed,
                "error_kind": error_kind}
    return log


def _row(t, z, u, b: SystemBundle, x, is_vehicle, p, fb, intervened):
    h = b.cf.value(x)
    row = [t, *z, *u, h]
    if is_vehicle:
        d = veh.driver_steering(p, z[4], z[5])
        try:
            pair = b.pair_at(z)
            hb = pair.h_b(x)
            chk = veh.backup_set_boundary_check(p, d, x[0])
        except BackupCBFError:
            hb, chk = np.nan, (np.nan,) * 3
        row += [hb, d, *chk]
    else:
        row += [b.pair_at(z).h_b(x)]
    row += [float(fb), float(intervened)]
    return row


def _summarize(log: TrajectoryLog, b: SystemBundle, cfg: ScenarioConfig, first_intervention, prev_v, z) -> dict:
    d = log.data
    s = {
        "status": log.status,
        "steps": int(max(len(d) - 1, 0)),
        "final_time": float(d[-1, 0]) if len(d) else 0.0,
        "min_h": float(np.nanmin(log.column("h"))) if len(d) else np.nan,
        "infeasible_steps": sum(st == "infeasible" for st in log.qp_status),
        "fallback_steps": int(np.nansum(log.column("fallback"))) if len(d) else 0,
        "first_intervention_time": float(first_intervention),
    }
    if len(d):
        u = d[:, [log.columns.index(n) for n in b.input_names]]
        ok = ~np.isnan(u[:, 0])
        viol = np.maximum(b.box.u_min - u[ok], u[ok] - b.box.u_max)
        s["max_input_violation"] = float(viol.max()) if viol.size else 0.0
    if b.name == "vehicle" and len(d):
        s["max_abs_beta"] = float(np.abs(log.column("beta")).max())
        s["max_abs_omega"] = float(np.abs(log.column("omega")).max())
        s["stopping_distance"] = _stopping_distance(log, cfg)
        ctrl_rows = ~np.isnan(d[:, log.columns.index("F_fl")])
        chk = d[ctrl_rows][:, [log.columns.index(c) for c in ("chk_h", "chk_ns", "chk_hb")]]
        if chk.size:
            s["backup_check_min_h"] = float(np.nanmin(chk[:, 0]))
            s["backup_check_min_ns"] = float(np.nanmin(chk[:, 1]))
            s["backup_check_min_hb"] = float(np.nanmin(chk[:, 2]))
            s["backup_check_failures"] = int(np.sum(np.any(chk < 0, axis=1) | np.any(np.isnan(chk), axis=1)))
    return s


def _stopping_distance(log: TrajectoryLog, cfg: ScenarioConfig) -> float:
    """Distance travelled, extrapolated to standstill with the last measured deceleration."""
    v = log.column("v_x")
    xe = log.column("x_E")
    if log.status != STOPPED or len(v) < 2:
        return float("nan")
    a = (v[-2] - v[-1]) / cfg.dt
    if not a > 0:
        return float("nan")
    return float(xe[-1] + v[-1] ** 2 / (2.0 * a))


@dataclass
class ComparisonReport:
    logs: dict
    summaries: dict
    stopping_order: list
    safe_controllers: list
    failures: dict

    def as_lines(self) -> list:
        lines = []
        for name, s in self.summaries.items():
            for key, val in s.items():
                lines.append(f"{name}.{key}: {val}")
        lines.append(f"stopping_distance_order: {','.join(self.stopping_order)}")
        lines.append(f"safe_controllers: {','.join(self.safe_controllers)}")
        for name, msg in self.failures.items():
            lines.append(f"{name}.failure: {msg}")
        return lines


def compare_controllers(cfg: ScenarioConfig, controllers: Sequence[str], safety_tol: float = 1e-6) -> ComparisonReport:
    """Run every controller from the same configuration and summarize the outcomes."""
    logs, summaries, failures = {}, {}, {}
    for name in controllers:
        key = name
        i = 2
        while key in logs:
            key = f"{name}#{i}"
            i += 1
        log = run_scenario(cfg.with_controller(name))
        logs[key] = log
        summaries[key] = log.summary
        if log.failed:
            failures[key] = log.message
    dist = {k: s.get("stopping_distance", np.nan) for k, s in summaries.items()}
    order = sorted((k for k in dist if np.isfinite(dist[k])), key=lambda k: dist[k])
    safe = [k for k, s in summaries.items() if s["min_h"] >= -safety_tol and k not in failures]
    return ComparisonReport(logs=logs, summaries=summaries, stopping_order=order, safe_controllers=safe, failures=failures)


def exit_code_for(log: TrajectoryLog, cfg: ScenarioConfig) -> int:
    if log.failed:
        return 4 if log.meta.get("error_kind") == "numerical" else 3
    if cfg.require_safe and not log.summary.get("min_h", -np.inf) >= -cfg.safety_tol:
        return 3
    return 0
