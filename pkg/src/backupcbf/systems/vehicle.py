"""Four-wheel planar vehicle braking on a split-friction surface.

Control state ``x = (v_x, beta, omega)``; inputs are the four longitudinal
wheel forces ``(F_fl, F_fr, F_rl, F_rr)``. The steering angle ``delta`` is a
parameter of the control model and comes from a driver model in simulation.
The simulated plant carries the Earth-frame position and yaw angle
``(x_E, y_E, psi)`` alongside.

All model arithmetic lives in numba kernels; the Python API wraps them.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from numba import njit

from ..core import ClassKappa, ConstraintFunction, ControlAffineSystem, InputBox
from ..errors import ConfigurationError, SingularityError, SynthesisError
from ..flow import RHS_SIGNATURE, FastModel
from ..synthesis import BackupPair

V_STOP = 0.5
VERIFY_SPEEDS = (5.0, 10.0, 15.0, 20.0, 25.0)


@dataclass(frozen=True)
class VehicleParams:
    m: float = 8850.0
    I_z: float = 36950.0
    w: float = 1.5
    a_f: float = 1.4
    a_r: float = 1.6
    C_f: float = 130e3
    C_r: float = 175e3
    v_x0: float = 25.0
    F_fl: float = 12e3
    F_fr: float = 4e3
    F_rl: float = 6e3
    F_rr: float = 2e3
    K_y: float = 0.2
    K_psi: float = 0.4
    beta_cr: float = 0.04
    omega_cr: float = 0.08
    beta_d: float = 0.016
    p_beta: float = 1.0
    K_omega: float = 1.0
    c: float = 5e-5
    T: float = 0.1
    N_c: int = 200
    alpha: float = 8.0
    alpha_b: float = 25.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v <= 0:
                raise ConfigurationError(f"vehicle parameter {f.name} must be positive and finite, got {v}")
        if not self.C_r * self.a_r - self.C_f * self.a_f > 0:
            raise ConfigurationError("need C_r a_r - C_f a_f > 0 for a positive backup deceleration")

    @property
    def force_limits(self) -> np.ndarray:
        return np.array([self.F_fl, self.F_fr, self.F_rl, self.F_rr])

    @property
    def box(self) -> InputBox:
        return InputBox(-self.force_limits, np.zeros(4))

    @property
    def p_omega(self) -> float:
        return 1.0 / (2.0 * self.K_omega)

    @property
    def ratios(self):
        return self.F_rl / self.F_fl, self.F_rr / self.F_fr

    def model_vector(self) -> np.ndarray:
        return np.array([self.m, self.I_z, self.w, self.a_f, self.a_r, self.C_f, self.C_r])


# indices into the model vector
_M, _IZ, _W, _AF, _AR, _CF, _CR = range(7)


@njit(cache=True)
def _slip(x, delta, mp):
    """Slip angles (fl, fr, rl, rr) and their gradients w.r.t. (v, beta, omega)."""
    v, b, om = x[0], x[1], x[2]
    w, af, ar = mp[_W], mp[_AF], mp[_AR]
    tb = np.tan(b)
    sec2 = 1.0 + tb * tb
    al = np.empty(4)
    dal = np.empty((4, 3))
    for k in range(4):
        # k: 0 fl, 1 fr, 2 rl, 3 rr; left wheels use v - w*om
        sgn = -1.0 if k % 2 == 0 else 1.0
        lev = af if k < 2 else -ar
        N = v * tb + lev * om
        D = v + sgn * w * om
        den = D * D + N * N
        al[k] = np.arctan(N / D)
        if k < 2:
            al[k] -= delta
        # d atan(N/D) = (D dN - N dD) / (D^2 + N^2)
        dal[k, 0] = (D * tb - N) / den
        dal[k, 1] = (D * v * sec2) / den
        dal[k, 2] = (D * lev - N * sgn * w) / den
    return al, dal


@njit(cache=True)
def _drift(x, delta, mp):
    """Drift f and its Jacobian."""
    v, b, om = x[0], x[1], x[2]
    m, Iz, w, af, ar, Cf, Cr = mp[_M], mp[_IZ], mp[_W], mp[_AF], mp[_AR], mp[_CF], mp[_CR]
    al, dal = _slip(x, delta, mp)
    Fy = np.empty(4)
    dFy = np.empty((4, 3))
    for k in range(4):
        C = Cf if k < 2 else Cr
        Fy[k] = -C * al[k]
        for j in range(3):
            dFy[k, j] = -C * dal[k, j]
    Sf = Fy[0] + Fy[1]
    Sr = Fy[2] + Fy[3]
    Df = Fy[0] - Fy[1]
    dSf = dFy[0] + dFy[1]
    dSr = dFy[2] + dFy[3]
    dDf = dFy[0] - dFy[1]
    sd, cd = np.sin(delta), np.cos(delta)
    sb, cb = np.sin(b), np.cos(b)
    tb = np.tan(b)
    cdb, sdb = np.cos(delta - b), np.sin(delta - b)

    f = np.empty(3)
    J = np.empty((3, 3))
    f[0] = om * v * tb - sd / m * Sf
    J[0, 0] = om * tb - sd / m * dSf[0]
    J[0, 1] = om * v * (1.0 + tb * tb) - sd / m * dSf[1]
    J[0, 2] = v * tb - sd / m * dSf[2]

    B = cb / (m * v)
    E = Sf * cdb + Sr * cb
    dE = dSf * cdb + dSr * cb
    dE[1] += Sf * sdb - Sr * sb
    f[1] = -om + B * E
    J[1, 0] = -B / v * E + B * dE[0]
    J[1, 1] = -sb / (m * v) * E + B * dE[1]
    J[1, 2] = -1.0 + B * dE[2]

    f[2] = (Df * w * sd + Sf * af * cd - Sr * ar) / Iz
    for j in range(3):
        J[2, j] = (dDf[j] * w * sd + dSf[j] * af * cd - dSr[j] * ar) / Iz
    return f, J


@njit(cache=True)
def _input_matrix(x, delta, mp):
    """g (3 x 4) and the Jacobians of its columns, stacked as (4, 3, 3)."""
    v, b = x[0], x[1]
    m, Iz, w, af = mp[_M], mp[_IZ], mp[_W], mp[_AF]
    sd, cd = np.sin(delta), np.cos(delta)
    cb = np.cos(b)
    g1 = cb * np.sin(delta - b) / (m * v)
    g2 = -np.sin(2.0 * b) / (2.0 * m * v)
    g3 = (af * sd - w * cd) / Iz
    g4 = (af * sd + w * cd) / Iz
    G = np.empty((3, 4))
    G[0, 0] = cd / m
    G[0, 1] = cd / m
    G[0, 2] = 1.0 / m
    G[0, 3] = 1.0 / m
    G[1, 0] = g1
    G[1, 1] = g1
    G[1, 2] = g2
    G[1, 3] = g2
    G[2, 0] = g3
    G[2, 1] = g4
    G[2, 2] = -w / Iz
    G[2, 3] = w / Iz
    dG = np.zeros((4, 3, 3))
    dg1_dv = -g1 / v
    dg1_db = -np.cos(delta - 2.0 * b) / (m * v)
    dg2_dv = -g2 / v
    dg2_db = -np.cos(2.0 * b) / (m * v)
    for j in range(2):
        dG[j, 1, 0] = dg1_dv
        dG[j, 1, 1] = dg1_db
        dG[j + 2, 1, 0] = dg2_dv
        dG[j + 2, 1, 1] = dg2_db
    return G, dG


@njit(cache=True)
def _backup_law(x, prm):
    """Unsaturated four-force backup law and its Jacobian.

    prm = model vector (7) + [delta, r_l, r_r, a_x*, K_omega, F_fl, F_fr, F_rl, F_rr].
    """
    mp = prm[:7]
    delta, rl, rr, ax, Kw = prm[7], prm[8], prm[9], prm[10], prm[11]
    m, Iz, w, af = mp[_M], mp[_IZ], mp[_W], mp[_AF]
    f, Jf = _drift(x, delta, mp)
    sd, cd = np.sin(delta), np.cos(delta)
    g3 = (af * sd - w * cd) / Iz
    g4 = (af * sd + w * cd) / Iz
    a11 = (cd + rl) / m
    a12 = (cd + rr) / m
    a21 = g3 - rl * w / Iz
    a22 = g4 + rr * w / Iz
    det = a11 * a22 - a12 * a21
    q1 = -f[0] - ax
    q2 = -f[2] - Kw * x[2]
    k1 = (a22 * q1 - a12 * q2) / det
    k2 = (-a21 * q1 + a11 * q2) / det
    u = np.empty(4)
    u[0] = k1
    u[1] = k2
    u[2] = rl * k1
    u[3] = rr * k2
    du = np.empty((4, 3))
    for j in range(3):
        dq1 = -Jf[0, j]
        dq2 = -Jf[2, j] - (Kw if j == 2 else 0.0)
        dk1 = (a22 * dq1 - a12 * dq2) / det
        dk2 = (-a21 * dq1 + a11 * dq2) / det
        du[0, j] = dk1
        du[1, j] = dk2
        du[2, j] = rl * dk1
        du[3, j] = rr * dk2
    return u, du, f, Jf


@njit(RHS_SIGNATURE, cache=True)
def vehicle_backup_rhs(x, prm):
    """Closed loop under the saturated backup law: ``(f_b, J_b, flags)``."""
    u, du, f, Jf = _backup_law(x, prm)
    delta = prm[7]
    G, dG = _input_matrix(x, delta, prm[:7])
    flags = np.zeros(4, dtype=np.bool_)
    for k in range(4):
        lo = -prm[12 + k]
        if u[k] < lo:
            u[k] = lo
            flags[k] = True
        elif u[k] > 0.0:
            u[k] = 0.0
            flags[k] = True
        if flags[k]:
            for j in range(3):
                du[k, j] = 0.0
    fb = f + G @ u
    Jb = Jf + G @ du
    for k in range(4):
        Jb += dG[k] * u[k]
    return fb, Jb, flags


@njit(cache=True)
def _plant_rhs(z, u, mp, Ky, Kpsi):
    v, b, om, psi = z[0], z[1], z[2], z[5]
    delta = -Ky * z[4] - Kpsi * psi
    f, _ = _drift(z[:3], delta, mp)
    G, _ = _input_matrix(z[:3], delta, mp)
    dz = np.empty(6)
    dz[:3] = f + G @ u
    vy = v * np.tan(b)
    dz[3] = v * np.cos(psi) - vy * np.sin(psi)
    dz[4] = v * np.sin(psi) + vy * np.cos(psi)
    dz[5] = om
    return dz


@njit(cache=True)
def _plant_step(z, u, mp, Ky, Kpsi, dt, substeps):
    h = dt / substeps
    for _ in range(substeps):
        k1 = _plant_rhs(z, u, mp, Ky, Kpsi)
        k2 = _plant_rhs(z + 0.5 * h * k1, u, mp, Ky, Kpsi)
        k3 = _plant_rhs(z + 0.5 * h * k2, u, mp, Ky, Kpsi)
        k4 = _plant_rhs(z + h * k3, u, mp, Ky, Kpsi)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return z


def _state(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size < 3:
        raise ConfigurationError(f"vehicle state needs (v_x, beta, omega), got {x.size} entries")
    return x


def _check_speed(p: VehicleParams, x):
    v, om = x[0], x[2]
    if not v > 0:
        raise SingularityError(f"longitudinal speed must be positive, got {v}")
    if not (v - p.w * om > 0 and v + p.w * om > 0):
        raise SingularityError(f"wheel longitudinal speed vanishes at v_x={v}, omega={om}")


def tire_slip_angles(p: VehicleParams, delta: float, x) -> np.ndarray:
    """Slip angles ``(fl, fr, rl, rr)`` in radians."""
    x = _state(x)
    v, om = x[0], x[2]
    if v - p.w * om == 0 or v + p.w * om == 0:
        raise SingularityError("zero wheel longitudinal speed")
    return _slip(x[:3], float(delta), p.model_vector())[0]


def lateral_forces(p: VehicleParams, delta: float, x) -> np.ndarray:
    """Linear tire model ``F_y = -C * slip``."""
    al = tire_slip_angles(p, delta, x)
    return -np.array([p.C_f, p.C_f, p.C_r, p.C_r]) * al


def vehicle_dynamics(p: VehicleParams, delta: float, x):
    """Drift vector (3) and input matrix (3 x 4) of the control model."""
    x = _state(x)
    _check_speed(p, x)
    mp = p.model_vector()
    return _drift(x[:3], float(delta), mp)[0], _input_matrix(x[:3], float(delta), mp)[0]


def vehicle_system(p: VehicleParams = VehicleParams(), delta: float = 0.0) -> ControlAffineSystem:
    """Control model at a frozen steering angle, with analytic Jacobians."""
    mp = p.model_vector()
    d = float(delta)

    def f(x):
        _check_speed(p, x)
        return _drift(np.asarray(x, dtype=float), d, mp)[0]

    return ControlAffineSystem(
        n=3,
        m=4,
        f=f,
        g=lambda x: _input_matrix(np.asarray(x, dtype=float), d, mp)[0],
        jac_f=lambda x: _drift(np.asarray(x, dtype=float), d, mp)[1],
        jac_g_cols=lambda x: list(_input_matrix(np.asarray(x, dtype=float), d, mp)[1]),
        name="vehicle",
    )


def driver_steering(p: VehicleParams, y_E: float, psi: float) -> float:
    return -p.K_y * y_E - p.K_psi * psi


def vehicle_constraint(p: VehicleParams = VehicleParams()) -> ConstraintFunction:
    bc2, wc2 = p.beta_cr ** 2, p.omega_cr ** 2

    def h(x):
        return 1.0 - x[..., 1] ** 2 / bc2 - x[..., 2] ** 2 / wc2

    def grad(x):
        return np.stack([np.zeros_like(x[..., 0]), -2.0 * x[..., 1] / bc2, -2.0 * x[..., 2] / wc2], axis=-1)

    return ConstraintFunction(h=h, grad_h=grad, name="h_vehicle", vectorized=True)


def beta_star(p: VehicleParams, delta: float) -> float:
    return p.C_f / (p.C_f + p.C_r) * delta


def backup_deceleration(p: VehicleParams, delta: float) -> float:
    """Deceleration that keeps the zero-force saturation curve ``beta_d`` away from the center."""
    lat = (p.a_f + p.a_r) / (1.0 / p.C_f + 1.0 / p.C_r) * abs(delta)
    return 2.0 / (p.m * p.w) * (lat + (p.C_r * p.a_r - p.C_f * p.a_f) * p.beta_d)


def backup_params(p: VehicleParams, delta: float) -> np.ndarray:
    rl, rr = p.ratios
    return np.concatenate(
        [p.model_vector(), [delta, rl, rr, backup_deceleration(p, delta), p.K_omega], p.force_limits]
    )


def vehicle_backup_pair(
    p: VehicleParams = VehicleParams(), delta: float = 0.0, c: float | None = None, anchors=VERIFY_SPEEDS
) -> BackupPair:
    """Pair at a frozen steering angle.

    The backup law linearizes the output ``(v_x, omega)`` using the front
    forces, with rear forces tied to the front ones by the force-limit
    ratios. The backup set is an ellipse in ``(beta - beta*, omega)``;
    ``anchors`` are the speeds at which its boundary is sampled.
    """
    delta = float(delta)
    bs = beta_star(p, delta)
    if not abs(bs) < p.beta_cr:
        raise SynthesisError(f"steering angle {delta} puts the backup center outside the constraint set")
    prm = backup_params(p, delta)
    rl, rr = p.ratios
    sd, cd = np.sin(delta), np.cos(delta)
    G_hat = np.array(
        [
            [(cd + rl) / p.m, (cd + rr) / p.m],
            [(p.a_f * sd - p.w * cd) / p.I_z - rl * p.w / p.I_z, (p.a_f * sd + p.w * cd) / p.I_z + rr * p.w / p.I_z],
        ]
    )
    if np.linalg.cond(G_hat) >= 1e10:
        raise SynthesisError("force allocation matrix is singular")
    sys = vehicle_system(p, delta)
    P = np.diag([p.p_beta, p.p_omega])
    center = np.array([p.v_x0, bs, 0.0])

    def k_fl(x):
        x = _state(x)
        _check_speed(p, x)
        return _backup_law(x[:3], prm)[0]

    def k_fl_jac(x):
        return _backup_law(_state(x)[:3], prm)[1]

    def eta(x):
        return np.array([x[1] - bs, x[2]])

    def state_from_eta(e, anchor=None):
        v = p.v_x0 if anchor is None else float(anchor)
        return np.array([v, bs + e[0], e[1]])

    return BackupPair(
        system=sys,
        box=p.box,
        A=np.array([[-p.K_omega]]),
        P=P,
        Q=np.eye(1),
        c=p.c if c is None else float(c),
        x_star=center,
        u_star=k_fl(center),
        eta=eta,
        eta_jac=lambda x: np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        k_fl=k_fl,
        k_fl_jac=k_fl_jac,
        state_from_eta=state_from_eta,
        anchors=tuple(anchors),
        fast=FastModel(vehicle_backup_rhs, prm),
        meta={
            "delta": delta,
            "beta_star": bs,
            "a_x_star": backup_deceleration(p, delta),
            "region": (np.array([5.0, -0.06, -0.12]), np.array([30.0, 0.06, 0.12])),
        },
    )


def select_high_forces(p: VehicleParams = VehicleParams()) -> np.ndarray:
    return -p.force_limits


def vehicle_filter_defaults(p: VehicleParams = VehicleParams()):
    return p.T, p.N_c, ClassKappa(p.alpha), ClassKappa(p.alpha_b)


def plant_step(p: VehicleParams, z, u, dt: float, substeps: int = 10) -> np.ndarray:
    """Advance the 6-state plant ``(v_x, beta, omega, x_E, y_E, psi)`` by ``dt`` under a held input.

    The driver steering law is evaluated continuously inside the step.
    """
    z = np.asarray(z, dtype=float).reshape(6)
    _check_speed(p, z)
    return _plant_step(z, np.asarray(u, dtype=float).reshape(4), p.model_vector(), p.K_y, p.K_psi, float(dt), int(substeps))


def plant_rhs(p: VehicleParams, z, u) -> np.ndarray:
    return _plant_rhs(np.asarray(z, dtype=float), np.asarray(u, dtype=float), p.model_vector(), p.K_y, p.K_psi)


@njit(cache=True)
def _boundary_check(prm, p_beta, p_omega, c, v, bs, beta_cr, omega_cr, alpha_b, n_points):
    mp = prm[:7]
    rb = np.sqrt(c / p_beta)
    rw = np.sqrt(c / p_omega)
    min_h = np.inf
    min_ns = np.inf
    min_hb = np.inf
    x = np.empty(3)
    for i in range(n_points):
        th = 2.0 * np.pi * i / n_points
        x[0] = v
        x[1] = bs + rb * np.cos(th)
        x[2] = rw * np.sin(th)
        h = 1.0 - (x[1] / beta_cr) ** 2 - (x[2] / omega_cr) ** 2
        min_h = min(min_h, h)
        u, _, f, _ = _backup_law(x, prm)
        for k in range(4):
            min_ns = min(min_ns, u[k] + prm[12 + k], -u[k])
            u[k] = min(max(u[k], -prm[12 + k]), 0.0)
        G, _ = _input_matrix(x, prm[7], mp)
        xd = f + G @ u
        hb = c - p_beta * (x[1] - bs) ** 2 - p_omega * x[2] ** 2
        hb_dot = -2.0 * p_beta * (x[1] - bs) * xd[1] - 2.0 * p_omega * x[2] * xd[2]
        min_hb = min(min_hb, hb_dot + alpha_b * hb)
    return min_h, min_ns, min_hb


def backup_set_boundary_check(p: VehicleParams, delta: float, v: float, n_points: int = 64, c: float | None = None):
    """Margins of the moving backup set at speed ``v``: ``(min h, min no-saturation margin, min hb_dot + alpha_b hb)``.

    The ``n_points`` boundary points are evenly spaced in angle. The set is
    valid at this instant when all three margins are non-negative.
    """
    c = p.c if c is None else c
    return _boundary_check(
        backup_params(p, float(delta)), p.p_beta, p.p_omega, c, float(v), beta_star(p, delta),
        p.beta_cr, p.omega_cr, p.alpha_b, int(n_points),
    )
