"""Backup flow and sensitivity matrix by fixed-step RK4 on the variational system.

The state and its sensitivity ``Phi = d phi / d x0`` are integrated together:

    d phi / d theta = f_b(phi),            phi(0) = x
    d Phi / d theta = J_b(phi) Phi,        Phi(0) = I

with ``J_b = jac_f + sum_j (d g_j / dx) k_b,j + g dk_b/dx``. The step is
``T / (N_c - 1)`` so integration nodes and constraint nodes coincide.

Two code paths produce identical arithmetic: a generic one that calls the
Python callables of the system and the backup controller, and a compiled one
used when the controller carries a ``fast`` model (a numba function returning
``(f_b, J_b, saturation_flags)`` plus its parameter vector). Compiled models
must be declared with :data:`RHS_SIGNATURE` so one cached kernel serves all.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit, types

from .core import ControlAffineSystem
from .errors import ConfigurationError, DivergenceError

DIVERGENCE_BOUND = 1e6

# rhs(x, prm) -> (f_b, J_b, saturation_flags), all C-contiguous
RHS_SIGNATURE = types.Tuple((types.float64[::1], types.float64[:, ::1], types.boolean[::1]))(
    types.float64[::1], types.float64[::1]
)
_KERNEL_SIGNATURE = types.Tuple(
    (types.float64[:, ::1], types.float64[:, :, ::1], types.boolean[:, ::1], types.int64)
)(types.FunctionType(RHS_SIGNATURE), types.float64[::1], types.float64[::1], types.float64, types.int64, types.int64)


@dataclass(frozen=True)
class FastModel:
    """Compiled closed-loop model: ``rhs(x, params) -> (f_b, J_b, flags)``."""

    rhs: object
    params: np.ndarray


@dataclass(frozen=True)
class FlowRollout:
    thetas: np.ndarray
    states: np.ndarray
    sensitivities: np.ndarray
    saturation_flags: np.ndarray

    def __len__(self):
        return self.thetas.size

    @property
    def final_state(self):
        return self.states[-1]


def backup_vector_field(sys: ControlAffineSystem, ctrl, x):
    """``(f_b(x), J_b(x), flags(x))`` for a backup controller exposing kb, kb_jac, sat_mask."""
    u = np.atleast_1d(ctrl.kb(x))
    fx = sys.drift(x)
    gx = sys.input_matrix(x)
    J = sys.drift_jacobian(x) + gx @ np.asarray(ctrl.kb_jac(x), dtype=float).reshape(sys.m, sys.n)
    for j, dg in enumerate(sys.input_column_jacobians(x)):
        J = J + dg * u[j]
    flags = np.asarray(ctrl.sat_mask(x), dtype=bool).reshape(sys.m) if ctrl.sat_mask is not None else np.zeros(sys.m, bool)
    return fx + gx @ u, J, flags


def _check_controller(ctrl):
    if not callable(getattr(ctrl, "kb", None)):
        raise ConfigurationError("backup controller must provide a callable kb")
    if not callable(getattr(ctrl, "kb_jac", None)):
        raise ConfigurationError("backup controller must provide its Jacobian kb_jac")
    if not hasattr(ctrl, "sat_mask"):
        raise ConfigurationError("backup controller must provide sat_mask (may be None)")


def _node_grid(T: float, N_c: int):
    if T < 0:
        raise ConfigurationError(f"horizon must be non-negative, got {T}")
    if N_c < 1 or (N_c == 1 and T != 0.0):
        raise ConfigurationError(f"need N_c >= 2 for T > 0 (got N_c={N_c}, T={T})")
    if N_c == 1:
        return np.zeros(1), 0.0
    return np.linspace(0.0, T, N_c), T / (N_c - 1)


def _diverged(x):
    return not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_BOUND


def _rollout_generic(sys, ctrl, x, h, steps):
    n, m = sys.n, sys.m
    states = np.empty((steps + 1, n))
    sens = np.empty((steps + 1, n, n))
    flags = np.zeros((steps + 1, m), dtype=bool)
    Phi = np.eye(n)
    states[0] = x
    sens[0] = Phi
    fx, J, fl = backup_vector_field(sys, ctrl, x)
    flags[0] = fl
    for k in range(steps):
        k1x, k1P = fx, J @ Phi
        f2, J2, _ = backup_vector_field(sys, ctrl, x + 0.5 * h * k1x)
        P2 = Phi + 0.5 * h * k1P
        k2x, k2P = f2, J2 @ P2
        f3, J3, _ = backup_vector_field(sys, ctrl, x + 0.5 * h * k2x)
        P3 = Phi + 0.5 * h * k2P
        k3x, k3P = f3, J3 @ P3
        f4, J4, _ = backup_vector_field(sys, ctrl, x + h * k3x)
        P4 = Phi + h * k3P
        k4x, k4P = f4, J4 @ P4
        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        Phi = Phi + (h / 6.0) * (k1P + 2.0 * k2P + 2.0 * k3P + k4P)
        if _diverged(x) or not np.all(np.isfinite(Phi)):
            raise DivergenceError(f"backup flow diverged at theta={(k + 1) * h:.6g}", theta=(k + 1) * h, state=x)
        fx, J, fl = backup_vector_field(sys, ctrl, x)
        states[k + 1] = x
        sens[k + 1] = Phi
        flags[k + 1] = fl
    return states, sens, flags


@njit(_KERNEL_SIGNATURE, cache=True)
def _rollout_kernel(rhs, prm, x0, h, steps, m):
    n = x0.size
    states = np.empty((steps + 1, n))
    sens = np.empty((steps + 1, n, n))
    flags = np.zeros((steps + 1, m), dtype=np.bool_)
    x = x0.copy()
    Phi = np.eye(n)
    states[0] = x
    sens[0] = Phi
    fx, J, fl = rhs(x, prm)
    flags[0] = fl
    for k in range(steps):
        k1x = fx
        k1P = J @ Phi
        f2, J2, _ = rhs(x + 0.5 * h * k1x, prm)
        k2P = J2 @ (Phi + 0.5 * h * k1P)
        f3, J3, _ = rhs(x + 0.5 * h * f2, prm)
        k3P = J3 @ (Phi + 0.5 * h * k2P)
        f4, J4, _ = rhs(x + h * f3, prm)
        k4P = J4 @ (Phi + h * k3P)
        x = x + (h / 6.0) * (k1x + 2.0 * f2 + 2.0 * f3 + f4)
        Phi = Phi + (h / 6.0) * (k1P + 2.0 * k2P + 2.0 * k3P + k4P)
        bad = False
        nrm = 0.0
        for i in range(n):
            if not np.isfinite(x[i]):
                bad = True
            nrm += x[i] * x[i]
        if bad or nrm > 1e12 or not np.all(np.isfinite(Phi)):
            return states, sens, flags, k + 1
        fx, J, fl = rhs(x, prm)
        states[k + 1] = x
        sens[k + 1] = Phi
        flags[k + 1] = fl
    return states, sens, flags, -1


def rollout(sys: ControlAffineSystem, kb, x, T: float, N_c: int, *, use_fast: bool = True) -> FlowRollout:
    """Integrate the backup closed loop and its sensitivity over ``[0, T]`` at ``N_c`` nodes.

    ``kb`` is a backup controller object exposing ``kb``, ``kb_jac`` and
    ``sat_mask`` (for instance a :class:`~backupcbf.synthesis.BackupPair`).

    Raises:
        DivergenceError: if the state becomes non-finite or leaves the ball of
            radius 1e6; the failing node time is stored on the exception.
        ConfigurationError: if the controller has no Jacobian or the node
            specification is invalid.
    """
    _check_controller(kb)
    thetas, h = _node_grid(float(T), int(N_c))
    x = np.asarray(x, dtype=float).reshape(-1).copy()
    if x.shape != (sys.n,):
        raise ConfigurationError(f"state has shape {x.shape}, expected ({sys.n},)")
    if _diverged(x):
        raise DivergenceError("initial state is not finite", theta=0.0, state=x)
    steps = thetas.size - 1
    fast: Optional[FastModel] = getattr(kb, "fast", None)
    if use_fast and fast is not None:
        prm = np.ascontiguousarray(fast.params, dtype=float)
        states, sens, flags, bad = _rollout_kernel(fast.rhs, prm, x, float(h), steps, sys.m)
        if bad >= 0:
            raise DivergenceError(f"backup flow diverged at theta={bad * h:.6g}", theta=bad * h, state=states[bad - 1])
    else:
        states, sens, flags = _rollout_generic(sys, kb, x, h, steps)
    states[0] = x
    sens[0] = np.eye(sys.n)
    return FlowRollout(thetas=thetas, states=states, sensitivities=sens, saturation_flags=flags)


def sensitivity_vs_finite_difference(sys, kb, x, T: float, N_c: int, *, use_fast: bool = True) -> float:
    """Largest ``|Phi_FD - Phi| / (1 + |Phi|)`` over all nodes and entries.

    ``Phi_FD`` is the central difference of the flow with respect to the
    initial state, step ``1e-5 * max(1, |x_i|)``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    ref = rollout(sys, kb, x, T, N_c, use_fast=use_fast)
    if ref.thetas.size == 1:
        return 0.0
    fd = np.empty_like(ref.sensitivities)
    for i in range(sys.n):
        eps = 1e-5 * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        sp = rollout(sys, kb, xp, T, N_c, use_fast=use_fast).states
        sm = rollout(sys, kb, xm, T, N_c, use_fast=use_fast).states
        fd[:, :, i] = (sp - sm) / (2.0 * eps)
    Phi = ref.sensitivities
    return float(np.max(np.abs(fd - Phi) / (1.0 + np.abs(Phi))))


__all__ = [
    "RHS_SIGNATURE",
    "FastModel",
    "FlowRollout",
    "backup_vector_field",
    "rollout",
    "sensitivity_vs_finite_difference",
]
