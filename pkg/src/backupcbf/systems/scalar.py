"""Scalar example ``xdot = x^3 + u`` with ``h = 1 - x^2`` and inputs in [-0.5, 0.75]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..core import ClassKappa, ConstraintFunction, ControlAffineSystem, InputBox
from ..flow import RHS_SIGNATURE, FastModel
from ..synthesis import BackupPair, assemble_A, synthesize_full_state_pair


@dataclass(frozen=True)
class ScalarParams:
    u_min: float = -0.5
    u_max: float = 0.75
    K: float = 0.5
    c: float = 0.05
    x_star: float = 0.0
    # filter defaults
    T: float = 4.0
    N_c: int = 40
    alpha: float = 0.5
    alpha_b: float = 0.25

    @property
    def box(self) -> InputBox:
        return InputBox([self.u_min], [self.u_max])


def scalar_system() -> ControlAffineSystem:
    return ControlAffineSystem(
        n=1,
        m=1,
        f=lambda x: np.array([x[0] ** 3]),
        g=lambda x: np.ones((1, 1)),
        jac_f=lambda x: np.array([[3.0 * x[0] ** 2]]),
        jac_g_cols=lambda x: [np.zeros((1, 1))],
        name="scalar",
    )


def scalar_constraint() -> ConstraintFunction:
    return ConstraintFunction(
        h=lambda x: 1.0 - x[..., 0] ** 2,
        grad_h=lambda x: -2.0 * np.asarray(x, dtype=float),
        name="h_scalar",
        vectorized=True,
    )


@njit(RHS_SIGNATURE, cache=True)
def scalar_backup_rhs(x, prm):
    K, xs, lo, hi = prm[0], prm[1], prm[2], prm[3]
    u = -x[0] ** 3 - K * (x[0] - xs)
    flags = np.zeros(1, dtype=np.bool_)
    J = np.empty((1, 1))
    if u > hi or u < lo:
        flags[0] = True
        u = min(max(u, lo), hi)
        J[0, 0] = 3.0 * x[0] ** 2
    else:
        J[0, 0] = -K
    f = np.empty(1)
    f[0] = x[0] ** 3 + u
    return f, J, flags


def scalar_backup_pair(p: ScalarParams = ScalarParams(), c: float | None = None) -> BackupPair:
    """Full-state pair with ``A = -K`` centered at ``x*``."""
    sys = scalar_system()
    fast = FastModel(scalar_backup_rhs, np.array([p.K, p.x_star, p.u_min, p.u_max]))
    return synthesize_full_state_pair(
        sys,
        assemble_A([[p.K]], 1),
        [p.x_star],
        p.box,
        p.c if c is None else c,
        fast=fast,
        meta={"region": (np.array([-1.5]), np.array([1.5]))},
    )


def scalar_filter_defaults(p: ScalarParams = ScalarParams()):
    return p.T, p.N_c, ClassKappa(p.alpha), ClassKappa(p.alpha_b)
