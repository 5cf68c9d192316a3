"""Inverted pendulum ``x1dot = x2, x2dot = sin x1 + u`` with a rotated-ellipse constraint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..core import ClassKappa, ConstraintFunction, ControlAffineSystem, InputBox
from ..errors import ConfigurationError
from ..flow import RHS_SIGNATURE, FastModel
from ..synthesis import BackupPair, OutputMap, assemble_A, synthesize_output_pair

GAIN_PRESETS = {
    "k1_k1": (1.0, 1.0, 0.1),
    "k1_k5": (1.0, 5.0, 0.0025),
    "k5_k1": (5.0, 1.0, 0.04),
}


@dataclass(frozen=True)
class PendulumParams:
    K_cbf: float = 0.15
    u_min: float = -0.75
    u_max: float = 1.25
    K1: float = 1.0
    K2: float = 1.0
    c: float = 0.1
    x1_star: float = 0.0
    T: float = 5.0
    N_c: int = 51
    alpha: float = 1.0
    alpha_b: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigurationError("pendulum constraint needs |K_cbf| < 1")

    @property
    def mu(self) -> float:
        return 0.5 * (1.0 - self.K_cbf ** 2)

    @property
    def box(self) -> InputBox:
        return InputBox([self.u_min], [self.u_max])

    @classmethod
    def preset(cls, name: str, **kw) -> "PendulumParams":
        if name not in GAIN_PRESETS:
            raise ConfigurationError(f"unknown gain preset {name!r}; choose from {sorted(GAIN_PRESETS)}")
        K1, K2, c = GAIN_PRESETS[name]
        return cls(K1=K1, K2=K2, c=c, **kw)


def pendulum_system() -> ControlAffineSystem:
    return ControlAffineSystem(
        n=2,
        m=1,
        f=lambda x: np.array([x[1], np.sin(x[0])]),
        g=lambda x: np.array([[0.0], [1.0]]),
        jac_f=lambda x: np.array([[0.0, 1.0], [np.cos(x[0]), 0.0]]),
        jac_g_cols=lambda x: [np.zeros((2, 2))],
        name="pendulum",
    )


def pendulum_constraint(p: PendulumParams = PendulumParams()) -> ConstraintFunction:
    K, mu = p.K_cbf, p.mu
    r2 = (np.pi / 2) ** 2

    def h(x):
        s = x[..., 1] + K * x[..., 0]
        return r2 - x[..., 0] ** 2 - s * s / (2.0 * mu)

    def grad(x):
        s = x[..., 1] + K * x[..., 0]
        return np.stack([-2.0 * x[..., 0] - K * s / mu, -s / mu], axis=-1)

    return ConstraintFunction(h=h, grad_h=grad, name="h_pendulum", vectorized=True)


def pendulum_output() -> OutputMap:
    """Angle output ``y = x1`` with relative degree two."""
    return OutputMap(
        p=1,
        r=2,
        y=lambda x: np.array([x[0]]),
        y_jac=lambda x: np.array([[1.0, 0.0]]),
        lie=[lambda x: np.array([x[1]]), lambda x: np.array([np.sin(x[0])])],
        lie_jac=[lambda x: np.array([[0.0, 1.0]]), lambda x: np.array([[np.cos(x[0]), 0.0]])],
        decoupling=lambda x: np.ones((1, 1)),
    )


@njit(RHS_SIGNATURE, cache=True)
def pendulum_backup_rhs(x, prm):
    K1, K2, x1s, lo, hi = prm[0], prm[1], prm[2], prm[3], prm[4]
    s1 = np.sin(x[0])
    c1 = np.cos(x[0])
    u = -s1 - K1 * (x[0] - x1s) - K2 * x[1]
    flags = np.zeros(1, dtype=np.bool_)
    J = np.zeros((2, 2))
    J[0, 1] = 1.0
    if u > hi or u < lo:
        flags[0] = True
        u = min(max(u, lo), hi)
        J[1, 0] = c1
    else:
        J[1, 0] = -K1
        J[1, 1] = -K2
    f = np.empty(2)
    f[0] = x[1]
    f[1] = s1 + u
    return f, J, flags


def pendulum_backup_pair(p: PendulumParams = PendulumParams(), c: float | None = None) -> BackupPair:
    """Output-form pair for ``y = x1`` about ``(x1*, 0)`` with gains K1, K2."""
    A = assemble_A([[[p.K1]], [[p.K2]]], 1)
    x_star = np.array([p.x1_star, 0.0])
    fast = FastModel(pendulum_backup_rhs, np.array([p.K1, p.K2, p.x1_star, p.u_min, p.u_max]))
    return synthesize_output_pair(
        pendulum_system(),
        pendulum_output(),
        A,
        p.box,
        p.c if c is None else c,
        y_ref=[p.x1_star],
        x_star=x_star,
        state_from_eta=lambda e, anchor=None: x_star + np.asarray(e, dtype=float),
        fast=fast,
        meta={"region": (np.array([-np.pi / 2, -2.0]), np.array([np.pi / 2, 2.0]))},
    )


def pendulum_filter_defaults(p: PendulumParams = PendulumParams()):
    return p.T, p.N_c, ClassKappa(p.alpha), ClassKappa(p.alpha_b)


def pendulum_P_closed_form(K1: float, K2: float) -> np.ndarray:
    """Lyapunov matrix of the companion system for ``Q = I`` in closed form."""
    return np.array(
        [
            [(K1 * (K1 + 1.0) + K2 ** 2) / (2.0 * K1 * K2), 1.0 / (2.0 * K1)],
            [1.0 / (2.0 * K1), (K1 + 1.0) / (2.0 * K1 * K2)],
        ]
    )
